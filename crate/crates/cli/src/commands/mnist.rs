use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use xordlab::mnist::{
    cluster_filters, cluster_init_experiment, read_filter_bank, spherical_kmeans, train_mnist, write_filter_bank, ClusterInitConfig,
    ClusterInitRow, EpochMetrics, KMeansConfig, KMeansResult, MnistDataset, MnistTrainConfig,
};
use xordlab::rng::trial_rng;

use crate::{Ctx, Verdict};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Directory holding `{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]`.
    pub dir: PathBuf,
    /// Use only the first `test_size` test examples.
    pub test_size: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: PathBuf::from("data/mnist"),
            test_size: None,
        }
    }
}

impl DataConfig {
    fn load(&self) -> anyhow::Result<(MnistDataset, MnistDataset)> {
        let train = MnistDataset::load_split(&self.dir, "train")?;
        let mut test = MnistDataset::load_split(&self.dir, "t10k")?;
        if let Some(n) = self.test_size {
            test = test.head(n);
        }
        println!(
            "loaded {} training and {} test images from {}",
            train.len(),
            test.len(),
            self.dir.display()
        );
        Ok((train, test))
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub data: DataConfig,
    pub train: MnistTrainConfig,
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    train_accuracy: f64,
    test_accuracy: f64,
    epochs_run: usize,
    metrics: &'a [EpochMetrics],
}

fn metrics_csv(ctx: &mut Ctx, metrics: &[EpochMetrics]) -> anyhow::Result<()> {
    ctx.out.csv("-metrics.csv", |w| {
        for m in metrics {
            w.serialize(m)?;
        }
        Ok(())
    })?;
    Ok(())
}

fn bank(ctx: &mut Ctx, suffix: &str, net: &xordlab::mnist::ConvNet<f32>) -> anyhow::Result<()> {
    let p = ctx.out.path(suffix);
    write_filter_bank(net, &p)?;
    ctx.out.external(&p);
    let mut side = p.into_os_string();
    side.push(".json");
    ctx.out.external(Path::new(&side));
    Ok(())
}

pub fn train(cfg: &TrainConfig, ctx: &mut Ctx) -> anyhow::Result<Verdict> {
    cfg.train.validate()?;
    let (train, test) = cfg.data.load()?;
    let trained = train_mnist(&cfg.train, &train, &test, &mut trial_rng(ctx.seed, 0))?;
    for m in &trained.metrics {
        println!(
            "epoch {:>2}: loss {:.5}, train acc {:.4}, test acc {}",
            m.epoch,
            m.train_loss,
            m.train_accuracy,
            m.test_accuracy.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into())
        );
    }
    metrics_csv(ctx, &trained.metrics)?;
    bank(ctx, "-filters.f32", &trained.net)?;
    bank(ctx, "-initial-filters.f32", &trained.initial)?;
    ctx.out.json(
        ".json",
        &TrainSummary {
            train_accuracy: trained.train_accuracy,
            test_accuracy: trained.test_accuracy,
            epochs_run: trained.metrics.len(),
            metrics: &trained.metrics,
        },
    )?;
    println!(
        "final train accuracy {:.4}, test accuracy {:.4}",
        trained.train_accuracy, trained.test_accuracy
    );
    Ok(Verdict::Done)
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterConfig {
    pub data: DataConfig,
    pub train: MnistTrainConfig,
    pub kmeans: KMeansConfig,
    /// Cluster this filter bank instead of training a network.
    pub filters: Option<PathBuf>,
    /// Baseline bank to compare against when `filters` is given.
    pub random_filters: Option<PathBuf>,
}

#[derive(Serialize)]
struct Clustered {
    source: &'static str,
    median_angle_deg: Option<f64>,
    result: KMeansResult,
}

#[derive(Serialize)]
struct ClusterSummary {
    test_accuracy: Option<f64>,
    clusterings: Vec<Clustered>,
}

fn load_bank(path: &Path) -> anyhow::Result<Vec<Vec<f64>>> {
    let (_, filters) = read_filter_bank(path)?;
    Ok(filters.into_iter().map(|f| f.into_iter().map(f64::from).collect()).collect())
}

pub fn cluster(cfg: &ClusterConfig, ctx: &mut Ctx) -> anyhow::Result<Verdict> {
    let mut clusterings = Vec::new();
    let mut test_accuracy = None;
    let mut krng = trial_rng(ctx.seed, 1);
    if let Some(path) = &cfg.filters {
        clusterings.push(("trained", spherical_kmeans(&load_bank(path)?, &cfg.kmeans, &mut krng)?));
        if let Some(r) = &cfg.random_filters {
            clusterings.push(("random", spherical_kmeans(&load_bank(r)?, &cfg.kmeans, &mut krng)?));
        }
    } else {
        cfg.train.validate()?;
        let (train, test) = cfg.data.load()?;
        let trained = train_mnist(&cfg.train, &train, &test, &mut trial_rng(ctx.seed, 0))?;
        metrics_csv(ctx, &trained.metrics)?;
        bank(ctx, "-filters.f32", &trained.net)?;
        test_accuracy = Some(trained.test_accuracy);
        println!("trained: test accuracy {:.4}", trained.test_accuracy);
        clusterings.push(("trained", cluster_filters(&trained.net, &cfg.kmeans, &mut krng)?));
        clusterings.push(("random", cluster_filters(&trained.initial, &cfg.kmeans, &mut krng)?));
    }
    let clusterings: Vec<Clustered> = clusterings
        .into_iter()
        .map(|(source, result)| Clustered {
            source,
            median_angle_deg: xordlab::mnist::median(&result.angles()),
            result,
        })
        .collect();
    ctx.out.csv("-angles.csv", |w| {
        w.write_record(["source", "filter", "cluster", "angle_deg"])?;
        for c in &clusterings {
            for (j, (a, g)) in c.result.assignments.iter().zip(&c.result.angles_deg).enumerate() {
                if let (Some(a), Some(g)) = (a, g) {
                    w.write_record([c.source.to_string(), j.to_string(), a.to_string(), g.to_string()])?;
                }
            }
        }
        Ok(())
    })?;
    ctx.out.csv("-centers.csv", |w| {
        let dim = clusterings.first().and_then(|c| c.result.centers.first()).map_or(0, Vec::len);
        let mut header = vec!["source".to_string(), "cluster".into()];
        header.extend((0..dim).map(|i| format!("v{i}")));
        w.write_record(&header)?;
        for c in &clusterings {
            for (i, center) in c.result.centers.iter().enumerate() {
                let mut row = vec![c.source.to_string(), i.to_string()];
                row.extend(center.iter().map(|v| v.to_string()));
                w.write_record(&row)?;
            }
        }
        Ok(())
    })?;
    for c in &clusterings {
        println!(
            "{}: median angle {}, inertia {:.4}, {} filters excluded",
            c.source,
            c.median_angle_deg.map(|m| format!("{m:.2} deg")).unwrap_or_else(|| "-".into()),
            c.result.inertia,
            c.result.excluded.len()
        );
    }
    let verdict = match (clusterings.first(), clusterings.get(1)) {
        (Some(t), Some(r)) => match (t.median_angle_deg, r.median_angle_deg) {
            (Some(a), Some(b)) if a < b => Verdict::Pass(format!("trained median {a:.2} deg < random median {b:.2} deg")),
            (a, b) => Verdict::Fail(format!("trained median {a:?} not below random median {b:?}")),
        },
        _ => Verdict::Done,
    };
    ctx.out.json(
        ".json",
        &ClusterSummary {
            test_accuracy,
            clusterings,
        },
    )?;
    Ok(verdict)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterInitCommandConfig {
    pub data: DataConfig,
    /// Largest allowed accuracy gap between the large net and the
    /// cluster-initialized net at the largest train size.
    pub max_gap: f64,
    pub experiment: ClusterInitConfig,
}

impl Default for ClusterInitCommandConfig {
    fn default() -> Self {
        ClusterInitCommandConfig {
            data: DataConfig::default(),
            max_gap: 0.05,
            experiment: ClusterInitConfig::default(),
        }
    }
}

#[derive(Serialize)]
struct SizeCenters {
    train_size: usize,
    large_median_angle_deg: Option<f64>,
    centers: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct ClusterInitSummary<'a> {
    rows: &'a [ClusterInitRow],
    centers: Vec<SizeCenters>,
}

/// Cluster-init accuracy at least the best random accuracy at every size,
/// and within `max_gap` of the large net at the largest size.
pub fn judge_cluster_init(rows: &[ClusterInitRow], max_gap: f64) -> Result<String, String> {
    let mut fails = Vec::new();
    for r in rows {
        if r.cluster_init_test_accuracy < r.best_random_test_accuracy {
            fails.push(format!(
                "n = {}: cluster-init {:.4} < best random {:.4}",
                r.train_size, r.cluster_init_test_accuracy, r.best_random_test_accuracy
            ));
        }
    }
    let Some(last) = rows.iter().max_by_key(|r| r.train_size) else {
        return Err("no rows".into());
    };
    let gap = last.large_test_accuracy - last.cluster_init_test_accuracy;
    if gap > max_gap {
        fails.push(format!("n = {}: gap to the large net {gap:.4} > {max_gap}", last.train_size));
    }
    if fails.is_empty() {
        Ok(format!(
            "cluster-init >= best random at all {} sizes; gap {gap:.4} at n = {}",
            rows.len(),
            last.train_size
        ))
    } else {
        Err(fails.join("; "))
    }
}

pub fn cluster_init(cfg: &ClusterInitCommandConfig, ctx: &mut Ctx) -> anyhow::Result<Verdict> {
    let (train, test) = cfg.data.load()?;
    let out = cluster_init_experiment(&cfg.experiment, &train, &test, ctx.seed)?;
    println!("{:>6} {:>8} {:>13} {:>12}", "n", "large", "cluster-init", "best random");
    for r in &out.rows {
        println!(
            "{:>6} {:>8.4} {:>13.4} {:>12.4}",
            r.train_size, r.large_test_accuracy, r.cluster_init_test_accuracy, r.best_random_test_accuracy
        );
    }
    ctx.out.csv(".csv", |w| {
        w.write_record([
            "train_size",
            "large_test_accuracy",
            "cluster_init_test_accuracy",
            "best_random_test_accuracy",
            "best_random_lr",
            "best_random_init_std",
        ])?;
        for r in &out.rows {
            w.write_record([
                r.train_size.to_string(),
                r.large_test_accuracy.to_string(),
                r.cluster_init_test_accuracy.to_string(),
                r.best_random_test_accuracy.to_string(),
                r.best_random_lr.to_string(),
                r.best_random_init_std.to_string(),
            ])?;
        }
        Ok(())
    })?;
    ctx.out.csv("-grid.csv", |w| {
        w.write_record(["train_size", "lr", "init_std", "mean_test_accuracy"])?;
        for r in &out.rows {
            for g in &r.grid {
                w.write_record([
                    r.train_size.to_string(),
                    g.lr.to_string(),
                    g.init_std.to_string(),
                    g.mean_test_accuracy.to_string(),
                ])?;
            }
        }
        Ok(())
    })?;
    let centers = out
        .large
        .iter()
        .map(|(n, _, km)| SizeCenters {
            train_size: *n,
            large_median_angle_deg: xordlab::mnist::median(&km.angles()),
            centers: km.centers.clone(),
        })
        .collect();
    ctx.out.json(".json", &ClusterInitSummary { rows: &out.rows, centers })?;
    Ok(match judge_cluster_init(&out.rows, cfg.max_gap) {
        Ok(m) => Verdict::Pass(m),
        Err(m) => Verdict::Fail(m),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteFile {
    pub name: String,
    /// Expected length in bytes.
    pub bytes: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FetchConfig {
    pub base_url: String,
    pub dest: PathBuf,
    pub timeout_s: u64,
    pub files: Vec<RemoteFile>,
}

impl Default for FetchConfig {
    fn default() -> Self {
        let f = |name: &str, bytes| RemoteFile { name: name.into(), bytes };
        FetchConfig {
            base_url: "https://storage.googleapis.com/cvdf-datasets/mnist/".into(),
            dest: PathBuf::from("data/mnist"),
            timeout_s: 120,
            files: vec![
                f("train-images-idx3-ubyte.gz", 9_912_422),
                f("train-labels-idx1-ubyte.gz", 28_881),
                f("t10k-images-idx3-ubyte.gz", 1_648_877),
                f("t10k-labels-idx1-ubyte.gz", 4_542),
            ],
        }
    }
}

#[derive(Serialize)]
struct Fetched {
    name: String,
    expected_bytes: u64,
    bytes: u64,
    sha256: String,
    ok: bool,
}

pub fn fetch(cfg: &FetchConfig, ctx: &mut Ctx) -> anyhow::Result<Verdict> {
    fs::create_dir_all(&cfg.dest)?;
    let agent = ureq::AgentBuilder::new().timeout(Duration::from_secs(cfg.timeout_s)).build();
    let mut fetched = Vec::new();
    for f in &cfg.files {
        let url = format!("{}{}", cfg.base_url, f.name);
        println!("GET {url}");
        let mut body = Vec::new();
        agent
            .get(&url)
            .call()
            .map_err(|e| anyhow::anyhow!("{url}: {e}"))?
            .into_reader()
            .take(f.bytes + 1)
            .read_to_end(&mut body)?;
        let ok = body.len() as u64 == f.bytes;
        if ok {
            fs::write(cfg.dest.join(&f.name), &body)?;
        }
        fetched.push(Fetched {
            name: f.name.clone(),
            expected_bytes: f.bytes,
            bytes: body.len() as u64,
            sha256: Sha256::digest(&body).iter().map(|b| format!("{b:02x}")).collect(),
            ok,
        });
    }
    ctx.out.json(".json", &fetched)?;
    let bad: Vec<&str> = fetched.iter().filter(|f| !f.ok).map(|f| f.name.as_str()).collect();
    if !bad.is_empty() {
        return Ok(Verdict::Fail(format!("length mismatch for {bad:?}")));
    }
    let train = MnistDataset::load_split(&cfg.dest, "train")?;
    let test = MnistDataset::load_split(&cfg.dest, "t10k")?;
    Ok(Verdict::Pass(format!(
        "{} training and {} test images in {}",
        train.len(),
        test.len(),
        cfg.dest.display()
    )))
}
