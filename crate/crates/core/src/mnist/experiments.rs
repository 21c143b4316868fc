use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState, Trainable};
use super::idx::MnistDataset;
use super::kmeans::{median, spherical_kmeans, KMeansConfig, KMeansResult};
use super::net::{forward_backward_counted, ConvNet, NetShape};
use crate::error::{invalid, Error, Result};
use crate::rng::{trial_rng, Rng};

/// The six `(learning rate, init std)` pairs tried for randomly initialized
/// small networks.
pub const RANDOM_INIT_GRID: [(f64, f64); 6] = [(0.01, 0.01), (0.01, 0.05), (0.05, 0.05), (0.05, 0.01), (0.1, 0.5), (0.1, 0.1)];

pub const DEFAULT_TRAIN_SIZES: [usize; 5] = [500, 1000, 2000, 4000, 6000];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MnistTrainConfig {
    pub channels: usize,
    pub filter_size: usize,
    pub train_size: usize,
    pub lr: f64,
    pub init_std: f64,
    pub epochs: usize,
    /// Stop after this many consecutive epochs whose training loss does not
    /// beat the best so far by at least `plateau_min_delta`.
    pub plateau_epochs: usize,
    pub plateau_min_delta: f64,
    /// Batch size is `max(1, train_size / batch_divisor)`.
    pub batch_divisor: usize,
    /// Evaluate on the test set after every epoch, not only at the end.
    pub track_test: bool,
}

impl Default for MnistTrainConfig {
    fn default() -> Self {
        MnistTrainConfig {
            channels: 120,
            filter_size: 3,
            train_size: 6000,
            lr: 0.01,
            init_std: 0.05,
            epochs: 20,
            plateau_epochs: 3,
            plateau_min_delta: 1e-3,
            batch_divisor: 10,
            track_test: true,
        }
    }
}

impl MnistTrainConfig {
    pub fn shape(&self) -> Result<NetShape> {
        NetShape::new(self.channels, self.filter_size)
    }

    pub fn validate(&self) -> Result<()> {
        self.shape()?;
        if self.train_size == 0 || self.epochs == 0 || self.batch_divisor == 0 {
            return Err(invalid("train_size, epochs and batch_divisor must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean of the batch losses seen during the epoch.
    pub train_loss: f64,
    /// Accuracy on the training batches, each measured before its update.
    pub train_accuracy: f64,
    /// `None` unless `track_test` is set.
    pub test_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedNet {
    pub net: ConvNet<f32>,
    pub initial: ConvNet<f32>,
    pub metrics: Vec<EpochMetrics>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// Trains `net` in place with Adam on the first `train_size` examples of
/// `train`. Batch order is reshuffled every epoch from `rng`.
pub fn fit(
    net: &mut ConvNet<f32>,
    cfg: &MnistTrainConfig,
    which: Trainable,
    train: &MnistDataset,
    test: &MnistDataset,
    rng: &mut Rng,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    if train.len() < cfg.train_size {
        return Err(invalid(format!(
            "{} training examples available, {} requested",
            train.len(),
            cfg.train_size
        )));
    }
    let data = train.head(cfg.train_size);
    let batch = (cfg.train_size / cfg.batch_divisor).max(1);
    let mut state = AdamState::new(net.shape);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut metrics = Vec::new();
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        let mut correct = 0;
        for chunk in order.chunks(batch) {
            let (loss, grads, ok) = forward_backward_counted(net, &data, chunk)?;
            correct += ok;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::NumericalFailure {
                    iteration: epoch,
                    detail: "non-finite loss or gradient".into(),
                });
            }
            adam_step(&mut state, &mut net.params, &grads, cfg.lr, which);
            loss_sum += loss as f64;
            batches += 1;
        }
        let train_loss = loss_sum / batches as f64;
        metrics.push(EpochMetrics {
            epoch,
            train_loss,
            train_accuracy: correct as f64 / data.len() as f64,
            test_accuracy: cfg.track_test.then(|| net.accuracy(test)),
        });
        if train_loss < best - cfg.plateau_min_delta {
            best = train_loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.plateau_epochs {
                break;
            }
        }
    }
    Ok(metrics)
}

/// Random truncated-normal initialization followed by full training.
pub fn train_mnist(cfg: &MnistTrainConfig, train: &MnistDataset, test: &MnistDataset, rng: &mut Rng) -> Result<TrainedNet> {
    cfg.validate()?;
    let initial = ConvNet::<f32>::init(cfg.shape()?, cfg.init_std, rng)?;
    let mut net = initial.clone();
    let metrics = fit(&mut net, cfg, Trainable::ALL, train, test, rng)?;
    let last = metrics.last().expect("at least one epoch");
    Ok(TrainedNet {
        train_accuracy: net.accuracy(&train.head(cfg.train_size)),
        test_accuracy: last.test_accuracy.unwrap_or_else(|| net.accuracy(test)),
        net,
        initial,
        metrics,
    })
}

/// Clusters the unit-normalized conv filters (biases excluded).
pub fn cluster_filters(net: &ConvNet<f32>, cfg: &KMeansConfig, rng: &mut Rng) -> Result<KMeansResult> {
    spherical_kmeans(&net.filters(), cfg, rng)
}

/// A small net whose filters are the given centers; FC weights from a
/// truncated normal, biases zero.
pub fn cluster_initialized_net(centers: &[Vec<f64>], filter_size: usize, init_std: f64, rng: &mut Rng) -> Result<ConvNet<f32>> {
    let shape = NetShape::new(centers.len(), filter_size)?;
    let mut net = ConvNet::<f32>::init(shape, init_std, rng)?;
    for (c, center) in centers.iter().enumerate() {
        if center.len() != shape.filter_len() {
            return Err(invalid(format!(
                "center {c} has {} entries, expected {}",
                center.len(),
                shape.filter_len()
            )));
        }
        let l = shape.filter_len();
        for (w, v) in net.params.conv_w[c * l..(c + 1) * l].iter_mut().zip(center) {
            *w = *v as f32;
        }
    }
    Ok(net)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleComparison {
    pub trained_angles: Vec<f64>,
    pub random_angles: Vec<f64>,
    pub trained_median: f64,
    pub random_median: f64,
    pub trained_inertia: f64,
    pub random_inertia: f64,
}

/// Angle-to-nearest-center distributions of a trained net and of its own
/// random initialization, through the same normalize-and-cluster pipeline.
pub fn angle_comparison(trained: &TrainedNet, kmeans: &KMeansConfig, rng: &mut Rng) -> Result<(AngleComparison, KMeansResult)> {
    let t = cluster_filters(&trained.net, kmeans, rng)?;
    let r = cluster_filters(&trained.initial, kmeans, rng)?;
    let (ta, ra) = (t.angles(), r.angles());
    Ok((
        AngleComparison {
            trained_median: median(&ta).unwrap_or(f64::NAN),
            random_median: median(&ra).unwrap_or(f64::NAN),
            trained_inertia: t.inertia,
            random_inertia: r.inertia,
            trained_angles: ta,
            random_angles: ra,
        },
        t,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterInitConfig {
    pub train_sizes: Vec<usize>,
    /// The over-parameterized net; its `train_size` is overridden per size.
    pub large: MnistTrainConfig,
    pub small_channels: usize,
    pub small_lr: f64,
    pub small_init_std: f64,
    /// `(lr, init_std)` pairs for randomly initialized small nets.
    pub grid: Vec<(f64, f64)>,
    pub grid_runs: usize,
    pub cluster_runs: usize,
    pub kmeans: KMeansConfig,
}

impl Default for ClusterInitConfig {
    fn default() -> Self {
        ClusterInitConfig {
            train_sizes: DEFAULT_TRAIN_SIZES.to_vec(),
            large: MnistTrainConfig::default(),
            small_channels: 4,
            small_lr: 0.01,
            small_init_std: 0.05,
            grid: RANDOM_INIT_GRID.to_vec(),
            grid_runs: 20,
            cluster_runs: 20,
            kmeans: KMeansConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub lr: f64,
    pub init_std: f64,
    pub mean_test_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterInitRow {
    pub train_size: usize,
    pub large_test_accuracy: f64,
    pub cluster_init_test_accuracy: f64,
    pub best_random_test_accuracy: f64,
    pub best_random_lr: f64,
    pub best_random_init_std: f64,
    pub grid: Vec<GridCell>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterInitOutcome {
    pub rows: Vec<ClusterInitRow>,
    /// Large net and its clustering at each train size.
    pub large: Vec<(usize, TrainedNet, KMeansResult)>,
}

fn stream(seed: u64, size_idx: usize, role: u64, run: usize) -> Rng {
    trial_rng(seed, ((size_idx as u64) << 40) | (role << 24) | run as u64)
}

/// For each train size: trains the large net, clusters its filters, trains
/// cluster-initialized small nets (filters frozen) and randomly initialized
/// small nets over the grid. Small nets see the test set only once, after
/// training. Accuracies are means over runs; the random baseline is the best
/// grid cell at that size.
pub fn cluster_init_experiment(
    cfg: &ClusterInitConfig,
    train: &MnistDataset,
    test: &MnistDataset,
    seed: u64,
) -> Result<ClusterInitOutcome> {
    if cfg.train_sizes.is_empty() || cfg.grid.is_empty() || cfg.grid_runs == 0 || cfg.cluster_runs == 0 {
        return Err(invalid("cluster-init needs train sizes, a grid and at least one run of each kind"));
    }
    if cfg.kmeans.k != cfg.small_channels {
        return Err(invalid("the number of clusters must equal the small net's channels"));
    }
    let mut rows = Vec::new();
    let mut large = Vec::new();
    for (si, &n) in cfg.train_sizes.iter().enumerate() {
        let lcfg = MnistTrainConfig {
            train_size: n,
            ..cfg.large.clone()
        };
        let big = train_mnist(&lcfg, train, test, &mut stream(seed, si, 0, 0))?;
        let km = cluster_filters(&big.net, &cfg.kmeans, &mut stream(seed, si, 1, 0))?;
        let small_cfg = MnistTrainConfig {
            channels: cfg.small_channels,
            lr: cfg.small_lr,
            init_std: cfg.small_init_std,
            track_test: false,
            ..lcfg.clone()
        };
        let mut cluster_acc = 0.0;
        for run in 0..cfg.cluster_runs {
            let mut rng = stream(seed, si, 2, run);
            let mut net = cluster_initialized_net(&km.centers, lcfg.filter_size, cfg.small_init_std, &mut rng)?;
            fit(&mut net, &small_cfg, Trainable::FROZEN_FILTERS, train, test, &mut rng)?;
            cluster_acc += net.accuracy(test);
        }
        let mut grid = Vec::new();
        for (gi, &(lr, std)) in cfg.grid.iter().enumerate() {
            let gcfg = MnistTrainConfig {
                lr,
                init_std: std,
                ..small_cfg.clone()
            };
            let mut acc = 0.0;
            for run in 0..cfg.grid_runs {
                let mut rng = stream(seed, si, 3 + gi as u64, run);
                acc += train_mnist(&gcfg, train, test, &mut rng)?.test_accuracy;
            }
            grid.push(GridCell {
                lr,
                init_std: std,
                mean_test_accuracy: acc / cfg.grid_runs as f64,
            });
        }
        let best = grid
            .iter()
            .fold(&grid[0], |b, g| if g.mean_test_accuracy > b.mean_test_accuracy { g } else { b })
            .clone();
        rows.push(ClusterInitRow {
            train_size: n,
            large_test_accuracy: big.test_accuracy,
            cluster_init_test_accuracy: cluster_acc / cfg.cluster_runs as f64,
            best_random_test_accuracy: best.mean_test_accuracy,
            best_random_lr: best.lr,
            best_random_init_std: best.init_std,
            grid,
        });
        large.push((n, big, km));
    }
    Ok(ClusterInitOutcome { rows, large })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterBankHeader {
    pub schema_version: u32,
    pub dtype: String,
    pub byte_order: String,
    /// `[channels, f, f]`, row-major.
    pub shape: [usize; 3],
    pub includes_bias: bool,
}

pub const FILTER_BANK_SCHEMA_VERSION: u32 = 1;

/// Writes the conv filters as raw little-endian f32 to `path` and a JSON
/// sidecar to `path` with `.json` appended.
pub fn write_filter_bank(net: &ConvNet<f32>, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(net.params.conv_w.len() * 4);
    for w in &net.params.conv_w {
        bytes.extend_from_slice(&w.to_le_bytes());
    }
    fs::write(path, bytes)?;
    let header = FilterBankHeader {
        schema_version: FILTER_BANK_SCHEMA_VERSION,
        dtype: "f32".into(),
        byte_order: "little-endian".into(),
        shape: [net.shape.channels, net.shape.filter_size, net.shape.filter_size],
        includes_bias: false,
    };
    fs::write(sidecar(path), serde_json::to_string_pretty(&header)? + "\n")?;
    Ok(())
}

fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Filters read back from a bank written by [`write_filter_bank`].
pub fn read_filter_bank(path: &Path) -> Result<(FilterBankHeader, Vec<Vec<f32>>)> {
    let header: FilterBankHeader = serde_json::from_str(&fs::read_to_string(sidecar(path))?)?;
    if header.dtype != "f32" || header.byte_order != "little-endian" {
        return Err(invalid(format!(
            "unsupported filter bank encoding {} {}",
            header.dtype, header.byte_order
        )));
    }
    let bytes = fs::read(path)?;
    let [c, f, g] = header.shape;
    if bytes.len() != c * f * g * 4 {
        return Err(Error::Parse {
            offset: bytes.len() as u64,
            detail: format!("expected {} bytes for shape {:?}", c * f * g * 4, header.shape),
        });
    }
    let vals: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok((header, vals.chunks(f * g).map(|c| c.to_vec()).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mnist::idx::PIXELS;
    use crate::rng::seeded;
    use rand::Rng as _;

    /// Ten synthetic "digits": a bright horizontal bar at a class-specific row.
    fn toy(n: usize, seed: u64) -> MnistDataset {
        let mut rng = seeded(seed);
        let mut images = vec![0f32; n * PIXELS];
        let mut labels = Vec::new();
        for i in 0..n {
            let l = (i % 10) as u8;
            let row = 3 + 2 * l as usize;
            for x in 4..24 {
                images[i * PIXELS + row * 28 + x] = 0.8 + 0.2 * rng.random::<f32>();
            }
            for p in 0..PIXELS {
                images[i * PIXELS + p] += 0.05 * rng.random::<f32>();
            }
            labels.push(l);
        }
        MnistDataset::new(images, labels).unwrap()
    }

    #[test]
    fn training_learns_a_toy_problem() {
        let train = toy(200, 1);
        let test = toy(100, 2);
        let cfg = MnistTrainConfig {
            channels: 4,
            train_size: 200,
            epochs: 15,
            ..Default::default()
        };
        let a = train_mnist(&cfg, &train, &test, &mut seeded(3)).unwrap();
        assert!(a.test_accuracy > 0.9, "{:?}", a.metrics);
        let b = train_mnist(&cfg, &train, &test, &mut seeded(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn frozen_filters_stay_at_centers() {
        let train = toy(100, 4);
        let centers: Vec<Vec<f64>> = (0..4)
            .map(|c| (0..9).map(|i| if i == c * 2 { 1.0 } else { 0.0 }).collect())
            .collect();
        let mut rng = seeded(5);
        let mut net = cluster_initialized_net(&centers, 3, 0.05, &mut rng).unwrap();
        let before = net.params.conv_w.clone();
        let cfg = MnistTrainConfig {
            channels: 4,
            train_size: 100,
            epochs: 2,
            ..Default::default()
        };
        fit(&mut net, &cfg, Trainable::FROZEN_FILTERS, &train, &train, &mut rng).unwrap();
        assert_eq!(net.params.conv_w, before);
        assert!(net.params.conv_b.iter().any(|&b| b != 0.0));
    }

    #[test]
    fn filter_bank_round_trip() {
        let net = ConvNet::<f32>::init(NetShape::new(5, 3).unwrap(), 0.05, &mut seeded(6)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("filters.f32");
        write_filter_bank(&net, &p).unwrap();
        let (h, filters) = read_filter_bank(&p).unwrap();
        assert_eq!(h.shape, [5, 3, 3]);
        assert_eq!(filters.concat(), net.params.conv_w);
    }

    #[test]
    fn grid_has_six_pairs() {
        assert_eq!(RANDOM_INIT_GRID.len(), 6);
        let mut g = RANDOM_INIT_GRID.to_vec();
        g.dedup();
        assert_eq!(g.len(), 6);
    }
}
