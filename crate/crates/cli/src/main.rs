//! `xordlab`: every experiment and verifier as a subcommand.
//!
//! Exit status is 0 on success, 1 when a verification fails (or the run
//! errors), 2 on usage errors: bad flags, missing or malformed configs,
//! invalid parameters.

mod args;
mod commands;
mod config;
mod output;

use std::process::ExitCode;

use clap::Parser;
use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::Value;

use args::{Cli, Command, Common};
use output::Output;

#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Outcome of a subcommand's own checks.
pub enum Verdict {
    /// Nothing to verify.
    Done,
    Pass(String),
    Fail(String),
}

pub struct Ctx {
    pub out: Output,
    pub seed: u64,
}

fn exit_code_for(e: &anyhow::Error) -> u8 {
    use xordlab::Error as E;
    if e.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match e.downcast_ref::<E>() {
        Some(E::InvalidArgument(_) | E::Config(_) | E::ConfigurationRejected(_) | E::UnsatisfiableDistribution(_)) => 2,
        _ => 1,
    }
}

/// Resolves the config, runs `body` and writes the manifest.
fn execute<C, F>(common: &Common, name: &'static str, trials_keys: &[&str], flags: Vec<(String, Value)>, body: F) -> anyhow::Result<u8>
where
    C: Serialize + DeserializeOwned,
    F: FnOnce(&C, &mut Ctx) -> anyhow::Result<Verdict>,
{
    let mut overrides = common
        .overrides
        .iter()
        .map(|s| config::parse_override(s))
        .collect::<Result<Vec<_>, _>>()?;
    overrides.extend(flags);
    if let Some(n) = common.trials {
        if n == 0 {
            return Err(UsageError("--trials must be >= 1".into()).into());
        }
        if trials_keys.is_empty() {
            eprintln!("note: {name} has no trial count; --trials ignored");
        }
        for k in trials_keys {
            overrides.push((k.to_string(), Value::Integer(n as i64)));
        }
    }
    let cfg: C = config::resolve(common.config.as_deref(), &overrides)?;
    let canonical = config::to_toml(&cfg)?;
    if common.print_config {
        print!("{canonical}");
        return Ok(0);
    }
    match common.threads {
        Some(0) => return Err(UsageError("--threads must be >= 1".into()).into()),
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?,
        None => {}
    }
    let hash = config::config_hash(&canonical);
    let mut ctx = Ctx {
        out: Output::new(&common.out_dir, name, hash, common.seed)?,
        seed: common.seed,
    };
    let verdict = body(&cfg, &mut ctx)?;
    let (code, label) = match &verdict {
        Verdict::Done => (0, "done"),
        Verdict::Pass(msg) => {
            println!("PASS: {msg}");
            (0, "pass")
        }
        Verdict::Fail(msg) => {
            println!("FAIL: {msg}");
            (1, "fail")
        }
    };
    let manifest = ctx.out.finish(&canonical, common.trials, common.threads, label)?;
    println!("manifest: {}", manifest.display());
    Ok(code)
}

fn set(key: &str, v: impl Into<Value>) -> (String, Value) {
    (key.to_string(), v.into())
}

fn opt<T: Into<Value>>(key: &str, v: Option<T>) -> Vec<(String, Value)> {
    v.map(|v| vec![set(key, v)]).unwrap_or_default()
}

fn int(v: Option<usize>) -> Option<i64> {
    v.map(|k| k as i64)
}

fn dispatch(cli: Cli) -> anyhow::Result<u8> {
    use commands::*;
    let c = &cli.common;
    match cli.command {
        Command::XorRun(a) => execute(c, "xor-run", &["trials"], opt("k", int(a.k)), xor::run),
        Command::XorMontecarlo(a) => execute(c, "xor-montecarlo", &["trials"], opt("k", int(a.k)), xor::montecarlo),
        Command::XordTheoremMain(a) => execute(c, "xord-theorem-main", &["trials"], opt("theorem.k", int(a.k)), xord::theorem_main),
        Command::XordTheoremSmall => execute(c, "xord-theorem-small", &["trials"], vec![], xord::theorem_small),
        Command::XordDecoy(a) => {
            let flags =
                a.k.map(|k| vec![set("channels", vec![Value::Integer(k as i64)])])
                    .unwrap_or_default();
            execute(c, "xord-decoy", &["trials"], flags, xord::decoy)
        }
        Command::XordSweep => execute(c, "xord-sweep", &["runs"], vec![], xord::sweep),
        Command::XordGamma => execute(c, "xord-gamma", &["sweep.runs"], vec![], xord::gamma),
        Command::XordSymmetry => execute(c, "xord-symmetry", &["trials"], vec![], xord::symmetry),
        Command::Bounds(a) => {
            let mut flags = opt("p_plus", a.p_plus);
            flags.extend(opt("p_minus", a.p_minus));
            flags.extend(opt("delta", a.delta));
            flags.extend(opt("c", a.c));
            execute(c, "bounds", &[], flags, tools::bounds)
        }
        Command::DistProbe(a) => execute(c, "dist-probe", &["samples"], opt("d", int(a.d)), tools::dist_probe),
        Command::MnistTrain => execute(c, "mnist-train", &[], vec![], mnist::train),
        Command::MnistCluster => execute(c, "mnist-cluster", &[], vec![], mnist::cluster),
        Command::MnistClusterInit => execute(
            c,
            "mnist-cluster-init",
            &["experiment.grid_runs", "experiment.cluster_runs"],
            vec![],
            mnist::cluster_init,
        ),
        Command::MnistFetch => execute(c, "mnist-fetch", &[], vec![], mnist::fetch),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
