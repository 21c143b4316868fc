use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "xordlab", version, about = "Overparameterization experiments on XOR, XORD and MNIST")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Directory for the manifest and all outputs.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Master seed; per-trial generators are derived from it by trial index.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Number of trials, overriding the config's count.
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// TOML config file; keys missing from it take their defaults.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set theorem.k=150`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Print the effective config as TOML and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the XOR network; reports per run, filters and trace of trial 0.
    XorRun(KArg),
    /// Monte Carlo over XOR runs: local-minimum and initialization-event rates.
    XorMontecarlo(KArg),
    /// Over-parameterized XORD theorem trials on a diverse pair.
    XordTheoremMain(KArg),
    /// `k = 2` XORD trials on a diverse pair.
    XordTheoremSmall,
    /// Train on decoy training sets.
    XordDecoy(DecoyArgs),
    /// Test error against the number of channels.
    XordSweep,
    /// The channel sweep at several hinge margins, paired by seed.
    XordGamma,
    /// Check the `u¹ ↦ −u¹` symmetry of `k = 2` trajectories.
    XordSymmetry,
    /// Sample-complexity bounds.
    Bounds(BoundsArgs),
    /// Class masses, diversity probabilities and `p*` of a distribution.
    DistProbe(DistArgs),
    /// Train the MNIST network.
    MnistTrain,
    /// Cluster MNIST filters and compare with the random initialization.
    MnistCluster,
    /// Small networks initialized from cluster centers against random ones.
    MnistClusterInit,
    /// Download MNIST IDX files and verify their lengths.
    MnistFetch,
}

#[derive(Debug, Args)]
pub struct KArg {
    /// Number of channels.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DecoyArgs {
    /// Number of channels; replaces the configured list.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    #[arg(long)]
    pub p_plus: Option<f64>,
    #[arg(long)]
    pub p_minus: Option<f64>,
    /// Defaults to the smallest admissible value.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub c: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DistArgs {
    #[arg(long)]
    pub d: Option<usize>,
}
