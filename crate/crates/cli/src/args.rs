//! Command-line surface and config resolution.
//!
//! Values come from, highest first: flags, `DEEPRFF_SEED`/`DEEPRFF_THREADS`,
//! the `--config` file, built-in defaults.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use deeprff::experiment::{ExperimentConfig, Method};
use deeprff::targets::Target;

#[derive(Debug, Parser)]
#[command(name = "deeprff", version = env!("DEEPRFF_BUILD"), about = "Deep residual random Fourier feature experiments")]
pub struct Cli {
    /// More log output (-v info, -vv debug); RUST_LOG takes precedence.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dataset export.
    Data {
        #[command(subcommand)]
        command: DataCommand,
    },
    /// Replicated training of one configuration.
    Train(TrainArgs),
    /// Replicated training over a list of total node counts.
    Sweep(SweepArgs),
    /// Two methods on matched replica seeds.
    Compare(CompareArgs),
    /// Numerical checks of the approximation theory.
    VerifyTheory(TheoryArgs),
    /// Test error of a saved model on a dataset file.
    Eval(EvalArgs),
}

#[derive(Debug, Subcommand)]
pub enum DataCommand {
    /// Writes the train/test split that a replica trains on.
    Gen(DataGenArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON experiment config; flags override its fields.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<Target>,
    /// Input dimension d.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Total node count KL.
    #[arg(long)]
    pub kl: Option<usize>,
    /// Layer count L.
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    /// Pretraining subset size N₁ (method 3).
    #[arg(long)]
    pub n_pre: Option<usize>,
    /// Replica count.
    #[arg(long)]
    pub replicas: Option<usize>,
    /// Target width a.
    #[arg(long)]
    pub width: Option<f64>,
    #[arg(long)]
    pub normalize_targets: Option<bool>,
    #[arg(long)]
    pub noise_sd: Option<f64>,
    /// Metropolis iterations M.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Acceptance exponent γ.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Random walk step δ̌.
    #[arg(long)]
    pub step: Option<f64>,
    /// Ridge weight δ̂.
    #[arg(long)]
    pub tikhonov: Option<f64>,
    /// Amplitude re-solve period m.
    #[arg(long)]
    pub refresh_every: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial Adam rate Δt_e.
    #[arg(long)]
    pub base_rate: Option<f64>,
    /// Increment penalty δ̄.
    #[arg(long)]
    pub penalty: Option<f64>,
    /// Master seed.
    #[arg(long, env = "DEEPRFF_SEED")]
    pub seed: Option<u64>,
    /// Cap on concurrently running replicas.
    #[arg(long, env = "DEEPRFF_THREADS")]
    pub threads: Option<usize>,
    /// Write every replica's trained model.
    #[arg(long)]
    pub save_models: bool,
    /// Output directory.
    #[arg(long, short, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DataGenArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Replica whose data seed is used.
    #[arg(long, default_value_t = 0)]
    pub replica: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// 1 layerwise Metropolis, 2 Xavier + Adam, 3 layerwise + Adam.
    #[arg(long)]
    pub method: Option<Method>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub method: Option<Method>,
    /// Comma-separated KL values.
    #[arg(long, value_delimiter = ',')]
    pub sweep: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// The two methods, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1, default_value = "2,3")]
    pub methods: Vec<Method>,
}

#[derive(Debug, Args)]
pub struct TheoryArgs {
    #[arg(long, env = "DEEPRFF_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Summary JSON path.
    #[arg(long, value_name = "FILE")]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model JSON file.
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset CSV as written by `data gen`.
    #[arg(long)]
    pub data: PathBuf,
    /// Writes `y,prediction` rows in the units of the file.
    #[arg(long, value_name = "FILE")]
    pub predictions: Option<PathBuf>,
}

impl ConfigArgs {
    /// File (or defaults) with every given flag applied; not yet validated.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        set(&mut c.target, self.target);
        set(&mut c.dim, self.dim);
        set(&mut c.kl, self.kl);
        set(&mut c.layers, self.layers);
        set(&mut c.n_train, self.n_train);
        set(&mut c.n_test, self.n_test);
        if self.n_pre.is_some() {
            c.n_pre = self.n_pre;
        }
        set(&mut c.replicas, self.replicas);
        set(&mut c.width, self.width);
        set(&mut c.normalize_targets, self.normalize_targets);
        set(&mut c.noise_sd, self.noise_sd);
        set(&mut c.metropolis.iterations, self.iterations);
        if self.gamma.is_some() {
            c.metropolis.gamma = self.gamma;
        }
        if self.step.is_some() {
            c.metropolis.step = self.step;
        }
        set(&mut c.metropolis.tikhonov, self.tikhonov);
        set(&mut c.metropolis.refresh_every, self.refresh_every);
        set(&mut c.adam.epochs, self.epochs);
        set(&mut c.adam.batch_size, self.batch_size);
        set(&mut c.adam.base_rate, self.base_rate);
        set(&mut c.adam.penalty, self.penalty);
        set(&mut c.seed, self.seed);
        if self.threads.is_some() {
            c.threads = self.threads;
        }
        c.save_models |= self.save_models;
        Ok(c)
    }
}

fn set<T>(field: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *field = v;
    }
}
