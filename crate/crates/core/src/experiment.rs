//! Replicated training runs, node-count sweeps and paired method comparisons.
//!
//! Each replica draws its own train/test split and training seed from the
//! master seed and the replica index only, so runs that differ in method,
//! depth or width still see the same data per replica. Replicas run on a
//! rayon pool and are written back in index order; file contents therefore do
//! not depend on scheduling.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradopt::{
    mse, train_global, train_pretrained, write_epoch_log, xavier_init, AdamConfig, EpochRecord,
};
use crate::layerwise::train_layerwise;
use crate::metropolis::MetropolisConfig;
use crate::model::ResidualNet;
use crate::seeds;
use crate::targets::{gen_dataset, DataSpec, Target, DEFAULT_WIDTH};

/// 1: layer-by-layer Metropolis; 2: Xavier initialization and Adam;
/// 3: layer-by-layer pretraining on a subset, then Adam.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Method {
    Layerwise,
    Xavier,
    Pretrained,
}

impl Method {
    pub fn number(self) -> u8 {
        match self {
            Method::Layerwise => 1,
            Method::Xavier => 2,
            Method::Pretrained => 3,
        }
    }
}

impl TryFrom<u8> for Method {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Method::Layerwise),
            2 => Ok(Method::Xavier),
            3 => Ok(Method::Pretrained),
            _ => Err(format!("method must be 1, 2 or 3, got {v}")),
        }
    }
}

impl From<Method> for u8 {
    fn from(m: Method) -> u8 {
        m.number()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v: u8 = s
            .trim()
            .parse()
            .map_err(|_| Error::invalid("method", format!("expected 1, 2 or 3, got {s:?}")))?;
        Method::try_from(v).map_err(|e| Error::invalid("method", e))
    }
}

/// Metropolis settings shared by every layer; `gamma` and `step` default to
/// `3d − 2` and `0.5·2.4²/d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainSettings {
    /// Chain length `M`.
    pub iterations: usize,
    pub gamma: Option<f64>,
    pub step: Option<f64>,
    pub tikhonov: f64,
    pub refresh_every: usize,
}

impl Default for ChainSettings {
    fn default() -> Self {
        ChainSettings {
            iterations: 500,
            gamma: None,
            step: None,
            tikhonov: 1.1,
            refresh_every: 1,
        }
    }
}

impl ChainSettings {
    pub fn to_config(&self, dim: usize, nodes: usize, seed: u64) -> MetropolisConfig {
        let mut c = MetropolisConfig::standard(dim, nodes, self.iterations, seed);
        if let Some(g) = self.gamma {
            c.gamma = g;
        }
        if let Some(s) = self.step {
            c.step = s;
        }
        c.tikhonov = self.tikhonov;
        c.refresh_every = self.refresh_every;
        c.with_iterations(self.iterations)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    pub target: Target,
    pub dim: usize,
    /// Total node count `KL`; every layer gets `KL / L` nodes.
    pub kl: usize,
    pub layers: usize,
    /// `KL` values visited by a sweep.
    pub sweep: Vec<usize>,
    pub n_train: usize,
    pub n_test: usize,
    /// Pretraining subset size `N₁` (method 3).
    pub n_pre: Option<usize>,
    /// Replica count `M̄`.
    pub replicas: usize,
    /// Target width `a`.
    pub width: f64,
    pub normalize_targets: bool,
    pub noise_sd: f64,
    pub metropolis: ChainSettings,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Cap on concurrently running replicas; `None` uses every core.
    pub threads: Option<usize>,
    pub save_models: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            method: Method::Layerwise,
            target: Target::F1,
            dim: 3,
            kl: 80,
            layers: 1,
            sweep: Vec::new(),
            n_train: 5000,
            n_test: 5000,
            n_pre: None,
            replicas: 5,
            width: DEFAULT_WIDTH,
            normalize_targets: true,
            noise_sd: 0.0,
            metropolis: ChainSettings::default(),
            adam: AdamConfig::default(),
            seed: 0,
            threads: None,
            save_models: false,
        }
    }
}

fn bad(field: &str, reason: impl Into<String>) -> Error {
    Error::InvalidConfig {
        field: field.into(),
        reason: reason.into(),
    }
}

fn prefixed(prefix: &str, e: Error) -> Error {
    match e {
        Error::InvalidConfig { field, reason } => bad(&format!("{prefix}.{field}"), reason),
        other => other,
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
            what: "experiment config",
            field: e.path().to_string(),
            reason: e.inner().to_string(),
        })?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Nodes per layer `K`.
    pub fn nodes(&self) -> usize {
        self.kl / self.layers.max(1)
    }

    pub fn with_kl(&self, kl: usize) -> Self {
        ExperimentConfig { kl, ..self.clone() }
    }

    pub fn data_spec(&self) -> DataSpec {
        DataSpec {
            n_train: self.n_train,
            n_test: self.n_test,
            dim: self.dim,
            target: self.target,
            a: self.width,
            normalize_targets: self.normalize_targets,
            noise_sd: self.noise_sd,
        }
    }

    fn check_kl(&self, kl: usize, field: &str) -> Result<()> {
        if kl == 0 || !kl.is_multiple_of(self.layers) {
            return Err(bad(
                field,
                format!("{kl} is not a positive multiple of layers = {}", self.layers),
            ));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(bad("dim", "must be >= 1"));
        }
        if self.layers == 0 {
            return Err(bad("layers", "must be >= 1"));
        }
        self.check_kl(self.kl, "kl")?;
        for &k in &self.sweep {
            self.check_kl(k, "sweep")?;
        }
        if self.n_train < 2 {
            return Err(bad("n_train", "must be >= 2"));
        }
        if self.n_test == 0 {
            return Err(bad("n_test", "must be >= 1"));
        }
        if self.replicas == 0 {
            return Err(bad("replicas", "must be >= 1"));
        }
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(bad("width", "must be > 0"));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(bad("noise_sd", "must be >= 0"));
        }
        if self.threads == Some(0) {
            return Err(bad("threads", "must be >= 1"));
        }
        if matches!(self.method, Method::Layerwise | Method::Pretrained) {
            self.metropolis
                .to_config(self.dim, self.nodes(), 0)
                .validate()
                .map_err(|e| prefixed("metropolis", e))?;
        }
        if matches!(self.method, Method::Xavier | Method::Pretrained) {
            self.adam.validate().map_err(|e| prefixed("adam", e))?;
        }
        if self.method == Method::Pretrained {
            match self.n_pre {
                None => return Err(bad("n_pre", "required for method 3")),
                Some(n) if n == 0 || n > self.n_train => {
                    return Err(bad("n_pre", format!("must be in 1..={}, got {n}", self.n_train)))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

/// `(data seed, training seed)` of a replica; independent of method, depth
/// and width.
pub fn replica_seeds(master: u64, replica: usize) -> (u64, u64) {
    let r = replica as u64;
    (
        seeds::derive(master, &[seeds::STREAM_REPLICA, r, 0]),
        seeds::derive(master, &[seeds::STREAM_REPLICA, r, 1]),
    )
}

#[derive(Debug, Clone)]
pub struct ReplicaOutcome {
    pub replica: usize,
    /// Data seed of the replica.
    pub seed: u64,
    /// Test mean squared error.
    pub error: f64,
    pub net: ResidualNet,
    /// Adam epochs with the test set as validation; empty for method 1.
    pub history: Vec<EpochRecord>,
}

/// Errors of `M̄` replicas with mean `e`, unbiased standard deviation `σ`
/// and bar `[e − 2σ, e + 2σ]`.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub method: Method,
    pub dim: usize,
    pub nodes: usize,
    pub layers: usize,
    pub kl: usize,
    pub replicas: Vec<ReplicaOutcome>,
    pub mean: f64,
    pub sd: f64,
    pub bar: (f64, f64),
}

impl ExperimentResult {
    pub fn errors(&self) -> Vec<f64> {
        self.replicas.iter().map(|r| r.error).collect()
    }
}

/// Mean, unbiased standard deviation (0 for one value) and 2σ bar.
pub fn error_bar(errors: &[f64]) -> (f64, f64, (f64, f64)) {
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let sd = if errors.len() > 1 {
        (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd, (mean - 2.0 * sd, mean + 2.0 * sd))
}

fn train_replica(cfg: &ExperimentConfig, replica: usize) -> Result<ReplicaOutcome> {
    let (data_seed, train_seed) = replica_seeds(cfg.seed, replica);
    let (train, test) = gen_dataset(&cfg.data_spec(), data_seed)?;
    let k = cfg.nodes();
    let (net, history) = match cfg.method {
        Method::Layerwise => {
            let chain = cfg.metropolis.to_config(cfg.dim, k, train_seed);
            (train_layerwise(&train, cfg.layers, &chain)?.net, Vec::new())
        }
        Method::Xavier => {
            let init = xavier_init(cfg.layers, k, cfg.dim, train_seed)?;
            let fit = train_global(init, &train, Some(&test), &cfg.adam, train_seed)?;
            (fit.net, fit.history)
        }
        Method::Pretrained => {
            let chain = cfg.metropolis.to_config(cfg.dim, k, train_seed);
            let n_pre = cfg.n_pre.expect("validated");
            let fit = train_pretrained(&train, Some(&test), n_pre, cfg.layers, &chain, &cfg.adam, train_seed)?;
            (fit.global.net, fit.global.history)
        }
    };
    let error = mse(&net, &test)?;
    log::info!(
        "method {} L={} KL={} replica {replica}: test mse {error:.4e}",
        cfg.method,
        cfg.layers,
        cfg.kl
    );
    Ok(ReplicaOutcome {
        replica,
        seed: data_seed,
        error,
        net,
        history,
    })
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::invalid("threads", e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let replicas: Vec<ReplicaOutcome> = in_pool(cfg.threads, || {
        (0..cfg.replicas)
            .into_par_iter()
            .map(|r| train_replica(cfg, r))
            .collect::<Result<Vec<_>>>()
    })??;
    let errors: Vec<f64> = replicas.iter().map(|r| r.error).collect();
    let (mean, sd, bar) = error_bar(&errors);
    Ok(ExperimentResult {
        method: cfg.method,
        dim: cfg.dim,
        nodes: cfg.nodes(),
        layers: cfg.layers,
        kl: cfg.kl,
        replicas,
        mean,
        sd,
        bar,
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "loglog_slope",
            expected: x.len(),
            found: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(Error::invalid("points", format!("need >= 3, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("points", "log-log fit needs positive values"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("points", "all x values coincide"));
    }
    Ok(sxy / sxx)
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub points: Vec<ExperimentResult>,
    /// Fitted slope of `log e` against `log KL`.
    pub slope: f64,
}

pub fn sweep_kl(cfg: &ExperimentConfig) -> Result<SweepResult> {
    if cfg.sweep.len() < 3 {
        return Err(bad("sweep", format!("needs >= 3 KL values, got {}", cfg.sweep.len())));
    }
    let points = cfg
        .sweep
        .iter()
        .map(|&kl| run_experiment(&cfg.with_kl(kl)))
        .collect::<Result<Vec<_>>>()?;
    let x: Vec<f64> = points.iter().map(|p| p.kl as f64).collect();
    let y: Vec<f64> = points.iter().map(|p| p.mean).collect();
    let slope = loglog_slope(&x, &y)?;
    Ok(SweepResult { points, slope })
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub first: ExperimentResult,
    pub second: ExperimentResult,
    /// Replicas where the first method has strictly lower error.
    pub first_wins: usize,
    pub second_wins: usize,
}

/// Runs two configurations that differ only in `method` on matched replica
/// seeds.
pub fn compare_methods(a: &ExperimentConfig, b: &ExperimentConfig) -> Result<CompareReport> {
    let mut b_as_a = b.clone();
    b_as_a.method = a.method;
    if &b_as_a != a {
        let va = serde_json::to_value(a)?;
        let vb = serde_json::to_value(&b_as_a)?;
        let fields: Vec<String> = match (va, vb) {
            (serde_json::Value::Object(x), serde_json::Value::Object(y)) => {
                x.iter().filter(|(k, v)| y.get(*k) != Some(*v)).map(|(k, _)| k.clone()).collect()
            }
            _ => Vec::new(),
        };
        return Err(bad(&fields.join(","), "configurations differ outside `method`"));
    }
    let first = run_experiment(a)?;
    let second = run_experiment(b)?;
    let (mut first_wins, mut second_wins) = (0, 0);
    for (x, y) in first.replicas.iter().zip(&second.replicas) {
        if x.error < y.error {
            first_wins += 1;
        } else if y.error < x.error {
            second_wins += 1;
        }
    }
    Ok(CompareReport {
        first,
        second,
        first_wins,
        second_wins,
    })
}

/// Appends one row per replica: `method,d,K,L,KL,replica,seed,error`.
pub fn write_results(path: &Path, results: &[&ExperimentResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "d", "K", "L", "KL", "replica", "seed", "error"])?;
    for r in results {
        for rep in &r.replicas {
            w.write_record([
                r.method.to_string(),
                r.dim.to_string(),
                r.nodes.to_string(),
                r.layers.to_string(),
                r.kl.to_string(),
                rep.replica.to_string(),
                rep.seed.to_string(),
                rep.error.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One row per configuration: mean, standard deviation and bar endpoints.
pub fn write_summary(path: &Path, results: &[&ExperimentResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "d", "K", "L", "KL", "replicas", "mean", "sd", "bar_low", "bar_high"])?;
    for r in results {
        w.write_record([
            r.method.to_string(),
            r.dim.to_string(),
            r.nodes.to_string(),
            r.layers.to_string(),
            r.kl.to_string(),
            r.replicas.len().to_string(),
            r.mean.to_string(),
            r.sd.to_string(),
            r.bar.0.to_string(),
            r.bar.1.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    build: &'a str,
    config: &'a ExperimentConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    slope: Option<f64>,
}

/// Resolved configuration, build identifier and, for sweeps, the fitted
/// slope. Contains no timestamps.
pub fn write_manifest(
    path: &Path,
    command: &str,
    build: &str,
    config: &ExperimentConfig,
    slope: Option<f64>,
) -> Result<()> {
    let m = Manifest {
        command,
        build,
        config,
        slope,
    };
    let text = serde_json::to_string_pretty(&m)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes each replica's Adam history as
/// `epochs/method{m}_L{L}_KL{KL}_r{r}.csv`; nothing for method 1.
pub fn write_epoch_logs(dir: &Path, result: &ExperimentResult) -> Result<()> {
    if result.replicas.iter().all(|r| r.history.is_empty()) {
        return Ok(());
    }
    let logs = dir.join("epochs");
    std::fs::create_dir_all(&logs).map_err(|e| Error::io(&logs, e))?;
    for rep in &result.replicas {
        let name = format!(
            "method{}_L{}_KL{}_r{}.csv",
            result.method, result.layers, result.kl, rep.replica
        );
        write_epoch_log(&logs.join(name), &rep.history)?;
    }
    Ok(())
}

/// Saves every replica's net as `models/method{m}_L{L}_KL{KL}_r{r}.json`.
pub fn save_models(dir: &Path, result: &ExperimentResult) -> Result<()> {
    let models = dir.join("models");
    std::fs::create_dir_all(&models).map_err(|e| Error::io(&models, e))?;
    for rep in &result.replicas {
        let name = format!(
            "method{}_L{}_KL{}_r{}.json",
            result.method, result.layers, result.kl, rep.replica
        );
        rep.net.save(&models.join(name))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(method: Method) -> ExperimentConfig {
        ExperimentConfig {
            method,
            dim: 2,
            kl: 8,
            layers: 2,
            n_train: 60,
            n_test: 40,
            n_pre: Some(30),
            replicas: 3,
            metropolis: ChainSettings {
                iterations: 5,
                ..ChainSettings::default()
            },
            adam: AdamConfig::new(2, 20, 1e-3),
            seed: 7,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn config_round_trip() {
        let mut cfg = small(Method::Pretrained);
        cfg.sweep = vec![4, 8, 16];
        cfg.threads = Some(2);
        cfg.metropolis.gamma = Some(5.0);
        let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_config_takes_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"method": 2, "adam": {"epochs": 7}}"#).unwrap();
        assert_eq!(cfg.method, Method::Xavier);
        assert_eq!(cfg.adam.epochs, 7);
        assert_eq!(cfg.adam.batch_size, 100);
        assert_eq!(cfg.dim, ExperimentConfig::default().dim);
    }

    #[test]
    fn config_errors_name_the_field() {
        let e = ExperimentConfig::from_json(r#"{"metropolis": {"iterations": "x"}}"#).unwrap_err();
        assert!(e.to_string().contains("metropolis.iterations"), "{e}");
        let e = ExperimentConfig::from_json(r#"{"method": 4}"#).unwrap_err();
        assert!(e.to_string().contains("method"), "{e}");
        let e = ExperimentConfig::from_json(r#"{"bogus": 1}"#).unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
    }

    #[test]
    fn validation() {
        let ok = small(Method::Pretrained);
        ok.validate().unwrap();
        let field = |c: ExperimentConfig| match c.validate().unwrap_err() {
            Error::InvalidConfig { field, .. } => field,
            e => panic!("{e}"),
        };
        assert_eq!(field(ExperimentConfig { kl: 9, ..ok.clone() }), "kl");
        assert_eq!(field(ExperimentConfig { n_pre: None, ..ok.clone() }), "n_pre");
        assert_eq!(field(ExperimentConfig { n_pre: Some(61), ..ok.clone() }), "n_pre");
        assert_eq!(field(ExperimentConfig { replicas: 0, ..ok.clone() }), "replicas");
        assert_eq!(field(ExperimentConfig { sweep: vec![8, 3], ..ok.clone() }), "sweep");
        let mut c = ok.clone();
        c.adam.batch_size = 0;
        assert_eq!(field(c), "adam.batch_size");
        let mut c = ok.clone();
        c.metropolis.refresh_every = 0;
        assert_eq!(field(c), "metropolis.refresh_every");
        // Method 2 does not look at the chain settings or the subset size.
        let mut c = ExperimentConfig { n_pre: None, ..small(Method::Xavier) };
        c.metropolis.refresh_every = 0;
        c.validate().unwrap();
    }

    #[test]
    fn error_bar_examples() {
        let (m, s, bar) = error_bar(&[0.3]);
        assert_eq!((m, s, bar), (0.3, 0.0, (0.3, 0.3)));
        let (m, s, bar) = error_bar(&[1.0, 2.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
        assert_eq!(bar, (0.0, 4.0));
    }

    #[test]
    fn slope_of_power_law() {
        let x = [10.0, 20.0, 40.0, 80.0, 160.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 / v).collect();
        assert!((loglog_slope(&x, &y).unwrap() + 1.0).abs() < 1e-12);
        assert!(loglog_slope(&x[..2], &y[..2]).is_err());
        assert!(loglog_slope(&[1.0, 2.0, 3.0], &[1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn every_method_runs_and_errors_are_positive() {
        for m in [Method::Layerwise, Method::Xavier, Method::Pretrained] {
            let r = run_experiment(&small(m)).unwrap();
            assert_eq!(r.replicas.len(), 3);
            assert_eq!(r.nodes, 4);
            assert!(r.replicas.iter().all(|x| x.error > 0.0 && x.error.is_finite()));
            assert!(r.bar.0 <= r.bar.1);
        }
    }

    #[test]
    fn single_replica_has_degenerate_bar() {
        let r = run_experiment(&ExperimentConfig { replicas: 1, ..small(Method::Layerwise) }).unwrap();
        assert_eq!(r.sd, 0.0);
        assert_eq!(r.bar, (r.mean, r.mean));
    }

    #[test]
    fn replicas_independent_of_scheduling() {
        let a = run_experiment(&ExperimentConfig { threads: Some(1), ..small(Method::Layerwise) }).unwrap();
        let b = run_experiment(&ExperimentConfig { threads: Some(3), ..small(Method::Layerwise) }).unwrap();
        assert_eq!(a.errors(), b.errors());
        // Replica r alone reproduces replica r of the batch.
        let one = train_replica(&small(Method::Layerwise), 2).unwrap();
        assert_eq!(one.error, a.replicas[2].error);
    }

    #[test]
    fn compare_identical_methods_ties() {
        let c = small(Method::Xavier);
        let r = compare_methods(&c, &c).unwrap();
        assert_eq!(r.first.errors(), r.second.errors());
        assert_eq!((r.first_wins, r.second_wins), (0, 0));
    }

    #[test]
    fn compare_rejects_other_differences() {
        let a = small(Method::Xavier);
        let b = ExperimentConfig { method: Method::Pretrained, n_train: 70, ..a.clone() };
        match compare_methods(&a, &b).unwrap_err() {
            Error::InvalidConfig { field, .. } => assert_eq!(field, "n_train"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn sweep_needs_three_points() {
        let c = ExperimentConfig { sweep: vec![4, 8], ..small(Method::Layerwise) };
        assert!(sweep_kl(&c).is_err());
    }

    #[test]
    fn written_files_are_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig { sweep: vec![2, 4, 8], ..small(Method::Layerwise) };
        let mut texts = Vec::new();
        for run in 0..2 {
            let sub = dir.path().join(run.to_string());
            std::fs::create_dir_all(&sub).unwrap();
            let s = sweep_kl(&cfg).unwrap();
            let refs: Vec<&ExperimentResult> = s.points.iter().collect();
            write_results(&sub.join("results.csv"), &refs).unwrap();
            write_summary(&sub.join("summary.csv"), &refs).unwrap();
            write_manifest(&sub.join("manifest.json"), "sweep", "test", &cfg, Some(s.slope)).unwrap();
            texts.push(
                ["results.csv", "summary.csv", "manifest.json"]
                    .map(|f| std::fs::read(sub.join(f)).unwrap()),
            );
        }
        assert_eq!(texts[0], texts[1]);
        let csv = String::from_utf8(texts[0][0].clone()).unwrap();
        assert!(csv.starts_with("method,d,K,L,KL,replica,seed,error\n"));
        assert_eq!(csv.lines().count(), 1 + 3 * 3);
    }

    #[test]
    fn models_are_saved_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let r = run_experiment(&ExperimentConfig { replicas: 1, ..small(Method::Layerwise) }).unwrap();
        save_models(dir.path(), &r).unwrap();
        let net = ResidualNet::load(&dir.path().join("models/method1_L2_KL8_r0.json")).unwrap();
        assert_eq!(&net, &r.replicas[0].net);
    }
}
