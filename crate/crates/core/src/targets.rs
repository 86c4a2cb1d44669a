//! Test functions built on the sine integral, Gaussian datasets and
//! componentwise normalization.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

/// Width parameter used throughout the experiments.
pub const DEFAULT_WIDTH: f64 = 1e-2;

/// Sine integral `∫_0^v sin t / t dt`.
///
/// Power series for `|v| ≤ 4`. Beyond that `Si(v) = π/2 + Im E₁(iv)`, with the
/// exponential integral taken from its continued fraction, which converges
/// quickly for large imaginary arguments.
pub fn si(v: f64) -> f64 {
    let t = v.abs();
    let s = if t <= 4.0 { si_series(t) } else { si_cf(t) };
    s.copysign(v)
}

fn si_series(t: f64) -> f64 {
    let t2 = t * t;
    let mut term = t; // t^{2k+1}/(2k+1)!
    let mut sum = t;
    let mut k = 0u32;
    loop {
        k += 1;
        let a = (2 * k) as f64;
        term *= -t2 / (a * (a + 1.0));
        let contrib = term / (a + 1.0);
        sum += contrib;
        if contrib.abs() < 1e-17 * sum.abs().max(1e-300) {
            return sum;
        }
    }
}

fn si_cf(t: f64) -> f64 {
    const TINY: f64 = 1e-300;
    // modified Lentz for E₁(it)·e^{it}
    let mut b = Complex64::new(1.0, t);
    let mut c = Complex64::new(1.0 / TINY, 0.0);
    let mut d = b.inv();
    let mut h = d;
    for i in 2..10_000 {
        let a = -((i - 1) as f64).powi(2);
        b += 2.0;
        d = (d * a + b).inv();
        c = b + c.inv() * a;
        let del = c * d;
        h *= del;
        if (del - 1.0).norm() < 1e-16 {
            break;
        }
    }
    let h = Complex64::new(t.cos(), -t.sin()) * h;
    FRAC_PI_2 + h.im
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    F1,
    F2,
}

impl Target {
    pub fn eval(self, x: &[f64], a: f64) -> Result<f64> {
        if !(a > 0.0) {
            return Err(Error::invalid("a", format!("must be > 0, got {a}")));
        }
        if x.is_empty() {
            return Err(Error::invalid("x", "needs at least one coordinate"));
        }
        Ok(self.eval_unchecked(x, a))
    }

    fn eval_unchecked(self, x: &[f64], a: f64) -> f64 {
        let s = si(x[0] / a);
        match self {
            Target::F1 => s * (-0.5 * x.iter().map(|v| v * v).sum::<f64>()).exp(),
            Target::F2 => s * (-0.5 * x[0] * x[0]).exp(),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::F1 => "f1",
            Target::F2 => "f2",
        })
    }
}

impl FromStr for Target {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f1" => Ok(Target::F1),
            "f2" => Ok(Target::F2),
            other => Err(Error::invalid("target", format!("expected f1 or f2, got `{other}`"))),
        }
    }
}

/// `Si(x₁/a)·exp(−|x|²/2)`.
pub fn f1(x: &[f64], a: f64) -> Result<f64> {
    Target::F1.eval(x, a)
}

/// `Si(x₁/a)·exp(−x₁²/2)`.
pub fn f2(x: &[f64], a: f64) -> Result<f64> {
    Target::F2.eval(x, a)
}

/// Componentwise affine map `v ↦ (v − mean)/sd`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl NormStats {
    /// Sample mean and unbiased standard deviation of each of the `dim`
    /// components of the row-major `values`.
    pub fn fit(values: &[f64], dim: usize) -> Result<Self> {
        let n = values.len() / dim.max(1);
        if n < 2 {
            return Err(Error::invalid("n", format!("need at least 2 samples, got {n}")));
        }
        let mut mean = vec![0.0; dim];
        for row in values.chunks_exact(dim) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; dim];
        for row in values.chunks_exact(dim) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let sd: Vec<f64> = var.iter().map(|s| (s / (n - 1) as f64).sqrt()).collect();
        if let Some(j) = sd.iter().position(|&s| !(s > 0.0)) {
            return Err(Error::invalid("data", format!("component {j} has zero spread")));
        }
        Ok(NormStats { mean, sd })
    }

    pub fn identity(dim: usize) -> Self {
        NormStats {
            mean: vec![0.0; dim],
            sd: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, values: &mut [f64]) {
        let dim = self.dim();
        for row in values.chunks_exact_mut(dim) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.sd) {
                *v = (*v - m) / s;
            }
        }
    }

    pub fn denormalize(&self, values: &mut [f64]) {
        let dim = self.dim();
        for row in values.chunks_exact_mut(dim) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.sd) {
                *v = *v * s + m;
            }
        }
    }
}

/// Points (row-major, `dim` per row) with scalar targets. Values are stored
/// already normalized; the stats record how to undo that.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
    pub input_stats: NormStats,
    pub target_stats: NormStats,
    pub seed: u64,
}

impl Dataset {
    pub fn new(
        dim: usize,
        inputs: Vec<f64>,
        targets: Vec<f64>,
        input_stats: NormStats,
        target_stats: NormStats,
        seed: u64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "must be >= 1"));
        }
        if inputs.len() != targets.len() * dim {
            return Err(Error::DimensionMismatch {
                context: "dataset inputs vs targets",
                expected: targets.len() * dim,
                found: inputs.len(),
            });
        }
        if input_stats.dim() != dim || target_stats.dim() != 1 {
            return Err(Error::DimensionMismatch {
                context: "normalization stats",
                expected: dim,
                found: input_stats.dim(),
            });
        }
        Ok(Dataset {
            dim,
            inputs,
            targets,
            input_stats,
            target_stats,
            seed,
        })
    }

    /// Unnormalized data with identity stats.
    pub fn raw(dim: usize, inputs: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        Dataset::new(dim, inputs, targets, NormStats::identity(dim), NormStats::identity(1), 0)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn point(&self, n: usize) -> &[f64] {
        &self.inputs[n * self.dim..(n + 1) * self.dim]
    }

    pub fn points(&self) -> std::slice::ChunksExact<'_, f64> {
        self.inputs.chunks_exact(self.dim)
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// The first `n` samples, keeping the stats.
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            dim: self.dim,
            inputs: self.inputs[..n * self.dim].to_vec(),
            targets: self.targets[..n].to_vec(),
            input_stats: self.input_stats.clone(),
            target_stats: self.target_stats.clone(),
            seed: self.seed,
        }
    }

    /// Same inputs, different targets.
    pub fn with_targets(&self, targets: Vec<f64>) -> Result<Dataset> {
        Dataset::new(
            self.dim,
            self.inputs.clone(),
            targets,
            self.input_stats.clone(),
            self.target_stats.clone(),
            self.seed,
        )
    }

    /// Writes `x_1..x_d,y` rows to `path` and the stats to `<path>.meta.json`.
    pub fn write_csv(&self, path: &Path, meta: &DatasetMeta) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (1..=self.dim).map(|j| format!("x_{j}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        let mut rec = Vec::with_capacity(self.dim + 1);
        for (p, y) in self.points().zip(&self.targets) {
            rec.clear();
            rec.extend(p.iter().map(|v| v.to_string()));
            rec.push(y.to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        let sidecar = sidecar_path(path);
        let mut f = fs::File::create(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        serde_json::to_writer_pretty(&mut f, meta)?;
        writeln!(f).map_err(|e| Error::io(&sidecar, e))?;
        Ok(())
    }

    /// Reads a file produced by [`Dataset::write_csv`]. The sidecar is optional;
    /// without it the stats are the identity.
    pub fn read_csv(path: &Path) -> Result<(Dataset, Option<DatasetMeta>)> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        let dim = header.len().saturating_sub(1);
        if dim == 0 || &header[dim] != "y" {
            return Err(Error::Parse {
                what: "dataset csv",
                field: "header".into(),
                reason: "expected columns x_1..x_d,y".into(),
            });
        }
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            for (j, cell) in rec.iter().enumerate() {
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    what: "dataset csv",
                    field: format!("{} (row {})", &header[j], line + 1),
                    reason: format!("not a number: `{cell}`"),
                })?;
                if j < dim {
                    inputs.push(v);
                } else {
                    targets.push(v);
                }
            }
        }
        let sidecar = sidecar_path(path);
        let meta: Option<DatasetMeta> = if sidecar.exists() {
            let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
            Some(serde_json::from_str(&text)?)
        } else {
            None
        };
        let (is, ts, seed) = match &meta {
            Some(m) => (m.input_stats.clone(), m.target_stats.clone(), m.seed),
            None => (NormStats::identity(dim), NormStats::identity(1), 0),
        };
        Ok((Dataset::new(dim, inputs, targets, is, ts, seed)?, meta))
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    s.into()
}

/// Sidecar metadata for an exported dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub split: String,
    pub target: Target,
    pub a: f64,
    pub dim: usize,
    pub n: usize,
    pub seed: u64,
    pub normalize_targets: bool,
    pub input_stats: NormStats,
    pub target_stats: NormStats,
}

impl DatasetMeta {
    pub fn for_dataset(ds: &Dataset, spec: &DataSpec, split: &str) -> Self {
        DatasetMeta {
            split: split.into(),
            target: spec.target,
            a: spec.a,
            dim: ds.dim(),
            n: ds.len(),
            seed: ds.seed,
            normalize_targets: spec.normalize_targets,
            input_stats: ds.input_stats.clone(),
            target_stats: ds.target_stats.clone(),
        }
    }
}

/// How to draw a train/test pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
    pub target: Target,
    #[serde(default = "default_width")]
    pub a: f64,
    #[serde(default = "default_true")]
    pub normalize_targets: bool,
    /// Standard deviation of additive Gaussian noise on the training targets.
    #[serde(default)]
    pub noise_sd: f64,
}

fn default_width() -> f64 {
    DEFAULT_WIDTH
}

fn default_true() -> bool {
    true
}

impl DataSpec {
    pub fn new(n_train: usize, n_test: usize, dim: usize, target: Target) -> Self {
        DataSpec {
            n_train,
            n_test,
            dim,
            target,
            a: DEFAULT_WIDTH,
            normalize_targets: true,
            noise_sd: 0.0,
        }
    }
}

/// Draws standard normal inputs, evaluates the target and normalizes. The
/// test split is normalized with the training statistics.
pub fn gen_dataset(spec: &DataSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    if spec.n_train < 2 {
        return Err(Error::invalid("n", format!("need n >= 2, got {}", spec.n_train)));
    }
    if spec.dim == 0 {
        return Err(Error::invalid("d", "must be >= 1"));
    }
    if !(spec.a > 0.0) {
        return Err(Error::invalid("a", format!("must be > 0, got {}", spec.a)));
    }
    if !(spec.noise_sd >= 0.0) {
        return Err(Error::invalid("noise_sd", "must be >= 0"));
    }
    let d = spec.dim;
    let draw = |n: usize, stream: u64| -> (Vec<f64>, Vec<f64>) {
        let mut rng = seeds::rng(seed, &[stream]);
        let x: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
        let y = x
            .chunks_exact(d)
            .map(|p| spec.target.eval_unchecked(p, spec.a))
            .collect();
        (x, y)
    };
    let (mut xtr, mut ytr) = draw(spec.n_train, seeds::STREAM_DATA_TRAIN);
    let (mut xte, mut yte) = draw(spec.n_test, seeds::STREAM_DATA_TEST);
    if spec.noise_sd > 0.0 {
        let mut rng = seeds::rng(seed, &[seeds::STREAM_DATA_NOISE]);
        for y in &mut ytr {
            let e: f64 = rng.sample(StandardNormal);
            *y += spec.noise_sd * e;
        }
    }

    let input_stats = NormStats::fit(&xtr, d)?;
    let target_stats = if spec.normalize_targets {
        NormStats::fit(&ytr, 1)?
    } else {
        NormStats::identity(1)
    };
    input_stats.normalize(&mut xtr);
    input_stats.normalize(&mut xte);
    target_stats.normalize(&mut ytr);
    target_stats.normalize(&mut yte);

    let train = Dataset::new(d, xtr, ytr, input_stats.clone(), target_stats.clone(), seed)?;
    let test = Dataset::new(d, xte, yte, input_stats, target_stats, seed)?;
    Ok((train, test))
}
