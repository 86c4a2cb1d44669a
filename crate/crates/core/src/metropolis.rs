//! Random-walk Metropolis sampling of Fourier frequencies.
//!
//! Frequencies start at zero. Each iteration proposes a Gaussian step for all
//! nodes at once, refits the amplitudes for the proposal, and then accepts or
//! rejects node by node with probability `min(1, (|β̂′_k|/|β̂_k|)^γ)`. The chain
//! pushes frequency mass to where the fitted amplitudes are large.
//!
//! The residual variant appends a second, frozen block of features of the
//! running state `z̄`; only the x-branch takes part in the sampling.
//!
//! Random draws come from a single stream in a fixed order per iteration: the
//! `K·d` proposal normals, then `K` uniforms.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{fill_fourier_columns, DesignMatrix, GramSystem};
use crate::model::FourierLayer;
use crate::seeds;
use crate::targets::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetropolisConfig {
    /// Sampling time `T`; the chain runs `⌊T/δ̌²⌋` iterations.
    pub sampling_time: f64,
    /// Proposal step `δ̌`.
    pub step: f64,
    /// Acceptance exponent `γ`.
    pub gamma: f64,
    /// Tikhonov parameter `δ̂`.
    pub tikhonov: f64,
    /// Amplitudes are refit every `m` iterations.
    pub refresh_every: usize,
    /// Nodes per layer.
    pub nodes: usize,
    pub seed: u64,
}

impl MetropolisConfig {
    /// Standard settings for inputs of dimension `d`: `γ = 3d − 2`,
    /// `δ̌ = 0.5·2.4²/d`, `δ̂ = 1.1`, `m = 1`, with `T` chosen so the chain
    /// runs exactly `iterations` steps.
    pub fn standard(d: usize, nodes: usize, iterations: usize, seed: u64) -> Self {
        let d = d.max(1) as f64;
        let step = 0.5 * 2.4 * 2.4 / d;
        MetropolisConfig {
            sampling_time: Self::time_for(iterations, step),
            step,
            gamma: 3.0 * d - 2.0,
            tikhonov: 1.1,
            refresh_every: 1,
            nodes,
            seed,
        }
    }

    /// Sampling time giving `iterations` steps at step length `step`. The half
    /// step of slack keeps the floor robust to rounding.
    pub fn time_for(iterations: usize, step: f64) -> f64 {
        (iterations as f64 + 0.5) * step * step
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.sampling_time = Self::time_for(iterations, self.step);
        self
    }

    pub fn iterations(&self) -> usize {
        (self.sampling_time / (self.step * self.step)).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| Error::InvalidConfig {
            field: field.into(),
            reason,
        };
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(bad("step", format!("must be > 0, got {}", self.step)));
        }
        if !(self.gamma > 0.0) {
            return Err(bad("gamma", format!("must be > 0, got {}", self.gamma)));
        }
        if !(self.tikhonov >= 0.0) {
            return Err(bad("tikhonov", format!("must be >= 0, got {}", self.tikhonov)));
        }
        if self.refresh_every == 0 {
            return Err(bad("refresh_every", "must be >= 1".into()));
        }
        if self.nodes == 0 {
            return Err(bad("nodes", "must be >= 1".into()));
        }
        if !(self.sampling_time.is_finite()) || self.iterations() == 0 {
            return Err(bad(
                "sampling_time",
                format!("T/step² must be >= 1, got {}", self.sampling_time / (self.step * self.step)),
            ));
        }
        Ok(())
    }
}

/// Acceptance counts of one chain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ChainStats {
    pub proposed: u64,
    pub accepted: u64,
}

impl ChainStats {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub layer: FourierLayer,
    pub stats: ChainStats,
}

/// Source of the chain's random numbers.
pub(crate) trait Draws {
    fn normal(&mut self) -> f64;
    fn uniform(&mut self) -> f64;
}

impl Draws for ChaCha8Rng {
    fn normal(&mut self) -> f64 {
        self.sample(StandardNormal)
    }
    fn uniform(&mut self) -> f64 {
        self.random::<f64>()
    }
}

/// Metropolis test for one node. A vanishing current amplitude is beaten by
/// any nonzero proposal; two vanishing amplitudes reject.
pub(crate) fn accepts(current: f64, proposed: f64, gamma: f64, u: f64) -> bool {
    if current == 0.0 {
        return proposed > 0.0;
    }
    (proposed / current).powf(gamma) > u
}

pub(crate) struct ChainOutput {
    pub freq: Vec<f64>,
    pub coef: Vec<f64>,
    pub stats: ChainStats,
}

/// Runs the chain on row-major `points` with the frozen columns `fixed`
/// (column-major, `N` rows each) appended after the sampled block.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_chain<R: Draws>(
    points: &[f64],
    dim: usize,
    targets: &[f64],
    fixed: &[f64],
    nodes: usize,
    iterations: usize,
    step: f64,
    gamma: f64,
    tikhonov: f64,
    refresh_every: usize,
    rng: &mut R,
    mut trace: Option<&mut Vec<Vec<f64>>>,
) -> Result<ChainOutput> {
    let n = targets.len();
    let kx = 2 * nodes;
    let fixed_cols = fixed.len() / n.max(1);
    let x_idx: Vec<usize> = (0..kx).collect();
    let fixed_idx: Vec<usize> = (kx..kx + fixed_cols).collect();

    let mut freq = vec![0.0; nodes * dim];
    let mut design = DesignMatrix::zeros(n, kx + fixed_cols);
    fill_fourier_columns(points, dim, &freq, &mut design, 0);
    for c in 0..fixed_cols {
        design.column_mut(kx + c).copy_from_slice(&fixed[c * n..(c + 1) * n]);
    }
    let mut sys = GramSystem::new(design, targets)?;
    let mut coef = sys.solve(tikhonov)?;
    let mut coef_fresh = true;

    let mut stats = ChainStats::default();
    let mut proposal_freq = vec![0.0; nodes * dim];
    let mut proposal_cols = DesignMatrix::zeros(n, kx);
    let mut mask = vec![false; nodes];

    for i in 1..=iterations {
        for (p, w) in proposal_freq.iter_mut().zip(&freq) {
            *p = w + step * rng.normal();
        }
        fill_fourier_columns(points, dim, &proposal_freq, &mut proposal_cols, 0);
        let proposal = sys.with_columns(&x_idx, proposal_cols.as_col_major());
        let proposal_coef = proposal.solve(tikhonov)?;

        let mut n_acc = 0;
        for k in 0..nodes {
            let u = rng.uniform();
            let cur = coef[2 * k].hypot(coef[2 * k + 1]);
            let new = proposal_coef[2 * k].hypot(proposal_coef[2 * k + 1]);
            mask[k] = accepts(cur, new, gamma, u);
            if mask[k] {
                n_acc += 1;
                freq[k * dim..(k + 1) * dim].copy_from_slice(&proposal_freq[k * dim..(k + 1) * dim]);
                coef[2 * k] = proposal_coef[2 * k];
                coef[2 * k + 1] = proposal_coef[2 * k + 1];
            }
        }
        stats.proposed += nodes as u64;
        stats.accepted += n_acc as u64;

        if n_acc == nodes {
            sys = proposal;
            // the proposal fit is the fit of the new design
            coef = proposal_coef;
            coef_fresh = true;
        } else if n_acc > 0 {
            let cols: Vec<usize> = (0..nodes)
                .filter(|&k| mask[k])
                .flat_map(|k| [2 * k, 2 * k + 1])
                .collect();
            sys.adopt_columns(&proposal, &cols, &fixed_idx);
            coef_fresh = false;
        }

        if i % refresh_every == 0 && !coef_fresh {
            coef = sys.solve(tikhonov)?;
            coef_fresh = true;
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(freq.clone());
        }
    }
    if !coef_fresh {
        coef = sys.solve(tikhonov)?;
    }
    Ok(ChainOutput { freq, coef, stats })
}

fn to_complex(coef: &[f64]) -> Vec<Complex64> {
    coef.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect()
}

fn check_size(data: &Dataset, cfg: &MetropolisConfig) -> Result<()> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("data", "empty dataset"));
    }
    if cfg.nodes > 2 * data.len() {
        log::warn!(
            "{} nodes for {} samples: the least-squares problem is underdetermined",
            cfg.nodes,
            data.len()
        );
    }
    Ok(())
}

/// Samples `K` frequencies for a one-layer feature model of `data`.
pub fn arfm_train(data: &Dataset, cfg: &MetropolisConfig) -> Result<Trained> {
    check_size(data, cfg)?;
    let mut rng = seeds::rng(cfg.seed, &[]);
    let out = run_chain(
        data.inputs(),
        data.dim(),
        data.targets(),
        &[],
        cfg.nodes,
        cfg.iterations(),
        cfg.step,
        cfg.gamma,
        cfg.tikhonov,
        cfg.refresh_every,
        &mut rng,
        None,
    )?;
    log::debug!("arfm chain: acceptance rate {:.3}", out.stats.rate());
    Ok(Trained {
        layer: FourierLayer::plain(out.freq, to_complex(&out.coef)),
        stats: out.stats,
    })
}

/// Draws the frozen state-branch frequencies of a residual layer.
pub fn draw_state_frequencies(nodes: usize, seed: u64) -> Vec<f64> {
    let mut rng = seeds::rng(seed, &[seeds::STREAM_FREQ_Z]);
    (0..nodes).map(|_| rng.sample(StandardNormal)).collect()
}

/// Fits a residual block to `residuals`: sampled x-branch frequencies plus a
/// frozen state branch with standard normal frequencies drawn from
/// `freq_z_seed`.
pub fn arfm_residual_train(
    data: &Dataset,
    residuals: &[f64],
    states: &[f64],
    cfg: &MetropolisConfig,
    freq_z_seed: u64,
) -> Result<Trained> {
    check_size(data, cfg)?;
    for (what, len) in [("residuals", residuals.len()), ("states", states.len())] {
        if len != data.len() {
            return Err(Error::DimensionMismatch {
                context: what,
                expected: data.len(),
                found: len,
            });
        }
    }
    let freq_z = draw_state_frequencies(cfg.nodes, freq_z_seed);
    let mut fixed = DesignMatrix::zeros(data.len(), 2 * cfg.nodes);
    fill_fourier_columns(states, 1, &freq_z, &mut fixed, 0);

    let mut rng = seeds::rng(cfg.seed, &[]);
    let out = run_chain(
        data.inputs(),
        data.dim(),
        residuals,
        fixed.as_col_major(),
        cfg.nodes,
        cfg.iterations(),
        cfg.step,
        cfg.gamma,
        cfg.tikhonov,
        cfg.refresh_every,
        &mut rng,
        None,
    )?;
    log::debug!("residual chain: acceptance rate {:.3}", out.stats.rate());
    let kx = 2 * cfg.nodes;
    Ok(Trained {
        layer: FourierLayer::residual(
            out.freq,
            to_complex(&out.coef[..kx]),
            freq_z,
            to_complex(&out.coef[kx..]),
        ),
        stats: out.stats,
    })
}
