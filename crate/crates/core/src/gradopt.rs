//! Gradient training of residual Fourier networks with Adam.
//!
//! Gradients are exact: the recursion is replayed backwards per sample, with
//! the state adjoint carried through the derivative of each block with respect
//! to its input state. Frequencies and amplitudes are all trainable unless
//! masked out.

use std::path::Path;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layerwise::{train_layerwise, LayerwiseFit};
use crate::metropolis::MetropolisConfig;
use crate::model::{FourierLayer, ResidualNet, StateOrigin};
use crate::seeds;
use crate::targets::Dataset;

/// Partial derivatives laid out exactly like the layers of the net.
#[derive(Debug, Clone, PartialEq)]
pub struct GradStore {
    pub layers: Vec<FourierLayer>,
}

impl GradStore {
    pub fn zeros_like(net: &ResidualNet) -> Self {
        GradStore {
            layers: net
                .layers()
                .iter()
                .map(|l| FourierLayer {
                    freq_x: vec![0.0; l.freq_x.len()],
                    amp_x: vec![Complex64::new(0.0, 0.0); l.amp_x.len()],
                    freq_z: vec![0.0; l.freq_z.len()],
                    amp_z: vec![Complex64::new(0.0, 0.0); l.amp_z.len()],
                    augmented: l.augmented,
                })
                .collect(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            push_layer(l, &mut out);
        }
        out
    }
}

fn push_layer(l: &FourierLayer, out: &mut Vec<f64>) {
    out.extend_from_slice(&l.freq_x);
    out.extend(l.amp_x.iter().flat_map(|c| [c.re, c.im]));
    out.extend_from_slice(&l.freq_z);
    out.extend(l.amp_z.iter().flat_map(|c| [c.re, c.im]));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ParamKind {
    FreqX,
    AmpX,
    FreqZ,
    AmpZ,
}

/// Calls `f` on every scalar parameter in the flat order of
/// [`GradStore::to_flat`].
fn for_each_param(net: &mut ResidualNet, mut f: impl FnMut(usize, ParamKind, &mut f64)) {
    for (li, l) in net.layers_mut().iter_mut().enumerate() {
        for w in &mut l.freq_x {
            f(li, ParamKind::FreqX, w);
        }
        for c in &mut l.amp_x {
            f(li, ParamKind::AmpX, &mut c.re);
            f(li, ParamKind::AmpX, &mut c.im);
        }
        for w in &mut l.freq_z {
            f(li, ParamKind::FreqZ, w);
        }
        for c in &mut l.amp_z {
            f(li, ParamKind::AmpZ, &mut c.re);
            f(li, ParamKind::AmpZ, &mut c.im);
        }
    }
}

pub fn params_flat(net: &ResidualNet) -> Vec<f64> {
    let mut out = Vec::new();
    for l in net.layers() {
        push_layer(l, &mut out);
    }
    out
}

/// Inverse of [`params_flat`].
pub fn set_params_flat(net: &mut ResidualNet, values: &[f64]) -> Result<()> {
    let n = params_flat(net).len();
    if values.len() != n {
        return Err(Error::DimensionMismatch {
            context: "set_params_flat",
            expected: n,
            found: values.len(),
        });
    }
    let mut i = 0;
    for_each_param(net, |_, _, p| {
        *p = values[i];
        i += 1;
    });
    Ok(())
}

/// Which parameter groups an optimizer may move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Trainable {
    pub x_frequencies: bool,
    pub z_frequencies: bool,
    pub x_amplitudes: bool,
    pub z_amplitudes: bool,
}

impl Default for Trainable {
    fn default() -> Self {
        Trainable {
            x_frequencies: true,
            z_frequencies: true,
            x_amplitudes: true,
            z_amplitudes: true,
        }
    }
}

impl Trainable {
    fn allows(&self, kind: ParamKind) -> bool {
        match kind {
            ParamKind::FreqX => self.x_frequencies,
            ParamKind::FreqZ => self.z_frequencies,
            ParamKind::AmpX => self.x_amplitudes,
            ParamKind::AmpZ => self.z_amplitudes,
        }
    }
}

/// Mean over `rows` of `(output − y)² + δ̄·L·Σ_ℓ (z̄_{ℓ+1} − z̄_ℓ)²` with `L`
/// the number of layers, and its gradient.
pub fn loss_and_grad(net: &ResidualNet, data: &Dataset, rows: &[usize], penalty: f64) -> Result<(f64, GradStore)> {
    if rows.is_empty() {
        return Err(Error::invalid("batch", "empty batch"));
    }
    if data.dim() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "batch vs network input",
            expected: net.input_dim(),
            found: data.dim(),
        });
    }
    let mut grads = GradStore::zeros_like(net);
    let depth = net.depth();
    let scale = 1.0 / rows.len() as f64;
    let pen = penalty * depth as f64;
    let mut states = vec![0.0; depth];
    let mut incs = vec![0.0; depth];
    let mut loss = 0.0;

    for &n in rows {
        let x = data.point(n);
        let y = data.targets()[n];
        let layers = net.layers();
        let beta = layers[0].eval_x(x, 0.0);
        let mut z = match net.origin() {
            StateOrigin::Zero => 0.0,
            StateOrigin::Beta => beta,
        };
        for l in 1..depth {
            states[l] = z;
            incs[l] = layers[l].increment(x, z);
            z += incs[l];
        }
        let out = match net.origin() {
            StateOrigin::Zero => z + beta,
            StateOrigin::Beta => z,
        };
        let err = out - y;
        loss += err * err + pen * incs[1..].iter().map(|v| v * v).sum::<f64>();

        let d_out = 2.0 * err * scale;
        let mut adj = d_out;
        for l in (1..depth).rev() {
            let d_inc = adj + 2.0 * pen * incs[l] * scale;
            let dz = layer_backward(&layers[l], &mut grads.layers[l], x, states[l], d_inc);
            adj += d_inc * dz;
        }
        let d_beta = match net.origin() {
            StateOrigin::Zero => d_out,
            StateOrigin::Beta => adj,
        };
        layer_backward(&layers[0], &mut grads.layers[0], x, 0.0, d_beta);
    }
    Ok((loss * scale, grads))
}

/// Accumulates `w·∂inc/∂θ` into `g` and returns `∂inc/∂z`.
fn layer_backward(layer: &FourierLayer, g: &mut FourierLayer, x: &[f64], z: f64, w: f64) -> f64 {
    let d = x.len();
    let width = layer.freq_dim();
    let mut dz = 0.0;
    for k in 0..layer.k_x() {
        let row = layer.freq_row(k);
        let mut phase: f64 = row[..d].iter().zip(x).map(|(a, b)| a * b).sum();
        if layer.augmented {
            phase += row[d] * z;
        }
        let (s, c) = phase.sin_cos();
        let amp = layer.amp_x[k];
        g.amp_x[k].re += w * c;
        g.amp_x[k].im -= w * s;
        let d_phase = -amp.re * s - amp.im * c;
        let gw = &mut g.freq_x[k * width..(k + 1) * width];
        for (gj, xj) in gw[..d].iter_mut().zip(x) {
            *gj += w * d_phase * xj;
        }
        if layer.augmented {
            gw[d] += w * d_phase * z;
            dz += d_phase * row[d];
        }
    }
    for k in 0..layer.k_z() {
        let om = layer.freq_z[k];
        let (s, c) = (om * z).sin_cos();
        let amp = layer.amp_z[k];
        g.amp_z[k].re += w * c;
        g.amp_z[k].im -= w * s;
        let d_phase = -amp.re * s - amp.im * c;
        g.freq_z[k] += w * d_phase * z;
        dz += d_phase * om;
    }
    dz
}

/// Mean squared error of the net on a dataset.
pub fn mse(net: &ResidualNet, data: &Dataset) -> Result<f64> {
    let pred = net.predict(data.inputs())?;
    Ok(pred
        .iter()
        .zip(data.targets())
        .map(|(p, y)| (p - y) * (p - y))
        .sum::<f64>()
        / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Base rate `Δt_e`; epoch `t_e` (from 1) uses `Δt_e/t_e`.
    pub base_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Weight `δ̄` of the increment penalty.
    pub penalty: f64,
    pub trainable: Trainable,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

/// 50 epochs of batches of 100 at base rate 0.001.
impl Default for AdamConfig {
    fn default() -> Self {
        Self::new(50, 100, 1e-3)
    }
}

impl AdamConfig {
    pub fn new(epochs: usize, batch_size: usize, base_rate: f64) -> Self {
        AdamConfig {
            epochs,
            batch_size,
            base_rate,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            penalty: 0.0,
            trainable: Trainable::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        };
        if self.epochs == 0 {
            return Err(bad("epochs", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(bad("batch_size", "must be >= 1"));
        }
        if !(self.base_rate >= 0.0) {
            return Err(bad("base_rate", "must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(bad("beta1/beta2", "must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(bad("eps", "must be > 0"));
        }
        if !(self.penalty >= 0.0) {
            return Err(bad("penalty", "must be >= 0"));
        }
        Ok(())
    }
}

/// Adam moments for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Steps taken, used for bias correction.
    pub steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            steps: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn for_net(net: &ResidualNet, cfg: &AdamConfig) -> Self {
        AdamState::new(params_flat(net).len(), cfg.beta1, cfg.beta2, cfg.eps)
    }

    /// One step on a flat parameter vector.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], rate: f64) {
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= rate * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// One Adam step on the net; masked parameter groups keep their values and
/// get no moment updates.
pub fn adam_step(state: &mut AdamState, net: &mut ResidualNet, grads: &GradStore, rate: f64, trainable: Trainable) -> Result<()> {
    let g = grads.to_flat();
    if g.len() != state.m.len() {
        return Err(Error::DimensionMismatch {
            context: "adam state vs gradient",
            expected: state.m.len(),
            found: g.len(),
        });
    }
    let mut params = params_flat(net);
    let mut kinds = Vec::with_capacity(params.len());
    for_each_param(net, |_, k, _| kinds.push(k));
    let before = params.clone();
    state.step(&mut params, &g, rate);
    for i in 0..params.len() {
        if !trainable.allows(kinds[i]) {
            params[i] = before[i];
            state.m[i] = 0.0;
            state.v[i] = 0.0;
        }
    }
    let mut it = params.into_iter();
    for_each_param(net, |_, _, p| *p = it.next().expect("shape checked"));
    Ok(())
}

/// Xavier normal initialization with `layers` layers of `nodes` nodes: the
/// x-branch uses variance `2/(d + 1)`, the state branch `2/(1 + 1)`.
pub fn xavier_init(layers: usize, nodes: usize, d: usize, seed: u64) -> Result<ResidualNet> {
    if layers == 0 || nodes == 0 || d == 0 {
        return Err(Error::invalid("xavier_init", "layers, nodes and d must be >= 1"));
    }
    let mut rng = seeds::rng(seed, &[seeds::STREAM_INIT]);
    let nx = Normal::new(0.0, (2.0 / (d as f64 + 1.0)).sqrt()).expect("positive sd");
    let nz = Normal::new(0.0, 1.0).expect("positive sd");
    let mut out = Vec::with_capacity(layers);
    for l in 0..layers {
        let freq_x: Vec<f64> = (0..nodes * d).map(|_| nx.sample(&mut rng)).collect();
        let amp_x: Vec<Complex64> = (0..nodes)
            .map(|_| Complex64::new(nx.sample(&mut rng), nx.sample(&mut rng)))
            .collect();
        if l == 0 {
            out.push(FourierLayer::plain(freq_x, amp_x));
        } else {
            let freq_z: Vec<f64> = (0..nodes).map(|_| nz.sample(&mut rng)).collect();
            let amp_z: Vec<Complex64> = (0..nodes)
                .map(|_| Complex64::new(nz.sample(&mut rng), nz.sample(&mut rng)))
                .collect();
            out.push(FourierLayer::residual(freq_x, amp_x, freq_z, amp_z));
        }
    }
    ResidualNet::new(d, out, StateOrigin::Beta)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct GlobalFit {
    pub net: ResidualNet,
    pub history: Vec<EpochRecord>,
}

/// Shuffled minibatch Adam. The rate is `Δt_e/t_e` during epoch `t_e`.
pub fn train_global(
    mut net: ResidualNet,
    data: &Dataset,
    validation: Option<&Dataset>,
    cfg: &AdamConfig,
    seed: u64,
) -> Result<GlobalFit> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("data", "empty dataset"));
    }
    let mut state = AdamState::for_net(&net, cfg);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let lr = cfg.base_rate / epoch as f64;
        let mut rng = seeds::rng(seed, &[seeds::STREAM_BATCH, epoch as u64]);
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (_, grads) = loss_and_grad(&net, data, batch, cfg.penalty)?;
            adam_step(&mut state, &mut net, &grads, lr, cfg.trainable)?;
        }
        let rec = EpochRecord {
            epoch,
            train_mse: mse(&net, data)?,
            val_mse: validation.map(|v| mse(&net, v)).transpose()?,
            lr,
        };
        log::debug!("epoch {epoch}: train {:.4e} val {:?}", rec.train_mse, rec.val_mse);
        history.push(rec);
    }
    Ok(GlobalFit { net, history })
}

/// Writes `epoch,train_mse,val_mse,lr` rows.
pub fn write_epoch_log(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_mse", "val_mse", "lr"])?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.train_mse.to_string(),
            r.val_mse.map(|v| v.to_string()).unwrap_or_default(),
            r.lr.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct PretrainedFit {
    pub pretrain: LayerwiseFit,
    pub global: GlobalFit,
}

/// Layer-by-layer pretraining on the first `n_pre` points, then Adam on all
/// of `data` from the pretrained net.
pub fn train_pretrained(
    data: &Dataset,
    validation: Option<&Dataset>,
    n_pre: usize,
    layers: usize,
    metropolis: &MetropolisConfig,
    adam: &AdamConfig,
    seed: u64,
) -> Result<PretrainedFit> {
    if n_pre > data.len() || n_pre == 0 {
        return Err(Error::invalid(
            "n_pre",
            format!("must be in 1..={}, got {n_pre}", data.len()),
        ));
    }
    let pretrain = train_layerwise(&data.head(n_pre), layers, metropolis)?;
    let global = train_global(pretrain.net.clone(), data, validation, adam, seed)?;
    Ok(PretrainedFit { pretrain, global })
}

/// Random net with the same layout as [`xavier_init`] but uniform entries;
/// used by tests that need arbitrary parameters.
#[cfg(test)]
pub(crate) fn random_net<R: rand::Rng>(rng: &mut R, layers: usize, nodes: usize, d: usize, origin: StateOrigin, augmented_last: bool) -> ResidualNet {
    let mut out = Vec::new();
    for l in 0..layers {
        let aug = augmented_last && l == layers - 1 && l > 0;
        let w = d + usize::from(aug);
        let freq_x = (0..nodes * w).map(|_| rng.random_range(-1.5..1.5)).collect();
        let amp_x = (0..nodes)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let mut layer = if l == 0 || aug {
            FourierLayer::plain(freq_x, amp_x)
        } else {
            FourierLayer::residual(
                freq_x,
                amp_x,
                (0..nodes).map(|_| rng.random_range(-1.5..1.5)).collect(),
                (0..nodes)
                    .map(|_| Complex64::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)))
                    .collect(),
            )
        };
        layer.augmented = aug;
        out.push(layer);
    }
    ResidualNet::new(d, out, origin).unwrap()
}
