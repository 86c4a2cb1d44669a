//! Residual networks of Fourier features with a scalar state.
//!
//! Layer 0 is the plain feature sum `β(x) = Re Σ_k c̄_{0k} e^{iω′_{0k}·x}`.
//! Every later layer adds an increment to the running state,
//!
//! ```text
//! z̄_{ℓ+1} = z̄_ℓ + Re Σ_k b̄_{ℓk} e^{iω_{ℓk} z̄_ℓ} + Re Σ_k c̄_{ℓk} e^{iω′_{ℓk}·x}
//! ```
//!
//! Where the recursion starts is a property of the net ([`StateOrigin`]):
//! from `z̄ = 0` with output `z̄_L + β(x)`, or from `z̄ = β(x)` with output
//! `z̄_L`. The two only coincide when the state branches are empty, because the
//! state features see different states. Layer-by-layer training folds `β`
//! into the state, so nets it produces use [`StateOrigin::Beta`].
//!
//! An augmented layer has no state branch; instead its x-branch frequencies
//! live in `R^{d+1}` and act on `(x, z̄_ℓ)`.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// One block of Fourier features. `freq_x` is row-major with one row per
/// x-branch node.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierLayer {
    pub freq_x: Vec<f64>,
    pub amp_x: Vec<Complex64>,
    pub freq_z: Vec<f64>,
    pub amp_z: Vec<Complex64>,
    pub augmented: bool,
}

impl FourierLayer {
    /// An x-branch-only layer.
    pub fn plain(freq_x: Vec<f64>, amp_x: Vec<Complex64>) -> Self {
        FourierLayer {
            freq_x,
            amp_x,
            freq_z: Vec::new(),
            amp_z: Vec::new(),
            augmented: false,
        }
    }

    pub fn residual(
        freq_x: Vec<f64>,
        amp_x: Vec<Complex64>,
        freq_z: Vec<f64>,
        amp_z: Vec<Complex64>,
    ) -> Self {
        FourierLayer {
            freq_x,
            amp_x,
            freq_z,
            amp_z,
            augmented: false,
        }
    }

    pub fn k_x(&self) -> usize {
        self.amp_x.len()
    }

    pub fn k_z(&self) -> usize {
        self.amp_z.len()
    }

    /// Width of each x-branch frequency.
    pub fn freq_dim(&self) -> usize {
        if self.amp_x.is_empty() {
            0
        } else {
            self.freq_x.len() / self.amp_x.len()
        }
    }

    pub fn freq_row(&self, k: usize) -> &[f64] {
        let w = self.freq_dim();
        &self.freq_x[k * w..(k + 1) * w]
    }

    /// `Re Σ_k c̄_k e^{iω′_k·x}`; for augmented layers `z` is appended to `x`.
    pub fn eval_x(&self, x: &[f64], z: f64) -> f64 {
        let w = self.freq_dim();
        let mut acc = 0.0;
        for (row, c) in self.freq_x.chunks_exact(w.max(1)).zip(&self.amp_x) {
            let mut phase: f64 = row[..x.len()].iter().zip(x).map(|(a, b)| a * b).sum();
            if self.augmented {
                phase += row[x.len()] * z;
            }
            let (s, co) = phase.sin_cos();
            acc += c.re * co - c.im * s;
        }
        acc
    }

    /// `Re Σ_k b̄_k e^{iω_k z}`.
    pub fn eval_z(&self, z: f64) -> f64 {
        self.freq_z
            .iter()
            .zip(&self.amp_z)
            .map(|(w, b)| {
                let (s, c) = (w * z).sin_cos();
                b.re * c - b.im * s
            })
            .sum()
    }

    /// State increment `z̄_{ℓ+1} − z̄_ℓ`.
    pub fn increment(&self, x: &[f64], z: f64) -> f64 {
        self.eval_z(z) + self.eval_x(x, z)
    }

    fn validate(&self, index: usize, input_dim: usize) -> Result<()> {
        let field = |name: &str| format!("layers[{index}].{name}");
        let want = input_dim + usize::from(self.augmented);
        if self.freq_x.len() != self.amp_x.len() * want {
            return Err(Error::InvalidConfig {
                field: field("freq_x"),
                reason: format!(
                    "{} entries for {} nodes of dimension {want}",
                    self.freq_x.len(),
                    self.amp_x.len()
                ),
            });
        }
        if self.freq_z.len() != self.amp_z.len() {
            return Err(Error::InvalidConfig {
                field: field("freq_z"),
                reason: format!("{} frequencies vs {} amplitudes", self.freq_z.len(), self.amp_z.len()),
            });
        }
        if index == 0 && (!self.amp_z.is_empty() || self.augmented) {
            return Err(Error::InvalidConfig {
                field: field("freq_z"),
                reason: "layer 0 has no state branch".into(),
            });
        }
        if self.augmented && !self.amp_z.is_empty() {
            return Err(Error::InvalidConfig {
                field: field("augmented"),
                reason: "augmented layers carry the state in freq_x".into(),
            });
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        let finite_c = |v: &[Complex64]| v.iter().all(|c| c.re.is_finite() && c.im.is_finite());
        if !finite(&self.freq_x) || !finite(&self.freq_z) {
            return Err(Error::InvalidConfig {
                field: field("freq"),
                reason: "non-finite frequency".into(),
            });
        }
        if !finite_c(&self.amp_x) || !finite_c(&self.amp_z) {
            return Err(Error::InvalidConfig {
                field: field("amp"),
                reason: "non-finite amplitude".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateOrigin {
    /// `z̄_1 = 0`, output `z̄_L + β(x)`.
    Zero,
    /// `z̄_1 = β(x)`, output `z̄_L`.
    Beta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualNet {
    input_dim: usize,
    layers: Vec<FourierLayer>,
    origin: StateOrigin,
}

/// States `z̄_1..z̄_L` (one per layer) and the network output.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub states: Vec<f64>,
    pub beta: f64,
    pub output: f64,
}

impl ResidualNet {
    pub fn new(input_dim: usize, layers: Vec<FourierLayer>, origin: StateOrigin) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::invalid("input_dim", "must be >= 1"));
        }
        if layers.is_empty() {
            return Err(Error::invalid("layers", "a net needs at least layer 0"));
        }
        for (i, l) in layers.iter().enumerate() {
            l.validate(i, input_dim)?;
        }
        Ok(ResidualNet {
            input_dim,
            layers,
            origin,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn layers(&self) -> &[FourierLayer] {
        &self.layers
    }

    /// Mutable access for optimizers. Shapes must not change.
    pub fn layers_mut(&mut self) -> &mut [FourierLayer] {
        &mut self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn origin(&self) -> StateOrigin {
        self.origin
    }

    /// Appends a residual block.
    pub fn push_layer(&mut self, layer: FourierLayer) -> Result<()> {
        layer.validate(self.layers.len(), self.input_dim)?;
        self.layers.push(layer);
        Ok(())
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.input_dim,
                found: x.len(),
            });
        }
        Ok(())
    }

    pub fn eval_beta(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.layers[0].eval_x(x, 0.0))
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.check_dim(x)?;
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> ForwardTrace {
        let beta = self.layers[0].eval_x(x, 0.0);
        let mut z = match self.origin {
            StateOrigin::Zero => 0.0,
            StateOrigin::Beta => beta,
        };
        let mut states = Vec::with_capacity(self.layers.len());
        states.push(z);
        for layer in &self.layers[1..] {
            z += layer.increment(x, z);
            states.push(z);
        }
        let output = match self.origin {
            StateOrigin::Zero => z + beta,
            StateOrigin::Beta => z,
        };
        ForwardTrace {
            states,
            beta,
            output,
        }
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward(x)?.output)
    }

    /// Outputs for row-major `inputs`.
    pub fn predict(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        if !inputs.len().is_multiple_of(self.input_dim) {
            return Err(Error::DimensionMismatch {
                context: "network input rows",
                expected: self.input_dim,
                found: inputs.len() % self.input_dim,
            });
        }
        Ok(inputs
            .chunks_exact(self.input_dim)
            .map(|x| self.forward_unchecked(x).output)
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile::from_net(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse {
            what: "model file",
            field: "<document>".into(),
            reason: e.to_string(),
        })?;
        let version = doc
            .get("schema_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Parse {
                what: "model file",
                field: "schema_version".into(),
                reason: "missing or not an unsigned integer".into(),
            })?;
        if version != u64::from(MODEL_SCHEMA_VERSION) {
            return Err(Error::SchemaVersion {
                expected: MODEL_SCHEMA_VERSION,
                found: u32::try_from(version).unwrap_or(u32::MAX),
            });
        }
        let file: ModelFile = serde_path_to_error::deserialize(doc).map_err(|e| Error::Parse {
            what: "model file",
            field: e.path().to_string(),
            reason: e.inner().to_string(),
        })?;
        file.into_net()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ResidualNet::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    schema_version: u32,
    input_dim: usize,
    state_origin: StateOrigin,
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    augmented: bool,
    freq_x: Vec<Vec<f64>>,
    amp_x_re: Vec<f64>,
    amp_x_im: Vec<f64>,
    freq_z: Vec<f64>,
    amp_z_re: Vec<f64>,
    amp_z_im: Vec<f64>,
}

fn split(c: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
    (c.iter().map(|v| v.re).collect(), c.iter().map(|v| v.im).collect())
}

fn join(re: &[f64], im: &[f64], field: String) -> Result<Vec<Complex64>> {
    if re.len() != im.len() {
        return Err(Error::Parse {
            what: "model file",
            field,
            reason: format!("{} real parts vs {} imaginary parts", re.len(), im.len()),
        });
    }
    Ok(re.iter().zip(im).map(|(&r, &i)| Complex64::new(r, i)).collect())
}

impl ModelFile {
    fn from_net(net: &ResidualNet) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| {
                let (amp_x_re, amp_x_im) = split(&l.amp_x);
                let (amp_z_re, amp_z_im) = split(&l.amp_z);
                LayerFile {
                    augmented: l.augmented,
                    freq_x: (0..l.k_x()).map(|k| l.freq_row(k).to_vec()).collect(),
                    amp_x_re,
                    amp_x_im,
                    freq_z: l.freq_z.clone(),
                    amp_z_re,
                    amp_z_im,
                }
            })
            .collect();
        ModelFile {
            schema_version: MODEL_SCHEMA_VERSION,
            input_dim: net.input_dim,
            state_origin: net.origin,
            layers,
        }
    }

    fn into_net(self) -> Result<ResidualNet> {
        if self.layers.is_empty() {
            return Err(Error::Parse {
                what: "model file",
                field: "layers".into(),
                reason: "no layers".into(),
            });
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, lf) in self.layers.into_iter().enumerate() {
            let amp_x = join(&lf.amp_x_re, &lf.amp_x_im, format!("layers[{i}].amp_x_im"))?;
            let amp_z = join(&lf.amp_z_re, &lf.amp_z_im, format!("layers[{i}].amp_z_im"))?;
            if lf.freq_x.len() != amp_x.len() {
                return Err(Error::Parse {
                    what: "model file",
                    field: format!("layers[{i}].freq_x"),
                    reason: format!("{} rows for {} amplitudes", lf.freq_x.len(), amp_x.len()),
                });
            }
            let want = self.input_dim + usize::from(lf.augmented);
            if let Some(k) = lf.freq_x.iter().position(|r| r.len() != want) {
                return Err(Error::Parse {
                    what: "model file",
                    field: format!("layers[{i}].freq_x[{k}]"),
                    reason: format!("expected {want} components"),
                });
            }
            layers.push(FourierLayer {
                freq_x: lf.freq_x.concat(),
                amp_x,
                freq_z: lf.freq_z,
                amp_z,
                augmented: lf.augmented,
            });
        }
        ResidualNet::new(self.input_dim, layers, self.state_origin).map_err(|e| match e {
            Error::InvalidConfig { field, reason } => Error::Parse {
                what: "model file",
                field,
                reason,
            },
            other => other,
        })
    }
}
