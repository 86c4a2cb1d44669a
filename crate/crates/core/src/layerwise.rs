//! Greedy layer-by-layer construction of a residual Fourier network.
//!
//! Layer 0 is fit to the data; every later block is fit to what is still
//! unexplained, using the current state as an extra input. Each layer's chain
//! runs from its own sub-seed, so a deeper build shares its first layers with
//! a shallower one.

use crate::error::{Error, Result};
use crate::metropolis::{arfm_residual_train, arfm_train, ChainStats, MetropolisConfig};
use crate::model::{ResidualNet, StateOrigin};
use crate::seeds;
use crate::targets::Dataset;

#[derive(Debug, Clone)]
pub struct LayerwiseFit {
    pub net: ResidualNet,
    /// Training mean squared error after each layer.
    pub train_mse: Vec<f64>,
    pub chains: Vec<ChainStats>,
}

pub(crate) fn layer_config(cfg: &MetropolisConfig, layer: usize) -> MetropolisConfig {
    let mut c = cfg.clone();
    c.seed = seeds::derive(cfg.seed, &[seeds::STREAM_LAYER, layer as u64]);
    c
}

pub(crate) fn state_seed(master: u64, layer: usize) -> u64 {
    seeds::derive(master, &[seeds::STREAM_FREQ_Z, layer as u64])
}

fn mse(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64
}

/// Builds `layers` layers of `cfg.nodes` nodes each. The chain settings of
/// `cfg` apply to every layer.
pub fn train_layerwise(data: &Dataset, layers: usize, cfg: &MetropolisConfig) -> Result<LayerwiseFit> {
    if layers == 0 {
        return Err(Error::invalid("layers", "must be >= 1"));
    }
    let first = arfm_train(data, &layer_config(cfg, 0))?;
    let mut chains = vec![first.stats];
    let mut net = ResidualNet::new(data.dim(), vec![first.layer], StateOrigin::Beta)?;

    let mut states: Vec<f64> = data.points().map(|x| net.layers()[0].eval_x(x, 0.0)).collect();
    let mut resid: Vec<f64> = data.targets().iter().zip(&states).map(|(y, z)| y - z).collect();
    let mut train_mse = vec![mse(&resid)];

    for l in 1..layers {
        let block = arfm_residual_train(data, &resid, &states, &layer_config(cfg, l), state_seed(cfg.seed, l))?;
        for ((z, x), (r, y)) in states
            .iter_mut()
            .zip(data.points())
            .zip(resid.iter_mut().zip(data.targets()))
        {
            *z += block.layer.increment(x, *z);
            *r = y - *z;
        }
        net.push_layer(block.layer)?;
        chains.push(block.stats);
        train_mse.push(mse(&resid));
        log::debug!("layer {l}: training mse {:.3e}", train_mse[l]);
    }
    Ok(LayerwiseFit {
        net,
        train_mse,
        chains,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{gen_dataset, DataSpec, Target};

    fn data(n: usize, d: usize, seed: u64) -> Dataset {
        gen_dataset(&DataSpec::new(n, 2, d, Target::F1), seed).unwrap().0
    }

    #[test]
    fn one_layer_is_plain_chain() {
        let ds = data(60, 2, 1);
        let cfg = MetropolisConfig::standard(2, 4, 15, 9);
        let fit = train_layerwise(&ds, 1, &cfg).unwrap();
        let direct = arfm_train(&ds, &layer_config(&cfg, 0)).unwrap();
        assert_eq!(fit.net.layers(), std::slice::from_ref(&direct.layer));
        for (n, x) in ds.points().enumerate() {
            let p = fit.net.predict_one(x).unwrap();
            assert_eq!(p, direct.layer.eval_x(x, 0.0), "row {n}");
        }
    }

    #[test]
    fn zero_targets_give_zero_net() {
        let ds = data(40, 2, 2);
        let ds = ds.with_targets(vec![0.0; 40]).unwrap();
        let cfg = MetropolisConfig::standard(2, 3, 8, 1);
        let fit = train_layerwise(&ds, 3, &cfg).unwrap();
        for l in fit.net.layers() {
            assert!(l.amp_x.iter().chain(&l.amp_z).all(|a| a.norm() == 0.0));
        }
        assert!(ds.points().all(|x| fit.net.predict_one(x).unwrap() == 0.0));
    }

    #[test]
    fn unregularized_training_error_never_increases() {
        let ds = data(50, 2, 3);
        let mut cfg = MetropolisConfig::standard(2, 3, 6, 4);
        cfg.tikhonov = 0.0;
        let fit = train_layerwise(&ds, 4, &cfg).unwrap();
        for w in fit.train_mse.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-10) + 1e-14, "{:?}", fit.train_mse);
        }
    }

    #[test]
    fn trace_matches_training_states() {
        let ds = data(50, 3, 4);
        let cfg = MetropolisConfig::standard(3, 4, 10, 5);
        let fit = train_layerwise(&ds, 3, &cfg).unwrap();
        let pred = fit.net.predict(ds.inputs()).unwrap();
        let err: f64 = pred.iter().zip(ds.targets()).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / 50.0;
        assert!((err - fit.train_mse[2]).abs() < 1e-12);
    }

    #[test]
    fn deeper_build_extends_shallower_one() {
        let ds = data(45, 2, 5);
        let cfg = MetropolisConfig::standard(2, 3, 10, 6);
        let short = train_layerwise(&ds, 2, &cfg).unwrap();
        let long = train_layerwise(&ds, 4, &cfg).unwrap();
        assert_eq!(&long.net.layers()[..2], short.net.layers());
        assert_eq!(&long.train_mse[..2], &short.train_mse[..]);
    }

    #[test]
    fn zero_layers_rejected() {
        let ds = data(10, 1, 6);
        assert!(train_layerwise(&ds, 0, &MetropolisConfig::standard(1, 2, 2, 0)).is_err());
    }
}
