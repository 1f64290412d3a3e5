use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::engine::{accuracy_with, reference::FloatNet};
use crate::error::{Error, Result};
use crate::tensorio::{Dataset, Model, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Adds `c` to every selected filter.
    Constant,
    /// `+c` on the first half of the selection, `-c` on the rest.
    SplitSign,
    /// Independent `N(0, c^2)` draws.
    Gaussian,
}

/// Returns a copy of `model` with noise added to the biases of
/// `num_filters` filters of layer `layer`, chosen uniformly with `seed`.
pub fn inject_bias_noise(
    model: &Model,
    layer: usize,
    num_filters: usize,
    mode: NoiseMode,
    magnitude: f64,
    seed: u64,
) -> Result<Model> {
    let l = model
        .layers
        .get(layer)
        .ok_or_else(|| Error::InvalidArgument(format!("model has no layer {layer}")))?;
    let bias = l.bias_values().ok_or_else(|| Error::NoBias(l.name().to_string()))?;
    if num_filters > bias.len() {
        return Err(Error::InvalidArgument(format!(
            "{num_filters} filters requested but layer `{}` has {}",
            l.name(),
            bias.len()
        )));
    }
    if mode == NoiseMode::Gaussian && !(magnitude >= 0.0 && magnitude.is_finite()) {
        return Err(Error::InvalidArgument(format!("gaussian sigma {magnitude}")));
    }
    let mut out = model.clone();
    if magnitude == 0.0 || num_filters == 0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = sample(&mut rng, bias.len(), num_filters).into_vec();
    let mut b: Vec<f64> = bias.iter().map(|&v| v as f64).collect();
    let positive = num_filters.div_ceil(2);
    let normal = Normal::new(0.0, magnitude.abs()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    for (n, &f) in picked.iter().enumerate() {
        b[f] += match mode {
            NoiseMode::Constant => magnitude,
            NoiseMode::SplitSign if n < positive => magnitude,
            NoiseMode::SplitSign => -magnitude,
            NoiseMode::Gaussian => normal.sample(&mut rng),
        };
    }
    let dims = vec![b.len()];
    out.layers[layer].bias = Some(Tensor::from_f32(dims, b.into_iter().map(|v| v as f32).collect())?);
    Ok(out)
}

/// Float-reference top-1 accuracy after bias noise, one row per
/// (level, seed).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoisePoint {
    pub layer: usize,
    pub level: f64,
    pub seed: u64,
    pub accuracy: f64,
    pub drop: f64,
}

pub fn bias_noise_sweep(
    model: &Model,
    data: &Dataset,
    layer: usize,
    num_filters: usize,
    mode: NoiseMode,
    levels: &[f64],
    seeds: &[u64],
) -> Result<Vec<NoisePoint>> {
    let base_net = FloatNet::new(model)?;
    let baseline = accuracy_with(data, |x| base_net.forward(x))?;
    let mut rows = Vec::with_capacity(levels.len() * seeds.len());
    for &level in levels {
        for &seed in seeds {
            let noisy = inject_bias_noise(model, layer, num_filters, mode, level, seed)?;
            let net = FloatNet::new(&noisy)?;
            let accuracy = accuracy_with(data, |x| net.forward(x))?;
            rows.push(NoisePoint {
                layer,
                level,
                seed,
                accuracy,
                drop: baseline - accuracy,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorio::{Layer, LayerDef, LayerKind, Weights};

    fn model(filters: usize) -> Model {
        let fc = Layer {
            def: LayerDef {
                name: "fc".into(),
                kind: LayerKind::Fc,
                weights_ref: None,
                bias_ref: None,
                stride: 1,
                pad: 0,
                pool_size: None,
            },
            weights: Some(Weights::Float(Tensor::from_f32(vec![filters, 2], vec![0.5; filters * 2]).unwrap())),
            bias: Some(Tensor::from_f32(vec![filters], (0..filters).map(|k| k as f32 * 0.01).collect()).unwrap()),
        };
        Model::new(vec![2], vec![fc]).unwrap()
    }

    fn deltas(a: &Model, b: &Model) -> Vec<f64> {
        let (x, y) = (a.layers[0].bias_values().unwrap(), b.layers[0].bias_values().unwrap());
        x.iter().zip(y).map(|(p, q)| *q as f64 - *p as f64).collect()
    }

    #[test]
    fn zero_magnitude_is_identity() {
        let m = model(8);
        for mode in [NoiseMode::Constant, NoiseMode::SplitSign, NoiseMode::Gaussian] {
            let n = inject_bias_noise(&m, 0, 8, mode, 0.0, 3).unwrap();
            assert!(n.layers[0].bias.as_ref().unwrap().bit_eq(m.layers[0].bias.as_ref().unwrap()));
        }
    }

    #[test]
    fn constant_one_filter() {
        let m = model(8);
        let d = deltas(&m, &inject_bias_noise(&m, 0, 1, NoiseMode::Constant, 0.25, 9).unwrap());
        assert_eq!(d.iter().filter(|v| **v != 0.0).count(), 1);
        assert!(d.iter().any(|v| (v - 0.25).abs() < 1e-6));
    }

    #[test]
    fn split_sign_halves() {
        let m = model(10);
        let d = deltas(&m, &inject_bias_noise(&m, 0, 6, NoiseMode::SplitSign, 0.5, 1).unwrap());
        assert_eq!(d.iter().filter(|v| (**v - 0.5).abs() < 1e-6).count(), 3);
        assert_eq!(d.iter().filter(|v| (**v + 0.5).abs() < 1e-6).count(), 3);
    }

    #[test]
    fn gaussian_std_matches_sigma() {
        let m = model(10_000);
        let d = deltas(&m, &inject_bias_noise(&m, 0, 10_000, NoiseMode::Gaussian, 0.2, 5).unwrap());
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let std = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64).sqrt();
        assert!((std / 0.2 - 1.0).abs() < 0.03, "{std}");
    }

    #[test]
    fn seeded_and_checked() {
        let m = model(16);
        let a = inject_bias_noise(&m, 0, 5, NoiseMode::Gaussian, 0.3, 42).unwrap();
        let b = inject_bias_noise(&m, 0, 5, NoiseMode::Gaussian, 0.3, 42).unwrap();
        assert!(a.layers[0].bias.as_ref().unwrap().bit_eq(b.layers[0].bias.as_ref().unwrap()));
        assert!(inject_bias_noise(&m, 0, 17, NoiseMode::Constant, 1.0, 0).is_err());
        assert!(inject_bias_noise(&m, 3, 1, NoiseMode::Constant, 1.0, 0).is_err());
        let mut nb = m.clone();
        nb.layers[0].bias = None;
        assert!(matches!(
            inject_bias_noise(&nb, 0, 1, NoiseMode::Constant, 1.0, 0),
            Err(Error::NoBias(_))
        ));
    }
}
