//! Shared inputs for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use elpq::engine::ActTensor;
use elpq::tensorio::{Layer, LayerDef, LayerKind, Tensor, Weights};

/// Gaussian-ish weights in roughly `[-scale, scale]`.
pub fn weights(n: usize, scale: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..4).map(|_| rng.random_range(-scale..scale)).sum::<f64>() / 2.0)
        .collect()
}

pub fn activations(dims: Vec<usize>, seed: u64) -> ActTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.iter().product();
    ActTensor {
        dims,
        values: (0..n).map(|_| rng.random_range(0..128)).collect(),
        frac_bits: 6,
    }
}

/// Float conv layer with `[out, inp, k, k]` weights, padding `k / 2`.
pub fn conv_layer(out: usize, inp: usize, k: usize, seed: u64) -> Layer {
    let w = weights(out * inp * k * k, 0.3, seed);
    Layer {
        def: LayerDef {
            name: "bench".into(),
            kind: LayerKind::Conv,
            weights_ref: None,
            bias_ref: None,
            stride: 1,
            pad: k / 2,
            pool_size: None,
        },
        weights: Some(Weights::Float(
            Tensor::from_f32(vec![out, inp, k, k], w.iter().map(|&v| v as f32).collect()).unwrap(),
        )),
        bias: Some(Tensor::from_f32(vec![out], vec![0.05; out]).unwrap()),
    }
}
