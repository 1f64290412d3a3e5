//! Floating-point forward pass used as the oracle for the integer engine,
//! for float baselines, and for calibration.

use super::FixedPointConfig;
use crate::error::Result;
use crate::tensorio::{LayerKind, Model};

pub fn maxpool_f64(values: &[f64], dims: &[usize], size: usize, stride: usize) -> (Vec<usize>, Vec<f64>) {
    let (c, h, w) = (dims[0], dims[1], dims[2]);
    let (oh, ow) = ((h - size) / stride + 1, (w - size) / stride + 1);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = &values[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..size {
                    for dx in 0..size {
                        m = m.max(plane[(oy * stride + dy) * w + ox * stride + dx]);
                    }
                }
                out.push(m);
            }
        }
    }
    (vec![c, oh, ow], out)
}

struct FloatLayer {
    kind: LayerKind,
    weights: Vec<f64>,
    wdims: Vec<usize>,
    bias: Vec<f64>,
    stride: usize,
    pad: usize,
    pool: usize,
}

/// A model with weights decoded to f64 once.
pub struct FloatNet {
    input_dims: Vec<usize>,
    shapes: Vec<Vec<usize>>,
    layers: Vec<FloatLayer>,
}

impl FloatNet {
    pub fn new(model: &Model) -> Result<Self> {
        let shapes = model.shapes()?;
        let layers = model
            .layers
            .iter()
            .map(|l| {
                let (weights, wdims) = match &l.weights {
                    Some(w) => (w.values(), w.dims().to_vec()),
                    None => (Vec::new(), Vec::new()),
                };
                let out = wdims.first().copied().unwrap_or(0);
                let bias = match l.bias_values() {
                    Some(b) => b.iter().map(|&v| v as f64).collect(),
                    None => vec![0.0; out],
                };
                FloatLayer {
                    kind: l.kind(),
                    weights,
                    wdims,
                    bias,
                    stride: l.def.stride,
                    pad: l.def.pad,
                    pool: l.def.pool_size.unwrap_or(1),
                }
            })
            .collect();
        Ok(FloatNet {
            input_dims: model.input_dims.clone(),
            shapes,
            layers,
        })
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    /// Output of layer `k` for an input of shape `shapes[k]`.
    pub fn apply_layer(&self, k: usize, input: &[f64]) -> Vec<f64> {
        let l = &self.layers[k];
        let in_dims = &self.shapes[k];
        match l.kind {
            LayerKind::Relu => input.iter().map(|v| v.max(0.0)).collect(),
            LayerKind::Maxpool => maxpool_f64(input, in_dims, l.pool, l.stride).1,
            LayerKind::Fc => {
                let (o, n) = (l.wdims[0], l.wdims[1]);
                (0..o)
                    .map(|f| {
                        let row = &l.weights[f * n..(f + 1) * n];
                        row.iter().zip(input).map(|(w, a)| w * a).sum::<f64>() + l.bias[f]
                    })
                    .collect()
            }
            LayerKind::Conv => {
                let (o, c, kh, kw) = (l.wdims[0], l.wdims[1], l.wdims[2], l.wdims[3]);
                let (h, w) = (in_dims[1], in_dims[2]);
                let out = &self.shapes[k + 1];
                let (oh, ow) = (out[1], out[2]);
                let (s, p) = (l.stride as isize, l.pad as isize);
                let mut values = Vec::with_capacity(o * oh * ow);
                for f in 0..o {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = 0.0;
                            for ky in 0..kh {
                                let iy = oy as isize * s + ky as isize - p;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = ox as isize * s + kx as isize - p;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    for ch in 0..c {
                                        acc += input[(ch * h + iy as usize) * w + ix as usize]
                                            * l.weights[((f * c + ch) * kh + ky) * kw + kx];
                                    }
                                }
                            }
                            values.push(acc + l.bias[f]);
                        }
                    }
                }
                values
            }
        }
    }

    fn run(&self, input: &[f32], act: Option<&FixedPointConfig>, mut keep: Option<&mut Vec<Vec<f64>>>) -> Result<Vec<f64>> {
        let mut x: Vec<f64> = input.iter().map(|&v| v as f64).collect();
        for (k, l) in self.layers.iter().enumerate() {
            if let (Some(cfg), LayerKind::Conv | LayerKind::Fc) = (act, l.kind) {
                let spec = cfg.act_spec(cfg.frac_for(k)?);
                x.iter_mut().for_each(|v| *v = spec.quantize(*v));
            }
            if let Some(keep) = keep.as_deref_mut() {
                keep.push(x.clone());
            }
            x = self.apply_layer(k, &x);
        }
        Ok(x)
    }

    pub fn forward(&self, input: &[f32]) -> Result<Vec<f64>> {
        self.run(input, None, None)
    }

    /// Float weights with activations rounded onto `cfg`'s fixed-point grid
    /// before every conv/fc layer.
    pub fn forward_act_quant(&self, input: &[f32], cfg: &FixedPointConfig) -> Result<Vec<f64>> {
        self.run(input, Some(cfg), None)
    }

    /// Input of every layer followed by the final output.
    pub fn trace(&self, input: &[f32]) -> Result<Vec<Vec<f64>>> {
        let mut keep = Vec::with_capacity(self.layers.len() + 1);
        let out = self.run(input, None, Some(&mut keep))?;
        keep.push(out);
        Ok(keep)
    }
}
