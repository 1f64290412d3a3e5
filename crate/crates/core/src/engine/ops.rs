use super::FixedPointConfig;
use crate::elpbsd::{EncodedWeight, FormatSpec};
use crate::error::{Error, Result};
use crate::quantizer::UniformFPSpec;
use crate::tensorio::Layer;

/// Integer activations; real value is `value * 2^-frac_bits`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActTensor {
    pub dims: Vec<usize>,
    pub values: Vec<i32>,
    pub frac_bits: i32,
}

impl ActTensor {
    pub fn real_values(&self) -> Vec<f64> {
        let step = (-self.frac_bits as f64).exp2();
        self.values.iter().map(|&v| v as f64 * step).collect()
    }
}

/// Raw accumulators; real value is `value * scale * 2^-frac_bits`, where
/// `frac_bits` is the input activations' binary point and `scale` the
/// weights' SF.
#[derive(Debug, Clone, PartialEq)]
pub struct AccTensor {
    pub dims: Vec<usize>,
    pub values: Vec<i64>,
    pub frac_bits: i32,
    pub scale: f64,
}

impl AccTensor {
    pub fn from_act(a: &ActTensor) -> Self {
        AccTensor {
            dims: a.dims.clone(),
            values: a.values.iter().map(|&v| v as i64).collect(),
            frac_bits: a.frac_bits,
            scale: 1.0,
        }
    }

    pub fn real_values(&self) -> Vec<f64> {
        let unit = self.scale * (-self.frac_bits as f64).exp2();
        self.values.iter().map(|&v| v as f64 * unit).collect()
    }
}

fn check_acc(v: i64, cfg: &FixedPointConfig) -> Result<i64> {
    let (lo, hi) = cfg.acc_range();
    if v < lo || v > hi {
        Err(Error::AccumulatorOverflow {
            value: v as i128,
            bits: cfg.acc_bits,
        })
    } else {
        Ok(v)
    }
}

#[inline]
fn apply_terms(acc: i64, a: i64, terms: &[(bool, u8)]) -> i64 {
    terms.iter().fold(acc, |acc, &(neg, s)| {
        let p = a << s;
        if neg {
            acc - p
        } else {
            acc + p
        }
    })
}

/// `acc + sum_i sign_i * (a << shift_i)`, one term per digit of `w`.
pub fn shift_mac(
    acc: i64,
    a: i32,
    w: EncodedWeight,
    spec: &FormatSpec,
    cfg: &FixedPointConfig,
) -> Result<i64> {
    check_acc(acc, cfg)?;
    let terms = spec.terms(w)?;
    check_acc(apply_terms(acc, a as i64, &terms), cfg)
}

pub fn quantize_input(values: &[f64], dims: Vec<usize>, spec: UniformFPSpec) -> ActTensor {
    ActTensor {
        dims,
        values: values.iter().map(|&v| spec.to_int(v) as i32).collect(),
        frac_bits: spec.frac_bits,
    }
}

/// Rescales accumulators onto the `2^-frac_bits` grid of the next layer,
/// rounding half away from zero and saturating to `act_bits`.
pub fn requantize(acc: &AccTensor, frac_bits: i32, cfg: &FixedPointConfig) -> ActTensor {
    let spec = cfg.act_spec(frac_bits);
    let (lo, hi) = spec.int_range();
    let factor = acc.scale * ((frac_bits - acc.frac_bits) as f64).exp2();
    let values = acc
        .values
        .iter()
        .map(|&v| (v as f64 * factor).round().clamp(lo as f64, hi as f64) as i32)
        .collect();
    ActTensor {
        dims: acc.dims.clone(),
        values,
        frac_bits,
    }
}

pub fn relu<T: Copy + Ord + Default>(values: &mut [T]) {
    for v in values {
        *v = (*v).max(T::default());
    }
}

/// Windowed max over each `[H][W]` plane of a `[C][H][W]` tensor.
pub fn maxpool<T: Copy + Ord>(values: &[T], dims: &[usize], size: usize, stride: usize) -> (Vec<usize>, Vec<T>) {
    let (c, h, w) = (dims[0], dims[1], dims[2]);
    let (oh, ow) = ((h - size) / stride + 1, (w - size) / stride + 1);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = &values[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let m = (0..size)
                    .flat_map(|dy| (0..size).map(move |dx| (dy, dx)))
                    .map(|(dy, dx)| plane[(oy * stride + dy) * w + ox * stride + dx])
                    .max()
                    .unwrap();
                out.push(m);
            }
        }
    }
    (vec![c, oh, ow], out)
}

/// Quantized conv/fc weights unpacked into per-code shift terms.
#[derive(Debug, Clone)]
pub struct PreparedWeights {
    pub dims: Vec<usize>,
    pub codes: Vec<u16>,
    /// Shift terms of every raw code; invalid codes never occur.
    pub terms: Vec<Vec<(bool, u8)>>,
    pub scale: f64,
    pub bias: Option<Vec<f32>>,
}

impl PreparedWeights {
    pub fn new(layer: &Layer) -> Result<Self> {
        let q = layer
            .weights
            .as_ref()
            .and_then(|w| w.as_quantized())
            .ok_or_else(|| Error::NotQuantized(layer.name().to_string()))?;
        let f = q.format();
        let terms = (0..f.code_space())
            .map(|c| f.terms(EncodedWeight(c as u16)).unwrap_or_default())
            .collect();
        Ok(PreparedWeights {
            dims: q.dims().to_vec(),
            codes: q.codes().iter().map(|c| c.bits()).collect(),
            terms,
            scale: f.scale(),
            bias: layer.bias_values().map(<[f32]>::to_vec),
        })
    }

    /// Bias in accumulator units: `round(b * 2^frac / SF)`.
    pub fn bias_acc(&self, out: usize, frac_bits: i32, cfg: &FixedPointConfig) -> Result<Vec<i64>> {
        let unit = (frac_bits as f64).exp2() / self.scale;
        match &self.bias {
            None => Ok(vec![0; out]),
            Some(b) => b
                .iter()
                .map(|&v| {
                    let r = (v as f64 * unit).round();
                    if r.abs() >= 9.2e18 {
                        return Err(Error::AccumulatorOverflow {
                            value: r as i128,
                            bits: cfg.acc_bits,
                        });
                    }
                    check_acc(r as i64, cfg)
                })
                .collect(),
        }
    }

    #[inline]
    fn mac(&self, acc: i64, a: i32, widx: usize, cfg: &FixedPointConfig) -> Result<i64> {
        check_acc(apply_terms(acc, a as i64, &self.terms[self.codes[widx] as usize]), cfg)
    }

    /// Accumulation order per output is (kh, kw, in_ch) ascending, then bias.
    pub fn conv(&self, input: &ActTensor, layer: &Layer, cfg: &FixedPointConfig) -> Result<AccTensor> {
        let out_dims = layer.output_dims(&input.dims)?;
        let (o, c, kh, kw) = (self.dims[0], self.dims[1], self.dims[2], self.dims[3]);
        let (h, w) = (input.dims[1], input.dims[2]);
        let (oh, ow) = (out_dims[1], out_dims[2]);
        let (s, p) = (layer.def.stride as isize, layer.def.pad as isize);
        let bias = self.bias_acc(o, input.frac_bits, cfg)?;
        let mut values = Vec::with_capacity(o * oh * ow);
        for f in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0i64;
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
                                let a = input.values[(ch * h + iy as usize) * w + ix as usize];
                                acc = self.mac(acc, a, ((f * c + ch) * kh + ky) * kw + kx, cfg)?;
                            }
                        }
                    }
                    values.push(check_acc(acc + bias[f], cfg)?);
                }
            }
        }
        Ok(AccTensor {
            dims: out_dims,
            values,
            frac_bits: input.frac_bits,
            scale: self.scale,
        })
    }

    pub fn fc(&self, input: &ActTensor, layer: &Layer, cfg: &FixedPointConfig) -> Result<AccTensor> {
        let out_dims = layer.output_dims(&input.dims)?;
        let (o, n) = (self.dims[0], self.dims[1]);
        let bias = self.bias_acc(o, input.frac_bits, cfg)?;
        let values = (0..o)
            .map(|f| {
                let acc = (0..n).try_fold(0i64, |acc, i| self.mac(acc, input.values[i], f * n + i, cfg))?;
                check_acc(acc + bias[f], cfg)
            })
            .collect::<Result<_>>()?;
        Ok(AccTensor {
            dims: out_dims,
            values,
            frac_bits: input.frac_bits,
            scale: self.scale,
        })
    }
}

pub fn conv_forward(input: &ActTensor, layer: &Layer, cfg: &FixedPointConfig) -> Result<AccTensor> {
    PreparedWeights::new(layer)?.conv(input, layer, cfg)
}

pub fn fc_forward(input: &ActTensor, layer: &Layer, cfg: &FixedPointConfig) -> Result<AccTensor> {
    PreparedWeights::new(layer)?.fc(input, layer, cfg)
}
