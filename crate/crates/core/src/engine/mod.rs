//! Bit-exact fixed-point forward pass.
//!
//! Activations are two's-complement integers with a per-layer binary
//! point. Each weight is applied as its ELP_BSD digits: the activation is
//! shifted once per digit and the shifted terms are added to the running
//! accumulator, exactly as a shift-add processing element would. Results
//! of a conv/fc layer stay in accumulator scale (`activation step * SF`)
//! until they are requantized for the next weight layer.

mod ops;
pub mod reference;

use rayon::prelude::*;
use serde::Serialize;

pub use ops::{
    conv_forward, fc_forward, maxpool, quantize_input, relu, requantize, shift_mac, AccTensor,
    ActTensor, PreparedWeights,
};

use crate::error::{Error, Result};
use crate::quantizer::{choose_activation_frac_bits, UniformFPSpec};
use crate::tensorio::{Dataset, LayerKind, Model};

pub const DEFAULT_ACC_BITS: u32 = 32;
pub const MAX_ACC_BITS: u32 = 62;

fn ceil_log2(n: u64) -> u32 {
    if n <= 1 {
        0
    } else {
        u64::BITS - (n - 1).leading_zeros()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FixedPointConfig {
    /// Activation width shared by every layer.
    pub act_bits: u32,
    /// Binary point of the activations entering each layer, indexed like
    /// `Model::layers`. Only conv/fc entries are consulted.
    pub per_layer_frac_bits: Vec<i32>,
    pub acc_bits: u32,
}

impl FixedPointConfig {
    pub fn new(act_bits: u32, per_layer_frac_bits: Vec<i32>) -> Result<Self> {
        Self::with_acc_bits(act_bits, per_layer_frac_bits, DEFAULT_ACC_BITS)
    }

    pub fn with_acc_bits(act_bits: u32, per_layer_frac_bits: Vec<i32>, acc_bits: u32) -> Result<Self> {
        UniformFPSpec::new(act_bits, 0, true)?;
        if !(act_bits..=MAX_ACC_BITS).contains(&acc_bits) {
            return Err(Error::InvalidArgument(format!(
                "accumulator width {acc_bits} outside {act_bits}..={MAX_ACC_BITS}"
            )));
        }
        Ok(FixedPointConfig {
            act_bits,
            per_layer_frac_bits,
            acc_bits,
        })
    }

    pub fn act_spec(&self, frac_bits: i32) -> UniformFPSpec {
        UniformFPSpec {
            total_bits: self.act_bits,
            frac_bits,
            signed: true,
        }
    }

    pub fn acc_range(&self) -> (i64, i64) {
        (-(1i64 << (self.acc_bits - 1)), (1i64 << (self.acc_bits - 1)) - 1)
    }

    pub fn frac_for(&self, layer: usize) -> Result<i32> {
        self.per_layer_frac_bits.get(layer).copied().ok_or_else(|| {
            Error::InvalidArgument(format!("no fractional bits configured for layer {layer}"))
        })
    }

    /// `act_bits + ceil(log2(max |level|)) + ceil(log2(dot length)) + 1`,
    /// which for a single-digit format is `act_bits + max_shift + ...`.
    pub fn required_acc_bits(act_bits: u32, max_int_level: i64, dot_len: usize) -> u32 {
        act_bits + ceil_log2(max_int_level.unsigned_abs()) + ceil_log2(dot_len as u64) + 1
    }

    /// Widest requirement over the model's quantized layers.
    pub fn model_acc_bits(act_bits: u32, model: &Model) -> Result<u32> {
        let shapes = model.shapes()?;
        let mut need = act_bits;
        for (k, layer) in model.layers.iter().enumerate() {
            let Some(q) = layer.weights.as_ref().and_then(|w| w.as_quantized()) else {
                continue;
            };
            let dot_len = match layer.kind() {
                LayerKind::Conv => q.dims()[1..].iter().product(),
                _ => shapes[k].iter().product(),
            };
            need = need.max(Self::required_acc_bits(
                act_bits,
                q.format().max_int_magnitude(),
                dot_len,
            ));
        }
        Ok(need)
    }

    pub fn check_model(&self, model: &Model) -> Result<()> {
        let required = Self::model_acc_bits(self.act_bits, model)?;
        if required > self.acc_bits {
            return Err(Error::AccumulatorTooNarrow {
                acc_bits: self.acc_bits,
                required,
            });
        }
        Ok(())
    }

    /// Picks each weight layer's binary point from the largest input
    /// magnitude seen over `calib` in float inference. The accumulator is
    /// the default 32 bits unless the model needs more.
    pub fn calibrate(model: &Model, calib: &Dataset, act_bits: u32) -> Result<Self> {
        let fracs = calibrate_frac_bits(model, calib, act_bits)?;
        let acc = DEFAULT_ACC_BITS.max(Self::model_acc_bits(act_bits, model)?);
        Self::with_acc_bits(act_bits, fracs, acc)
    }
}

/// Largest `|input|` of every layer across the calibration set.
pub fn layer_input_ranges(model: &Model, calib: &Dataset) -> Result<Vec<f64>> {
    if calib.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let net = reference::FloatNet::new(model)?;
    let per_sample: Vec<Vec<f64>> = (0..calib.len())
        .into_par_iter()
        .map(|i| {
            net.trace(calib.sample(i)).map(|t| {
                t.iter()
                    .map(|a| a.iter().fold(0.0f64, |m, v| m.max(v.abs())))
                    .collect()
            })
        })
        .collect::<Result<_>>()?;
    let n = model.layers.len();
    Ok((0..n)
        .map(|k| per_sample.iter().map(|s| s[k]).fold(0.0, f64::max))
        .collect())
}

pub fn calibrate_frac_bits(model: &Model, calib: &Dataset, act_bits: u32) -> Result<Vec<i32>> {
    let ranges = layer_input_ranges(model, calib)?;
    Ok(ranges
        .iter()
        .map(|&m| choose_activation_frac_bits(&[m], act_bits))
        .collect())
}

enum Stage {
    Float { dims: Vec<usize>, values: Vec<f64> },
    Int(ActTensor),
    Acc(AccTensor),
}

/// Runs one input through the integer pipeline and returns real logits.
pub fn infer(model: &Model, input: &[f32], cfg: &FixedPointConfig) -> Result<Vec<f64>> {
    let prepared = PreparedModel::new(model, cfg)?;
    prepared.infer(input)
}

/// A model checked against a config with per-layer weights pre-decoded.
pub struct PreparedModel<'a> {
    model: &'a Model,
    cfg: &'a FixedPointConfig,
    weights: Vec<Option<PreparedWeights>>,
}

impl<'a> PreparedModel<'a> {
    pub fn new(model: &'a Model, cfg: &'a FixedPointConfig) -> Result<Self> {
        model.validate()?;
        cfg.check_model(model)?;
        let weights = model
            .layers
            .iter()
            .map(|l| {
                if l.kind().has_weights() {
                    PreparedWeights::new(l).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<_>>()?;
        for k in model.weight_layers() {
            cfg.frac_for(k)?;
        }
        Ok(PreparedModel { model, cfg, weights })
    }

    pub fn infer(&self, input: &[f32]) -> Result<Vec<f64>> {
        self.run(input, &mut |_, _, _| {})
    }

    /// Like [`PreparedModel::infer`] but also returns the integer input
    /// and raw accumulator output of every conv/fc layer.
    pub fn trace(&self, input: &[f32]) -> Result<(Vec<f64>, Vec<LayerTrace>)> {
        let mut traces = Vec::new();
        let logits = self.run(input, &mut |layer, input, output| {
            traces.push(LayerTrace {
                layer,
                input: input.clone(),
                output: output.clone(),
            })
        })?;
        Ok((logits, traces))
    }

    fn run(&self, input: &[f32], hook: &mut dyn FnMut(usize, &ActTensor, &AccTensor)) -> Result<Vec<f64>> {
        let weight_layers = self.model.weight_layers();
        let mut stage = Stage::Float {
            dims: self.model.input_dims.clone(),
            values: input.iter().map(|&v| v as f64).collect(),
        };
        if input.len() != self.model.input_dims.iter().product::<usize>() {
            return Err(Error::ShapeMismatch {
                layer: "input".into(),
                detail: format!("expected {:?}, got {} values", self.model.input_dims, input.len()),
            });
        }
        for (k, layer) in self.model.layers.iter().enumerate() {
            stage = match layer.kind() {
                LayerKind::Conv | LayerKind::Fc => {
                    let frac = self.cfg.frac_for(k)?;
                    let act = match stage {
                        Stage::Float { dims, values } => quantize_input(&values, dims, self.cfg.act_spec(frac)),
                        Stage::Int(a) if a.frac_bits == frac => a,
                        Stage::Int(a) => requantize(&AccTensor::from_act(&a), frac, self.cfg),
                        Stage::Acc(acc) => requantize(&acc, frac, self.cfg),
                    };
                    let w = self.weights[k].as_ref().unwrap();
                    let acc = match layer.kind() {
                        LayerKind::Conv => w.conv(&act, layer, self.cfg)?,
                        _ => w.fc(&act, layer, self.cfg)?,
                    };
                    hook(k, &act, &acc);
                    match weight_layers.iter().find(|&&j| j > k) {
                        Some(&next) => Stage::Int(requantize(&acc, self.cfg.frac_for(next)?, self.cfg)),
                        None => Stage::Acc(acc),
                    }
                }
                LayerKind::Relu => match stage {
                    Stage::Float { dims, values } => Stage::Float {
                        dims,
                        values: values.into_iter().map(|v| v.max(0.0)).collect(),
                    },
                    Stage::Int(mut a) => {
                        relu(&mut a.values);
                        Stage::Int(a)
                    }
                    Stage::Acc(mut a) => {
                        relu(&mut a.values);
                        Stage::Acc(a)
                    }
                },
                LayerKind::Maxpool => {
                    let size = layer.def.pool_size.unwrap_or(1);
                    let stride = layer.def.stride;
                    match stage {
                        Stage::Float { dims, values } => {
                            let (d, v) = reference::maxpool_f64(&values, &dims, size, stride);
                            Stage::Float { dims: d, values: v }
                        }
                        Stage::Int(a) => {
                            let (dims, values) = maxpool(&a.values, &a.dims, size, stride);
                            Stage::Int(ActTensor { dims, values, frac_bits: a.frac_bits })
                        }
                        Stage::Acc(a) => {
                            let (dims, values) = maxpool(&a.values, &a.dims, size, stride);
                            Stage::Acc(AccTensor { dims, values, ..a })
                        }
                    }
                }
            };
        }
        Ok(match stage {
            Stage::Float { values, .. } => values,
            Stage::Int(a) => a.real_values(),
            Stage::Acc(a) => a.real_values(),
        })
    }
}

/// Integer input and accumulator output of one conv/fc layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub layer: usize,
    pub input: ActTensor,
    pub output: AccTensor,
}

/// Index of the largest logit; the first one wins ties.
pub fn argmax(logits: &[f64]) -> usize {
    logits
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Logits for every sample, computed in parallel; order follows the dataset.
pub fn infer_batch(model: &Model, data: &Dataset, cfg: &FixedPointConfig) -> Result<Vec<Vec<f64>>> {
    let prepared = PreparedModel::new(model, cfg)?;
    (0..data.len())
        .into_par_iter()
        .map(|i| prepared.infer(data.sample(i)))
        .collect()
}

/// Top-1 accuracy for any per-sample logit function.
pub fn accuracy_with<F>(data: &Dataset, logits: F) -> Result<f64>
where
    F: Fn(&[f32]) -> Result<Vec<f64>> + Sync,
{
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let correct = (0..data.len())
        .into_par_iter()
        .map(|i| logits(data.sample(i)).map(|l| (argmax(&l) as i64 == data.label(i) as i64) as usize))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(correct as f64 / data.len() as f64)
}

/// Top-1 accuracy of the bit-exact integer pipeline.
pub fn evaluate_accuracy(model: &Model, data: &Dataset, cfg: &FixedPointConfig) -> Result<f64> {
    let prepared = PreparedModel::new(model, cfg)?;
    accuracy_with(data, |x| prepared.infer(x))
}
