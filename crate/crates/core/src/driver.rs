//! Methodology orchestration: critical activation bit-width search,
//! per-layer weight quantization with compensation, the accuracy loop, and
//! format x bit-width sweeps.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::elpbsd::{enumerate_levels, FormatSpec, QuantizedTensor};
use crate::engine::reference::FloatNet;
use crate::engine::{accuracy_with, calibrate_frac_bits, evaluate_accuracy, FixedPointConfig};
use crate::error::{Error, Result};
use crate::quantizer::{compensate_levels, group_ranges, nearest_quantize, scale_factor, CompensationMode};
use crate::systolic::CostTable;
use crate::tensorio::{Dataset, Model, Weights};

const ACC_EPS: f64 = 1e-12;

fn within(baseline: f64, acc: f64, ac: f64) -> bool {
    baseline - acc <= ac + ACC_EPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodologyConfig {
    /// Digit structure shared by every layer; each layer gets its own scale.
    pub format: FormatSpec,
    /// Allowed top-1 accuracy loss as a fraction.
    pub ac: f64,
    pub bw_max: u32,
    pub bw_min: u32,
    /// Samples used by the search and for calibration.
    pub eval_subset_size: usize,
    /// `None` quantizes to the nearest level only.
    #[serde(default = "default_compensation")]
    pub compensation: Option<CompensationMode>,
}

fn default_compensation() -> Option<CompensationMode> {
    Some(CompensationMode::Channel)
}

impl MethodologyConfig {
    pub fn new(format: FormatSpec, ac: f64, bw_max: u32, bw_min: u32, eval_subset_size: usize) -> Result<Self> {
        let c = MethodologyConfig {
            format,
            ac,
            bw_max,
            bw_min,
            eval_subset_size,
            compensation: default_compensation(),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ac) {
            return Err(Error::InvalidArgument(format!("accuracy constraint {} outside [0, 1]", self.ac)));
        }
        if self.bw_min < 2 || self.bw_max > 16 || self.bw_min > self.bw_max {
            return Err(Error::InvalidArgument(format!(
                "activation bit range {}..={} must lie within 2..=16",
                self.bw_min, self.bw_max
            )));
        }
        if self.eval_subset_size == 0 {
            return Err(Error::InvalidArgument("eval subset size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BitsAccuracy {
    pub act_bits: u32,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CbwaSearch {
    pub baseline_acc: f64,
    pub cbw_a: u32,
    pub constraint_met: bool,
    pub curve: Vec<BitsAccuracy>,
}

/// Float top-1 accuracy.
pub fn float_accuracy(model: &Model, data: &Dataset) -> Result<f64> {
    let net = FloatNet::new(model)?;
    accuracy_with(data, |x| net.forward(x))
}

/// Accuracy of the float model with every weight-layer input rounded to
/// `act_bits`, binary points calibrated on `data`.
pub fn act_quant_accuracy(model: &Model, data: &Dataset, act_bits: u32) -> Result<f64> {
    let cfg = FixedPointConfig::new(act_bits, calibrate_frac_bits(model, data, act_bits)?)?;
    let net = FloatNet::new(model)?;
    accuracy_with(data, |x| net.forward_act_quant(x, &cfg))
}

/// Walks down from `bw_max` and stops at the first bit-width whose loss
/// exceeds the constraint; the last passing width is the critical one. If
/// `bw_max` already fails, returns it with `constraint_met = false`.
pub fn search_cbwa(model: &Model, data: &Dataset, cfg: &MethodologyConfig) -> Result<CbwaSearch> {
    cfg.validate()?;
    let subset = data.head(cfg.eval_subset_size);
    let baseline_acc = float_accuracy(model, &subset)?;
    let mut curve = Vec::new();
    let mut cbw_a = None;
    for bits in (cfg.bw_min..=cfg.bw_max).rev() {
        let accuracy = act_quant_accuracy(model, &subset, bits)?;
        curve.push(BitsAccuracy { act_bits: bits, accuracy });
        if !within(baseline_acc, accuracy, cfg.ac) {
            break;
        }
        cbw_a = Some(bits);
    }
    Ok(CbwaSearch {
        baseline_acc,
        cbw_a: cbw_a.unwrap_or(cfg.bw_max),
        constraint_met: cbw_a.is_some(),
        curve,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerQuant {
    pub layer: String,
    pub scale_factor: f64,
    pub flips: usize,
    /// Average over compensation groups of `|mean(w - q)|`, nearest levels.
    pub mean_abs_err_nearest: f64,
    /// Same after compensation.
    pub mean_abs_err_final: f64,
}

fn group_mean_abs(err: &[f64], dims: &[usize]) -> Result<f64> {
    let groups = group_ranges(dims, CompensationMode::Channel)?;
    let total: f64 = groups
        .iter()
        .map(|(_, _, r)| (err[r.clone()].iter().sum::<f64>() / r.len() as f64).abs())
        .sum();
    Ok(total / groups.len() as f64)
}

/// Quantizes every conv/fc layer of a float model to `template` with a
/// per-layer scale. Biases stay float.
pub fn quantize_model(
    model: &Model,
    template: &FormatSpec,
    compensation: Option<CompensationMode>,
) -> Result<(Model, Vec<LayerQuant>)> {
    let mut out = model.clone();
    let mut reports = Vec::new();
    for k in model.weight_layers() {
        let layer = &model.layers[k];
        let tensor = match &layer.weights {
            Some(Weights::Float(t)) => t,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "layer `{}` is already quantized",
                    layer.name()
                )))
            }
        };
        let w = tensor.to_f64_vec();
        let sf = scale_factor(&w, template)?;
        let format = template.with_scale(sf)?;
        let table = enumerate_levels(&format);
        let nearest = nearest_quantize(&w, &table);
        let (levels, flips) = match compensation {
            Some(mode) => {
                let (levels, report) = compensate_levels(&w, tensor.dims(), &table, mode)?;
                (levels, report.total_flips())
            }
            None => (nearest.level_indices.clone(), 0),
        };
        let final_err: Vec<f64> = w.iter().zip(&levels).map(|(v, &l)| v - table.level(l)).collect();
        reports.push(LayerQuant {
            layer: layer.name().to_string(),
            scale_factor: sf,
            flips,
            mean_abs_err_nearest: group_mean_abs(&nearest.errors, tensor.dims())?,
            mean_abs_err_final: group_mean_abs(&final_err, tensor.dims())?,
        });
        let codes = levels.into_iter().map(|l| table.code(l)).collect();
        out.layers[k].weights = Some(Weights::Quantized(QuantizedTensor::new(
            tensor.dims().to_vec(),
            format,
            codes,
        )?));
    }
    Ok((out, reports))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub baseline_acc: f64,
    pub final_acc: f64,
    pub cbw_a: u32,
    pub constraint_met: bool,
    pub bits_per_weight: u32,
    pub compensation: Option<CompensationMode>,
    pub layers: Vec<LayerQuant>,
    /// Activation-only accuracies seen by the search, on the eval subset.
    pub search: Vec<BitsAccuracy>,
    /// Bit-exact accuracies on the full set, one per loop iteration.
    pub evaluations: Vec<BitsAccuracy>,
    pub fixed_point: FixedPointConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pdp_estimates: Option<Vec<crate::systolic::SimSummary>>,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Search, quantize, then raise the activation width one bit at a time
/// until the bit-exact accuracy on `data` meets the constraint or `bw_max`
/// is reached. Weights are quantized once since their scale does not
/// depend on activation width.
pub fn run_pipeline(model: &Model, data: &Dataset, cfg: &MethodologyConfig) -> Result<(Model, RunReport)> {
    let search = search_cbwa(model, data, cfg)?;
    let (qmodel, layers) = quantize_model(model, &cfg.format, cfg.compensation)?;
    let calib = data.head(cfg.eval_subset_size);
    let baseline_acc = float_accuracy(model, data)?;
    let mut bits = search.cbw_a;
    let mut evaluations = Vec::new();
    loop {
        let fp = FixedPointConfig::calibrate(&qmodel, &calib, bits)?;
        let accuracy = evaluate_accuracy(&qmodel, data, &fp)?;
        evaluations.push(BitsAccuracy { act_bits: bits, accuracy });
        let met = within(baseline_acc, accuracy, cfg.ac);
        if met || bits >= cfg.bw_max {
            let report = RunReport {
                baseline_acc,
                final_acc: accuracy,
                cbw_a: bits,
                constraint_met: met,
                bits_per_weight: cfg.format.bit_width(),
                compensation: cfg.compensation,
                layers,
                search: search.curve,
                evaluations,
                fixed_point: fp,
                pdp_estimates: None,
            };
            return Ok((qmodel, report));
        }
        bits += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedFormat {
    pub name: String,
    pub spec: FormatSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub formats: Vec<NamedFormat>,
    pub act_bits: Vec<u32>,
    #[serde(default = "default_compensation")]
    pub compensation: Option<CompensationMode>,
    /// Samples used to calibrate binary points.
    #[serde(default = "default_calib")]
    pub calib_size: usize,
}

fn default_calib() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub format: String,
    pub bits_per_weight: u32,
    pub act_bits: u32,
    pub accuracy: f64,
    pub pdp_pj: Option<f64>,
}

/// Cost entry for a sweep cell: `<format>@<act_bits>` if present, else
/// `<format>`.
fn cell_pdp(cost: &CostTable, format: &str, bits: u32) -> Option<f64> {
    cost.get(&format!("{format}@{bits}"))
        .or_else(|_| cost.get(format))
        .ok()
        .map(|e| e.pdp())
}

/// Bit-exact accuracy for every (format, act_bits) pair, in that order.
pub fn sweep(model: &Model, data: &Dataset, cfg: &SweepConfig, cost: Option<&CostTable>) -> Result<Vec<SweepRow>> {
    let calib = data.head(cfg.calib_size);
    let mut rows = Vec::with_capacity(cfg.formats.len() * cfg.act_bits.len());
    for f in &cfg.formats {
        let (qmodel, _) = quantize_model(model, &f.spec, cfg.compensation)?;
        for &bits in &cfg.act_bits {
            let fp = FixedPointConfig::calibrate(&qmodel, &calib, bits)?;
            rows.push(SweepRow {
                format: f.name.clone(),
                bits_per_weight: f.spec.bit_width(),
                act_bits: bits,
                accuracy: evaluate_accuracy(&qmodel, data, &fp)?,
                pdp_pj: cost.and_then(|c| cell_pdp(c, &f.name, bits)),
            });
        }
    }
    Ok(rows)
}

/// On-disk sweep description; paths are relative to the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFile {
    pub model: PathBuf,
    pub data: PathBuf,
    #[serde(default)]
    pub cost: Option<PathBuf>,
    #[serde(flatten)]
    pub sweep: SweepConfig,
}

impl SweepFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut f: SweepFile = serde_json::from_str(&text)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        f.model = dir.join(&f.model);
        f.data = dir.join(&f.data);
        f.cost = f.cost.map(|c| dir.join(c));
        Ok(f)
    }
}
