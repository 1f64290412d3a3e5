//! Per-layer scale selection, nearest-level quantization, channel-level
//! error compensation, and uniform fixed-point quantization.

mod compensate;
mod uniform;

pub use compensate::{
    compensate, compensate_levels, group_ranges, ChannelReport, CompensationMode,
    CompensationReport, FC_GROUP,
};
pub use uniform::{choose_activation_frac_bits, uniform_quantize, UniformFPSpec, MAX_FRAC_BITS};

pub use crate::elpbsd::QuantizedTensor;
use crate::elpbsd::{FormatSpec, QuantTable};
use crate::error::{Error, Result};

/// `max |w| / 2^(largest shift count)`, so the largest single-digit level
/// lands on the largest weight magnitude.
pub fn scale_factor(weights: &[f64], spec: &FormatSpec) -> Result<f64> {
    let max = weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    if weights.is_empty() || max == 0.0 || !max.is_finite() {
        return Err(Error::DegenerateScale);
    }
    Ok(max / f64::from(spec.max_shift()).exp2())
}

/// Result of snapping every weight to its nearest level.
#[derive(Debug, Clone, PartialEq)]
pub struct NearestQuant {
    pub level_indices: Vec<usize>,
    pub values: Vec<f64>,
    /// `unquantized - quantized`, elementwise.
    pub errors: Vec<f64>,
}

pub fn nearest_quantize(weights: &[f64], table: &QuantTable) -> NearestQuant {
    let level_indices: Vec<usize> = weights.iter().map(|&w| table.nearest_index(w)).collect();
    let values: Vec<f64> = level_indices.iter().map(|&i| table.level(i)).collect();
    let errors = weights.iter().zip(&values).map(|(w, q)| w - q).collect();
    NearestQuant {
        level_indices,
        values,
        errors,
    }
}

/// The level adjacent to `v` on the far side from its nearest level.
pub fn opposite_neighbor(v: f64, table: &QuantTable) -> Result<usize> {
    let near = table.nearest_index(v);
    let level = table.level(near);
    if v == level {
        return Err(Error::OnLevel(v));
    }
    let opposite = if v > level {
        near + 1
    } else {
        near.wrapping_sub(1)
    };
    if opposite < table.len() {
        Ok(opposite)
    } else {
        Err(Error::OutsideTable {
            value: v,
            boundary: level,
        })
    }
}
