//! Empirical studies: weight/activation distributions, feature-map
//! correlation, bias-noise sensitivity, and the excess-variance model of
//! quantization error in a dot product.

mod corr;
mod noise;
mod variance;

pub use corr::{
    distribution_stats, feature_maps, inter_corr, intra_corr, intra_corr_map, CorrMatrix,
    DistributionStats, ShiftStat,
};
pub use noise::{bias_noise_sweep, inject_bias_noise, NoiseMode, NoisePoint};
pub use variance::{
    empirical_excess_variance, predicted_excess_variance, random_variance_params, variance_table,
    VarianceParams, VarianceRow,
};

use serde::Serialize;

use crate::error::Result;

/// Writes `rows` as CSV with a header derived from the row type.
pub fn write_csv<T: Serialize, W: std::io::Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| crate::error::Error::io("<csv>", e))?;
    Ok(())
}
