//! Post-training quantization with ELP_BSD (encoded low-precision binary
//! signed digit) weights, channel-level quantization-error compensation,
//! and a bit-exact shift-add fixed-point inference engine.
//!
//! Modules:
//!
//! - [`tensorio`] -- CTNS tensor container, model manifests, datasets
//! - [`elpbsd`] -- format specs, level tables, encode/decode, bit packing, CQNT files
//! - [`quantizer`] -- scale selection, nearest/compensated quantization, uniform fixed point
//! - [`engine`] -- integer forward pass where every weight multiply is a set of shifts
//! - [`systolic`] -- weight-stationary array simulator with cycle and energy accounting
//! - [`analysis`] -- distribution, correlation, bias-noise, and error-variance studies
//! - [`driver`] -- the end-to-end quantization methodology, search, and sweeps

pub mod analysis;
pub mod driver;
pub mod elpbsd;
pub mod engine;
mod error;
pub mod quantizer;
pub mod systolic;
pub mod tensorio;

pub use elpbsd::{DigitSpec, EncodedWeight, FormatSpec, QuantTable, QuantizedTensor};
pub use engine::FixedPointConfig;
pub use error::{Error, Result};
pub use tensorio::{Dataset, LayerDef, LayerKind, Model, Tensor};
