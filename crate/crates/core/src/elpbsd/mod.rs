//! ELP_BSD weight representation.
//!
//! A format is an ordered list of digits. Each digit carries an optional
//! sign bit and an index into its own set of shift counts, so a stored
//! code decodes to `scale * sum(sign_i * 2^shift_i)`. Codes are laid out
//! digit by digit from the most significant bit down; within a digit the
//! sign bit (if any) precedes the index bits, which are stored MSB first.
//! A sign bit of 1 means negative.

mod pack;
mod qtensor;
mod table;

use serde::{Deserialize, Serialize};

pub use pack::{pack_tensor, packed_len, unpack_tensor};
pub use qtensor::{read_quantized, write_quantized, QuantizedTensor, CQNT_MAGIC};
pub use table::{encode, enumerate_levels, QuantTable};

use crate::error::{Error, Result};

pub const MAX_SHIFT: u8 = 15;
pub const MAX_BIT_WIDTH: u32 = 16;

/// Bits needed to index `n` alternatives; a single alternative costs nothing.
pub fn index_bits(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawDigit")]
pub struct DigitSpec {
    signed: bool,
    shifts: Vec<u8>,
}

#[derive(Deserialize)]
struct RawDigit {
    signed: bool,
    shifts: Vec<u8>,
}

impl TryFrom<RawDigit> for DigitSpec {
    type Error = Error;
    fn try_from(raw: RawDigit) -> Result<Self> {
        DigitSpec::new(raw.signed, raw.shifts)
    }
}

impl DigitSpec {
    pub fn new(signed: bool, shifts: Vec<u8>) -> Result<Self> {
        if shifts.is_empty() {
            return Err(Error::InvalidFormat("digit needs at least one shift count".into()));
        }
        if shifts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidFormat(format!(
                "shift counts {shifts:?} must be strictly increasing"
            )));
        }
        if shifts.last().is_some_and(|&s| s > MAX_SHIFT) {
            return Err(Error::InvalidFormat(format!("shift counts must be <= {MAX_SHIFT}")));
        }
        Ok(DigitSpec { signed, shifts })
    }

    pub fn signed(&self) -> bool {
        self.signed
    }

    pub fn shifts(&self) -> &[u8] {
        &self.shifts
    }

    pub fn index_bits(&self) -> u32 {
        index_bits(self.shifts.len())
    }

    pub fn bit_width(&self) -> u32 {
        self.signed as u32 + self.index_bits()
    }
}

/// One digit's position inside a code, as bit offsets from the LSB.
#[derive(Debug, Clone, Copy)]
struct DigitField {
    sign_bit: Option<u32>,
    index_shift: u32,
    index_bits: u32,
}

/// A complete ELP_BSD format: digit layout plus a positive scale factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFormat")]
pub struct FormatSpec {
    scale: f64,
    digits: Vec<DigitSpec>,
}

#[derive(Deserialize)]
struct RawFormat {
    #[serde(default = "unit_scale")]
    scale: f64,
    digits: Vec<DigitSpec>,
}

fn unit_scale() -> f64 {
    1.0
}

impl TryFrom<RawFormat> for FormatSpec {
    type Error = Error;
    fn try_from(raw: RawFormat) -> Result<Self> {
        FormatSpec::new(raw.digits, raw.scale)
    }
}

impl FormatSpec {
    pub fn new(digits: Vec<DigitSpec>, scale: f64) -> Result<Self> {
        if digits.is_empty() {
            return Err(Error::InvalidFormat("format needs at least one digit".into()));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidFormat(format!("scale {scale} must be positive and finite")));
        }
        let width: u32 = digits.iter().map(DigitSpec::bit_width).sum();
        if width > MAX_BIT_WIDTH {
            return Err(Error::InvalidFormat(format!(
                "{width} bits per weight exceeds {MAX_BIT_WIDTH}"
            )));
        }
        Ok(FormatSpec { scale, digits })
    }

    /// One signed digit over `shifts`, e.g. `{0..7}` for the 4-bit format.
    pub fn single_signed(shifts: impl IntoIterator<Item = u8>, scale: f64) -> Result<Self> {
        Self::new(vec![DigitSpec::new(true, shifts.into_iter().collect())?], scale)
    }

    pub fn with_scale(&self, scale: f64) -> Result<Self> {
        Self::new(self.digits.clone(), scale)
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn digits(&self) -> &[DigitSpec] {
        &self.digits
    }

    pub fn bit_width(&self) -> u32 {
        self.digits.iter().map(DigitSpec::bit_width).sum()
    }

    pub fn max_shift(&self) -> u8 {
        self.digits
            .iter()
            .map(|d| *d.shifts.last().unwrap())
            .max()
            .unwrap()
    }

    /// Largest magnitude of the integer (unscaled) value of any code.
    pub fn max_int_magnitude(&self) -> i64 {
        self.digits
            .iter()
            .map(|d| 1i64 << d.shifts.last().unwrap())
            .sum()
    }

    /// Number of raw bit patterns, valid or not.
    pub fn code_space(&self) -> u32 {
        1u32 << self.bit_width()
    }

    fn fields(&self) -> Vec<DigitField> {
        let mut offset = 0;
        let mut fields = vec![
            DigitField {
                sign_bit: None,
                index_shift: 0,
                index_bits: 0
            };
            self.digits.len()
        ];
        for (d, field) in self.digits.iter().zip(fields.iter_mut()).rev() {
            field.index_shift = offset;
            field.index_bits = d.index_bits();
            offset += field.index_bits;
            if d.signed {
                field.sign_bit = Some(offset);
                offset += 1;
            }
        }
        fields
    }

    /// Splits a code into per-digit `(negative, shift)` terms.
    pub fn terms(&self, code: EncodedWeight) -> Result<Vec<(bool, u8)>> {
        if code.0 as u32 >= self.code_space() {
            return Err(Error::InvalidCode {
                code: code.0,
                digit: 0,
                index: code.0 as usize,
                limit: self.code_space() as usize,
            });
        }
        self.fields()
            .iter()
            .zip(&self.digits)
            .enumerate()
            .map(|(i, (f, d))| {
                let negative = f.sign_bit.is_some_and(|b| code.0 >> b & 1 == 1);
                let index = ((code.0 as u32 >> f.index_shift) & ((1 << f.index_bits) - 1)) as usize;
                match d.shifts.get(index) {
                    Some(&s) => Ok((negative, s)),
                    None => Err(Error::InvalidCode {
                        code: code.0,
                        digit: i,
                        index,
                        limit: d.shifts.len(),
                    }),
                }
            })
            .collect()
    }

    /// Builds a code from per-digit `(negative, index)` choices.
    pub fn compose(&self, choices: &[(bool, usize)]) -> Result<EncodedWeight> {
        if choices.len() != self.digits.len() {
            return Err(Error::InvalidArgument(format!(
                "{} digit choices for a {}-digit format",
                choices.len(),
                self.digits.len()
            )));
        }
        let mut code = 0u32;
        for ((f, d), &(neg, idx)) in self.fields().iter().zip(&self.digits).zip(choices) {
            if idx >= d.shifts.len() || (neg && !d.signed) {
                return Err(Error::InvalidArgument(format!(
                    "choice ({neg}, {idx}) invalid for digit {d:?}"
                )));
            }
            code |= (idx as u32) << f.index_shift;
            if let Some(b) = f.sign_bit {
                code |= (neg as u32) << b;
            }
        }
        Ok(EncodedWeight(code as u16))
    }

    /// The integer a code represents before scaling.
    pub fn int_value(&self, code: EncodedWeight) -> Result<i64> {
        Ok(self
            .terms(code)?
            .into_iter()
            .map(|(neg, s)| if neg { -(1i64 << s) } else { 1i64 << s })
            .sum())
    }

    pub fn decode(&self, code: EncodedWeight) -> Result<f64> {
        Ok(self.scale * self.int_value(code)? as f64)
    }
}

/// A packed ELP_BSD code; only the low `bit_width` bits are meaningful.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EncodedWeight(pub u16);

impl EncodedWeight {
    pub fn bits(self) -> u16 {
        self.0
    }
}

pub fn bit_width(spec: &FormatSpec) -> u32 {
    spec.bit_width()
}

pub fn decode(w: EncodedWeight, spec: &FormatSpec) -> Result<f64> {
    spec.decode(w)
}
