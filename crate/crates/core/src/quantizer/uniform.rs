use crate::error::{Error, Result};

/// Upper bound for automatically chosen fractional bits.
pub const MAX_FRAC_BITS: i32 = 24;

/// Two's-complement (or unsigned) fixed point with an implicit binary point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniformFPSpec {
    pub total_bits: u32,
    pub frac_bits: i32,
    pub signed: bool,
}

impl UniformFPSpec {
    pub fn new(total_bits: u32, frac_bits: i32, signed: bool) -> Result<Self> {
        if !(2..=16).contains(&total_bits) {
            return Err(Error::InvalidArgument(format!(
                "fixed-point width {total_bits} outside 2..=16"
            )));
        }
        Ok(UniformFPSpec {
            total_bits,
            frac_bits,
            signed,
        })
    }

    pub fn int_range(&self) -> (i64, i64) {
        if self.signed {
            (-(1i64 << (self.total_bits - 1)), (1i64 << (self.total_bits - 1)) - 1)
        } else {
            (0, (1i64 << self.total_bits) - 1)
        }
    }

    pub fn step(&self) -> f64 {
        (-self.frac_bits as f64).exp2()
    }

    /// Round half away from zero onto the grid, then saturate.
    pub fn to_int(&self, v: f64) -> i64 {
        let (lo, hi) = self.int_range();
        let scaled = (v * (self.frac_bits as f64).exp2()).round();
        if scaled.is_nan() {
            0
        } else {
            (scaled.max(lo as f64).min(hi as f64)) as i64
        }
    }

    pub fn quantize(&self, v: f64) -> f64 {
        self.to_int(v) as f64 * self.step()
    }
}

pub fn uniform_quantize(t: &[f64], spec: UniformFPSpec) -> Vec<f64> {
    t.iter().map(|&v| spec.quantize(v)).collect()
}

/// Largest fractional bit count for which `max |a|` rounds to a value the
/// signed `total_bits` range can hold. Falls back to 0 when even integer
/// resolution saturates, and caps at [`MAX_FRAC_BITS`].
pub fn choose_activation_frac_bits(calib_acts: &[f64], total_bits: u32) -> i32 {
    let max = calib_acts.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let limit = ((1i64 << (total_bits - 1)) - 1) as f64;
    (0..=MAX_FRAC_BITS)
        .rev()
        .find(|&f| (max * (f as f64).exp2()).round() <= limit)
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rounding_and_saturation() {
        let s = UniformFPSpec::new(8, 4, true).unwrap();
        assert_eq!(s.quantize(0.3), 0.3125);
        assert_eq!(s.quantize(0.25), 0.25);
        // ties away from zero
        assert_eq!(s.quantize(1.0 / 32.0), 0.0625);
        assert_eq!(s.quantize(-1.0 / 32.0), -0.0625);
        let s0 = UniformFPSpec::new(8, 0, true).unwrap();
        assert_eq!(s0.quantize(300.0), 127.0);
        assert_eq!(s0.quantize(-300.0), -128.0);
        let u = UniformFPSpec::new(4, 0, false).unwrap();
        assert_eq!(u.quantize(-3.0), 0.0);
        assert_eq!(u.quantize(99.0), 15.0);
        assert!(UniformFPSpec::new(1, 0, true).is_err());
        assert!(UniformFPSpec::new(17, 0, true).is_err());
    }

    #[test]
    fn frac_bit_choice() {
        assert_eq!(choose_activation_frac_bits(&[1.0, -6.2, 3.0], 8), 4);
        assert_eq!(choose_activation_frac_bits(&[0.9, 0.1], 8), 7);
        assert_eq!(choose_activation_frac_bits(&[1000.0], 8), 0);
        assert_eq!(choose_activation_frac_bits(&[0.0], 8), MAX_FRAC_BITS);
    }

    proptest! {
        #[test]
        fn monotone(a in -1e4f64..1e4, b in -1e4f64..1e4, bits in 2u32..=16, frac in -4i32..12, signed: bool) {
            let s = UniformFPSpec::new(bits, frac, signed).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(s.quantize(lo) <= s.quantize(hi));
        }
    }
}
