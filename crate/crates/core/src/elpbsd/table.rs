use std::cmp::Ordering;

use super::{EncodedWeight, FormatSpec};
use crate::error::{Error, Result};

/// Sorted, deduplicated quantization levels with one canonical code each.
///
/// Tables built by [`enumerate_levels`] carry their format; tables built
/// from an arbitrary level list use the level index as the code.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantTable {
    format: Option<FormatSpec>,
    levels: Vec<f64>,
    ints: Vec<i64>,
    codes: Vec<EncodedWeight>,
    /// Level index per raw code, `u32::MAX` for invalid codes.
    code_to_level: Vec<u32>,
}

/// Decodes every valid code of `spec`, merges codes with equal values and
/// sorts ascending. The canonical code of a level is its smallest code.
pub fn enumerate_levels(spec: &FormatSpec) -> QuantTable {
    let space = spec.code_space();
    let mut by_value: Vec<(i64, EncodedWeight)> = (0..space)
        .filter_map(|c| {
            let code = EncodedWeight(c as u16);
            spec.int_value(code).ok().map(|v| (v, code))
        })
        .collect();
    // stable sort keeps ascending code order inside each value
    by_value.sort_by_key(|&(v, _)| v);
    let mut ints = Vec::new();
    let mut codes = Vec::new();
    let mut code_to_level = vec![u32::MAX; space as usize];
    for (v, code) in by_value {
        if ints.last() != Some(&v) {
            ints.push(v);
            codes.push(code);
        }
        code_to_level[code.0 as usize] = (ints.len() - 1) as u32;
    }
    let levels = ints.iter().map(|&i| spec.scale() * i as f64).collect();
    QuantTable {
        format: Some(spec.clone()),
        levels,
        ints,
        codes,
        code_to_level,
    }
}

impl QuantTable {
    /// A table over arbitrary finite levels; codes are level indices.
    pub fn from_levels(mut levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() || levels.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidArgument("levels must be finite and non-empty".into()));
        }
        if levels.len() > u16::MAX as usize {
            return Err(Error::InvalidArgument("too many levels".into()));
        }
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        let n = levels.len();
        Ok(QuantTable {
            format: None,
            levels,
            ints: Vec::new(),
            codes: (0..n as u16).map(EncodedWeight).collect(),
            code_to_level: (0..n as u32).collect(),
        })
    }

    /// Uniform two's-complement grid with `frac_bits` fractional bits.
    pub fn uniform(total_bits: u32, frac_bits: i32, signed: bool) -> Result<Self> {
        if !(2..=16).contains(&total_bits) {
            return Err(Error::InvalidArgument(format!("{total_bits} bits outside 2..=16")));
        }
        let step = (-frac_bits as f64).exp2();
        let (lo, hi) = if signed {
            (-(1i64 << (total_bits - 1)), (1i64 << (total_bits - 1)) - 1)
        } else {
            (0, (1i64 << total_bits) - 1)
        };
        Self::from_levels((lo..=hi).map(|q| q as f64 * step).collect())
    }

    pub fn format(&self) -> Option<&FormatSpec> {
        self.format.as_ref()
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn level(&self, i: usize) -> f64 {
        self.levels[i]
    }

    pub fn code(&self, i: usize) -> EncodedWeight {
        self.codes[i]
    }

    /// Unscaled integer value of level `i`; only for format-backed tables.
    pub fn int_level(&self, i: usize) -> Option<i64> {
        self.ints.get(i).copied()
    }

    pub fn level_of_code(&self, code: EncodedWeight) -> Option<usize> {
        match self.code_to_level.get(code.0 as usize) {
            Some(&i) if i != u32::MAX => Some(i as usize),
            _ => None,
        }
    }

    pub fn max_gap(&self) -> f64 {
        self.levels
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    pub fn min_gap(&self) -> Option<f64> {
        self.levels
            .windows(2)
            .map(|w| w[1] - w[0])
            .min_by(f64::total_cmp)
    }

    /// Orders two candidate levels for `v`: closer first, then smaller
    /// magnitude, then smaller code.
    fn prefer(&self, v: f64, a: usize, b: usize) -> Ordering {
        let (la, lb) = (self.levels[a], self.levels[b]);
        (v - la)
            .abs()
            .total_cmp(&(v - lb).abs())
            .then(la.abs().total_cmp(&lb.abs()))
            .then(self.codes[a].cmp(&self.codes[b]))
    }

    /// Index of the nearest level. NaN is treated as zero.
    pub fn nearest_index(&self, v: f64) -> usize {
        let v = if v.is_nan() { 0.0 } else { v };
        let hi = self.levels.partition_point(|&l| l < v);
        if hi == 0 {
            return 0;
        }
        if hi == self.levels.len() {
            return hi - 1;
        }
        match self.prefer(v, hi - 1, hi) {
            Ordering::Greater => hi,
            _ => hi - 1,
        }
    }

    pub fn encode(&self, v: f64) -> EncodedWeight {
        self.codes[self.nearest_index(v)]
    }

    /// Reference nearest search over every level, used to cross-check
    /// [`QuantTable::nearest_index`].
    pub fn nearest_index_linear(&self, v: f64) -> usize {
        let v = if v.is_nan() { 0.0 } else { v };
        (0..self.levels.len())
            .min_by(|&a, &b| self.prefer(v, a, b))
            .unwrap()
    }
}

pub fn encode(v: f64, table: &QuantTable) -> EncodedWeight {
    table.encode(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elpbsd::DigitSpec;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn d(signed: bool, shifts: &[u8]) -> DigitSpec {
        DigitSpec::new(signed, shifts.to_vec()).unwrap()
    }

    /// Exhaustive oracle built without the table's dedup path: evaluates
    /// each digit choice directly and collects distinct sums.
    fn brute_force_values(digits: &[(bool, &[u8])]) -> BTreeSet<i64> {
        let mut sums = BTreeSet::from([0i64]);
        for &(signed, shifts) in digits {
            let mut next = BTreeSet::new();
            for &s in sums.iter() {
                for &k in shifts {
                    next.insert(s + (1 << k));
                    if signed {
                        next.insert(s - (1 << k));
                    }
                }
            }
            sums = next;
        }
        sums
    }

    #[test]
    fn single_signed_digit_has_16_levels() {
        let f = FormatSpec::single_signed(0..8, 1.0).unwrap();
        let t = enumerate_levels(&f);
        let expected: Vec<f64> = (0..8)
            .rev()
            .map(|k| -(1 << k) as f64)
            .chain((0..8).map(|k| (1 << k) as f64))
            .collect();
        assert_eq!(t.levels(), expected.as_slice());
    }

    #[test]
    fn two_signed_digits_match_brute_force() {
        let f = FormatSpec::new(vec![d(true, &[0, 1, 2, 3]), d(true, &[0, 1, 2, 3])], 1.0).unwrap();
        let t = enumerate_levels(&f);
        let oracle = brute_force_values(&[(true, &[0, 1, 2, 3]), (true, &[0, 1, 2, 3])]);
        let got: Vec<i64> = t.levels().iter().map(|&l| l as i64).collect();
        assert_eq!(got, oracle.into_iter().collect::<Vec<_>>());
        // 0, ±{1..10}, ±12, ±16
        assert_eq!(t.len(), 25);
        for i in 0..t.len() {
            assert_eq!(f.decode(t.code(i)).unwrap(), t.level(i));
        }
    }

    #[test]
    fn unsigned_second_digit_has_no_negative_part() {
        let f = FormatSpec::new(vec![d(true, &[1, 3]), d(false, &[0, 1, 2, 3])], 1.0).unwrap();
        let t = enumerate_levels(&f);
        let oracle = brute_force_values(&[(true, &[1, 3]), (false, &[0, 1, 2, 3])]);
        let got: Vec<i64> = t.levels().iter().map(|&l| l as i64).collect();
        assert_eq!(got, oracle.iter().copied().collect::<Vec<_>>());
        assert!(got.contains(&3));
        assert!(got.contains(&-1)); // -2 + 1
        assert!(!got.contains(&7)); // would need 8 - 1
    }

    #[test]
    fn canonical_code_is_smallest() {
        // value 0 = +1-1 = -1+1 with both digits {0}
        let f = FormatSpec::new(vec![d(true, &[0]), d(true, &[0])], 1.0).unwrap();
        let t = enumerate_levels(&f);
        assert_eq!(t.levels(), &[-2.0, 0.0, 2.0]);
        assert_eq!(t.code(1), EncodedWeight(0b01));
        assert_eq!(t.level_of_code(EncodedWeight(0b10)), Some(1));
    }

    #[test]
    fn encode_examples() {
        let f = FormatSpec::single_signed(0..8, 1.0).unwrap();
        let t = enumerate_levels(&f);
        assert_eq!(f.decode(t.encode(5.0)).unwrap(), 4.0);
        assert_eq!(f.decode(t.encode(1.5)).unwrap(), 1.0);
        assert_eq!(f.decode(t.encode(-1.5)).unwrap(), -1.0);
        // 0 ties between +1 (code 0000) and -1 (code 1000)
        assert_eq!(t.encode(0.0), EncodedWeight(0));
        assert_eq!(f.decode(t.encode(1e9)).unwrap(), 128.0);
        assert_eq!(f.decode(t.encode(f64::NEG_INFINITY)).unwrap(), -128.0);
        // 6 is equidistant from 4 and 8
        assert_eq!(f.decode(t.encode(6.0)).unwrap(), 4.0);
    }

    #[test]
    fn uniform_grid() {
        let t = QuantTable::uniform(4, 2, true).unwrap();
        assert_eq!(t.len(), 16);
        assert_eq!(t.level(0), -2.0);
        assert_eq!(t.level(15), 1.75);
        assert_eq!(t.min_gap(), Some(0.25));
    }

    fn arb_format() -> impl Strategy<Value = FormatSpec> {
        let digit = (any::<bool>(), prop::collection::btree_set(0u8..=9, 1..=4))
            .prop_map(|(s, set)| DigitSpec::new(s, set.into_iter().collect()).unwrap());
        (prop::collection::vec(digit, 1..=3), 0.01f64..4.0)
            .prop_filter_map("fits 16 bits", |(digits, scale)| FormatSpec::new(digits, scale).ok())
    }

    proptest! {
        #[test]
        fn enumeration_is_exhaustive(f in arb_format()) {
            let t = enumerate_levels(&f);
            for c in 0..f.code_space() {
                if let Ok(v) = f.decode(EncodedWeight(c as u16)) {
                    let i = t.level_of_code(EncodedWeight(c as u16)).unwrap();
                    prop_assert_eq!(t.level(i), v);
                }
            }
            prop_assert!(t.levels().windows(2).all(|w| w[0] < w[1]));
        }

        #[test]
        fn encode_is_idempotent_and_bounded(f in arb_format(), v in -3000.0f64..3000.0) {
            let t = enumerate_levels(&f);
            let c = t.encode(v);
            let q = f.decode(c).unwrap();
            prop_assert_eq!(t.encode(q), c);
            prop_assert_eq!(t.nearest_index(v), t.nearest_index_linear(v));
            let (lo, hi) = (t.level(0), t.level(t.len() - 1));
            if v >= lo && v <= hi {
                prop_assert!((v - q).abs() <= t.max_gap() / 2.0);
            }
        }
    }
}
