use serde::Serialize;

use crate::engine::reference::FloatNet;
use crate::error::{Error, Result};
use crate::tensorio::{Dataset, Model};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistributionStats {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    /// Fraction with `|v - mean| > 2 std`.
    pub tail_2sigma: f64,
    pub tail_3sigma: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn distribution_stats(values: &[f64]) -> Result<DistributionStats> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("distribution of an empty tensor".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    let (mean, std) = if min == max {
        (min, 0.0)
    } else {
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    let tail = |k: f64| {
        if std == 0.0 {
            0.0
        } else {
            values.iter().filter(|v| (*v - mean).abs() > k * std).count() as f64 / n
        }
    };
    Ok(DistributionStats {
        count: values.len(),
        mean,
        std,
        min,
        q1: quantile(&sorted, 0.25),
        median: quantile(&sorted, 0.5),
        q3: quantile(&sorted, 0.75),
        max,
        tail_2sigma: tail(2.0),
        tail_3sigma: tail(3.0),
    })
}

fn pearson(pairs: impl Iterator<Item = (f64, f64)> + Clone) -> Option<f64> {
    let (mut n, mut sx, mut sy) = (0usize, 0.0, 0.0);
    for (x, y) in pairs.clone() {
        n += 1;
        sx += x;
        sy += y;
    }
    if n == 0 {
        return None;
    }
    let (mx, my) = (sx / n as f64, sy / n as f64);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in pairs {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation between an `[h, w]` map and itself shifted by `i`
/// columns and `j` rows, over the overlapping region only.
pub fn intra_corr(values: &[f64], dims: [usize; 2], i: isize, j: isize) -> Result<f64> {
    let [h, w] = dims;
    if values.len() != h * w {
        return Err(Error::InvalidArgument(format!(
            "{} values for a {h}x{w} map",
            values.len()
        )));
    }
    let ys = 0.max(-j)..(h as isize).min(h as isize - j);
    let xs = 0.max(-i)..(w as isize).min(w as isize - i);
    let pairs = ys.flat_map(move |y| {
        xs.clone().map(move |x| {
            (
                values[y as usize * w + x as usize],
                values[(y + j) as usize * w + (x + i) as usize],
            )
        })
    });
    pearson(pairs).ok_or_else(|| {
        Error::UndefinedCorrelation(format!("shift ({i}, {j}) leaves an empty or constant overlap"))
    })
}

/// Mean and spread of the intra-map correlation at one shift, over every
/// map where it is defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShiftStat {
    pub shift_i: isize,
    pub shift_j: isize,
    pub mean_r: f64,
    pub std_r: f64,
    pub maps: usize,
}

/// Correlation for every shift in `-max_shift..=max_shift` squared,
/// summarized over `maps` (each `[h, w]`).
pub fn intra_corr_map(maps: &[&[f64]], dims: [usize; 2], max_shift: usize) -> Vec<ShiftStat> {
    let m = max_shift as isize;
    let mut out = Vec::new();
    for j in -m..=m {
        for i in -m..=m {
            let rs: Vec<f64> = maps.iter().filter_map(|v| intra_corr(v, dims, i, j).ok()).collect();
            let (mean_r, std_r) = if rs.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                let mean = rs.iter().sum::<f64>() / rs.len() as f64;
                let var = rs.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / rs.len() as f64;
                (mean, var.sqrt())
            };
            out.push(ShiftStat {
                shift_i: i,
                shift_j: j,
                mean_r,
                std_r,
                maps: rs.len(),
            });
        }
    }
    out
}

/// Channel-by-channel correlation matrix; `None` where a channel is
/// constant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrMatrix {
    pub channels: usize,
    pub r: Vec<Option<f64>>,
}

impl CorrMatrix {
    pub fn get(&self, a: usize, b: usize) -> Option<f64> {
        self.r[a * self.channels + b]
    }

    /// Defined entries above the diagonal.
    pub fn off_diagonal(&self) -> Vec<f64> {
        (0..self.channels)
            .flat_map(|a| (a + 1..self.channels).filter_map(move |b| self.get(a, b)))
            .collect()
    }
}

/// Correlation between every pair of channels of a `[c, h, w]` tensor.
pub fn inter_corr(values: &[f64], dims: [usize; 3]) -> Result<CorrMatrix> {
    let [c, h, w] = dims;
    if c < 2 {
        return Err(Error::InvalidArgument("inter-channel correlation needs two channels".into()));
    }
    if values.len() != c * h * w {
        return Err(Error::InvalidArgument(format!(
            "{} values for a {c}x{h}x{w} tensor",
            values.len()
        )));
    }
    let plane = |k: usize| &values[k * h * w..(k + 1) * h * w];
    let mut r = vec![None; c * c];
    for a in 0..c {
        for b in a..c {
            let v = pearson(plane(a).iter().copied().zip(plane(b).iter().copied()));
            let v = if a == b { v.map(|_| 1.0) } else { v };
            r[a * c + b] = v;
            r[b * c + a] = v;
        }
    }
    Ok(CorrMatrix { channels: c, r })
}

/// Float activations entering model layer `layer` for the first `images`
/// samples, with their `[c, h, w]` dims.
pub fn feature_maps(model: &Model, data: &Dataset, layer: usize, images: usize) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let shapes = model.shapes()?;
    let dims = shapes
        .get(layer)
        .ok_or_else(|| Error::InvalidArgument(format!("model has no layer {layer}")))?
        .clone();
    let net = FloatNet::new(model)?;
    let maps = (0..images.min(data.len()))
        .map(|i| net.trace(data.sample(i)).map(|mut t| t.swap_remove(layer)))
        .collect::<Result<_>>()?;
    Ok((dims, maps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn constant_distribution() {
        let s = distribution_stats(&[0.1; 7]).unwrap();
        assert_eq!((s.std, s.tail_2sigma, s.tail_3sigma), (0.0, 0.0, 0.0));
        assert_eq!(s.mean, 0.1);
        assert!(distribution_stats(&[]).is_err());
    }

    #[test]
    fn quartiles_interpolate() {
        let s = distribution_stats(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.min, s.q1, s.median, s.q3, s.max), (1.0, 1.75, 2.5, 3.25, 4.0));
        assert_eq!(s.mean, 2.5);
        assert!((s.std - 1.25f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn gaussian_tail_mass() {
        let s = distribution_stats(&normals(1_000_000, 1)).unwrap();
        assert!((s.tail_2sigma - 0.0455).abs() < 0.002, "{}", s.tail_2sigma);
        assert!((s.tail_3sigma - 0.0027).abs() < 0.0005, "{}", s.tail_3sigma);
        assert!(s.mean.abs() < 0.005);
    }

    #[test]
    fn checkerboard_anticorrelates() {
        let v: Vec<f64> = (0..64).map(|k| if (k / 8 + k % 8) % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert_eq!(intra_corr(&v, [8, 8], 1, 0).unwrap(), -1.0);
        assert_eq!(intra_corr(&v, [8, 8], 0, 1).unwrap(), -1.0);
        assert_eq!(intra_corr(&v, [8, 8], 1, 1).unwrap(), 1.0);
        assert_eq!(intra_corr(&v, [8, 8], 0, 0).unwrap(), 1.0);
    }

    #[test]
    fn undefined_overlaps() {
        assert!(matches!(
            intra_corr(&[2.0; 16], [4, 4], 0, 0),
            Err(Error::UndefinedCorrelation(_))
        ));
        let v: Vec<f64> = (0..16).map(|k| k as f64).collect();
        assert!(intra_corr(&v, [4, 4], 4, 0).is_err());
        // only one column overlaps and it is non-constant
        assert!(intra_corr(&v, [4, 4], 3, 0).is_ok());
    }

    #[test]
    fn independent_map_is_uncorrelated() {
        let v = normals(64 * 64, 2);
        let r = intra_corr(&v, [64, 64], 1, 0).unwrap();
        assert!(r.abs() < 3.0 / ((64 * 63) as f64).sqrt(), "{r}");
    }

    #[test]
    fn smooth_map_correlates_at_small_shifts() {
        let v: Vec<f64> = (0..32 * 32)
            .map(|k| ((k % 32) as f64 * 0.2).sin() + ((k / 32) as f64 * 0.15).cos())
            .collect();
        let map = intra_corr_map(&[&v], [32, 32], 2);
        assert_eq!(map.len(), 25);
        let at = |i, j| map.iter().find(|s| s.shift_i == i && s.shift_j == j).unwrap().mean_r;
        assert_eq!(at(0, 0), 1.0);
        assert!(at(1, 0) > 0.9 && at(2, 0) < at(1, 0));
    }

    #[test]
    fn inter_corr_examples() {
        let a = normals(100, 3);
        let mut v = a.clone();
        v.extend_from_slice(&a);
        v.extend(a.iter().map(|x| -x));
        v.extend(std::iter::repeat_n(0.5, 100));
        let m = inter_corr(&v, [4, 10, 10]).unwrap();
        assert!((m.get(0, 1).unwrap() - 1.0).abs() < 1e-12);
        assert!((m.get(0, 2).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(m.get(3, 0), None);
        assert_eq!(m.get(3, 3), None);
        assert_eq!(m.get(2, 2), Some(1.0));
        assert_eq!(m.get(1, 2), m.get(2, 1));
        assert!(inter_corr(&a, [1, 10, 10]).is_err());
    }

    #[test]
    fn independent_channels_are_near_zero() {
        let v = normals(16 * 400, 4);
        let m = inter_corr(&v, [16, 20, 20]).unwrap();
        let off = m.off_diagonal();
        assert_eq!(off.len(), 120);
        let bound = 3.0 / 20.0;
        assert!(off.iter().all(|r| r.abs() < bound * 1.5));
        let mean = off.iter().sum::<f64>() / off.len() as f64;
        assert!(mean.abs() < 0.03);
    }

    proptest! {
        #[test]
        fn correlation_is_bounded(v in prop::collection::vec(-10.0f64..10.0, 25), i in -3isize..4, j in -3isize..4) {
            if let Ok(r) = intra_corr(&v, [5, 5], i, j) {
                prop_assert!((-1.0..=1.0).contains(&r));
            }
            if let Ok(r) = intra_corr(&v, [5, 5], 0, 0) {
                prop_assert_eq!(r, 1.0);
            }
        }
    }
}
