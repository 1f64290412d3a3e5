use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gaussian statistics of weights `W`, their quantization error `dW` and
/// activations `A` in a length-`n` dot product.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceParams {
    pub mu_w: f64,
    pub sigma_w: f64,
    pub mu_dw: f64,
    pub sigma_dw: f64,
    pub mu_a: f64,
    pub sigma_a: f64,
    pub n: usize,
}

impl VarianceParams {
    pub fn validate(&self) -> Result<()> {
        let sig = [self.sigma_w, self.sigma_dw, self.sigma_a];
        let all = [self.mu_w, self.mu_dw, self.mu_a, self.sigma_w, self.sigma_dw, self.sigma_a];
        if sig.iter().any(|s| *s < 0.0) || all.iter().any(|v| !v.is_finite()) || self.n == 0 {
            return Err(Error::InvalidArgument(format!("invalid variance parameters {self:?}")));
        }
        Ok(())
    }
}

/// `var(sum (W+dW) A) - var(sum W A)` for independent Gaussian terms.
pub fn predicted_excess_variance(p: &VarianceParams) -> f64 {
    let (sd2, sa2) = (p.sigma_dw * p.sigma_dw, p.sigma_a * p.sigma_a);
    p.n as f64 * (sd2 * sa2 + sd2 * p.mu_a * p.mu_a + sa2 * p.mu_dw * p.mu_dw + 2.0 * sa2 * p.mu_w * p.mu_dw)
}

const CHUNK: usize = 1 << 14;
pub const MIN_SAMPLES: usize = 10_000;

#[derive(Clone, Copy, Default)]
struct Welford {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn merge(self, o: Welford) -> Welford {
        if o.n == 0.0 {
            return self;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        Welford {
            n,
            mean: self.mean + d * o.n / n,
            m2: self.m2 + o.m2 + d * d * self.n * o.n / n,
        }
    }

    fn var(&self) -> f64 {
        self.m2 / (self.n - 1.0)
    }
}

/// Monte Carlo estimate of the excess variance. Both dot products are
/// computed from the same draws. Samples are split into fixed-size chunks,
/// each with its own ChaCha8 stream, so the result does not depend on the
/// number of threads.
pub fn empirical_excess_variance(p: &VarianceParams, samples: usize, seed: u64) -> Result<f64> {
    p.validate()?;
    if samples < MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "{samples} samples; at least {MIN_SAMPLES} needed"
        )));
    }
    let dist = |m: f64, s: f64| Normal::new(m, s).map_err(|e| Error::InvalidArgument(e.to_string()));
    let (w, dw, a) = (dist(p.mu_w, p.sigma_w)?, dist(p.mu_dw, p.sigma_dw)?, dist(p.mu_a, p.sigma_a)?);
    let chunks = samples.div_ceil(CHUNK);
    let parts: Vec<(Welford, Welford)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let (mut o, mut oq) = (Welford::default(), Welford::default());
            for _ in c * CHUNK..((c + 1) * CHUNK).min(samples) {
                let (mut s, mut sq) = (0.0, 0.0);
                for _ in 0..p.n {
                    let (wi, di, ai) = (w.sample(&mut rng), dw.sample(&mut rng), a.sample(&mut rng));
                    s += wi * ai;
                    sq += (wi + di) * ai;
                }
                o.push(s);
                oq.push(sq);
            }
            (o, oq)
        })
        .collect();
    let (o, oq) = parts
        .into_iter()
        .fold((Welford::default(), Welford::default()), |(a, b), (c, d)| (a.merge(c), b.merge(d)));
    Ok(oq.var() - o.var())
}

/// Random parameter sets with `sigma_w` in `[sigma_dw, 3 sigma_dw]`,
/// `|mu_w| <= sigma_w`, and a mean error no larger than half its spread
/// pointing the same way as `mu_w`, so every term of the excess is
/// non-negative and relative error stays meaningful.
pub fn random_variance_params(count: usize, seed: u64) -> Vec<VarianceParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let sigma_dw: f64 = rng.random_range(0.02..0.2);
            let sigma_w = sigma_dw * rng.random_range(1.0..3.0);
            let mu_w = sigma_w * rng.random_range(-1.0..1.0);
            let mu_dw = mu_w.signum() * sigma_dw * rng.random_range(0.0..0.5);
            VarianceParams {
                mu_w,
                sigma_w,
                mu_dw,
                sigma_dw,
                mu_a: rng.random_range(0.0..1.0),
                sigma_a: rng.random_range(0.5..2.0),
                n: rng.random_range(16..=128),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceRow {
    pub set: usize,
    pub mu_w: f64,
    pub sigma_w: f64,
    pub mu_dw: f64,
    pub sigma_dw: f64,
    pub mu_a: f64,
    pub sigma_a: f64,
    pub n: usize,
    pub predicted: f64,
    pub empirical: f64,
    pub rel_err: f64,
}

/// Predicted vs. empirical excess for each set; set `k` uses seed `seed + k`.
pub fn variance_table(sets: &[VarianceParams], samples: usize, seed: u64) -> Result<Vec<VarianceRow>> {
    sets.iter()
        .enumerate()
        .map(|(k, p)| {
            let predicted = predicted_excess_variance(p);
            let empirical = empirical_excess_variance(p, samples, seed.wrapping_add(k as u64))?;
            Ok(VarianceRow {
                set: k,
                mu_w: p.mu_w,
                sigma_w: p.sigma_w,
                mu_dw: p.mu_dw,
                sigma_dw: p.sigma_dw,
                mu_a: p.mu_a,
                sigma_a: p.sigma_a,
                n: p.n,
                predicted,
                empirical,
                rel_err: (empirical - predicted).abs() / predicted.abs(),
            })
        })
        .collect()
}
