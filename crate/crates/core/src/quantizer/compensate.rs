//! Greedy mean-error compensation over filter channels.
//!
//! Each group of weights (one kernel plane of one filter by default) is
//! first snapped to nearest levels. Weights whose error has the same sign
//! as the group's mean error are candidates to move to the level on the
//! other side of them. Candidates are tried cheapest first, where cost is
//! the distance to that opposite level, and a move is kept only while it
//! shrinks the absolute mean error; the first rejected move ends the group.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{nearest_quantize, opposite_neighbor};
use crate::elpbsd::{QuantTable, QuantizedTensor};
use crate::error::{Error, Result};
use crate::tensorio::Tensor;

/// Inputs per pseudo-channel when compensating fully-connected weights.
pub const FC_GROUP: usize = 9;

/// Costs closer than `min level gap / COST_RESOLUTION` count as ties and
/// fall back to index order, so f32 storage noise cannot reorder them.
const COST_RESOLUTION: f64 = 4096.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompensationMode {
    /// One group per (filter, input channel) kernel plane.
    #[default]
    Channel,
    /// One group per whole filter.
    Filter,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelReport {
    pub filter: usize,
    pub channel: usize,
    pub mean_before: f64,
    pub mean_after: f64,
    pub flips: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CompensationReport {
    pub channels: Vec<ChannelReport>,
}

impl CompensationReport {
    pub fn total_flips(&self) -> usize {
        self.channels.iter().map(|c| c.flips).sum()
    }

    /// CSV rows `layer,filter,channel,mean_before,mean_after,flips`.
    pub fn write_csv<W: std::io::Write>(&self, layer: &str, w: &mut csv::Writer<W>) -> Result<()> {
        for c in &self.channels {
            w.write_record([
                layer.to_string(),
                c.filter.to_string(),
                c.channel.to_string(),
                c.mean_before.to_string(),
                c.mean_after.to_string(),
                c.flips.to_string(),
            ])?;
        }
        Ok(())
    }

    pub const CSV_HEADER: [&'static str; 6] =
        ["layer", "filter", "channel", "mean_before", "mean_after", "flips"];
}

/// Contiguous `(filter, channel, range)` groups for conv `[O][I][KH][KW]`
/// or fc `[O][I]` weights.
pub fn group_ranges(dims: &[usize], mode: CompensationMode) -> Result<Vec<(usize, usize, Range<usize>)>> {
    let (filters, per_filter, group) = match (dims, mode) {
        (&[o, i, kh, kw], CompensationMode::Channel) => (o, i * kh * kw, kh * kw),
        (&[o, i, kh, kw], CompensationMode::Filter) => (o, i * kh * kw, i * kh * kw),
        (&[o, i], CompensationMode::Channel) => (o, i, FC_GROUP.min(i)),
        (&[o, i], CompensationMode::Filter) => (o, i, i),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "compensation needs rank-4 conv or rank-2 fc weights, got {dims:?}"
            )))
        }
    };
    let mut out = Vec::new();
    for f in 0..filters {
        let base = f * per_filter;
        for (c, start) in (0..per_filter).step_by(group).enumerate() {
            out.push((f, c, base + start..base + (start + group).min(per_filter)));
        }
    }
    Ok(out)
}

fn compensate_group(
    weights: &[f64],
    levels: &mut [usize],
    table: &QuantTable,
    cost_unit: f64,
) -> (f64, f64, usize) {
    let n = weights.len() as f64;
    let error = |w: f64, l: usize| w - table.level(l);
    let mut sum: f64 = weights.iter().zip(levels.iter()).map(|(&w, &l)| error(w, l)).sum();
    let before = sum / n;

    let mut candidates: Vec<(i64, usize, usize)> = weights
        .iter()
        .zip(levels.iter())
        .enumerate()
        .filter(|&(_, (&w, &l))| {
            let e = error(w, l);
            e != 0.0 && sum != 0.0 && e.is_sign_positive() == sum.is_sign_positive()
        })
        .filter_map(|(k, (&w, _))| {
            let opp = opposite_neighbor(w, table).ok()?;
            let cost = (w - table.level(opp)).abs();
            Some(((cost / cost_unit).round() as i64, k, opp))
        })
        .collect();
    candidates.sort_unstable();

    let mut flips = 0;
    for (_, k, opp) in candidates {
        let next = sum - error(weights[k], levels[k]) + error(weights[k], opp);
        if next.abs() < sum.abs() {
            levels[k] = opp;
            sum = next;
            flips += 1;
        } else {
            break;
        }
    }
    (before, sum / n, flips)
}

/// Compensates against any level table; returns level indices per weight.
pub fn compensate_levels(
    weights: &[f64],
    dims: &[usize],
    table: &QuantTable,
    mode: CompensationMode,
) -> Result<(Vec<usize>, CompensationReport)> {
    let groups = group_ranges(dims, mode)?;
    if groups.last().map_or(0, |g| g.2.end) != weights.len() {
        return Err(Error::InvalidArgument(format!(
            "{} weights do not match dims {dims:?}",
            weights.len()
        )));
    }
    let mut levels = nearest_quantize(weights, table).level_indices;
    let cost_unit = table.min_gap().unwrap_or(1.0) / COST_RESOLUTION;

    // groups are contiguous and ordered, so split the index buffer to match
    let mut chunks = Vec::with_capacity(groups.len());
    let mut rest = levels.as_mut_slice();
    for (_, _, r) in &groups {
        let (head, tail) = rest.split_at_mut(r.len());
        chunks.push(head);
        rest = tail;
    }
    let channels = groups
        .par_iter()
        .zip(chunks.into_par_iter())
        .map(|((f, c, r), chunk)| {
            let (before, after, flips) = compensate_group(&weights[r.clone()], chunk, table, cost_unit);
            ChannelReport {
                filter: *f,
                channel: *c,
                mean_before: before,
                mean_after: after,
                flips,
            }
        })
        .collect();
    Ok((levels, CompensationReport { channels }))
}

/// Quantizes a conv or fc weight tensor with compensation against a
/// format-backed table.
pub fn compensate(
    weights: &Tensor,
    table: &QuantTable,
    mode: CompensationMode,
) -> Result<(QuantizedTensor, CompensationReport)> {
    let format = table
        .format()
        .ok_or_else(|| Error::InvalidArgument("compensate needs an ELP_BSD table".into()))?;
    let values = weights.to_f64_vec();
    let (levels, report) = compensate_levels(&values, weights.dims(), table, mode)?;
    let codes = levels.into_iter().map(|l| table.code(l)).collect();
    let q = QuantizedTensor::new(weights.dims().to_vec(), format.clone(), codes)?;
    Ok((q, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elpbsd::{enumerate_levels, FormatSpec};
    use crate::quantizer::nearest_quantize;

    fn integers(lo: i32, hi: i32) -> QuantTable {
        QuantTable::from_levels((lo..=hi).map(f64::from).collect()).unwrap()
    }

    fn values(levels: &[usize], t: &QuantTable) -> Vec<f64> {
        levels.iter().map(|&l| t.level(l)).collect()
    }

    #[test]
    fn hand_traced_channel() {
        // errors +0.3,+0.3,+0.3,+0.2 (mean +0.275); flipping w[0] to 2 gives
        // +0.025, the next flip would give -0.225 and is rejected
        let t = integers(-4, 4);
        let w = [1.3, 0.3, 2.3, 1.2];
        let (levels, report) = compensate_levels(&w, &[1, 1, 2, 2], &t, CompensationMode::Channel).unwrap();
        assert_eq!(values(&levels, &t), vec![2.0, 0.0, 2.0, 1.0]);
        let c = &report.channels[0];
        assert!((c.mean_before - 0.275).abs() < 1e-12);
        assert!((c.mean_after - 0.025).abs() < 1e-12);
        assert_eq!(c.flips, 1);
    }

    #[test]
    fn hand_traced_channel_from_f32_storage() {
        let t = integers(-4, 4);
        let w = Tensor::from_f32(vec![1, 1, 2, 2], vec![1.3, 0.3, 2.3, 1.2]).unwrap();
        let (levels, _) =
            compensate_levels(&w.to_f64_vec(), w.dims(), &t, CompensationMode::Channel).unwrap();
        assert_eq!(values(&levels, &t), vec![2.0, 0.0, 2.0, 1.0]);
    }

    #[test]
    fn mean_error_from_0_225_to_0_025() {
        // a 3 that should be a 2.7 is moved down to 2
        let t = integers(-4, 4);
        let w = [0.8, 2.7, 1.8, 0.8];
        let (levels, report) = compensate_levels(&w, &[1, 1, 2, 2], &t, CompensationMode::Channel).unwrap();
        assert_eq!(values(&levels, &t), vec![1.0, 2.0, 2.0, 1.0]);
        let c = &report.channels[0];
        assert!((c.mean_before.abs() - 0.225).abs() < 1e-12);
        assert!((c.mean_after.abs() - 0.025).abs() < 1e-12);
    }

    #[test]
    fn zero_mean_channel_untouched() {
        let t = integers(-4, 4);
        let w = [1.25, 0.75, 2.0, 3.0];
        let (levels, report) = compensate_levels(&w, &[1, 1, 2, 2], &t, CompensationMode::Channel).unwrap();
        assert_eq!(levels, nearest_quantize(&w, &t).level_indices);
        assert_eq!(report.total_flips(), 0);
    }

    #[test]
    fn boundary_candidates_are_skipped() {
        let t = integers(0, 3);
        // all errors positive but every weight sits above the top level
        let w = [3.4, 3.2, 3.3, 3.1];
        let (levels, report) = compensate_levels(&w, &[1, 1, 2, 2], &t, CompensationMode::Channel).unwrap();
        assert_eq!(values(&levels, &t), vec![3.0; 4]);
        assert_eq!(report.total_flips(), 0);
    }

    #[test]
    fn grouping_rules() {
        let g = group_ranges(&[2, 3, 3, 3], CompensationMode::Channel).unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!(g[4], (1, 1, 36..45));
        let g = group_ranges(&[2, 3, 3, 3], CompensationMode::Filter).unwrap();
        assert_eq!(g, vec![(0, 0, 0..27), (1, 0, 27..54)]);
        let g = group_ranges(&[2, 20], CompensationMode::Channel).unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!(g[2], (0, 2, 18..20));
        assert_eq!(g[3], (1, 0, 20..29));
        assert!(group_ranges(&[5], CompensationMode::Channel).is_err());
    }

    #[test]
    fn filter_mode_groups_whole_filter() {
        let t = integers(-4, 4);
        // per-channel means are +0.3 and -0.3, filter mean is 0
        let w = [1.3, 1.3, 0.7, 0.7];
        let (_, rc) = compensate_levels(&w, &[1, 2, 1, 2], &t, CompensationMode::Channel).unwrap();
        assert_eq!(rc.total_flips(), 2);
        let (_, rf) = compensate_levels(&w, &[1, 2, 1, 2], &t, CompensationMode::Filter).unwrap();
        assert_eq!(rf.channels.len(), 1);
        assert_eq!(rf.total_flips(), 0);
    }

    #[test]
    fn compensate_emits_codes() {
        let f = FormatSpec::single_signed(0..8, 1.0).unwrap();
        let t = enumerate_levels(&f);
        let w = Tensor::from_f32(vec![1, 1, 2, 2], vec![5.0, 5.0, 5.0, 3.5]).unwrap();
        let (q, report) = compensate(&w, &t, CompensationMode::Channel).unwrap();
        // nearest: 4,4,4,4 errors +1,+1,+1,-0.5 -> mean +0.625; first flip 4->8 gives -0.375
        assert_eq!(q.decode_all(), vec![8.0, 4.0, 4.0, 4.0]);
        assert_eq!(report.channels[0].flips, 1);
        assert!(compensate(&w, &integers(0, 3), CompensationMode::Channel).is_err());
    }
}
