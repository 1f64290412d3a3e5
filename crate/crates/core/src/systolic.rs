//! Weight-stationary systolic array simulator.
//!
//! PE `(r, c)` holds weight `W[r][c]`, where rows run over the reduction
//! (input) dimension and columns over outputs. Activation vector `k`
//! enters row `r` from the left at cycle `k + r` and moves one PE right per
//! cycle; partial sums move one PE down per cycle, so output `(k, c)`
//! leaves the bottom of column `c` at cycle `k + rows - 1 + c`. A tile
//! using `R x C` PEs with `K` activation vectors therefore takes
//! `R + C + K - 2` cycles. There are no memory stalls.
//!
//! Layers larger than the array are split into tiles of at most
//! `rows x cols`; partial sums of tiles that share outputs are added in the
//! output buffer.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elpbsd::{EncodedWeight, FormatSpec};
use crate::engine::{ActTensor, FixedPointConfig, PreparedModel, PreparedWeights};
use crate::error::{Error, Result};
use crate::tensorio::{Layer, LayerKind, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub rows: usize,
    pub cols: usize,
    /// Single-digit shift units per PE; must equal the format's digit count.
    pub digits_per_pe: usize,
}

impl ArrayConfig {
    pub fn new(rows: usize, cols: usize, digits_per_pe: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument("array dimensions must be positive".into()));
        }
        if !(1..=3).contains(&digits_per_pe) {
            return Err(Error::InvalidArgument(format!(
                "{digits_per_pe} digits per PE outside 1..=3"
            )));
        }
        Ok(ArrayConfig {
            rows,
            cols,
            digits_per_pe,
        })
    }

    /// 32x32 array sized for `spec`.
    pub fn default_for(spec: &FormatSpec) -> Result<Self> {
        Self::new(32, 32, spec.digits().len())
    }

    fn check_format(&self, spec: &FormatSpec) -> Result<()> {
        if spec.digits().len() != self.digits_per_pe {
            return Err(Error::InvalidArgument(format!(
                "array has {} digit units per PE but format has {} digits",
                self.digits_per_pe,
                spec.digits().len()
            )));
        }
        Ok(())
    }

    /// Cycles for one tile occupying `rows x cols` PEs with `k` vectors.
    pub fn tile_cycles(rows: usize, cols: usize, k: usize) -> u64 {
        (rows + cols + k - 2) as u64
    }
}

/// Stationary weights for one tile, row-major `[row][col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTile {
    pub rows: usize,
    pub cols: usize,
    pub codes: Vec<EncodedWeight>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    /// Raw accumulators in the engine's output layout.
    pub outputs: Vec<i64>,
    pub dims: Vec<usize>,
    pub cycles: u64,
    pub mac_count: u64,
    pub tiles: usize,
    pub pdp_estimate: Option<f64>,
}

struct TermTable(Vec<Vec<(bool, u8)>>);

impl TermTable {
    fn new(spec: &FormatSpec) -> Self {
        TermTable(
            (0..spec.code_space())
                .map(|c| spec.terms(EncodedWeight(c as u16)).unwrap_or_default())
                .collect(),
        )
    }
}

fn pe_mac(psum: i64, a: i32, terms: &[(bool, u8)], range: (i64, i64), bits: u32) -> Result<i64> {
    let v = terms.iter().fold(psum, |acc, &(neg, s)| {
        let p = (a as i64) << s;
        if neg {
            acc - p
        } else {
            acc + p
        }
    });
    if v < range.0 || v > range.1 {
        return Err(Error::AccumulatorOverflow {
            value: v as i128,
            bits,
        });
    }
    Ok(v)
}

fn run_tile(
    tile: &WeightTile,
    activations: &[Vec<i32>],
    terms: &TermTable,
    fp: &FixedPointConfig,
) -> Result<(Vec<i64>, u64)> {
    let (rows, cols, k_len) = (tile.rows, tile.cols, activations.len());
    let range = fp.acc_range();
    let idx = |r: usize, c: usize| r * cols + c;
    // (vector index, value) registers
    let mut act: Vec<Option<(usize, i32)>> = vec![None; rows * cols];
    let mut psum: Vec<Option<(usize, i64)>> = vec![None; rows * cols];
    let mut outputs = vec![0i64; k_len * cols];
    let mut remaining = k_len * cols;
    let mut cycle = 0u64;
    while remaining > 0 {
        let mut next_act = vec![None; rows * cols];
        let mut next_psum = vec![None; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                let a_in = if c == 0 {
                    let k = cycle as isize - r as isize;
                    (k >= 0 && (k as usize) < k_len).then(|| (k as usize, activations[k as usize][r]))
                } else {
                    act[idx(r, c - 1)]
                };
                let Some((k, a)) = a_in else { continue };
                let above = if r == 0 {
                    0
                } else {
                    let (pk, p) = psum[idx(r - 1, c)].expect("partial sum arrives with its activation");
                    debug_assert_eq!(pk, k);
                    p
                };
                let w = tile.codes[idx(r, c)].bits() as usize;
                let p = pe_mac(above, a, &terms.0[w], range, fp.acc_bits)?;
                next_act[idx(r, c)] = Some((k, a));
                next_psum[idx(r, c)] = Some((k, p));
                if r == rows - 1 {
                    outputs[k * cols + c] = p;
                    remaining -= 1;
                }
            }
        }
        act = next_act;
        psum = next_psum;
        cycle += 1;
    }
    Ok((outputs, cycle))
}

/// Streams `activations` (each of length `tile.rows`) through one tile.
/// Outputs are `[k][col]` raw dot products without bias.
pub fn simulate_matmul(
    tile: &WeightTile,
    activations: &[Vec<i32>],
    spec: &FormatSpec,
    array: &ArrayConfig,
    fp: &FixedPointConfig,
) -> Result<SimResult> {
    array.check_format(spec)?;
    if tile.rows > array.rows || tile.cols > array.cols {
        return Err(Error::TileOverflow {
            rows: tile.rows,
            cols: tile.cols,
            array_rows: array.rows,
            array_cols: array.cols,
        });
    }
    if tile.rows == 0 || tile.cols == 0 || tile.codes.len() != tile.rows * tile.cols {
        return Err(Error::InvalidArgument("malformed weight tile".into()));
    }
    if activations.is_empty() || activations.iter().any(|a| a.len() != tile.rows) {
        return Err(Error::InvalidArgument(format!(
            "need at least one activation vector of length {}",
            tile.rows
        )));
    }
    let (outputs, cycles) = run_tile(tile, activations, &TermTable::new(spec), fp)?;
    Ok(SimResult {
        dims: vec![activations.len(), tile.cols],
        outputs,
        cycles,
        mac_count: (activations.len() * tile.rows * tile.cols) as u64,
        tiles: 1,
        pdp_estimate: None,
    })
}

/// Lowered layer: weight matrix `[reduction][outputs]` and one activation
/// vector per output position.
struct Lowered {
    matrix: Vec<EncodedWeight>,
    reduction: usize,
    outputs: usize,
    vectors: Vec<Vec<i32>>,
    out_dims: Vec<usize>,
}

/// im2col in (kh, kw, in_ch) order; padded positions feed zeros.
fn lower_conv(layer: &Layer, input: &ActTensor, codes: &[EncodedWeight], wd: &[usize]) -> Result<Lowered> {
    let out_dims = layer.output_dims(&input.dims)?;
    let (o, c, kh, kw) = (wd[0], wd[1], wd[2], wd[3]);
    let (h, w) = (input.dims[1], input.dims[2]);
    let (oh, ow) = (out_dims[1], out_dims[2]);
    let (s, p) = (layer.def.stride as isize, layer.def.pad as isize);
    let reduction = kh * kw * c;
    let mut matrix = vec![EncodedWeight(0); reduction * o];
    for f in 0..o {
        for ky in 0..kh {
            for kx in 0..kw {
                for ch in 0..c {
                    let row = (ky * kw + kx) * c + ch;
                    matrix[row * o + f] = codes[((f * c + ch) * kh + ky) * kw + kx];
                }
            }
        }
    }
    let mut vectors = Vec::with_capacity(oh * ow);
    for oy in 0..oh {
        for ox in 0..ow {
            let mut v = Vec::with_capacity(reduction);
            for ky in 0..kh {
                for kx in 0..kw {
                    let iy = oy as isize * s + ky as isize - p;
                    let ix = ox as isize * s + kx as isize - p;
                    let inside = iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize;
                    for ch in 0..c {
                        v.push(if inside {
                            input.values[(ch * h + iy as usize) * w + ix as usize]
                        } else {
                            0
                        });
                    }
                }
            }
            vectors.push(v);
        }
    }
    Ok(Lowered {
        matrix,
        reduction,
        outputs: o,
        vectors,
        out_dims,
    })
}

fn lower_fc(layer: &Layer, input: &ActTensor, codes: &[EncodedWeight], wd: &[usize]) -> Result<Lowered> {
    let out_dims = layer.output_dims(&input.dims)?;
    let (o, n) = (wd[0], wd[1]);
    let mut matrix = vec![EncodedWeight(0); n * o];
    for f in 0..o {
        for i in 0..n {
            matrix[i * o + f] = codes[f * n + i];
        }
    }
    Ok(Lowered {
        matrix,
        reduction: n,
        outputs: o,
        vectors: vec![input.values.clone()],
        out_dims,
    })
}

/// Maps a conv or fc layer onto the array tile by tile and returns raw
/// accumulators (bias included) in the engine's `[out][y][x]` layout.
pub fn simulate_layer(
    layer: &Layer,
    input: &ActTensor,
    array: &ArrayConfig,
    fp: &FixedPointConfig,
) -> Result<SimResult> {
    let q = layer
        .weights
        .as_ref()
        .and_then(|w| w.as_quantized())
        .ok_or_else(|| Error::NotQuantized(layer.name().to_string()))?;
    let spec = q.format();
    array.check_format(spec)?;
    let lowered = match layer.kind() {
        LayerKind::Conv => lower_conv(layer, input, q.codes(), q.dims())?,
        LayerKind::Fc => lower_fc(layer, input, q.codes(), q.dims())?,
        _ => return Err(Error::InvalidArgument(format!("layer `{}` has no weights", layer.name()))),
    };
    let terms = TermTable::new(spec);
    let (red, outs) = (lowered.reduction, lowered.outputs);
    let tiles: Vec<(usize, usize)> = (0..red.div_ceil(array.rows))
        .flat_map(|rt| (0..outs.div_ceil(array.cols)).map(move |ct| (rt, ct)))
        .collect();

    let results: Vec<(usize, usize, Vec<i64>, u64, u64)> = tiles
        .par_iter()
        .map(|&(rt, ct)| {
            let r0 = rt * array.rows;
            let r1 = (r0 + array.rows).min(red);
            let c0 = ct * array.cols;
            let c1 = (c0 + array.cols).min(outs);
            let tile = WeightTile {
                rows: r1 - r0,
                cols: c1 - c0,
                codes: (r0..r1)
                    .flat_map(|r| (c0..c1).map(move |c| (r, c)))
                    .map(|(r, c)| lowered.matrix[r * outs + c])
                    .collect(),
            };
            let acts: Vec<Vec<i32>> = lowered.vectors.iter().map(|v| v[r0..r1].to_vec()).collect();
            let (out, cycles) = run_tile(&tile, &acts, &terms, fp)?;
            let macs = (acts.len() * tile.rows * tile.cols) as u64;
            Ok((c0, c1, out, cycles, macs))
        })
        .collect::<Result<_>>()?;

    let k_len = lowered.vectors.len();
    let mut acc = vec![0i64; k_len * outs];
    let (mut cycles, mut mac_count) = (0u64, 0u64);
    for (c0, c1, out, cyc, macs) in &results {
        let width = c1 - c0;
        for k in 0..k_len {
            for c in 0..width {
                acc[k * outs + c0 + c] += out[k * width + c];
            }
        }
        cycles += cyc;
        mac_count += macs;
    }

    let prepared = PreparedWeights::new(layer)?;
    let bias = prepared.bias_acc(outs, input.frac_bits, fp)?;
    let (lo, hi) = fp.acc_range();
    let mut outputs = vec![0i64; k_len * outs];
    for k in 0..k_len {
        for f in 0..outs {
            let v = acc[k * outs + f] + bias[f];
            if v < lo || v > hi {
                return Err(Error::AccumulatorOverflow {
                    value: v as i128,
                    bits: fp.acc_bits,
                });
            }
            outputs[f * k_len + k] = v;
        }
    }
    Ok(SimResult {
        outputs,
        dims: lowered.out_dims,
        cycles,
        mac_count,
        tiles: tiles.len(),
        pdp_estimate: None,
    })
}

pub fn simulate_conv_layer(
    layer: &Layer,
    input: &ActTensor,
    array: &ArrayConfig,
    fp: &FixedPointConfig,
) -> Result<SimResult> {
    if layer.kind() != LayerKind::Conv {
        return Err(Error::InvalidArgument(format!("layer `{}` is not conv", layer.name())));
    }
    simulate_layer(layer, input, array, fp)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEntry {
    pub name: String,
    pub power_mw: f64,
    pub delay_ns: f64,
    pub area_um2: f64,
    pub energy_per_mac_pj: f64,
}

impl CostEntry {
    /// Power-delay product; mW x ns = pJ.
    pub fn pdp(&self) -> f64 {
        self.power_mw * self.delay_ns
    }
}

/// Per-PE-design hardware characteristics supplied by the user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    pub designs: Vec<CostEntry>,
}

impl CostTable {
    pub fn new(designs: Vec<CostEntry>) -> Result<Self> {
        let t = CostTable { designs };
        t.validate()?;
        Ok(t)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: CostTable = serde_json::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        for d in &self.designs {
            let vals = [d.power_mw, d.delay_ns, d.area_um2, d.energy_per_mac_pj];
            if vals.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::InvalidArgument(format!(
                    "cost entry `{}` needs strictly positive values",
                    d.name
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&CostEntry> {
        self.designs
            .iter()
            .find(|d| d.name == name)
            .ok_or_else(|| Error::UnknownDesign(name.to_string()))
    }

    pub fn scaled(&self, c: f64) -> CostTable {
        CostTable {
            designs: self
                .designs
                .iter()
                .map(|d| CostEntry {
                    name: d.name.clone(),
                    power_mw: d.power_mw * c,
                    delay_ns: d.delay_ns,
                    area_um2: d.area_um2 * c,
                    energy_per_mac_pj: d.energy_per_mac_pj * c,
                })
                .collect(),
        }
    }

    /// `pdp(a) / pdp(b)`.
    pub fn pdp_ratio(&self, a: &str, b: &str) -> Result<f64> {
        Ok(self.get(a)?.pdp() / self.get(b)?.pdp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PdpEstimate {
    pub pdp_pj: f64,
    pub layer_energy_pj: f64,
}

pub fn estimate_pdp(sim: &SimResult, cost: &CostTable, design: &str) -> Result<PdpEstimate> {
    let entry = cost.get(design)?;
    Ok(PdpEstimate {
        pdp_pj: entry.pdp(),
        layer_energy_pj: entry.energy_per_mac_pj * sim.mac_count as f64,
    })
}

/// Per-layer JSON summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimSummary {
    pub layer: String,
    pub dims: Vec<usize>,
    pub cycles: u64,
    pub mac_count: u64,
    pub tiles: usize,
    pub matches_engine: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pdp_pj: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layer_energy_pj: Option<f64>,
}

/// Runs one sample through the engine and replays every conv/fc layer on
/// the array, comparing raw accumulators. With a cost table, each layer
/// also gets the PDP of `design` and its energy.
pub fn simulate_model(
    model: &Model,
    input: &[f32],
    fp: &FixedPointConfig,
    array: &ArrayConfig,
    cost: Option<(&CostTable, &str)>,
) -> Result<Vec<SimSummary>> {
    let prepared = PreparedModel::new(model, fp)?;
    let (_, traces) = prepared.trace(input)?;
    traces
        .iter()
        .map(|t| {
            let layer = &model.layers[t.layer];
            let mut sim = simulate_layer(layer, &t.input, array, fp)?;
            let est = cost.map(|(c, d)| estimate_pdp(&sim, c, d)).transpose()?;
            sim.pdp_estimate = est.map(|e| e.pdp_pj);
            Ok(SimSummary {
                layer: layer.name().to_string(),
                dims: sim.dims.clone(),
                cycles: sim.cycles,
                mac_count: sim.mac_count,
                tiles: sim.tiles,
                matches_engine: sim.outputs == t.output.values,
                pdp_pj: sim.pdp_estimate,
                layer_energy_pj: est.map(|e| e.layer_energy_pj),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> FixedPointConfig {
        FixedPointConfig::new(8, vec![]).unwrap()
    }

    fn entry(name: &str, power: f64, delay: f64) -> CostEntry {
        CostEntry {
            name: name.into(),
            power_mw: power,
            delay_ns: delay,
            area_um2: 100.0,
            energy_per_mac_pj: 0.5,
        }
    }

    #[test]
    fn one_pe_one_vector() {
        let f = FormatSpec::single_signed(0..8, 1.0).unwrap();
        let a = ArrayConfig::new(1, 1, 1).unwrap();
        let tile = WeightTile {
            rows: 1,
            cols: 1,
            codes: vec![EncodedWeight(0b1010)],
        };
        let r = simulate_matmul(&tile, &[vec![3]], &f, &a, &cfg()).unwrap();
        assert_eq!(r.cycles, 1);
        assert_eq!(r.outputs, vec![-12]);
    }

    #[test]
    fn two_by_two_three_vectors() {
        let f = FormatSpec::single_signed(0..8, 1.0).unwrap();
        let a = ArrayConfig::new(2, 2, 1).unwrap();
        // W = [[1, 2], [4, -1]]
        let tile = WeightTile {
            rows: 2,
            cols: 2,
            codes: vec![EncodedWeight(0), EncodedWeight(1), EncodedWeight(2), EncodedWeight(0b1000)],
        };
        let acts = vec![vec![1, 2], vec![3, -1], vec![0, 5]];
        let r = simulate_matmul(&tile, &acts, &f, &a, &cfg()).unwrap();
        assert_eq!(r.cycles, 5);
        assert_eq!(r.outputs, vec![9, 0, -1, 7, 20, -5]);
        assert_eq!(r.mac_count, 12);
    }

    #[test]
    fn tile_and_format_checks() {
        let f = FormatSpec::single_signed(0..8, 1.0).unwrap();
        let a = ArrayConfig::new(2, 2, 1).unwrap();
        let big = WeightTile {
            rows: 3,
            cols: 1,
            codes: vec![EncodedWeight(0); 3],
        };
        assert!(matches!(
            simulate_matmul(&big, &[vec![0; 3]], &f, &a, &cfg()),
            Err(Error::TileOverflow { .. })
        ));
        let a2 = ArrayConfig::new(2, 2, 2).unwrap();
        let small = WeightTile {
            rows: 1,
            cols: 1,
            codes: vec![EncodedWeight(0)],
        };
        assert!(simulate_matmul(&small, &[vec![0]], &f, &a2, &cfg()).is_err());
        assert!(ArrayConfig::new(32, 32, 4).is_err());
        assert!(ArrayConfig::new(0, 32, 1).is_err());
    }

    #[test]
    fn pdp_examples() {
        let t = CostTable::new(vec![entry("a", 2.0, 1.5), entry("b", 4.0, 1.5)]).unwrap();
        let sim = SimResult {
            outputs: vec![],
            dims: vec![],
            cycles: 0,
            mac_count: 1_000_000,
            tiles: 0,
            pdp_estimate: None,
        };
        let e = estimate_pdp(&sim, &t, "a").unwrap();
        assert_eq!(e.pdp_pj, 3.0);
        assert_eq!(e.layer_energy_pj, 500_000.0);
        assert_eq!(t.pdp_ratio("a", "b").unwrap(), 0.5);
        assert!(matches!(estimate_pdp(&sim, &t, "zzz"), Err(Error::UnknownDesign(_))));
        assert!(CostTable::new(vec![entry("bad", 0.0, 1.0)]).is_err());
    }

    use crate::elpbsd::{enumerate_levels, DigitSpec, QuantizedTensor};
    use crate::engine::{conv_forward, fc_forward};
    use crate::tensorio::{LayerDef, Tensor, Weights};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_digit() -> FormatSpec {
        FormatSpec::new(
            vec![
                DigitSpec::new(true, vec![0, 2, 4, 6]).unwrap(),
                DigitSpec::new(true, vec![1, 3, 5, 7]).unwrap(),
            ],
            0.01,
        )
        .unwrap()
    }

    fn random_layer(rng: &mut ChaCha8Rng, kind: LayerKind, dims: Vec<usize>, stride: usize, pad: usize) -> Layer {
        let f = two_digit();
        let table = enumerate_levels(&f);
        let n: usize = dims.iter().product();
        let codes = (0..n).map(|_| table.code(rng.random_range(0..table.len()))).collect();
        let out = dims[0];
        Layer {
            def: LayerDef {
                name: "t".into(),
                kind,
                weights_ref: None,
                bias_ref: None,
                stride,
                pad,
                pool_size: None,
            },
            weights: Some(Weights::Quantized(QuantizedTensor::new(dims, f, codes).unwrap())),
            bias: Some(Tensor::from_f32(vec![out], (0..out).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap()),
        }
    }

    fn random_act(rng: &mut ChaCha8Rng, dims: Vec<usize>) -> ActTensor {
        let n = dims.iter().product();
        ActTensor {
            dims,
            values: (0..n).map(|_| rng.random_range(-128..128)).collect(),
            frac_bits: 5,
        }
    }

    #[test]
    fn conv_matches_engine_across_tiles() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (stride, pad) in [(1, 1), (2, 0), (1, 0)] {
            let layer = random_layer(&mut rng, LayerKind::Conv, vec![7, 5, 3, 3], stride, pad);
            let input = random_act(&mut rng, vec![5, 6, 6]);
            let fp = cfg();
            let want = conv_forward(&input, &layer, &fp).unwrap();
            // 45 reduction rows x 7 filters on a 16x4 array: 3 x 2 tiles
            let array = ArrayConfig::new(16, 4, 2).unwrap();
            let got = simulate_conv_layer(&layer, &input, &array, &fp).unwrap();
            assert_eq!(got.tiles, 6);
            assert_eq!(got.dims, want.dims);
            assert_eq!(got.outputs, want.values);
            let k = (want.dims[1] * want.dims[2]) as u64;
            assert_eq!(got.mac_count, k * 45 * 7);
            let expect_cycles: u64 = [16, 16, 13]
                .iter()
                .flat_map(|&r| [4, 3].map(|c| ArrayConfig::tile_cycles(r, c, k as usize)))
                .sum();
            assert_eq!(got.cycles, expect_cycles);
        }
    }

    #[test]
    fn fc_matches_engine() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let layer = random_layer(&mut rng, LayerKind::Fc, vec![10, 64], 1, 0);
        let input = random_act(&mut rng, vec![64]);
        let fp = cfg();
        let want = fc_forward(&input, &layer, &fp).unwrap();
        let got = simulate_layer(&layer, &input, &ArrayConfig::new(32, 32, 2).unwrap(), &fp).unwrap();
        assert_eq!(got.outputs, want.values);
        assert_eq!(got.tiles, 2);
    }

    #[test]
    fn full_tile_matches_direct_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = two_digit();
        let table = enumerate_levels(&f);
        let codes: Vec<EncodedWeight> = (0..32 * 32)
            .map(|_| table.code(rng.random_range(0..table.len())))
            .collect();
        let acts: Vec<Vec<i32>> = (0..64)
            .map(|_| (0..32).map(|_| rng.random_range(-128..128)).collect())
            .collect();
        let tile = WeightTile {
            rows: 32,
            cols: 32,
            codes: codes.clone(),
        };
        let array = ArrayConfig::new(32, 32, 2).unwrap();
        let r = simulate_matmul(&tile, &acts, &f, &array, &cfg()).unwrap();
        assert_eq!(r.cycles, 32 + 32 + 64 - 2);
        for k in 0..64 {
            for c in 0..32 {
                let want: i64 = (0..32)
                    .map(|i| acts[k][i] as i64 * f.int_value(codes[i * 32 + c]).unwrap())
                    .sum();
                assert_eq!(r.outputs[k * 32 + c], want);
            }
        }
        let doubled: Vec<Vec<i32>> = acts.iter().chain(acts.iter()).cloned().collect();
        let r2 = simulate_matmul(&tile, &doubled, &f, &array, &cfg()).unwrap();
        assert_eq!(r2.cycles - r.cycles, 64);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn cycles_follow_pipeline_depth(rows in 1usize..9, cols in 1usize..9, k in 1usize..12, seed: u64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = FormatSpec::single_signed(0..8, 1.0).unwrap();
            let tile = WeightTile {
                rows,
                cols,
                codes: (0..rows * cols).map(|_| EncodedWeight(rng.random_range(0..16))).collect(),
            };
            let acts: Vec<Vec<i32>> = (0..k).map(|_| (0..rows).map(|_| rng.random_range(-100..100)).collect()).collect();
            let array = ArrayConfig::new(8, 8, 1).unwrap();
            let r = simulate_matmul(&tile, &acts, &f, &array, &cfg()).unwrap();
            prop_assert_eq!(r.cycles, ArrayConfig::tile_cycles(rows, cols, k));
            for kk in 0..k {
                for c in 0..cols {
                    let want: i64 = (0..rows).map(|i| acts[kk][i] as i64 * f.int_value(tile.codes[i * cols + c]).unwrap()).sum();
                    prop_assert_eq!(r.outputs[kk * cols + c], want);
                }
            }
        }
    }
}
