use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use elpq::driver::quantize_model;
use elpq::elpbsd::{enumerate_levels, DigitSpec, EncodedWeight, FormatSpec};
use elpq::engine::{conv_forward, shift_mac, FixedPointConfig};
use elpq::quantizer::{compensate_levels, CompensationMode};
use elpq::systolic::{simulate_matmul, ArrayConfig, WeightTile};
use elpq::tensorio::Model;
use elpq_bench::{activations, conv_layer, weights};

fn two_digit() -> FormatSpec {
    FormatSpec::new(
        vec![
            DigitSpec::new(true, (0..8).collect()).unwrap(),
            DigitSpec::new(true, (0..8).collect()).unwrap(),
        ],
        0.01,
    )
    .unwrap()
}

fn encode(c: &mut Criterion) {
    let w = weights(4096, 1.0, 1);
    let mut g = c.benchmark_group("encode");
    for (name, spec) in [("sd1_s8", FormatSpec::single_signed(0..8, 0.01).unwrap()), ("sd2_s8x8", two_digit())] {
        let table = enumerate_levels(&spec);
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| w.iter().map(|&v| table.encode(v).bits() as u64).sum::<u64>())
        });
    }
    g.finish();
}

fn mac(c: &mut Criterion) {
    let spec = two_digit();
    let cfg = FixedPointConfig::new(8, vec![]).unwrap();
    let codes: Vec<EncodedWeight> = (0..256u16).map(EncodedWeight).collect();
    c.bench_function("shift_mac/256", |b| {
        b.iter(|| {
            codes.iter().fold(0i64, |acc, &w| shift_mac(acc, black_box(77), w, &spec, &cfg).unwrap())
        })
    });
}

fn compensate(c: &mut Criterion) {
    let w = weights(64 * 64 * 9, 0.3, 2);
    let table = enumerate_levels(&FormatSpec::single_signed(0..8, 0.3 / 128.0).unwrap());
    c.bench_function("compensate/64x64x3x3", |b| {
        b.iter(|| compensate_levels(&w, &[64, 64, 3, 3], &table, CompensationMode::Channel).unwrap())
    });
}

fn conv(c: &mut Criterion) {
    let float = Model::new(vec![16, 16, 16], vec![conv_layer(32, 16, 3, 3)]).unwrap();
    let (q, _) = quantize_model(&float, &FormatSpec::single_signed(0..8, 1.0).unwrap(), None).unwrap();
    let input = activations(vec![16, 16, 16], 4);
    let cfg = FixedPointConfig::new(8, vec![6]).unwrap();
    c.bench_function("conv_forward/32x16x3x3@16x16", |b| {
        b.iter(|| conv_forward(&input, &q.layers[0], &cfg).unwrap())
    });
}

fn systolic(c: &mut Criterion) {
    let spec = FormatSpec::single_signed(0..8, 1.0).unwrap();
    let array = ArrayConfig::new(32, 32, 1).unwrap();
    let cfg = FixedPointConfig::new(8, vec![]).unwrap();
    let tile = WeightTile {
        rows: 32,
        cols: 32,
        codes: (0..1024u16).map(|k| EncodedWeight(k % 16)).collect(),
    };
    let acts: Vec<Vec<i32>> = (0..64).map(|k| (0..32).map(|r| (k * 7 + r) % 255 - 127).collect()).collect();
    c.bench_function("systolic_tile/32x32xK64", |b| {
        b.iter(|| simulate_matmul(&tile, &acts, &spec, &array, &cfg).unwrap())
    });
}

criterion_group!(benches, encode, mac, compensate, conv, systolic);
criterion_main!(benches);
