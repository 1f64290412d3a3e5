//! End-to-end checks on the shipped digits model.
//!
//! `golden_logits.json` pins the integer engine's logits for a quantized
//! copy of the model. Regenerate it with `ELPQ_BLESS=1 cargo test -p
//! elpq-core --test fixture_model` after an intentional numeric change.

use std::path::{Path, PathBuf};

use elpq::driver::quantize_model;
use elpq::engine::reference::FloatNet;
use elpq::engine::{accuracy_with, infer_batch, FixedPointConfig};
use elpq::quantizer::CompensationMode;
use elpq::systolic::{simulate_model, ArrayConfig, CostTable};
use elpq::tensorio::{load_dataset, load_model, write_model};
use elpq::FormatSpec;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

#[test]
fn float_model_matches_training_accuracy() {
    let m = load_model(fixtures().join("digits/model.json")).unwrap();
    let d = load_dataset(fixtures().join("digits/dataset.json")).unwrap();
    assert_eq!(d.len(), 500);
    assert_eq!(m.num_classes().unwrap(), 10);
    let net = FloatNet::new(&m).unwrap();
    let acc = accuracy_with(&d, |x| net.forward(x)).unwrap();
    assert!((acc - 0.978).abs() < 1e-9, "{acc}");
}

#[test]
fn golden_logits() {
    let m = load_model(fixtures().join("digits/model.json")).unwrap();
    let d = load_dataset(fixtures().join("digits/dataset.json")).unwrap();
    let (q, _) = quantize_model(&m, &FormatSpec::single_signed(0..8, 1.0).unwrap(), Some(CompensationMode::Channel)).unwrap();
    let fp = FixedPointConfig::calibrate(&q, &d.head(100), 8).unwrap();
    let logits = infer_batch(&q, &d.head(20), &fp).unwrap();
    let path = fixtures().join("digits/golden_logits.json");
    if std::env::var_os("ELPQ_BLESS").is_some() {
        std::fs::write(&path, serde_json::to_string_pretty(&logits).unwrap() + "\n").unwrap();
    }
    let want: Vec<Vec<f64>> = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(logits, want);
}

#[test]
fn quantized_model_round_trips_and_simulates() {
    let m = load_model(fixtures().join("digits/model.json")).unwrap();
    let d = load_dataset(fixtures().join("digits/dataset.json")).unwrap();
    let spec: FormatSpec = serde_json::from_str(&std::fs::read_to_string(fixtures().join("formats/sd2_s4x4.json")).unwrap()).unwrap();
    let (q, _) = quantize_model(&m, &spec, Some(CompensationMode::Filter)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_model(&q, dir.path(), "model.json").unwrap();
    let back = load_model(dir.path().join("model.json")).unwrap();
    assert_eq!(back.input_dims, q.input_dims);
    for (a, b) in back.layers.iter().zip(&q.layers) {
        assert_eq!((&a.weights, &a.bias, a.kind()), (&b.weights, &b.bias, b.kind()));
    }

    let fp = FixedPointConfig::calibrate(&q, &d.head(50), 8).unwrap();
    let cost = CostTable::from_json(&std::fs::read_to_string(fixtures().join("cost_table.json")).unwrap()).unwrap();
    let array = ArrayConfig::new(32, 32, 2).unwrap();
    for i in 0..5 {
        let rows = simulate_model(&back, d.sample(i), &fp, &array, Some((&cost, "sd2_s4x4"))).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.matches_engine && r.layer_energy_pj.unwrap() > 0.0));
    }
}
