use std::path::Path;

use leantta::error::CliError;
use leantta::format::{self, AnyModel, Annotation};
use leantta::report::{self, ReportFormat};
use leantta_core::bench::{evaluate_stream, train_reference_model, Arch, ClusterSpec, EvalMode, EvalTarget, PatternSpec, TrainConfig};
use leantta_core::graph::{forward, replace_norm_layers};
use leantta_core::quant::{calibrate, forward_quantized, plan_partial_fusion, quantize_model, FusionPolicy};
use leantta_core::shift::{build_abrupt_stream, LabeledDataset, ShiftKind, StreamMode, StreamSpec};
use leantta_core::{AdaptConfig, ForwardMode, ModelGraph, Tensor};
use proptest::prelude::*;

fn cnn() -> (ModelGraph, LabeledDataset) {
    let data = PatternSpec { seed: 5, ..Default::default() }.sample(20, 1).unwrap();
    let cfg = TrainConfig { epochs: 3, seed: 5, holdout: 0.0, ..Default::default() };
    let model = train_reference_model(Arch::tiny_cnn(), &data, &cfg).unwrap().model;
    (replace_norm_layers(&model, None).unwrap(), data)
}

fn first_tag_offset(model: &ModelGraph) -> usize {
    4 + 4 + 8 + model.name.len() + 8 + 8 * model.input_shape.len() + 8 + 8
}

#[test]
fn float_model_round_trip_is_bitwise() {
    let (model, data) = cnn();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ltm");
    format::save_model(&path, &model).unwrap();
    assert!(format::manifest_path(&path).exists());
    let back = format::load_model(&path).unwrap();
    assert_eq!(back, model);
    let mode = ForwardMode::Adapt(AdaptConfig::default());
    for x in data.inputs.iter().take(10) {
        assert_eq!(forward(&model, x, mode, false).unwrap().0.data(), forward(&back, x, mode, false).unwrap().0.data());
    }
}

#[test]
fn quantized_model_round_trip_is_bitwise() {
    let (model, data) = cnn();
    let calib = calibrate(&model, &data.inputs, 2, 16).unwrap();
    let plan = plan_partial_fusion(&model, &FusionPolicy::FuseDeepHalf).unwrap();
    let q = quantize_model(&model, &plan, &calib).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("q.ltm");
    format::save_quantized(&path, &q).unwrap();
    let back = format::load_quantized(&path).unwrap();
    assert_eq!(back, q);
    let mode = ForwardMode::Adapt(AdaptConfig::default());
    for x in data.inputs.iter().take(10) {
        assert_eq!(forward_quantized(&q, x, mode, false).unwrap().0.data(), forward_quantized(&back, x, mode, false).unwrap().0.data());
    }
    assert!(matches!(format::load_model(&path), Err(CliError::Version { .. })));
}

#[test]
fn truncated_model_is_a_parse_error() {
    let (model, _) = cnn();
    let bytes = format::encode_model(&model);
    for cut in [0, 3, 9, bytes.len() / 2, bytes.len() - 1] {
        let err = format::decode_any(&bytes[..cut], Path::new("t.ltm")).unwrap_err();
        assert!(matches!(err, CliError::Parse { .. }), "cut {cut}: {err}");
        assert_eq!(err.exit_code(), 3);
    }
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(matches!(format::decode_any(&longer, Path::new("t.ltm")), Err(CliError::Parse { .. })));
}

#[test]
fn unknown_layer_tag_names_the_tag() {
    let (model, _) = cnn();
    let mut bytes = format::encode_model(&model);
    let at = first_tag_offset(&model);
    assert_eq!(bytes[at], 1, "first layer is a conv");
    bytes[at] = 99;
    let err = format::decode_any(&bytes, Path::new("t.ltm")).unwrap_err();
    assert!(matches!(err, CliError::Version { .. }));
    assert!(err.to_string().contains("99"), "{err}");
}

#[test]
fn future_version_is_rejected() {
    let (model, _) = cnn();
    let mut bytes = format::encode_model(&model);
    bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
    let err = format::decode_any(&bytes, Path::new("t.ltm")).unwrap_err();
    assert!(matches!(err, CliError::Version { .. }), "{err}");
}

#[test]
fn bad_magic_is_a_parse_error() {
    let err = format::decode_any(b"NOPE\x01\x00\x00\x00", Path::new("t.ltm")).unwrap_err();
    assert!(matches!(err, CliError::Parse { .. }));
}

#[test]
fn stream_file_round_trip_keeps_annotations() {
    let base = ClusterSpec::default().sample(10, 0).unwrap();
    let spec = StreamSpec { mode: StreamMode::Abrupt, per_cell: 2, kinds: vec![ShiftKind::MeanShift, ShiftKind::ShotNoise], seed: 3 };
    let items = build_abrupt_stream(&base, &spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.ltd");
    format::write_stream(&path, &items, 3, &[16]).unwrap();
    let (back, file) = format::read_stream(&path).unwrap();
    assert_eq!(back, items);
    assert_eq!(file.sample_shape, vec![16]);
    let ann: &[Annotation] = file.annotations.as_deref().unwrap();
    assert_eq!(ann.len(), items.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dataset_round_trip_is_bit_exact(per in 1usize..6, count in 1usize..5, seed in any::<u64>()) {
        let mut state = seed;
        let mut next = move || { state = leantta_core::derive_seed(state, 1); state as u32 };
        // arbitrary finite bit patterns; non-finite ones become subnormals
        let inputs: Vec<Tensor> = (0..count)
            .map(|_| Tensor::new(&[1, per], (0..per).map(|_| f32::from_bits(next())).map(|v| if v.is_finite() { v } else { f32::from_bits(v.to_bits() & 0x807f_ffff) }).collect()).unwrap())
            .collect();
        let labels: Vec<usize> = (0..count).map(|k| k % 4).collect();
        let data = LabeledDataset::new(inputs, labels, 4).unwrap();
        let bytes = format::encode_dataset(&data, &[per], None);
        let back = format::decode_dataset(&bytes, Path::new("d.ltd")).unwrap();
        prop_assert_eq!(&back.data.labels, &data.labels);
        for (a, b) in back.data.inputs.iter().zip(&data.inputs) {
            let ab: Vec<u32> = a.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(ab, bb);
        }
        prop_assert_eq!(format::encode_dataset(&back.data, &[per], None), bytes);
    }
}

#[test]
fn reports_round_trip_in_both_formats() {
    let (model, data) = cnn();
    let items = leantta_core::shift::clean_stream(&data);
    let mut r = evaluate_stream(EvalTarget::Float(&model), &items, EvalMode::Adapt(AdaptConfig::default()), true).unwrap();
    r.meta.insert("note".into(), "line one\nline two".into());
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("r.csv");
    let jsonl = dir.path().join("r.jsonl");
    report::write_report(&csv, &r, ReportFormat::Csv).unwrap();
    report::write_report(&jsonl, &r, ReportFormat::JsonLines).unwrap();
    let a = report::read_report(&csv).unwrap();
    let b = report::read_report(&jsonl).unwrap();
    assert_eq!(a.records.len(), r.records.len());
    assert_eq!(b.records, r.records);
    assert_eq!(a.accuracy, r.accuracy);
    assert_eq!(b.weighted_f1, r.weighted_f1);
    assert_eq!(a.recompute(), (r.accuracy, r.weighted_f1));
}

#[test]
fn tampered_report_aggregate_is_rejected() {
    let (model, data) = cnn();
    let items = leantta_core::shift::clean_stream(&data);
    let r = evaluate_stream(EvalTarget::Float(&model), &items, EvalMode::Source, false).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    report::write_report(&path, &r, ReportFormat::Csv).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let line = text.lines().find(|l| l.starts_with("# aggregate.accuracy=")).unwrap();
    std::fs::write(&path, text.replace(line, "# aggregate.accuracy=0.123")).unwrap();
    assert!(matches!(report::read_report(&path), Err(CliError::Report { .. })));
}

#[test]
fn any_model_dispatches_on_version() {
    let (model, data) = cnn();
    let calib = calibrate(&model, &data.inputs, 1, 8).unwrap();
    let q = quantize_model(&model, &plan_partial_fusion(&model, &FusionPolicy::FuseAll).unwrap(), &calib).unwrap();
    assert!(matches!(format::decode_any(&format::encode_model(&model), Path::new("a")).unwrap(), AnyModel::Float(_)));
    assert!(matches!(format::decode_any(&format::encode_quantized(&q), Path::new("b")).unwrap(), AnyModel::Quantized(_)));
}
