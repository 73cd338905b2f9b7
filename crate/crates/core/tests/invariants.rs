use leantta_core::adapt::{adaptive_normalize, blend, divergence, instance_stats, stabilize};
use leantta_core::graph::{forward, replace_norm_layers, Conv2dLayer, Layer, LinearLayer};
use leantta_core::quant::{calibrate, forward_quantized, plan_partial_fusion, quantize_model, FusionPolicy};
use leantta_core::shift::{apply_corruption, plan_stream, ShiftKind, ShiftSpec, StreamMode, StreamSpec};
use leantta_core::tensor::conv2d;
use leantta_core::{AdaptConfig, ChannelStats, DistanceMode, ForwardMode, ModelGraph, NormParams, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(r: &mut ChaCha8Rng, shape: &[usize], amp: f32) -> Tensor {
    Tensor::from_fn(shape, |_| r.random_range(-amp..amp)).unwrap()
}

fn rand_norm(r: &mut ChaCha8Rng, c: usize) -> NormParams {
    NormParams::new(
        (0..c).map(|_| r.random_range(-0.5..0.5)).collect(),
        (0..c).map(|_| r.random_range(0.2..2.0)).collect(),
        (0..c).map(|_| r.random_range(0.5..1.5)).collect(),
        (0..c).map(|_| r.random_range(-0.3..0.3)).collect(),
        1e-5,
    )
    .unwrap()
}

/// conv-bn-relu, a residual conv-bn block, then pool and classify.
fn small_cnn(seed: u64, adaptive: bool) -> ModelGraph {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let w = 4;
    let norm = |p| if adaptive { Layer::AdaptiveNorm(p) } else { Layer::BatchNorm(p) };
    let layers = vec![
        Layer::Conv2d(Conv2dLayer { weight: rand_tensor(&mut r, &[w, 2, 3, 3], 0.5), bias: vec![0.1; w], stride: 1, padding: 1 }),
        norm(rand_norm(&mut r, w)),
        Layer::Relu,
        Layer::ResidualBegin,
        Layer::Conv2d(Conv2dLayer { weight: rand_tensor(&mut r, &[w, w, 3, 3], 0.3), bias: vec![0.0; w], stride: 1, padding: 1 }),
        norm(rand_norm(&mut r, w)),
        Layer::ResidualEnd,
        Layer::Relu,
        Layer::GlobalAvgPool,
        Layer::Linear(LinearLayer { weight: rand_tensor(&mut r, &[3, w], 1.0), bias: vec![0.0; 3] }),
    ];
    ModelGraph::new("small-cnn", vec![2, 5, 5], 3, layers).unwrap()
}

fn stats(v: &[(f64, f64)]) -> ChannelStats {
    ChannelStats::new(v.iter().map(|p| p.0).collect(), v.iter().map(|p| p.1).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_is_linear(seed in any::<u64>(), a in -2.0f32..2.0, b in -2.0f32..2.0) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut r, &[1, 2, 5, 4], 1.0);
        let y = rand_tensor(&mut r, &[1, 2, 5, 4], 1.0);
        let w = rand_tensor(&mut r, &[3, 2, 3, 3], 1.0);
        let zero = [0.0; 3];
        let combo = Tensor::from_fn(x.shape(), |i| a * x.data()[i] + b * y.data()[i]).unwrap();
        let lhs = conv2d(&combo, &w, &zero, 1, 1).unwrap();
        let cx = conv2d(&x, &w, &zero, 1, 1).unwrap();
        let cy = conv2d(&y, &w, &zero, 1, 1).unwrap();
        for i in 0..lhs.numel() {
            let rhs = a as f64 * cx.data()[i] as f64 + b as f64 * cy.data()[i] as f64;
            let scale = (a.abs() as f64 * cx.data()[i].abs() as f64 + b.abs() as f64 * cy.data()[i].abs() as f64).max(1.0);
            prop_assert!((lhs.data()[i] as f64 - rhs).abs() / scale <= 1e-5);
        }
    }

    #[test]
    fn stabilize_and_blend_are_convex(
        ch in prop::collection::vec((-5.0f64..5.0, 0.0f64..4.0, -5.0f64..5.0, 0.0f64..4.0), 1..8),
        tau in 0.0f64..=1.0, d in 0.0f64..1.0, lambda in 0.0f64..=1.0,
    ) {
        let src = stats(&ch.iter().map(|c| (c.0, c.1)).collect::<Vec<_>>());
        let tgt = stats(&ch.iter().map(|c| (c.2, c.3)).collect::<Vec<_>>());
        let between = |v: f64, a: f64, b: f64| v >= a.min(b) - 1e-12 && v <= a.max(b) + 1e-12;
        let stab = stabilize(&src, &tgt, tau).unwrap();
        let mixed = blend(&src, &stab, d, lambda).unwrap();
        for c in 0..ch.len() {
            prop_assert!(between(stab.mu[c], src.mu[c], tgt.mu[c]));
            prop_assert!(between(stab.sigma2[c], src.sigma2[c], tgt.sigma2[c]));
            prop_assert!(between(mixed.mu[c], src.mu[c], stab.mu[c]));
            prop_assert!(between(mixed.sigma2[c], src.sigma2[c], stab.sigma2[c]));
        }
    }

    #[test]
    fn divergence_in_unit_interval_and_monotone(
        ch in prop::collection::vec((-3.0f64..3.0, 0.1f64..3.0), 1..6), shift in 0.0f64..2.0, extra in 0.01f64..1.0,
    ) {
        let src = stats(&ch);
        for mode in [DistanceMode::RawSum, DistanceMode::ChannelMean] {
            let near: Vec<f64> = src.mu.iter().map(|m| m + shift).collect();
            let far: Vec<f64> = src.mu.iter().map(|m| m + shift + extra).collect();
            let d1 = divergence(&near, &src, mode, 1e-5).unwrap();
            let d2 = divergence(&far, &src, mode, 1e-5).unwrap();
            prop_assert!((0.0..1.0).contains(&d1) && (0.0..1.0).contains(&d2));
            prop_assert!(d2 >= d1);
            if d2 < 0.999 {
                prop_assert!(d2 > d1);
            }
        }
    }

    #[test]
    fn fully_adapted_channels_are_standardized(seed in any::<u64>(), c in 1usize..5, hw in 4usize..7) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::from_fn(&[1, c, hw, hw], |i| r.random_range(-3.0f32..3.0) * (1 + i % 3) as f32 + 2.0).unwrap();
        let params = NormParams::new(vec![0.7; c], vec![1.5; c], vec![1.0; c], vec![0.0; c], 1e-5).unwrap();
        let before = params.clone();
        let (y, _) = adaptive_normalize(&x, &params, &AdaptConfig::new(0.0, 0.0).unwrap()).unwrap();
        prop_assert_eq!(&params, &before);
        let s = instance_stats(&y);
        for ch in 0..c {
            prop_assert!(s.mu[ch].abs() <= 1e-5);
            prop_assert!((s.sigma2[ch] - 1.0).abs() <= 1e-3);
        }
    }

    #[test]
    fn adapt_logits_do_not_depend_on_stream_order(seed in any::<u64>(), rot in 1usize..6) {
        let model = small_cnn(seed, true);
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x55);
        let inputs: Vec<Tensor> = (0..6).map(|_| rand_tensor(&mut r, &[1, 2, 5, 5], 2.0)).collect();
        let mode = ForwardMode::Adapt(AdaptConfig::default());
        let once: Vec<Tensor> = inputs.iter().map(|x| forward(&model, x, mode, false).unwrap().0).collect();
        for k in 0..inputs.len() {
            let j = (k + rot) % inputs.len();
            let again = forward(&model, &inputs[j], mode, false).unwrap().0;
            prop_assert_eq!(again.data(), once[j].data());
        }
    }

    #[test]
    fn replacing_norm_layers_keeps_source_behavior(seed in any::<u64>()) {
        let model = small_cnn(seed, false);
        let adaptive = replace_norm_layers(&model, None).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut r, &[2, 2, 5, 5], 1.0);
        let a = forward(&model, &x, ForwardMode::Source, false).unwrap().0;
        let b = forward(&adaptive, &x, ForwardMode::Source, false).unwrap().0;
        prop_assert_eq!(a.data(), b.data());
    }

    #[test]
    fn corruptions_keep_shape_and_finiteness(seed in any::<u64>(), kind_idx in 0usize..8, severity in 1u8..=5) {
        let kind = ShiftKind::ALL[kind_idx];
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::from_fn(&[1, 3, 6, 6], |_| r.random_range(0.0f32..1.0)).unwrap();
        let spec = if kind == ShiftKind::Identity { ShiftSpec::identity() } else { ShiftSpec::new(kind, severity).unwrap() };
        let y = apply_corruption(&x, spec, seed).unwrap();
        prop_assert_eq!(y.shape(), x.shape());
        prop_assert!(y.data().iter().all(|v| v.is_finite()));
        if !matches!(kind, ShiftKind::MeanShift | ShiftKind::ScaleShift) {
            prop_assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let again = apply_corruption(&x, spec, seed).unwrap();
        prop_assert_eq!(again.data(), y.data());
    }

    #[test]
    fn abrupt_stream_cells_are_uniform(per_cell in 1usize..6, seed in any::<u64>()) {
        let spec = StreamSpec { mode: StreamMode::Abrupt, per_cell, kinds: vec![ShiftKind::MeanShift, ShiftKind::GaussianNoise], seed };
        let plan = plan_stream(30, &spec).unwrap();
        prop_assert_eq!(plan.len(), 10 * per_cell);
        for kind in &spec.kinds {
            for sev in 1..=5u8 {
                let n = plan.iter().filter(|p| p.shift.kind == *kind && p.shift.severity == sev).count();
                prop_assert_eq!(n, per_cell);
            }
        }
    }
}

#[test]
fn fused_float_multiplies_strictly_decrease() {
    let model = replace_norm_layers(&small_cnn(3, false), None).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(9);
    let data: Vec<Tensor> = (0..16).map(|_| rand_tensor(&mut r, &[1, 2, 5, 5], 1.0)).collect();
    let calib = calibrate(&model, &data, 2, 8).unwrap();
    let x = &data[0];
    let mut counts = Vec::new();
    for policy in [FusionPolicy::FuseNone, FusionPolicy::FuseDeepHalf, FusionPolicy::FuseAll] {
        let plan = plan_partial_fusion(&model, &policy).unwrap();
        let q = quantize_model(&model, &plan, &calib).unwrap();
        let (_, trace) = forward_quantized(&q, x, ForwardMode::Adapt(AdaptConfig::default()), true).unwrap();
        let trace = trace.unwrap();
        assert_eq!(trace.records.len(), plan.unfused.len());
        counts.push(trace.ops.float_mults);
        let again = forward_quantized(&q, x, ForwardMode::Source, false).unwrap().0;
        assert_eq!(again.data(), forward_quantized(&q, x, ForwardMode::Source, false).unwrap().0.data());
    }
    assert!(counts[0] > counts[1] && counts[1] > counts[2], "{counts:?}");
}
