use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{edge_after, fuse_conv_bn, fuse_linear_bn, CalibrationTable, FusionPlan, QuantParams, INPUT_EDGE};
use crate::error::{Error, Result};
use crate::graph::{AdaptStage, ForwardMode, ForwardTrace, Layer, ModelGraph, NormParams, NormStage, SourceStage};
use crate::ops::OpCounts;
use crate::tensor::{ConvGeometry, Tensor};

/// One layer of an int8 model.
#[derive(Debug, Clone, PartialEq)]
pub enum QLayer {
    Conv {
        weight: Vec<i8>,
        /// (C_out, C_in, kH, kW)
        weight_shape: [usize; 4],
        weight_scale: f32,
        /// Bias in units of `input_scale · weight_scale`.
        bias: Vec<i32>,
        stride: usize,
        padding: usize,
        out: QuantParams,
        relu: bool,
    },
    Linear {
        weight: Vec<i8>,
        /// (F_out, F_in)
        weight_shape: [usize; 2],
        weight_scale: f32,
        bias: Vec<i32>,
        out: QuantParams,
        relu: bool,
    },
    /// Unfused normalization run in float between a dequantize and a requantize.
    Norm {
        /// Id of the normalization layer in the float model.
        source_layer: usize,
        params: NormParams,
        out: QuantParams,
        relu: bool,
    },
    Relu,
    GlobalAvgPool { out: QuantParams },
    ResidualBegin,
    ResidualEnd { out: QuantParams },
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    pub input: QuantParams,
    pub layers: Vec<QLayer>,
    pub plan: FusionPlan,
}

impl QuantizedModel {
    /// Structural checks for models built outside [`quantize_model`]: valid
    /// quantization parameters and array lengths that match their shapes.
    pub fn validate(&self) -> Result<()> {
        self.input.validate()?;
        let mut open = 0usize;
        for (i, layer) in self.layers.iter().enumerate() {
            let bad = |detail: String| Error::shape("QuantizedModel", format!("layer {i}: {detail}"));
            match layer {
                QLayer::Conv { weight, weight_shape, weight_scale, bias, stride, out, .. } => {
                    if weight.len() != weight_shape.iter().product::<usize>() || bias.len() != weight_shape[0] || *stride == 0 {
                        return Err(bad(format!("weights {} for shape {weight_shape:?}, {} biases", weight.len(), bias.len())));
                    }
                    QuantParams::weight_scale_ok(*weight_scale)?;
                    out.validate()?;
                }
                QLayer::Linear { weight, weight_shape, weight_scale, bias, out, .. } => {
                    if weight.len() != weight_shape[0] * weight_shape[1] || bias.len() != weight_shape[0] {
                        return Err(bad(format!("weights {} for shape {weight_shape:?}, {} biases", weight.len(), bias.len())));
                    }
                    QuantParams::weight_scale_ok(*weight_scale)?;
                    out.validate()?;
                }
                QLayer::Norm { params, out, .. } => {
                    params.validate()?;
                    out.validate()?;
                }
                QLayer::GlobalAvgPool { out } => out.validate()?,
                QLayer::ResidualBegin => open += 1,
                QLayer::ResidualEnd { out } => {
                    open = open.checked_sub(1).ok_or_else(|| bad("unmatched residual end".into()))?;
                    out.validate()?;
                }
                QLayer::Relu => {}
            }
        }
        if open != 0 {
            return Err(Error::shape("QuantizedModel", "unclosed residual block"));
        }
        if self.input_shape.is_empty() || self.num_classes == 0 {
            return Err(Error::shape("QuantizedModel", "empty input shape or zero classes"));
        }
        Ok(())
    }

    /// Ids (in the float model) of the norm layers kept as adaptive islands.
    pub fn island_layer_ids(&self) -> Vec<usize> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                QLayer::Norm { source_layer, .. } => Some(*source_layer),
                _ => None,
            })
            .collect()
    }
}

fn act_params(calib: &CalibrationTable, edge: usize) -> Result<QuantParams> {
    calib
        .activations
        .get(&edge)
        .copied()
        .ok_or_else(|| Error::config(format!("calibration table has no parameters for edge {edge}")))
}

fn quantize_weights(w: &[f32]) -> (Vec<i8>, QuantParams) {
    let max_abs = w.iter().fold(0f32, |m, v| m.max(v.abs()));
    let (qp, _) = QuantParams::weight(max_abs);
    (w.iter().map(|&v| qp.quantize(v) as i8).collect(), qp)
}

fn quantize_bias(bias: &[f32], input: &QuantParams, weight: &QuantParams) -> Vec<i32> {
    let s = input.scale as f64 * weight.scale as f64;
    bias.iter()
        .map(|&b| libm::rint(b as f64 / s).clamp(i32::MIN as f64, i32::MAX as f64) as i32)
        .collect()
}

/// Fuse, quantize and assemble the int8 model.
///
/// Norm layers in `plan.fused` are folded into the preceding conv/linear
/// layer; those in `plan.unfused` become float islands. A ReLU directly after
/// an integer layer or island is folded into its requantization clamp.
pub fn quantize_model(model: &ModelGraph, plan: &FusionPlan, calib: &CalibrationTable) -> Result<QuantizedModel> {
    let norm = model.norm_layer_ids();
    let covered = plan.unfused.len() + plan.fused.len() == norm.len()
        && norm.iter().all(|i| plan.unfused.contains(i) != plan.fused.contains(i));
    if !covered {
        return Err(Error::config("fusion plan does not partition the model's norm layers"));
    }
    let input = act_params(calib, INPUT_EDGE)?;
    let mut current = input;
    let mut saved: Vec<QuantParams> = Vec::new();
    let mut layers = Vec::new();
    let mut id = 0;
    while id < model.layers.len() {
        // index of the last float layer consumed by this quantized layer
        let mut last = id;
        let fused_norm = |next: usize| match model.layers.get(next) {
            Some(Layer::BatchNorm(p) | Layer::AdaptiveNorm(p)) if plan.fused.contains(&next) => Some(p),
            _ => None,
        };
        let fold_relu = |last: &mut usize| {
            let relu = matches!(model.layers.get(*last + 1), Some(Layer::Relu));
            if relu {
                *last += 1;
            }
            relu
        };
        let qlayer = match &model.layers[id] {
            Layer::Conv2d(conv) => {
                let conv = match fused_norm(id + 1) {
                    Some(bn) => {
                        last += 1;
                        fuse_conv_bn(conv, bn)?
                    }
                    None => conv.clone(),
                };
                let relu = fold_relu(&mut last);
                let (weight, wq) = quantize_weights(conv.weight.data());
                let s = conv.weight.shape();
                QLayer::Conv {
                    weight,
                    weight_shape: [s[0], s[1], s[2], s[3]],
                    weight_scale: wq.scale,
                    bias: quantize_bias(&conv.bias, &current, &wq),
                    stride: conv.stride,
                    padding: conv.padding,
                    out: act_params(calib, edge_after(last))?,
                    relu,
                }
            }
            Layer::Linear(lin) => {
                let lin = match fused_norm(id + 1) {
                    Some(bn) => {
                        last += 1;
                        fuse_linear_bn(lin, bn)?
                    }
                    None => lin.clone(),
                };
                let relu = fold_relu(&mut last);
                let (weight, wq) = quantize_weights(lin.weight.data());
                let s = lin.weight.shape();
                QLayer::Linear {
                    weight,
                    weight_shape: [s[0], s[1]],
                    weight_scale: wq.scale,
                    bias: quantize_bias(&lin.bias, &current, &wq),
                    out: act_params(calib, edge_after(last))?,
                    relu,
                }
            }
            Layer::BatchNorm(p) | Layer::AdaptiveNorm(p) => {
                if !plan.unfused.contains(&id) {
                    return Err(Error::config(format!("fused norm layer {id} has no preceding conv/linear layer")));
                }
                let relu = fold_relu(&mut last);
                QLayer::Norm { source_layer: id, params: p.clone(), out: act_params(calib, edge_after(last))?, relu }
            }
            Layer::Relu => QLayer::Relu,
            Layer::GlobalAvgPool => QLayer::GlobalAvgPool { out: act_params(calib, edge_after(id))? },
            Layer::ResidualBegin => {
                saved.push(current);
                QLayer::ResidualBegin
            }
            Layer::ResidualEnd => {
                saved.pop().ok_or_else(|| Error::shape("quantize_model", "unmatched residual_end"))?;
                QLayer::ResidualEnd { out: act_params(calib, edge_after(id))? }
            }
        };
        current = match &qlayer {
            QLayer::Conv { out, .. }
            | QLayer::Linear { out, .. }
            | QLayer::Norm { out, .. }
            | QLayer::GlobalAvgPool { out }
            | QLayer::ResidualEnd { out } => *out,
            QLayer::Relu | QLayer::ResidualBegin => current,
        };
        layers.push(qlayer);
        id = last + 1;
    }
    Ok(QuantizedModel {
        name: model.name.clone(),
        input_shape: model.input_shape.clone(),
        num_classes: model.num_classes,
        input,
        layers,
        plan: plan.clone(),
    })
}

/// An activation in the integer domain.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct QAct {
    pub shape: Vec<usize>,
    pub data: Vec<u8>,
    pub qp: QuantParams,
}

impl QAct {
    fn quantize(x: &Tensor, qp: QuantParams, ops: &mut OpCounts) -> Self {
        ops.float_mults += x.numel() as u64;
        ops.requant += x.numel() as u64;
        QAct { shape: x.shape().to_vec(), data: x.data().iter().map(|&v| qp.quantize(v) as u8).collect(), qp }
    }

    fn dequantize(&self, ops: &mut OpCounts) -> Result<Tensor> {
        ops.float_mults += self.data.len() as u64;
        ops.dequant += self.data.len() as u64;
        Tensor::new(&self.shape, self.data.iter().map(|&q| self.qp.dequantize(q as i32) as f32).collect())
    }
}

/// Rescale `i32` accumulators (in units of `acc_scale`) into `out`, clamping
/// at the zero point when a ReLU is folded in.
fn requantize(acc: &[i32], acc_scale: f64, out: &QuantParams, relu: bool, ops: &mut OpCounts) -> Vec<u8> {
    let m = acc_scale / out.scale as f64;
    let lo = if relu { out.zero_point } else { 0 };
    ops.float_mults += acc.len() as u64;
    ops.requant += acc.len() as u64;
    acc.iter()
        .map(|&a| (libm::rint(a as f64 * m) + out.zero_point as f64).clamp(lo as f64, 255.0) as u8)
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_int8(
    x: &QAct,
    weight: &[i8],
    weight_shape: [usize; 4],
    weight_scale: f32,
    bias: &[i32],
    stride: usize,
    padding: usize,
    out: &QuantParams,
    relu: bool,
    ops: &mut OpCounts,
) -> Result<QAct> {
    let g = ConvGeometry::new(&x.shape, &weight_shape, stride, padding)?;
    let zp = x.qp.zero_point;
    let mut acc = vec![0i32; g.n * g.c_out * g.oh * g.ow];
    for n in 0..g.n {
        for co in 0..g.c_out {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut a = bias[co];
                    for ci in 0..g.c_in {
                        let xb = (n * g.c_in + ci) * g.h * g.w;
                        let wb = (co * g.c_in + ci) * g.kh * g.kw;
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                if let Some((iy, ix)) = g.tap(oy, ox, ky, kx) {
                                    a += (x.data[xb + iy * g.w + ix] as i32 - zp) * weight[wb + ky * g.kw + kx] as i32;
                                }
                            }
                        }
                    }
                    acc[((n * g.c_out + co) * g.oh + oy) * g.ow + ox] = a;
                }
            }
        }
    }
    ops.int_mults += g.macs();
    let data = requantize(&acc, x.qp.scale as f64 * weight_scale as f64, out, relu, ops);
    Ok(QAct { shape: g.output_shape().to_vec(), data, qp: *out })
}

#[allow(clippy::too_many_arguments)]
fn linear_int8(
    x: &QAct,
    weight: &[i8],
    [f_out, f_in]: [usize; 2],
    weight_scale: f32,
    bias: &[i32],
    out: &QuantParams,
    relu: bool,
    ops: &mut OpCounts,
) -> Result<QAct> {
    let [n, fx] = x.shape[..] else {
        return Err(Error::shape("linear_int8", format!("expected rank 2, got {:?}", x.shape)));
    };
    if fx != f_in {
        return Err(Error::shape("linear_int8", format!("input has {fx} features, weight expects {f_in}")));
    }
    let zp = x.qp.zero_point;
    let mut acc = Vec::with_capacity(n * f_out);
    for i in 0..n {
        let row = &x.data[i * f_in..(i + 1) * f_in];
        for o in 0..f_out {
            let w = &weight[o * f_in..(o + 1) * f_in];
            acc.push(row.iter().zip(w).fold(bias[o], |a, (&q, &k)| a + (q as i32 - zp) * k as i32));
        }
    }
    ops.int_mults += (n * f_out * f_in) as u64;
    let data = requantize(&acc, x.qp.scale as f64 * weight_scale as f64, out, relu, ops);
    Ok(QAct { shape: vec![n, f_out], data, qp: *out })
}

/// Run the int8 model. Islands adapt in [`ForwardMode::Adapt`] and stay
/// frozen in [`ForwardMode::Source`]; logits come back dequantized.
pub fn forward_quantized(
    model: &QuantizedModel,
    input: &Tensor,
    mode: ForwardMode,
    trace: bool,
) -> Result<(Tensor, Option<ForwardTrace>)> {
    let mut ops = OpCounts::default();
    match mode {
        ForwardMode::Source => {
            let y = forward_quantized_with(model, input, &mut SourceStage, &mut ops)?;
            Ok((y, trace.then(|| ForwardTrace { ops, ..Default::default() })))
        }
        ForwardMode::Adapt(config) => {
            config.validate()?;
            let mut stage = AdaptStage { config, records: trace.then(Vec::new) };
            let y = forward_quantized_with(model, input, &mut stage, &mut ops)?;
            Ok((y, stage.records.map(|records| ForwardTrace { records, ops, pooled_batch: input.batch() > 1 })))
        }
    }
}

/// The int8 executor behind [`forward_quantized`]; every island goes through
/// `stage` as an adaptive layer.
pub fn forward_quantized_with(
    model: &QuantizedModel,
    input: &Tensor,
    stage: &mut dyn NormStage,
    ops: &mut OpCounts,
) -> Result<Tensor> {
    if input.shape().get(1..) != Some(model.input_shape.as_slice()) {
        return Err(Error::shape(
            "forward_quantized",
            format!("input {:?} does not match model input (N, {:?})", input.shape(), model.input_shape),
        ));
    }
    let mut x = QAct::quantize(input, model.input, ops);
    let mut saved: Vec<QAct> = Vec::new();
    for (idx, layer) in model.layers.iter().enumerate() {
        let fail = |e: Error| e.at_layer(idx);
        x = match layer {
            QLayer::Conv { weight, weight_shape, weight_scale, bias, stride, padding, out, relu } => {
                conv_int8(&x, weight, *weight_shape, *weight_scale, bias, *stride, *padding, out, *relu, ops).map_err(fail)?
            }
            QLayer::Linear { weight, weight_shape, weight_scale, bias, out, relu } => {
                linear_int8(&x, weight, *weight_shape, *weight_scale, bias, out, *relu, ops).map_err(fail)?
            }
            QLayer::Norm { source_layer, params, out, relu } => {
                let real = x.dequantize(ops)?;
                let y = stage.normalize(*source_layer, true, &real, params, ops).map_err(|e| e.at_layer(*source_layer))?;
                let mut q = QAct::quantize(&y, *out, ops);
                if *relu {
                    let zp = out.zero_point as u8;
                    q.data.iter_mut().for_each(|v| *v = (*v).max(zp));
                }
                q
            }
            QLayer::Relu => {
                let zp = x.qp.zero_point as u8;
                x.data.iter_mut().for_each(|v| *v = (*v).max(zp));
                x
            }
            QLayer::GlobalAvgPool { out } => {
                let [n, c, h, w] = x.shape[..] else {
                    return Err(Error::shape("global_avg_pool", format!("expected rank 4, got {:?}", x.shape)).at_layer(idx));
                };
                let hw = (h * w) as f64;
                let zp = x.qp.zero_point as f64;
                let data: Vec<u8> = x
                    .data
                    .chunks_exact(h * w)
                    .map(|plane| {
                        let sum: u64 = plane.iter().map(|&v| v as u64).sum();
                        let real = (sum as f64 / hw - zp) * x.qp.scale as f64;
                        (libm::rint(real / out.scale as f64) + out.zero_point as f64).clamp(0.0, 255.0) as u8
                    })
                    .collect();
                ops.float_mults += 3 * (n * c) as u64;
                ops.requant += (n * c) as u64;
                QAct { shape: vec![n, c], data, qp: *out }
            }
            QLayer::ResidualBegin => {
                saved.push(x.clone());
                x
            }
            QLayer::ResidualEnd { out } => {
                let skip = saved.pop().ok_or_else(|| Error::shape("forward_quantized", "unmatched residual_end"))?;
                let a = skip.dequantize(ops)?;
                let b = x.dequantize(ops)?;
                let sum = crate::tensor::residual_add(&a, &b).map_err(fail)?;
                QAct::quantize(&sum, *out, ops)
            }
        };
    }
    x.dequantize(ops)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapt::AdaptConfig;
    use crate::graph::{forward, Conv2dLayer, LinearLayer};
    use crate::quant::{calibrate, plan_partial_fusion, FusionPolicy};
    use crate::tensor::conv2d;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng, lo: f32, hi: f32) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(lo..hi)).unwrap()
    }

    fn norm(c: usize, rng: &mut ChaCha8Rng) -> NormParams {
        NormParams::new(
            (0..c).map(|_| rng.random_range(-0.3..0.3)).collect(),
            (0..c).map(|_| rng.random_range(0.5..2.0)).collect(),
            (0..c).map(|_| rng.random_range(0.8..1.2)).collect(),
            (0..c).map(|_| rng.random_range(-0.2..0.2)).collect(),
            1e-5,
        )
        .unwrap()
    }

    fn cnn(rng: &mut ChaCha8Rng) -> ModelGraph {
        let conv = |cin, cout, rng: &mut ChaCha8Rng| {
            Layer::Conv2d(Conv2dLayer { weight: rand_t(&[cout, cin, 3, 3], rng, -0.5, 0.5), bias: vec![0.05; cout], stride: 1, padding: 1 })
        };
        let layers = vec![
            conv(1, 4, rng),
            Layer::BatchNorm(norm(4, rng)),
            Layer::Relu,
            conv(4, 4, rng),
            Layer::BatchNorm(norm(4, rng)),
            Layer::Relu,
            Layer::GlobalAvgPool,
            Layer::Linear(LinearLayer { weight: rand_t(&[3, 4], rng, -1.0, 1.0), bias: vec![0.0; 3] }),
        ];
        ModelGraph::new("cnn", vec![1, 6, 6], 3, layers).unwrap()
    }

    fn setup() -> (ModelGraph, Vec<Tensor>, CalibrationTable) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = cnn(&mut rng);
        let data: Vec<Tensor> = (0..64).map(|_| rand_t(&[1, 1, 6, 6], &mut rng, 0.0, 1.0)).collect();
        let calib = calibrate(&m, &data, 4, 16).unwrap();
        (m, data, calib)
    }

    #[test]
    fn structure_follows_plan() {
        let (m, _, calib) = setup();
        let all = quantize_model(&m, &plan_partial_fusion(&m, &FusionPolicy::FuseAll).unwrap(), &calib).unwrap();
        assert!(all.island_layer_ids().is_empty());
        // conv+bn+relu twice, pool, linear
        assert_eq!(all.layers.len(), 4);
        let half = quantize_model(&m, &plan_partial_fusion(&m, &FusionPolicy::FuseDeepHalf).unwrap(), &calib).unwrap();
        assert_eq!(half.island_layer_ids(), vec![1]);
        let none = quantize_model(&m, &plan_partial_fusion(&m, &FusionPolicy::FuseNone).unwrap(), &calib).unwrap();
        assert_eq!(none.island_layer_ids(), vec![1, 4]);
        let x = Tensor::full(&[1, 1, 6, 6], 0.5).unwrap();
        let mode = ForwardMode::Adapt(AdaptConfig::default());
        let (_, t) = forward_quantized(&none, &x, mode, true).unwrap();
        assert_eq!(t.unwrap().records.iter().map(|r| r.layer).collect::<Vec<_>>(), vec![1, 4]);
        let (_, t) = forward_quantized(&half, &x, mode, true).unwrap();
        assert_eq!(t.unwrap().records.iter().map(|r| r.layer).collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn close_to_float_and_deterministic() {
        let (m, data, calib) = setup();
        let q = quantize_model(&m, &plan_partial_fusion(&m, &FusionPolicy::FuseAll).unwrap(), &calib).unwrap();
        for x in data.iter().take(10) {
            let (f, _) = forward(&m, x, ForwardMode::Source, false).unwrap();
            let (a, _) = forward_quantized(&q, x, ForwardMode::Source, false).unwrap();
            let (b, _) = forward_quantized(&q, x, ForwardMode::Source, false).unwrap();
            assert_eq!(a, b);
            for (p, r) in a.data().iter().zip(f.data()) {
                assert!((p - r).abs() < 0.1, "{p} vs {r}");
            }
        }
    }

    #[test]
    fn int8_conv_matches_fake_quant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let x = rand_t(&[1, 3, 6, 6], &mut rng, -1.0, 2.0);
            let w = rand_t(&[4, 3, 3, 3], &mut rng, -0.7, 0.7);
            let bias: Vec<f32> = (0..4).map(|_| rng.random_range(-0.5..0.5)).collect();
            let (in_qp, _) = QuantParams::activation(-1.0, 2.0);
            let (wq, wqp) = quantize_weights(w.data());
            let qbias = quantize_bias(&bias, &in_qp, &wqp);
            let mut ops = OpCounts::default();
            let qx = QAct::quantize(&x, in_qp, &mut ops);
            // fake-quant float path on dequantized operands
            let dx = qx.dequantize(&mut ops).unwrap();
            let dw = Tensor::new(w.shape(), wq.iter().map(|&q| wqp.dequantize(q as i32) as f32).collect()).unwrap();
            let db: Vec<f32> = qbias.iter().map(|&b| (b as f64 * in_qp.scale as f64 * wqp.scale as f64) as f32).collect();
            let reference = conv2d(&dx, &dw, &db, 1, 1).unwrap();
            let lo = reference.data().iter().fold(0f32, |a, &v| a.min(v));
            let hi = reference.data().iter().fold(0f32, |a, &v| a.max(v));
            let (out, _) = QuantParams::activation(lo, hi);
            let y = conv_int8(&qx, &wq, [4, 3, 3, 3], wqp.scale, &qbias, 1, 1, &out, false, &mut ops).unwrap();
            for (q, r) in y.data.iter().zip(reference.data()) {
                let got = out.dequantize(*q as i32);
                assert!((got - *r as f64).abs() <= out.scale as f64, "{got} vs {r}");
            }
        }
    }

    #[test]
    fn more_islands_cost_more_float_ops() {
        let (m, data, calib) = setup();
        let count = |policy| {
            let q = quantize_model(&m, &plan_partial_fusion(&m, &policy).unwrap(), &calib).unwrap();
            forward_quantized(&q, &data[0], ForwardMode::Adapt(AdaptConfig::default()), true).unwrap().1.unwrap().ops
        };
        let (all, half, none) = (count(FusionPolicy::FuseAll), count(FusionPolicy::FuseDeepHalf), count(FusionPolicy::FuseNone));
        assert!(all.float_mults < half.float_mults && half.float_mults < none.float_mults);
        assert!(all.dequant < half.dequant && half.dequant < none.dequant);
    }

    #[test]
    fn missing_calibration_is_an_error() {
        let (m, _, mut calib) = setup();
        calib.activations.remove(&1);
        let plan = plan_partial_fusion(&m, &FusionPolicy::FuseNone).unwrap();
        assert!(matches!(quantize_model(&m, &plan, &calib), Err(Error::Config(_))));
        let bad = FusionPlan { unfused: vec![1], fused: vec![] };
        assert!(quantize_model(&m, &bad, &calib).is_err());
    }
}
