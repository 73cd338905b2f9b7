//! Sequential models with paired residual markers, and the forward executor.
//!
//! A [`ModelGraph`] is a flat, ordered list of [`Layer`]s. A layer's id is
//! its index in that list. `ResidualBegin` saves the current activation and
//! the matching `ResidualEnd` adds it back; pairs may nest.
//!
//! The executor hands every normalization layer to a [`NormStage`], which
//! decides how to normalize: frozen source statistics, per-sample
//! adaptation, or a stateful baseline living in the bench harness.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::adapt::{self, AdaptConfig, AdaptRecord, ChannelStats};
use crate::error::{Error, Result};
use crate::ops::OpCounts;
use crate::tensor::{self, ConvGeometry, Tensor};

/// Frozen per-channel source statistics and affine parameters of a normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NormParams {
    pub mu_s: Vec<f32>,
    pub sigma2_s: Vec<f32>,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub eps: f32,
}

impl NormParams {
    pub fn new(mu_s: Vec<f32>, sigma2_s: Vec<f32>, gamma: Vec<f32>, beta: Vec<f32>, eps: f32) -> Result<Self> {
        let p = NormParams { mu_s, sigma2_s, gamma, beta, eps };
        p.validate()?;
        Ok(p)
    }

    /// Unit statistics and identity affine for `c` channels.
    pub fn identity(c: usize, eps: f32) -> Self {
        NormParams { mu_s: vec![0.0; c], sigma2_s: vec![1.0; c], gamma: vec![1.0; c], beta: vec![0.0; c], eps }
    }

    pub fn channels(&self) -> usize {
        self.mu_s.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.mu_s.len();
        if c == 0 || self.sigma2_s.len() != c || self.gamma.len() != c || self.beta.len() != c {
            return Err(Error::shape(
                "NormParams",
                format!(
                    "vector lengths {}/{}/{}/{} must be equal and non-zero",
                    c,
                    self.sigma2_s.len(),
                    self.gamma.len(),
                    self.beta.len()
                ),
            ));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::config("normalization eps must be positive"));
        }
        let finite = |v: &[f32]| v.iter().all(|x| x.is_finite());
        if !(finite(&self.mu_s) && finite(&self.gamma) && finite(&self.beta)) || self.sigma2_s.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::config("normalization parameters must be finite with non-negative variance"));
        }
        Ok(())
    }

    pub fn source_stats(&self) -> ChannelStats {
        ChannelStats {
            mu: self.mu_s.iter().map(|&v| v as f64).collect(),
            sigma2: self.sigma2_s.iter().map(|&v| v as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dLayer {
    /// (C_out, C_in, kH, kW)
    pub weight: Tensor,
    pub bias: Vec<f32>,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    /// (F_out, F_in)
    pub weight: Tensor,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d(Conv2dLayer),
    Linear(LinearLayer),
    /// Frozen normalization.
    BatchNorm(NormParams),
    /// Normalization that adapts per sample in [`ForwardMode::Adapt`].
    AdaptiveNorm(NormParams),
    Relu,
    GlobalAvgPool,
    ResidualBegin,
    ResidualEnd,
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::Linear(_) => "linear",
            Layer::BatchNorm(_) => "batch_norm",
            Layer::AdaptiveNorm(_) => "adaptive_norm",
            Layer::Relu => "relu",
            Layer::GlobalAvgPool => "global_avg_pool",
            Layer::ResidualBegin => "residual_begin",
            Layer::ResidualEnd => "residual_end",
        }
    }

    pub fn norm_params(&self) -> Option<&NormParams> {
        match self {
            Layer::BatchNorm(p) | Layer::AdaptiveNorm(p) => Some(p),
            _ => None,
        }
    }

    pub fn is_norm(&self) -> bool {
        self.norm_params().is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub name: String,
    /// Per-sample input shape, without the batch axis.
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    pub layers: Vec<Layer>,
}

impl ModelGraph {
    /// Build and validate a model.
    pub fn new(name: impl Into<String>, input_shape: Vec<usize>, num_classes: usize, layers: Vec<Layer>) -> Result<Self> {
        let m = ModelGraph { name: name.into(), input_shape, num_classes, layers };
        m.validate()?;
        Ok(m)
    }

    /// Shape inference over the layer list: residual pairing, per-layer
    /// compatibility, and an (N, num_classes) output.
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::config("model must have at least one class"));
        }
        let mut shape = vec![1];
        shape.extend_from_slice(&self.input_shape);
        if shape.len() < 2 || shape.len() > tensor::MAX_RANK || shape.contains(&0) {
            return Err(Error::shape("ModelGraph", format!("invalid input shape {:?}", self.input_shape)));
        }
        let mut saved: Vec<Vec<usize>> = Vec::new();
        for (id, layer) in self.layers.iter().enumerate() {
            let fail = |detail: String| Error::shape("ModelGraph", format!("layer {id} ({}): {detail}", layer.kind_name()));
            shape = match layer {
                Layer::Conv2d(conv) => {
                    if conv.bias.len() != conv.weight.shape()[0] {
                        return Err(fail(format!("{} biases for {} filters", conv.bias.len(), conv.weight.shape()[0])));
                    }
                    let g = ConvGeometry::new(&shape, conv.weight.shape(), conv.stride, conv.padding).map_err(|e| fail(format!("{e}")))?;
                    g.output_shape().to_vec()
                }
                Layer::Linear(lin) => {
                    let ws = lin.weight.shape();
                    if shape.len() != 2 || ws.len() != 2 || ws[1] != shape[1] || lin.bias.len() != ws[0] {
                        return Err(fail(format!("input {shape:?}, weight {ws:?}, {} biases", lin.bias.len())));
                    }
                    vec![shape[0], ws[0]]
                }
                Layer::BatchNorm(p) | Layer::AdaptiveNorm(p) => {
                    p.validate().map_err(|e| fail(format!("{e}")))?;
                    if p.channels() != shape[1] {
                        return Err(fail(format!("{} channels, activation has {}", p.channels(), shape[1])));
                    }
                    shape
                }
                Layer::Relu => shape,
                Layer::GlobalAvgPool => {
                    if shape.len() != 4 {
                        return Err(fail(format!("needs rank-4 input, got {shape:?}")));
                    }
                    vec![shape[0], shape[1]]
                }
                Layer::ResidualBegin => {
                    saved.push(shape.clone());
                    shape
                }
                Layer::ResidualEnd => {
                    let skip = saved.pop().ok_or_else(|| fail("no matching residual_begin".into()))?;
                    if skip != shape {
                        return Err(fail(format!("skip {skip:?} vs branch {shape:?}")));
                    }
                    shape
                }
            };
        }
        if !saved.is_empty() {
            return Err(Error::shape("ModelGraph", format!("{} unclosed residual_begin marker(s)", saved.len())));
        }
        if shape != [1, self.num_classes] {
            return Err(Error::shape("ModelGraph", format!("output {shape:?} is not (N, {})", self.num_classes)));
        }
        Ok(())
    }

    /// Ids of normalization layers, shallowest first.
    pub fn norm_layer_ids(&self) -> Vec<usize> {
        self.layers.iter().enumerate().filter(|(_, l)| l.is_norm()).map(|(i, _)| i).collect()
    }

    pub fn adaptive_layer_ids(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Layer::AdaptiveNorm(_)))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape().get(1..) != Some(self.input_shape.as_slice()) {
            return Err(Error::shape(
                "forward",
                format!("input {:?} does not match model input (N, {:?})", input.shape(), self.input_shape),
            ));
        }
        Ok(())
    }

    /// Copy of the model in which exactly the norm layers in `ids` are adaptive
    /// and every other norm layer is frozen.
    pub fn with_adaptive_set(&self, ids: &[usize]) -> Result<Self> {
        let norm = self.norm_layer_ids();
        if let Some(bad) = ids.iter().find(|i| !norm.contains(i)) {
            return Err(Error::config(format!("layer {bad} is not a normalization layer")));
        }
        let mut out = self.clone();
        for (id, layer) in out.layers.iter_mut().enumerate() {
            if let Some(p) = layer.norm_params() {
                let p = p.clone();
                *layer = if ids.contains(&id) { Layer::AdaptiveNorm(p) } else { Layer::BatchNorm(p) };
            }
        }
        Ok(out)
    }
}

/// Turn frozen normalization layers into adaptive ones with identical parameters.
///
/// With `ids = None` every `BatchNorm` is replaced and the model must contain
/// at least one. With `Some(ids)` only the listed norm layers are replaced.
pub fn replace_norm_layers(model: &ModelGraph, ids: Option<&[usize]>) -> Result<ModelGraph> {
    let norm = model.norm_layer_ids();
    let targets: Vec<usize> = match ids {
        None => {
            let bn: Vec<usize> = norm.iter().copied().filter(|&i| matches!(model.layers[i], Layer::BatchNorm(_))).collect();
            if bn.is_empty() {
                return Err(Error::Empty("set of batch-norm layers to replace"));
            }
            bn
        }
        Some(ids) => {
            if let Some(bad) = ids.iter().find(|i| !norm.contains(i)) {
                return Err(Error::config(format!("layer {bad} is not a normalization layer")));
            }
            ids.to_vec()
        }
    };
    let mut out = model.clone();
    for id in targets {
        if let Layer::BatchNorm(p) = &out.layers[id] {
            out.layers[id] = Layer::AdaptiveNorm(p.clone());
        }
    }
    Ok(out)
}

/// How the forward pass treats adaptive normalization layers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ForwardMode {
    /// Frozen source statistics everywhere.
    Source,
    /// Per-sample adaptation in every `AdaptiveNorm` layer; `BatchNorm` stays frozen.
    Adapt(AdaptConfig),
}

/// Per-layer adaptation records and operation counts of one forward call.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ForwardTrace {
    pub records: Vec<AdaptRecord>,
    pub ops: OpCounts,
    /// Set when a batch larger than one was pooled into shared moments.
    pub pooled_batch: bool,
}

impl ForwardTrace {
    pub fn divergences(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.d).collect()
    }
}

/// Strategy for normalization layers during a forward pass.
pub trait NormStage {
    fn normalize(
        &mut self,
        layer: usize,
        adaptive: bool,
        x: &Tensor,
        params: &NormParams,
        ops: &mut OpCounts,
    ) -> Result<Tensor>;
}

/// Frozen statistics for every layer.
pub struct SourceStage;

impl NormStage for SourceStage {
    fn normalize(&mut self, _: usize, _: bool, x: &Tensor, params: &NormParams, ops: &mut OpCounts) -> Result<Tensor> {
        adapt::frozen_normalize_counted(x, params, ops)
    }
}

/// Per-sample adaptation for adaptive layers, optionally recording each step.
pub struct AdaptStage {
    pub config: AdaptConfig,
    pub records: Option<Vec<AdaptRecord>>,
}

impl NormStage for AdaptStage {
    fn normalize(&mut self, layer: usize, adaptive: bool, x: &Tensor, params: &NormParams, ops: &mut OpCounts) -> Result<Tensor> {
        if !adaptive {
            return adapt::frozen_normalize_counted(x, params, ops);
        }
        let (y, mut rec) = adapt::adaptive_normalize_counted(x, params, &self.config, ops)?;
        if let Some(records) = self.records.as_mut() {
            rec.layer = layer;
            records.push(rec);
        }
        Ok(y)
    }
}

/// Run `model` on `input`. In adapt mode every adaptive layer adapts to the
/// activation it receives, which already reflects earlier adapted layers.
pub fn forward(model: &ModelGraph, input: &Tensor, mode: ForwardMode, trace: bool) -> Result<(Tensor, Option<ForwardTrace>)> {
    let mut ops = OpCounts::default();
    match mode {
        ForwardMode::Source => {
            let y = forward_with(model, input, &mut SourceStage, None, &mut ops)?;
            Ok((y, trace.then(|| ForwardTrace { ops, ..Default::default() })))
        }
        ForwardMode::Adapt(config) => {
            config.validate()?;
            let mut stage = AdaptStage { config, records: trace.then(Vec::new) };
            let y = forward_with(model, input, &mut stage, None, &mut ops)?;
            Ok((
                y,
                stage.records.map(|records| ForwardTrace { records, ops, pooled_batch: input.batch() > 1 }),
            ))
        }
    }
}

/// Observer callback: `(layer id, output of that layer)`.
pub type LayerObserver<'a> = &'a mut dyn FnMut(usize, &Tensor);

/// The forward executor behind [`forward`].
pub fn forward_with(
    model: &ModelGraph,
    input: &Tensor,
    stage: &mut dyn NormStage,
    mut observer: Option<LayerObserver<'_>>,
    ops: &mut OpCounts,
) -> Result<Tensor> {
    model.check_input(input)?;
    let mut x = input.clone();
    let mut saved: Vec<Tensor> = Vec::new();
    for (id, layer) in model.layers.iter().enumerate() {
        x = run_layer(id, layer, x, &mut saved, stage, ops).map_err(|e| e.at_layer(id))?;
        if let Some(obs) = observer.as_mut() {
            obs(id, &x);
        }
    }
    Ok(x)
}

fn run_layer(
    id: usize,
    layer: &Layer,
    x: Tensor,
    saved: &mut Vec<Tensor>,
    stage: &mut dyn NormStage,
    ops: &mut OpCounts,
) -> Result<Tensor> {
    Ok(match layer {
        Layer::Conv2d(c) => {
            let g = ConvGeometry::new(x.shape(), c.weight.shape(), c.stride, c.padding)?;
            ops.float_mults += g.macs();
            tensor::conv2d(&x, &c.weight, &c.bias, c.stride, c.padding)?
        }
        Layer::Linear(l) => {
            ops.float_mults += (x.batch() * l.weight.numel()) as u64;
            tensor::linear(&x, &l.weight, &l.bias)?
        }
        Layer::BatchNorm(p) => stage.normalize(id, false, &x, p, ops)?,
        Layer::AdaptiveNorm(p) => stage.normalize(id, true, &x, p, ops)?,
        Layer::Relu => tensor::relu(&x),
        Layer::GlobalAvgPool => {
            ops.float_mults += (x.batch() * x.channels()) as u64;
            tensor::global_avg_pool(&x)?
        }
        Layer::ResidualBegin => {
            saved.push(x.clone());
            x
        }
        Layer::ResidualEnd => {
            let skip = saved.pop().ok_or_else(|| Error::shape("forward", "unmatched residual_end"))?;
            tensor::residual_add(&skip, &x)?
        }
    })
}
