use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::borrow::Borrow;
use core::fmt;

use super::metrics;
use crate::adapt::{self, AdaptConfig, ChannelStats, DistanceMode};
use crate::error::{Error, Result};
use crate::graph::{forward_with, AdaptStage, ModelGraph, NormParams, NormStage, SourceStage};
use crate::ops::OpCounts;
use crate::quant::{forward_quantized_with, QuantizedModel};
use crate::shift::{ShiftKind, StreamItem};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvalMode {
    Source,
    Adapt(AdaptConfig),
    /// Instance statistics replace source statistics outright.
    NaiveReplace,
    /// Stateful baseline: exponential running average of instance statistics
    /// carried across the whole stream.
    RunningAvg { momentum: f64 },
}

impl EvalMode {
    pub fn name(&self) -> &'static str {
        match self {
            EvalMode::Source => "source",
            EvalMode::Adapt(_) => "adapt",
            EvalMode::NaiveReplace => "naive",
            EvalMode::RunningAvg { .. } => "running-avg",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EvalMode::Adapt(cfg) => cfg.validate(),
            EvalMode::RunningAvg { momentum } if !(0.0..=1.0).contains(momentum) => {
                Err(Error::config(format!("running-average momentum must be in [0, 1], got {momentum}")))
            }
            _ => Ok(()),
        }
    }

    /// Metadata entries describing this mode.
    pub fn describe(&self) -> Vec<(&'static str, String)> {
        let mut out = alloc::vec![("mode", String::from(self.name()))];
        let cfg = match self {
            EvalMode::Adapt(cfg) => Some(*cfg),
            EvalMode::NaiveReplace => Some(AdaptConfig::naive_replace()),
            _ => None,
        };
        if let Some(cfg) = cfg {
            out.push(("tau", cfg.tau.to_string()));
            out.push(("lambda", cfg.lambda.to_string()));
            out.push(("eps_inv", cfg.eps_inv.to_string()));
            out.push(("eps_norm", cfg.eps_norm.map_or_else(|| String::from("layer"), |e| e.to_string())));
            out.push(("distance_mode", String::from(distance_name(cfg.distance_mode))));
        }
        if let EvalMode::RunningAvg { momentum } = self {
            out.push(("momentum", momentum.to_string()));
        }
        out
    }

    fn stage(&self) -> Box<dyn NormStage> {
        match *self {
            EvalMode::Source => Box::new(SourceStage),
            EvalMode::Adapt(config) => Box::new(AdaptStage { config, records: Some(Vec::new()) }),
            EvalMode::NaiveReplace => Box::new(AdaptStage { config: AdaptConfig::naive_replace(), records: Some(Vec::new()) }),
            EvalMode::RunningAvg { momentum } => Box::new(RunningAvgStage::new(momentum)),
        }
    }
}

pub fn distance_name(mode: DistanceMode) -> &'static str {
    match mode {
        DistanceMode::RawSum => "raw",
        DistanceMode::ChannelMean => "channel-mean",
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Running averages of instance statistics per adaptive layer, initialized
/// from the source statistics and never reset.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningAvgStage {
    pub momentum: f64,
    state: BTreeMap<usize, ChannelStats>,
}

impl RunningAvgStage {
    pub fn new(momentum: f64) -> Self {
        RunningAvgStage { momentum, state: BTreeMap::new() }
    }

    pub fn state(&self, layer: usize) -> Option<&ChannelStats> {
        self.state.get(&layer)
    }
}

impl NormStage for RunningAvgStage {
    fn normalize(&mut self, layer: usize, adaptive: bool, x: &Tensor, params: &NormParams, ops: &mut OpCounts) -> Result<Tensor> {
        if !adaptive {
            return adapt::frozen_normalize_counted(x, params, ops);
        }
        let inst = adapt::instance_stats_counted(x, ops);
        params.source_stats().check_pair(&inst, "running_average")?;
        let m = self.momentum;
        let run = self.state.entry(layer).or_insert_with(|| params.source_stats());
        for c in 0..run.channels() {
            run.mu[c] = m * run.mu[c] + (1.0 - m) * inst.mu[c];
            run.sigma2[c] = m * run.sigma2[c] + (1.0 - m) * inst.sigma2[c];
        }
        *ops += OpCounts::float(4 * run.channels() as u64);
        adapt::normalize_counted(x, run, &params.gamma, &params.beta, params.eps as f64, ops)
    }
}

/// What to evaluate: the float graph or its int8 counterpart.
#[derive(Debug, Clone, Copy)]
pub enum EvalTarget<'a> {
    Float(&'a ModelGraph),
    Quantized(&'a QuantizedModel),
}

impl EvalTarget<'_> {
    pub fn name(&self) -> &str {
        match self {
            EvalTarget::Float(m) => &m.name,
            EvalTarget::Quantized(q) => &q.name,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            EvalTarget::Float(_) => "float",
            EvalTarget::Quantized(_) => "int8",
        }
    }

    /// Layers that adapt in non-source modes.
    pub fn adaptive_layers(&self) -> Vec<usize> {
        match self {
            EvalTarget::Float(m) => m.adaptive_layer_ids(),
            EvalTarget::Quantized(q) => q.island_layer_ids(),
        }
    }

    pub fn run(&self, input: &Tensor, stage: &mut dyn NormStage, ops: &mut OpCounts) -> Result<Tensor> {
        match self {
            EvalTarget::Float(m) => forward_with(m, input, stage, None, ops),
            EvalTarget::Quantized(q) => forward_quantized_with(q, input, stage, ops),
        }
    }

    fn describe(&self) -> Vec<(&'static str, String)> {
        let ids: Vec<String> = self.adaptive_layers().iter().map(|i| i.to_string()).collect();
        let mut out = alloc::vec![
            ("model", String::from(self.name())),
            ("target", String::from(self.kind())),
            ("adaptive_layers", ids.join(",")),
        ];
        if let EvalTarget::Quantized(q) = self {
            let fused: Vec<String> = q.plan.fused.iter().map(|i| i.to_string()).collect();
            out.push(("fused_layers", fused.join(",")));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SampleRecord {
    pub id: u64,
    pub label: usize,
    /// `None` when the forward pass failed.
    pub predicted: Option<usize>,
    pub shift_kind: ShiftKind,
    pub severity: u8,
    /// Divergence of each adaptive layer, in layer order. Empty outside
    /// adaptive modes or without tracing.
    pub divergences: Vec<f64>,
    pub error: Option<String>,
}

impl SampleRecord {
    pub fn correct(&self) -> bool {
        self.predicted == Some(self.label)
    }
}

/// Result of one pass over a stream. Aggregates are `None` for an empty stream.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RunReport {
    pub meta: BTreeMap<String, String>,
    pub records: Vec<SampleRecord>,
    pub accuracy: Option<f64>,
    pub weighted_f1: Option<f64>,
    pub ops: OpCounts,
    /// Filled in by callers that have a clock; never part of comparisons that
    /// need to be reproducible.
    pub wall_time_ms: Option<f64>,
}

impl RunReport {
    pub fn from_records(meta: BTreeMap<String, String>, records: Vec<SampleRecord>, ops: OpCounts) -> Self {
        let (accuracy, weighted_f1) = aggregate(&records);
        RunReport { meta, records, accuracy, weighted_f1, ops, wall_time_ms: None }
    }

    /// Accuracy and weighted F1 recomputed from the per-sample records.
    pub fn recompute(&self) -> (Option<f64>, Option<f64>) {
        aggregate(&self.records)
    }

    pub fn predictions_by_id(&self) -> BTreeMap<u64, Option<usize>> {
        self.records.iter().map(|r| (r.id, r.predicted)).collect()
    }

    pub fn error_count(&self) -> usize {
        self.records.iter().filter(|r| r.error.is_some()).count()
    }

    /// Mean divergence per adaptive layer over traced samples.
    pub fn mean_divergences(&self) -> Vec<f64> {
        let traced: Vec<&Vec<f64>> = self.records.iter().map(|r| &r.divergences).filter(|d| !d.is_empty()).collect();
        let Some(width) = traced.first().map(|d| d.len()) else { return Vec::new() };
        (0..width).map(|l| traced.iter().map(|d| d[l]).sum::<f64>() / traced.len() as f64).collect()
    }

    pub fn accuracy_or_err(&self) -> Result<f64> {
        self.accuracy.ok_or(Error::Empty("evaluation stream"))
    }
}

fn aggregate(records: &[SampleRecord]) -> (Option<f64>, Option<f64>) {
    let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
    let preds: Vec<Option<usize>> = records.iter().map(|r| r.predicted).collect();
    (metrics::accuracy(&labels, &preds).ok(), metrics::weighted_f1(&labels, &preds).ok())
}

fn run_one(target: EvalTarget<'_>, item: &StreamItem, stage: &mut dyn NormStage, ops: &mut OpCounts) -> Result<usize> {
    if item.input.batch() != 1 {
        return Err(Error::shape("evaluate_stream", format!("stream samples need batch 1, got {:?}", item.input.shape())));
    }
    let logits = target.run(&item.input, stage, ops)?;
    Ok(logits.argmax_rows()?[0])
}

/// Classify every stream item one at a time. Adaptive modes start from a
/// fresh stage for each sample; the running-average baseline keeps one stage
/// for the whole stream. Per-sample failures are recorded, not returned.
pub fn evaluate_stream<I, B>(target: EvalTarget<'_>, stream: I, mode: EvalMode, trace: bool) -> Result<RunReport>
where
    I: IntoIterator<Item = B>,
    B: Borrow<StreamItem>,
{
    mode.validate()?;
    let mut meta: BTreeMap<String, String> = BTreeMap::new();
    for (k, v) in target.describe().into_iter().chain(mode.describe()) {
        meta.insert(String::from(k), v);
    }
    let mut ops = OpCounts::default();
    let mut running = match mode {
        EvalMode::RunningAvg { momentum } => Some(RunningAvgStage::new(momentum)),
        _ => None,
    };
    let mut records = Vec::new();
    for item in stream {
        let item = item.borrow();
        let mut sample_ops = OpCounts::default();
        let (outcome, divergences) = match (mode, running.as_mut()) {
            (EvalMode::RunningAvg { .. }, Some(stage)) => (run_one(target, item, stage, &mut sample_ops), Vec::new()),
            (EvalMode::Adapt(_) | EvalMode::NaiveReplace, _) => {
                let config = match mode {
                    EvalMode::Adapt(c) => c,
                    _ => AdaptConfig::naive_replace(),
                };
                let mut stage = AdaptStage { config, records: trace.then(Vec::new) };
                let outcome = run_one(target, item, &mut stage, &mut sample_ops);
                (outcome, stage.records.unwrap_or_default().iter().map(|r| r.d).collect())
            }
            _ => (run_one(target, item, &mut SourceStage, &mut sample_ops), Vec::new()),
        };
        let (predicted, error) = match outcome {
            Ok(p) => {
                ops += sample_ops;
                (Some(p), None)
            }
            Err(e) => (None, Some(e.to_string())),
        };
        records.push(SampleRecord {
            id: item.id,
            label: item.label,
            predicted,
            shift_kind: item.shift.kind,
            severity: item.shift.severity,
            divergences,
            error,
        });
    }
    Ok(RunReport::from_records(meta, records, ops))
}

/// Operation counts of one forward pass of `input` under `mode`.
pub fn profile_ops(target: EvalTarget<'_>, input: &Tensor, mode: EvalMode) -> Result<OpCounts> {
    mode.validate()?;
    let mut ops = OpCounts::default();
    target.run(input, mode.stage().as_mut(), &mut ops)?;
    Ok(ops)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{replace_norm_layers, Layer, LinearLayer};
    use crate::rng::rng;
    use crate::shift::{ShiftSpec, StreamItem};
    use alloc::vec;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn model() -> ModelGraph {
        let mut r = rng(7);
        let mut lin = |o: usize, i: usize| {
            Layer::Linear(LinearLayer {
                weight: Tensor::from_fn(&[o, i], |_| r.random_range(-1.0..1.0)).unwrap(),
                bias: vec![0.1; o],
            })
        };
        let layers = vec![
            lin(6, 4),
            Layer::BatchNorm(NormParams::new(vec![0.2; 6], vec![1.5; 6], vec![1.1; 6], vec![0.05; 6], 1e-5).unwrap()),
            Layer::Relu,
            lin(6, 6),
            Layer::BatchNorm(NormParams::new(vec![-0.1; 6], vec![0.7; 6], vec![0.9; 6], vec![0.0; 6], 1e-5).unwrap()),
            Layer::Relu,
            lin(3, 6),
        ];
        replace_norm_layers(&ModelGraph::new("m", vec![4], 3, layers).unwrap(), None).unwrap()
    }

    fn stream(n: usize, seed: u64) -> Vec<StreamItem> {
        let mut r = rng(seed);
        (0..n)
            .map(|i| StreamItem {
                id: i as u64,
                source_index: i,
                input: Tensor::from_fn(&[1, 4], |_| r.random_range(-2.0..2.0)).unwrap(),
                label: i % 3,
                shift: ShiftSpec::identity(),
            })
            .collect()
    }

    #[test]
    fn tau_one_matches_source() {
        let m = model();
        let s = stream(50, 1);
        let src = evaluate_stream(EvalTarget::Float(&m), &s, EvalMode::Source, false).unwrap();
        let ad = evaluate_stream(EvalTarget::Float(&m), &s, EvalMode::Adapt(AdaptConfig::new(1.0, 0.3).unwrap()), true).unwrap();
        assert_eq!(src.predictions_by_id(), ad.predictions_by_id());
        assert_eq!(src.accuracy, ad.accuracy);
        assert_eq!(ad.records[0].divergences.len(), 2);
    }

    #[test]
    fn naive_is_adapt_at_zero() {
        let m = model();
        let s = stream(40, 2);
        let a = evaluate_stream(EvalTarget::Float(&m), &s, EvalMode::NaiveReplace, false).unwrap();
        let b = evaluate_stream(EvalTarget::Float(&m), &s, EvalMode::Adapt(AdaptConfig::new(0.0, 0.0).unwrap()), false).unwrap();
        assert_eq!(a.predictions_by_id(), b.predictions_by_id());
    }

    #[test]
    fn adapt_is_order_free_running_avg_is_not() {
        let m = model();
        let s = stream(60, 3);
        let mut shuffled = s.clone();
        shuffled.shuffle(&mut rng(4));
        let mode = EvalMode::Adapt(AdaptConfig::default());
        let a = evaluate_stream(EvalTarget::Float(&m), &s, mode, false).unwrap();
        let b = evaluate_stream(EvalTarget::Float(&m), &shuffled, mode, false).unwrap();
        assert_eq!(a.predictions_by_id(), b.predictions_by_id());

        let mut stage = RunningAvgStage::new(0.9);
        let x = Tensor::full(&[1, 4], 1.0).unwrap();
        EvalTarget::Float(&m).run(&x, &mut stage, &mut OpCounts::default()).unwrap();
        let first = stage.state(1).unwrap().clone();
        EvalTarget::Float(&m).run(&x, &mut stage, &mut OpCounts::default()).unwrap();
        assert_ne!(&first, stage.state(1).unwrap());
    }

    #[test]
    fn per_sample_errors_are_recorded() {
        let m = model();
        let mut s = stream(5, 5);
        s[2].input = Tensor::zeros(&[1, 3]).unwrap();
        let r = evaluate_stream(EvalTarget::Float(&m), &s, EvalMode::Source, false).unwrap();
        assert_eq!(r.error_count(), 1);
        assert_eq!(r.records[2].predicted, None);
        assert_eq!(r.recompute(), (r.accuracy, r.weighted_f1));
        let empty: Vec<StreamItem> = vec![];
        let r = evaluate_stream(EvalTarget::Float(&m), &empty, EvalMode::Source, false).unwrap();
        assert_eq!(r.accuracy, None);
        assert!(evaluate_stream(EvalTarget::Float(&m), &s, EvalMode::RunningAvg { momentum: 2.0 }, false).is_err());
    }

    #[test]
    fn adapt_overhead_is_exact() {
        let m = model();
        let x = Tensor::from_fn(&[1, 4], |i| i as f32 * 0.3 - 0.5).unwrap();
        let src = profile_ops(EvalTarget::Float(&m), &x, EvalMode::Source).unwrap();
        let ad = profile_ops(EvalTarget::Float(&m), &x, EvalMode::Adapt(AdaptConfig::default())).unwrap();
        // per adaptive layer with E = C = 6: E + 12·C + 1
        assert_eq!(ad.float_mults - src.float_mults, 2 * (6 + 12 * 6 + 1));
        let cm = AdaptConfig::default().with_distance_mode(DistanceMode::ChannelMean);
        let ad_cm = profile_ops(EvalTarget::Float(&m), &x, EvalMode::Adapt(cm)).unwrap();
        assert_eq!(ad_cm.float_mults - ad.float_mults, 2);
        assert_eq!(src, profile_ops(EvalTarget::Float(&m), &x, EvalMode::Source).unwrap());
    }
}
