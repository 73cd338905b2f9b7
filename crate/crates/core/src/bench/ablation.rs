use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use super::eval::{evaluate_stream, EvalMode, EvalTarget};
use crate::adapt::AdaptConfig;
use crate::error::{Error, Result};
use crate::graph::ModelGraph;
use crate::shift::StreamItem;

/// Order in which norm layers gain or lose adaptation. Point `k` of a curve
/// always has exactly `k` adaptive layers, so `k = 0` is the frozen model and
/// `k = L` adapts every norm layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum AblationDirection {
    /// Start from full adaptation and remove it from the shallowest layers
    /// first: point `k` adapts the deepest `k` layers.
    DropShallowFirst,
    /// Start from the shallowest layer and add deeper ones: point `k` adapts
    /// the shallowest `k` layers.
    AddDeepProgressively,
}

impl AblationDirection {
    pub fn name(self) -> &'static str {
        match self {
            AblationDirection::DropShallowFirst => "drop-shallow",
            AblationDirection::AddDeepProgressively => "add-deep",
        }
    }
}

impl fmt::Display for AblationDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drop-shallow" => Ok(AblationDirection::DropShallowFirst),
            "add-deep" => Ok(AblationDirection::AddDeepProgressively),
            _ => Err(Error::config(format!("unknown ablation direction {s:?}"))),
        }
    }
}

/// Adaptive subsets for `k = 0..=L` over norm layer ids in depth order.
pub fn ablation_subsets(norm_ids: &[usize], direction: AblationDirection) -> Vec<Vec<usize>> {
    let l = norm_ids.len();
    (0..=l)
        .map(|k| match direction {
            AblationDirection::DropShallowFirst => norm_ids[l - k..].to_vec(),
            AblationDirection::AddDeepProgressively => norm_ids[..k].to_vec(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AblationPoint {
    pub k: usize,
    pub adaptive_layers: Vec<usize>,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AblationCurve {
    pub direction: AblationDirection,
    pub points: Vec<AblationPoint>,
}

/// Accuracy with exactly `adaptive` norm layers adapting under `config`.
pub fn ablation_point(model: &ModelGraph, stream: &[StreamItem], adaptive: &[usize], config: AdaptConfig) -> Result<f64> {
    let variant = model.with_adaptive_set(adaptive)?;
    evaluate_stream(EvalTarget::Float(&variant), stream, EvalMode::Adapt(config), false)?.accuracy_or_err()
}

pub fn layer_ablation(
    model: &ModelGraph,
    stream: &[StreamItem],
    direction: AblationDirection,
    config: AdaptConfig,
) -> Result<AblationCurve> {
    let norm = model.norm_layer_ids();
    if norm.is_empty() {
        return Err(Error::Empty("set of normalization layers"));
    }
    let points = ablation_subsets(&norm, direction)
        .into_iter()
        .enumerate()
        .map(|(k, ids)| Ok(AblationPoint { k, accuracy: ablation_point(model, stream, &ids, config)?, adaptive_layers: ids }))
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationCurve { direction, points })
}
