use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::{Layer, ModelGraph};

/// Which normalization layers to keep unfused (and therefore adaptive).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FusionPolicy {
    FuseAll,
    FuseNone,
    /// Keep the shallowest `ceil(L/2)` norm layers unfused, fuse the rest.
    FuseDeepHalf,
    /// Keep exactly these norm layer ids unfused.
    Explicit(Vec<usize>),
}

impl FromStr for FusionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(FusionPolicy::FuseAll),
            "none" => Ok(FusionPolicy::FuseNone),
            "deep-half" => Ok(FusionPolicy::FuseDeepHalf),
            _ => {
                let ids = s
                    .strip_prefix("explicit:")
                    .ok_or_else(|| Error::config(format!("unknown fusion policy {s:?}")))?;
                let ids = ids
                    .split(',')
                    .filter(|t| !t.trim().is_empty())
                    .map(|t| t.trim().parse::<usize>().map_err(|_| Error::config(format!("bad layer id {t:?}"))))
                    .collect::<Result<Vec<_>>>()?;
                Ok(FusionPolicy::Explicit(ids))
            }
        }
    }
}

impl fmt::Display for FusionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FusionPolicy::FuseAll => f.write_str("all"),
            FusionPolicy::FuseNone => f.write_str("none"),
            FusionPolicy::FuseDeepHalf => f.write_str("deep-half"),
            FusionPolicy::Explicit(ids) => {
                let ids: Vec<String> = ids.iter().map(|i| format!("{i}")).collect();
                write!(f, "explicit:{}", ids.join(","))
            }
        }
    }
}

/// Partition of the norm layers into an unfused (adaptive) set and a fused set.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FusionPlan {
    pub unfused: Vec<usize>,
    pub fused: Vec<usize>,
}

impl FusionPlan {
    pub fn is_unfused(&self, id: usize) -> bool {
        self.unfused.contains(&id)
    }
}

fn fusable(model: &ModelGraph, id: usize) -> bool {
    id > 0 && matches!(model.layers[id - 1], Layer::Conv2d(_) | Layer::Linear(_))
}

pub fn plan_partial_fusion(model: &ModelGraph, policy: &FusionPolicy) -> Result<FusionPlan> {
    let norm = model.norm_layer_ids();
    if norm.is_empty() {
        return Err(Error::Empty("set of normalization layers"));
    }
    let unfused: Vec<usize> = match policy {
        FusionPolicy::FuseAll => Vec::new(),
        FusionPolicy::FuseNone => norm.clone(),
        FusionPolicy::FuseDeepHalf => norm[..norm.len().div_ceil(2)].to_vec(),
        FusionPolicy::Explicit(ids) => {
            if let Some(bad) = ids.iter().find(|i| !norm.contains(i)) {
                return Err(Error::config(format!("layer {bad} is not a normalization layer")));
            }
            norm.iter().copied().filter(|i| ids.contains(i)).collect()
        }
    };
    let fused: Vec<usize> = norm.iter().copied().filter(|i| !unfused.contains(i)).collect();
    if let Some(bad) = fused.iter().find(|&&i| !fusable(model, i)) {
        return Err(Error::config(format!("norm layer {bad} does not follow a conv/linear layer and cannot be fused")));
    }
    Ok(FusionPlan { unfused, fused })
}
