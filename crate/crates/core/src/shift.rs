//! Synthetic distribution shifts and labeled test streams.
//!
//! Each corruption kind has five severities. The parameters are defined here
//! for small synthetic data and do not reproduce any published corruption
//! benchmark:
//!
//! | kind           | parameter            | severity 1..5                       |
//! |----------------|----------------------|-------------------------------------|
//! | GaussianNoise  | noise std            | 0.04, 0.08, 0.12, 0.18, 0.26        |
//! | ShotNoise      | variance factor `c`  | 0.01, 0.02, 0.04, 0.07, 0.12        |
//! | Brightness     | additive offset      | 0.1, 0.2, 0.3, 0.4, 0.5             |
//! | Contrast       | factor about mean    | 0.75, 0.6, 0.45, 0.3, 0.15          |
//! | BoxBlur        | radius in pixels     | 1, 2, 3, 4, 5                       |
//! | MeanShift      | additive offset      | 0.2·s                               |
//! | ScaleShift     | multiplicative factor| 1 + 0.15·s                          |
//!
//! Shot noise is approximated by Gaussian noise with variance `x·c`. Image
//! kinds (brightness, contrast, blur) need rank-4 input; noise applies to any
//! rank; mean/scale shifts are meant for feature vectors. Rank-4 outputs of
//! noise, brightness and contrast are clamped to `[0, 1]`.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng};
use crate::tensor::Tensor;

const GAUSSIAN_STD: [f32; 5] = [0.04, 0.08, 0.12, 0.18, 0.26];
const SHOT_FACTOR: [f32; 5] = [0.01, 0.02, 0.04, 0.07, 0.12];
const BRIGHTNESS: [f32; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];
const CONTRAST: [f32; 5] = [0.75, 0.6, 0.45, 0.3, 0.15];

/// Severity sequence of one domain in a gradual stream.
pub const GRADUAL_SEVERITIES: [u8; 9] = [1, 2, 3, 4, 5, 4, 3, 2, 1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ShiftKind {
    Identity,
    GaussianNoise,
    ShotNoise,
    Brightness,
    Contrast,
    BoxBlur,
    MeanShift,
    ScaleShift,
}

impl ShiftKind {
    pub const ALL: [ShiftKind; 8] = [
        ShiftKind::Identity,
        ShiftKind::GaussianNoise,
        ShiftKind::ShotNoise,
        ShiftKind::Brightness,
        ShiftKind::Contrast,
        ShiftKind::BoxBlur,
        ShiftKind::MeanShift,
        ShiftKind::ScaleShift,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShiftKind::Identity => "identity",
            ShiftKind::GaussianNoise => "gaussian-noise",
            ShiftKind::ShotNoise => "shot-noise",
            ShiftKind::Brightness => "brightness",
            ShiftKind::Contrast => "contrast",
            ShiftKind::BoxBlur => "box-blur",
            ShiftKind::MeanShift => "mean-shift",
            ShiftKind::ScaleShift => "scale-shift",
        }
    }

    /// Stable numeric tag used by file formats.
    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }

    fn image_only(self) -> bool {
        matches!(self, ShiftKind::Brightness | ShiftKind::Contrast | ShiftKind::BoxBlur)
    }
}

impl fmt::Display for ShiftKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShiftKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown shift kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ShiftSpec {
    pub kind: ShiftKind,
    pub severity: u8,
}

impl ShiftSpec {
    pub fn new(kind: ShiftKind, severity: u8) -> Result<Self> {
        if kind != ShiftKind::Identity && !(1..=5).contains(&severity) {
            return Err(Error::config(format!("severity must be 1..=5, got {severity}")));
        }
        Ok(ShiftSpec { kind, severity })
    }

    pub fn identity() -> Self {
        ShiftSpec { kind: ShiftKind::Identity, severity: 0 }
    }

    fn level(&self) -> usize {
        self.severity as usize - 1
    }
}

/// Inputs with class labels. Each input carries a leading batch extent of 1.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub inputs: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn new(inputs: Vec<Tensor>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::shape("LabeledDataset", format!("{} inputs, {} labels", inputs.len(), labels.len())));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::config(format!("label {l} out of range for {num_classes} classes")));
        }
        if let Some(first) = inputs.first() {
            if let Some(bad) = inputs.iter().find(|t| t.shape() != first.shape() || t.batch() != 1) {
                return Err(Error::shape("LabeledDataset", format!("sample {:?} vs {:?}", bad.shape(), first.shape())));
            }
        }
        Ok(LabeledDataset { inputs, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Per-sample shape without the batch axis.
    pub fn sample_shape(&self) -> Option<&[usize]> {
        self.inputs.first().map(|t| &t.shape()[1..])
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        LabeledDataset {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Deterministic shuffled split into (first `n_first`, rest).
    pub fn split(&self, n_first: usize, seed: u64) -> (Self, Self) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut rng(seed));
        let n = n_first.min(idx.len());
        (self.subset(&idx[..n]), self.subset(&idx[n..]))
    }
}

/// Apply one corruption. Output shape equals input shape; the same seed gives
/// the same output.
pub fn apply_corruption(x: &Tensor, spec: ShiftSpec, seed: u64) -> Result<Tensor> {
    let spec = ShiftSpec::new(spec.kind, spec.severity)?;
    let image = x.rank() == 4;
    if spec.kind.image_only() && !image {
        return Err(Error::Unsupported(format!("{} needs rank-4 image input, got {:?}", spec.kind, x.shape())));
    }
    let clamp = |v: f32| if image { v.clamp(0.0, 1.0) } else { v };
    match spec.kind {
        ShiftKind::Identity => Ok(x.clone()),
        ShiftKind::GaussianNoise => {
            let std = GAUSSIAN_STD[spec.level()];
            let mut r = rng(seed);
            let data = x
                .data()
                .iter()
                .map(|&v| {
                    let z: f32 = StandardNormal.sample(&mut r);
                    clamp(v + std * z)
                })
                .collect();
            Tensor::new(x.shape(), data)
        }
        ShiftKind::ShotNoise => {
            let c = SHOT_FACTOR[spec.level()];
            let mut r = rng(seed);
            let data = x
                .data()
                .iter()
                .map(|&v| {
                    let z: f32 = StandardNormal.sample(&mut r);
                    clamp(v + libm::sqrtf(v.max(0.0) * c) * z)
                })
                .collect();
            Tensor::new(x.shape(), data)
        }
        ShiftKind::Brightness => x.map(|v| clamp(v + BRIGHTNESS[spec.level()])),
        ShiftKind::Contrast => contrast(x, CONTRAST[spec.level()]),
        ShiftKind::BoxBlur => box_blur(x, spec.severity as usize),
        ShiftKind::MeanShift => {
            let delta = 0.2 * spec.severity as f32;
            x.map(|v| v + delta)
        }
        ShiftKind::ScaleShift => {
            let factor = 1.0 + 0.15 * spec.severity as f32;
            x.map(|v| v * factor)
        }
    }
}

fn contrast(x: &Tensor, factor: f32) -> Result<Tensor> {
    let per = x.numel() / x.batch();
    let mut out = Vec::with_capacity(x.numel());
    for img in x.data().chunks_exact(per) {
        let mean = img.iter().map(|&v| v as f64).sum::<f64>() / per as f64;
        out.extend(img.iter().map(|&v| (((v as f64 - mean) * factor as f64 + mean) as f32).clamp(0.0, 1.0)));
    }
    Tensor::new(x.shape(), out)
}

fn box_blur(x: &Tensor, radius: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let mut out = Vec::with_capacity(x.numel());
    for plane in x.data().chunks_exact(h * w) {
        for y in 0..h {
            for xx in 0..w {
                let (y0, y1) = (y.saturating_sub(radius), (y + radius).min(h - 1));
                let (x0, x1) = (xx.saturating_sub(radius), (xx + radius).min(w - 1));
                let mut sum = 0f64;
                for yy in y0..=y1 {
                    for v in &plane[yy * w + x0..=yy * w + x1] {
                        sum += *v as f64;
                    }
                }
                out.push((sum / ((y1 - y0 + 1) * (x1 - x0 + 1)) as f64) as f32);
            }
        }
    }
    Tensor::new(x.shape(), out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum StreamMode {
    /// Shuffled across kinds and severities.
    Abrupt,
    /// Severity ramps 1→5→1 per kind, kinds in order.
    Gradual,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamSpec {
    pub mode: StreamMode,
    /// Samples per (kind, severity) cell.
    pub per_cell: usize,
    pub kinds: Vec<ShiftKind>,
    pub seed: u64,
}

impl StreamSpec {
    pub fn validate(&self) -> Result<()> {
        if self.per_cell == 0 {
            return Err(Error::config("per-cell sample count must be at least 1"));
        }
        if self.kinds.is_empty() {
            return Err(Error::Empty("list of corruption kinds"));
        }
        Ok(())
    }
}

/// Everything needed to materialize one stream element from the base set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlannedSample {
    /// Position at generation time; stable under later permutation.
    pub id: u64,
    pub source_index: usize,
    pub shift: ShiftSpec,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamItem {
    pub id: u64,
    pub source_index: usize,
    pub input: Tensor,
    pub label: usize,
    pub shift: ShiftSpec,
}

fn draw_cell(base_len: usize, k: usize, r: &mut rand_chacha::ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..base_len).collect();
    let (chosen, _) = idx.partial_shuffle(r, k);
    chosen.to_vec()
}

/// Order and corruption of every stream element, without touching the data.
pub fn plan_stream(base_len: usize, spec: &StreamSpec) -> Result<Vec<PlannedSample>> {
    spec.validate()?;
    if base_len < spec.per_cell {
        return Err(Error::config(format!("base set has {base_len} samples, each cell needs {}", spec.per_cell)));
    }
    let mut r = rng(spec.seed);
    let cells: Vec<ShiftSpec> = match spec.mode {
        StreamMode::Abrupt => spec
            .kinds
            .iter()
            .flat_map(|&kind| (1..=5).map(move |severity| ShiftSpec { kind, severity }))
            .collect(),
        StreamMode::Gradual => spec
            .kinds
            .iter()
            .flat_map(|&kind| GRADUAL_SEVERITIES.iter().map(move |&severity| ShiftSpec { kind, severity }))
            .collect(),
    };
    let mut plan = Vec::with_capacity(cells.len() * spec.per_cell);
    for shift in cells {
        for source_index in draw_cell(base_len, spec.per_cell, &mut r) {
            let id = plan.len() as u64;
            plan.push(PlannedSample { id, source_index, shift, seed: derive_seed(spec.seed, id) });
        }
    }
    if spec.mode == StreamMode::Abrupt {
        plan.shuffle(&mut r);
    }
    Ok(plan)
}

pub fn materialize(base: &LabeledDataset, p: &PlannedSample) -> Result<StreamItem> {
    let input = base
        .inputs
        .get(p.source_index)
        .ok_or_else(|| Error::config(format!("planned index {} outside base set", p.source_index)))?;
    Ok(StreamItem {
        id: p.id,
        source_index: p.source_index,
        input: apply_corruption(input, p.shift, p.seed)?,
        label: base.labels[p.source_index],
        shift: p.shift,
    })
}

fn build(base: &LabeledDataset, spec: &StreamSpec) -> Result<Vec<StreamItem>> {
    plan_stream(base.len(), spec)?.iter().map(|p| materialize(base, p)).collect()
}

/// `per_cell` samples for every (kind, severity) cell, globally shuffled.
pub fn build_abrupt_stream(base: &LabeledDataset, spec: &StreamSpec) -> Result<Vec<StreamItem>> {
    build(base, &StreamSpec { mode: StreamMode::Abrupt, ..spec.clone() })
}

/// Per kind, severities 1,2,3,4,5,4,3,2,1 with `per_cell` samples each.
pub fn build_gradual_stream(base: &LabeledDataset, spec: &StreamSpec) -> Result<Vec<StreamItem>> {
    build(base, &StreamSpec { mode: StreamMode::Gradual, ..spec.clone() })
}

/// Clean stream over a whole dataset, in order.
pub fn clean_stream(base: &LabeledDataset) -> Vec<StreamItem> {
    base.inputs
        .iter()
        .zip(&base.labels)
        .enumerate()
        .map(|(i, (x, &label))| StreamItem {
            id: i as u64,
            source_index: i,
            input: x.clone(),
            label,
            shift: ShiftSpec::identity(),
        })
        .collect()
}

/// Stream elements back into a dataset (labels and inputs only).
pub fn stream_to_dataset(items: &[StreamItem], num_classes: usize) -> Result<LabeledDataset> {
    LabeledDataset::new(items.iter().map(|i| i.input.clone()).collect(), items.iter().map(|i| i.label).collect(), num_classes)
}
