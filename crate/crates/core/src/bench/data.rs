//! Synthetic labeled data for training reference models.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng};
use crate::shift::LabeledDataset;
use crate::tensor::Tensor;

/// Isotropic Gaussian clusters around random class centers.
///
/// The centers depend only on `seed`; every call to [`ClusterSpec::sample`]
/// with a different sample seed draws fresh points around the same centers.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSpec {
    pub classes: usize,
    pub dim: usize,
    /// Distance of each center from the origin.
    pub separation: f64,
    /// Per-feature standard deviation around the center.
    pub spread: f64,
    pub seed: u64,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        ClusterSpec { classes: 3, dim: 16, separation: 3.0, spread: 1.0, seed: 0 }
    }
}

impl ClusterSpec {
    fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.dim == 0 {
            return Err(Error::config("clusters need at least 2 classes and 1 feature"));
        }
        if !(self.separation.is_finite() && self.spread.is_finite() && self.spread >= 0.0) {
            return Err(Error::config("cluster separation and spread must be finite, spread non-negative"));
        }
        Ok(())
    }

    pub fn centers(&self) -> Vec<Vec<f64>> {
        let mut r = rng(derive_seed(self.seed, 0));
        (0..self.classes)
            .map(|_| {
                let v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut r)).collect();
                let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>()).max(1e-12);
                v.into_iter().map(|x| x / norm * self.separation).collect()
            })
            .collect()
    }

    /// `per_class` points per class, shuffled. Each input has shape `(1, dim)`.
    pub fn sample(&self, per_class: usize, sample_seed: u64) -> Result<LabeledDataset> {
        self.validate()?;
        let centers = self.centers();
        let mut r = rng(derive_seed(self.seed, sample_seed.wrapping_add(1)));
        let mut labels: Vec<usize> = (0..self.classes).flat_map(|k| core::iter::repeat_n(k, per_class)).collect();
        labels.shuffle(&mut r);
        let inputs = labels
            .iter()
            .map(|&k| {
                let row = centers[k]
                    .iter()
                    .map(|&c| {
                        let z: f64 = StandardNormal.sample(&mut r);
                        (c + self.spread * z) as f32
                    })
                    .collect();
                Tensor::new(&[1, self.dim], row)
            })
            .collect::<Result<Vec<_>>>()?;
        LabeledDataset::new(inputs, labels, self.classes)
    }
}

/// Oriented sinusoidal gratings in `[0, 1]`, one orientation per class, with
/// random phase and additive pixel noise.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternSpec {
    pub classes: usize,
    pub channels: usize,
    pub size: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for PatternSpec {
    fn default() -> Self {
        PatternSpec { classes: 3, channels: 3, size: 8, noise: 0.05, seed: 0 }
    }
}

impl PatternSpec {
    /// `per_class` images per class, shuffled. Each input has shape
    /// `(1, channels, size, size)`.
    pub fn sample(&self, per_class: usize, sample_seed: u64) -> Result<LabeledDataset> {
        if self.classes < 2 || self.channels == 0 || self.size < 2 {
            return Err(Error::config("patterns need at least 2 classes, 1 channel and size 2"));
        }
        let mut r = rng(derive_seed(self.seed, sample_seed.wrapping_add(1)));
        let mut labels: Vec<usize> = (0..self.classes).flat_map(|k| core::iter::repeat_n(k, per_class)).collect();
        labels.shuffle(&mut r);
        let (c, s) = (self.channels, self.size);
        let freq = 2.0 * PI / 4.0;
        let inputs = labels
            .iter()
            .map(|&k| {
                let theta = PI * k as f64 / self.classes as f64;
                let (dx, dy) = (libm::cos(theta), libm::sin(theta));
                let phase: f64 = r.random_range(0.0..2.0 * PI);
                let mut data = Vec::with_capacity(c * s * s);
                for ch in 0..c {
                    let shift = ch as f64 * 0.5;
                    for y in 0..s {
                        for x in 0..s {
                            let z: f64 = StandardNormal.sample(&mut r);
                            let v = 0.5 + 0.35 * libm::sin(freq * (x as f64 * dx + y as f64 * dy) + phase + shift) + self.noise * z;
                            data.push(v.clamp(0.0, 1.0) as f32);
                        }
                    }
                }
                Tensor::new(&[1, c, s, s], data)
            })
            .collect::<Result<Vec<_>>>()?;
        LabeledDataset::new(inputs, labels, self.classes)
    }
}
