use alloc::format;
use alloc::vec::Vec;

use super::eval::{evaluate_stream, EvalMode, EvalTarget};
use crate::adapt::AdaptConfig;
use crate::error::{Error, Result};
use crate::shift::StreamItem;

/// Deduplicated, sorted (τ, λ) axes. Each cell uses `base` with τ and λ
/// replaced.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub taus: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub base: AdaptConfig,
}

/// One grid cell; `index` is row-major over (τ, λ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub index: usize,
    pub tau: f64,
    pub lambda: f64,
    pub config: AdaptConfig,
}

fn axis(values: &[f64], name: &str) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::config(format!("{name} grid is empty")));
    }
    if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::config(format!("{name} grid value {v} outside [0, 1]")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    Ok(v)
}

impl SweepGrid {
    pub fn new(taus: &[f64], lambdas: &[f64], base: AdaptConfig) -> Result<Self> {
        Ok(SweepGrid { taus: axis(taus, "tau")?, lambdas: axis(lambdas, "lambda")?, base })
    }

    /// `0.0, 0.1, …, 1.0`.
    pub fn default_axis() -> Vec<f64> {
        (0..=10).map(|i| i as f64 / 10.0).collect()
    }

    pub fn len(&self) -> usize {
        self.taus.len() * self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cells(&self) -> Vec<SweepCell> {
        let mut out = Vec::with_capacity(self.len());
        for &tau in &self.taus {
            for &lambda in &self.lambdas {
                let config = AdaptConfig { tau, lambda, ..self.base };
                out.push(SweepCell { index: out.len(), tau, lambda, config });
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepResult {
    pub taus: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// Row-major: `accuracy[i * lambdas.len() + j]` is cell `(taus[i], lambdas[j])`.
    pub accuracy: Vec<f64>,
    pub source_accuracy: f64,
}

impl SweepResult {
    pub fn assemble(grid: &SweepGrid, source_accuracy: f64, accuracy: Vec<f64>) -> Result<Self> {
        if accuracy.len() != grid.len() {
            return Err(Error::shape("sweep", format!("{} results for {} cells", accuracy.len(), grid.len())));
        }
        Ok(SweepResult { taus: grid.taus.clone(), lambdas: grid.lambdas.clone(), accuracy, source_accuracy })
    }

    pub fn at(&self, tau: f64, lambda: f64) -> Option<f64> {
        let i = self.taus.iter().position(|&t| t == tau)?;
        let j = self.lambdas.iter().position(|&l| l == lambda)?;
        Some(self.accuracy[i * self.lambdas.len() + j])
    }

    /// Cell with the highest accuracy; ties go to the earliest cell.
    pub fn best(&self) -> (f64, f64, f64) {
        let mut best = 0;
        for (i, &a) in self.accuracy.iter().enumerate() {
            if a > self.accuracy[best] {
                best = i;
            }
        }
        let n = self.lambdas.len();
        (self.taus[best / n], self.lambdas[best % n], self.accuracy[best])
    }
}

pub fn evaluate_cell(target: EvalTarget<'_>, stream: &[StreamItem], cell: &SweepCell) -> Result<f64> {
    evaluate_stream(target, stream, EvalMode::Adapt(cell.config), false)?.accuracy_or_err()
}

/// Evaluate every cell in order on one thread.
pub fn sweep_hyperparams(target: EvalTarget<'_>, stream: &[StreamItem], grid: &SweepGrid) -> Result<SweepResult> {
    let source = evaluate_stream(target, stream, EvalMode::Source, false)?.accuracy_or_err()?;
    let acc = grid.cells().iter().map(|c| evaluate_cell(target, stream, c)).collect::<Result<Vec<_>>>()?;
    SweepResult::assemble(grid, source, acc)
}
