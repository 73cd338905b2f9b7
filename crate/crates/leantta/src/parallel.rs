//! Thread-pool runners for sweeps and ablations, and a bounded stream
//! producer. Results are always merged by cell index, so output does not
//! depend on the thread count.

use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use leantta_core::bench::ablation::ablation_point;
use leantta_core::bench::sweep::evaluate_cell;
use leantta_core::bench::{
    ablation_subsets, evaluate_stream, AblationCurve, AblationDirection, AblationPoint, EvalMode, EvalTarget, SweepGrid,
    SweepResult,
};
use leantta_core::shift::{materialize, LabeledDataset, PlannedSample, StreamItem};
use leantta_core::{AdaptConfig, ModelGraph};
use rayon::prelude::*;

use crate::error::Result;

/// A pool with `threads` workers, or rayon's default when `None`.
pub fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| leantta_core::Error::Unsupported(format!("thread pool: {e}")).into())
}

pub fn parallel_sweep(
    target: EvalTarget<'_>,
    stream: &[StreamItem],
    grid: &SweepGrid,
    threads: Option<usize>,
) -> Result<SweepResult> {
    let source = evaluate_stream(target, stream, EvalMode::Source, false)?.accuracy_or_err()?;
    let cells = grid.cells();
    let acc = pool(threads)?.install(|| {
        cells.par_iter().map(|c| evaluate_cell(target, stream, c)).collect::<Vec<_>>()
    });
    let acc = acc.into_iter().collect::<Result<Vec<f64>, _>>()?;
    Ok(SweepResult::assemble(grid, source, acc)?)
}

/// One curve per direction, every (direction, k) point evaluated as its own cell.
pub fn parallel_ablation(
    model: &ModelGraph,
    stream: &[StreamItem],
    directions: &[AblationDirection],
    config: AdaptConfig,
    threads: Option<usize>,
) -> Result<Vec<AblationCurve>> {
    let norm = model.norm_layer_ids();
    if norm.is_empty() {
        return Err(leantta_core::Error::Empty("set of normalization layers").into());
    }
    let cells: Vec<(usize, usize, Vec<usize>)> = directions
        .iter()
        .enumerate()
        .flat_map(|(d, &dir)| ablation_subsets(&norm, dir).into_iter().enumerate().map(move |(k, ids)| (d, k, ids)))
        .collect();
    let acc = pool(threads)?.install(|| {
        cells.par_iter().map(|(_, _, ids)| ablation_point(model, stream, ids, config)).collect::<Vec<_>>()
    });
    let mut curves: Vec<AblationCurve> = directions.iter().map(|&direction| AblationCurve { direction, points: Vec::new() }).collect();
    for ((d, k, ids), a) in cells.into_iter().zip(acc) {
        curves[d].points.push(AblationPoint { k, adaptive_layers: ids, accuracy: a? });
    }
    Ok(curves)
}

/// Materialize `plan` on a background thread into a FIFO channel holding at
/// most `capacity` items; the producer blocks while the channel is full.
pub fn spawn_stream_producer(
    base: Arc<LabeledDataset>,
    plan: Vec<PlannedSample>,
    capacity: usize,
) -> (Receiver<leantta_core::Result<StreamItem>>, JoinHandle<()>) {
    let (tx, rx) = sync_channel(capacity.max(1));
    let handle = thread::spawn(move || {
        for p in &plan {
            let item = materialize(&base, p);
            let stop = item.is_err();
            if tx.send(item).is_err() || stop {
                break;
            }
        }
    });
    (rx, handle)
}
