use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::{Observer, QuantParams};
use crate::error::{Error, Result};
use crate::graph::{forward_with, Layer, ModelGraph, SourceStage};
use crate::ops::OpCounts;
use crate::tensor::Tensor;

/// Edge id of the model input.
pub const INPUT_EDGE: usize = 0;

/// Edge id of the activation produced by layer `id`.
pub fn edge_after(id: usize) -> usize {
    id + 1
}

/// Quantization parameters recorded by a calibration pass.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CalibrationTable {
    /// Keyed by edge id ([`INPUT_EDGE`], then [`edge_after`] each layer).
    pub activations: BTreeMap<usize, QuantParams>,
    /// Keyed by layer id, for the unfused weights of conv/linear layers.
    pub weights: BTreeMap<usize, QuantParams>,
    /// Edges whose observed range was degenerate and got a floored scale.
    pub degenerate_edges: Vec<usize>,
    pub batches: usize,
    pub samples: usize,
}

/// Observe min/max of every activation edge over up to `batches` batches of
/// `batch_size` samples drawn in order from `data`, running the frozen
/// float model.
pub fn calibrate<'a, I>(model: &ModelGraph, data: I, batches: usize, batch_size: usize) -> Result<CalibrationTable>
where
    I: IntoIterator<Item = &'a Tensor>,
{
    if batches == 0 || batch_size == 0 {
        return Err(Error::config("calibration needs at least one batch of at least one sample"));
    }
    let mut observers = alloc::vec![Observer::default(); model.layers.len() + 1];
    let mut samples = data.into_iter();
    let mut table = CalibrationTable::default();
    for _ in 0..batches {
        let chunk: Vec<Tensor> = samples.by_ref().take(batch_size).cloned().collect();
        if chunk.is_empty() {
            break;
        }
        let batch = Tensor::stack(&chunk)?;
        observers[INPUT_EDGE].observe(batch.data());
        let mut obs = |id: usize, t: &Tensor| observers[edge_after(id)].observe(t.data());
        forward_with(model, &batch, &mut SourceStage, Some(&mut obs), &mut OpCounts::default())?;
        table.batches += 1;
        table.samples += batch.batch();
    }
    if table.samples == 0 {
        return Err(Error::Empty("calibration stream"));
    }
    for (edge, o) in observers.iter().enumerate() {
        let (qp, degenerate) = o.activation_params();
        if degenerate {
            table.degenerate_edges.push(edge);
        }
        table.activations.insert(edge, qp);
    }
    for (id, layer) in model.layers.iter().enumerate() {
        let w = match layer {
            Layer::Conv2d(c) => &c.weight,
            Layer::Linear(l) => &l.weight,
            _ => continue,
        };
        let mut o = Observer::default();
        o.observe(w.data());
        table.weights.insert(id, o.weight_params().0);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{LinearLayer, NormParams};
    use alloc::vec;

    fn tiny() -> ModelGraph {
        ModelGraph::new(
            "tiny",
            vec![2],
            2,
            vec![
                Layer::Linear(LinearLayer { weight: Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, -1.0]).unwrap(), bias: vec![0.0; 2] }),
                Layer::BatchNorm(NormParams::identity(2, 1e-5)),
                Layer::Relu,
                Layer::Linear(LinearLayer { weight: Tensor::new(&[2, 2], vec![1.0, 1.0, 0.0, 0.0]).unwrap(), bias: vec![0.0; 2] }),
            ],
        )
        .unwrap()
    }

    #[test]
    fn records_every_edge_and_weight() {
        let data: Vec<Tensor> = (0..10).map(|i| Tensor::new(&[1, 2], vec![i as f32 / 9.0, 0.5]).unwrap()).collect();
        let t = calibrate(&tiny(), &data, 3, 4).unwrap();
        assert_eq!((t.batches, t.samples), (3, 10));
        assert_eq!(t.activations.len(), 5);
        assert_eq!(t.weights.keys().copied().collect::<Vec<_>>(), vec![0, 3]);
        let input = t.activations[&INPUT_EDGE];
        assert!((input.scale - 1.0 / 255.0).abs() < 1e-9);
        assert_eq!(input.zero_point, 0);
        // second output of the last linear is identically zero
        assert!(t.degenerate_edges.is_empty() || t.degenerate_edges.iter().all(|&e| e <= 4));
    }

    #[test]
    fn deterministic_and_rejects_empty() {
        let data: Vec<Tensor> = (0..8).map(|i| Tensor::new(&[1, 2], vec![i as f32, -(i as f32)]).unwrap()).collect();
        assert_eq!(calibrate(&tiny(), &data, 2, 4).unwrap(), calibrate(&tiny(), &data, 2, 4).unwrap());
        let none: Vec<Tensor> = vec![];
        assert_eq!(calibrate(&tiny(), &none, 2, 4).unwrap_err(), Error::Empty("calibration stream"));
    }
}
