//! Accuracy and support-weighted F1. A missing prediction (`None`) counts as
//! wrong for its true class and as a false positive for no class.

use alloc::collections::BTreeMap;
use alloc::format;

use crate::error::{Error, Result};

fn check(labels: &[usize], preds: &[Option<usize>]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::Empty("prediction records"));
    }
    if labels.len() != preds.len() {
        return Err(Error::shape("metrics", format!("{} labels, {} predictions", labels.len(), preds.len())));
    }
    Ok(())
}

pub fn accuracy(labels: &[usize], preds: &[Option<usize>]) -> Result<f64> {
    check(labels, preds)?;
    let correct = labels.iter().zip(preds).filter(|(l, p)| Some(**l) == **p).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Per-class F1 weighted by true-class support.
pub fn weighted_f1(labels: &[usize], preds: &[Option<usize>]) -> Result<f64> {
    check(labels, preds)?;
    #[derive(Default)]
    struct Counts {
        tp: u64,
        fp: u64,
        fn_: u64,
        support: u64,
    }
    let mut per: BTreeMap<usize, Counts> = BTreeMap::new();
    for (&l, &p) in labels.iter().zip(preds) {
        per.entry(l).or_default().support += 1;
        match p {
            Some(p) if p == l => per.entry(l).or_default().tp += 1,
            Some(p) => {
                per.entry(l).or_default().fn_ += 1;
                per.entry(p).or_default().fp += 1;
            }
            None => per.entry(l).or_default().fn_ += 1,
        }
    }
    let total = labels.len() as f64;
    Ok(per
        .values()
        .filter(|c| c.support > 0)
        .map(|c| {
            let denom = 2 * c.tp + c.fp + c.fn_;
            let f1 = if denom == 0 { 0.0 } else { 2.0 * c.tp as f64 / denom as f64 };
            f1 * c.support as f64 / total
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn some(p: &[usize]) -> Vec<Option<usize>> {
        p.iter().copied().map(Some).collect()
    }

    #[test]
    fn hand_computed_example() {
        let (l, p) = (vec![1, 1, 1, 0], some(&[1, 1, 0, 0]));
        assert_eq!(accuracy(&l, &p).unwrap(), 0.75);
        let f1 = weighted_f1(&l, &p).unwrap();
        assert!((f1 - (0.75 * 0.8 + 0.25 * 2.0 / 3.0)).abs() < 1e-12);
        assert!((f1 - 0.76667).abs() < 1e-5);
    }

    #[test]
    fn perfect_and_constant_predictors() {
        let l = vec![0, 1, 0, 1, 1, 0];
        assert_eq!(weighted_f1(&l, &some(&l)).unwrap(), 1.0);
        assert_eq!(accuracy(&l, &some(&l)).unwrap(), 1.0);
        let f1 = weighted_f1(&l, &some(&[1; 6])).unwrap();
        assert!((f1 - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn missing_predictions_and_errors() {
        assert_eq!(accuracy(&[0, 1], &[None, Some(1)]).unwrap(), 0.5);
        assert_eq!(weighted_f1(&[0], &[None]).unwrap(), 0.0);
        assert_eq!(accuracy(&[], &[]).unwrap_err(), Error::Empty("prediction records"));
        assert!(weighted_f1(&[0], &[]).is_err());
    }

    proptest! {
        #[test]
        fn bounded(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..50)) {
            let l: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let p: Vec<Option<usize>> = pairs.iter().map(|p| Some(p.1)).collect();
            let f = weighted_f1(&l, &p).unwrap();
            let a = accuracy(&l, &p).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&f));
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
