use serde::{Deserialize, Serialize};

use super::{f1, ratio, MetricsError, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassScores {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp as f64, (tp + fp) as f64);
        let recall = ratio(tp as f64, (tp + fn_) as f64);
        Self { tp, fp, fn_, precision, recall, f1: f1(precision, recall) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prf1Report {
    pub per_class: Vec<ClassScores>,
    /// Pooled counts over all classes.
    pub micro: ClassScores,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Fraction of samples whose whole label row is predicted exactly.
    pub accuracy: f64,
}

/// Multilabel precision, recall and f1 from binary `[batch][class]` matrices.
pub fn prf1(pred: &[Vec<u8>], truth: &[Vec<u8>]) -> Result<Prf1Report> {
    if pred.len() != truth.len() {
        return Err(MetricsError::ShapeMismatch(format!("{} predicted rows, {} truth rows", pred.len(), truth.len())));
    }
    let k = truth.first().map_or(0, Vec::len);
    let mut counts = vec![(0usize, 0usize, 0usize); k];
    let mut exact = 0;
    for (b, (p, t)) in pred.iter().zip(truth).enumerate() {
        if p.len() != k || t.len() != k {
            return Err(MetricsError::ShapeMismatch(format!("row {b} does not have {k} classes")));
        }
        if p.iter().zip(t).all(|(a, b)| (*a != 0) == (*b != 0)) {
            exact += 1;
        }
        for (c, (&pv, &tv)) in p.iter().zip(t).enumerate() {
            match (pv != 0, tv != 0) {
                (true, true) => counts[c].0 += 1,
                (true, false) => counts[c].1 += 1,
                (false, true) => counts[c].2 += 1,
                _ => {}
            }
        }
    }
    let per_class: Vec<ClassScores> = counts.iter().map(|&(tp, fp, fn_)| ClassScores::from_counts(tp, fp, fn_)).collect();
    let pooled = counts.iter().fold((0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
    let mean = |f: fn(&ClassScores) -> f64| ratio(per_class.iter().map(f).sum(), k as f64);
    Ok(Prf1Report {
        micro: ClassScores::from_counts(pooled.0, pooled.1, pooled.2),
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        macro_f1: mean(|c| c.f1),
        accuracy: ratio(exact as f64, pred.len() as f64),
        per_class,
    })
}
