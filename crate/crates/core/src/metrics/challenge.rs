use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{MetricsError, Result};

/// Reward matrix of the multilabel challenge score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    /// Each entry may list equivalent labels separated by `|`.
    pub classes: Vec<String>,
    pub w: Vec<Vec<f64>>,
    pub normal_class: String,
}

impl ScoreWeights {
    pub fn new(classes: Vec<String>, w: Vec<Vec<f64>>, normal_class: &str) -> Result<Self> {
        let s = Self { classes, w, normal_class: normal_class.to_string() };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.classes.len();
        if k == 0 || self.w.len() != k || self.w.iter().any(|r| r.len() != k) {
            return Err(MetricsError::InvalidWeights(format!("weight matrix must be {k}x{k}")));
        }
        if self.w.iter().flatten().any(|v| !v.is_finite()) {
            return Err(MetricsError::InvalidWeights("weights must be finite".into()));
        }
        self.index(&self.normal_class)
            .map_err(|_| MetricsError::InvalidWeights(format!("normal class {:?} is not a class", self.normal_class)))?;
        Ok(())
    }

    /// Reads a CSV with class labels in the header row and first column.
    pub fn from_csv(text: &str, normal_class: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
        let bad = |e: csv::Error| MetricsError::InvalidWeights(e.to_string());
        let header: Vec<String> = rdr.headers().map_err(bad)?.iter().skip(1).map(str::to_string).collect();
        let mut w = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(bad)?;
            let label = rec.get(0).unwrap_or("");
            if header.get(r).map(String::as_str) != Some(label) {
                return Err(MetricsError::InvalidWeights(format!("row {r} label {label:?} does not match the header")));
            }
            let row = rec
                .iter()
                .skip(1)
                .map(|v| v.parse::<f64>().map_err(|e| MetricsError::InvalidWeights(format!("row {label}: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            w.push(row);
        }
        Self::new(header, w, normal_class)
    }

    pub fn index(&self, label: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c.split('|').any(|x| x == label))
            .ok_or_else(|| MetricsError::UnknownLabel(label.to_string()))
    }

    fn indices(&self, labels: &[String]) -> Result<BTreeSet<usize>> {
        labels.iter().map(|l| self.index(l)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChallengeReport {
    pub observed: f64,
    pub correct: f64,
    pub inactive: f64,
    /// `(observed - inactive) / (correct - inactive)`
    pub score: f64,
}

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
struct Compensated {
    sum: f64,
    c: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.c
    }
}

/// `sum(W ∘ A)` where `A[c][c']` gains `1/|truth ∪ pred|` for every `c` in a record's
/// truth and `c'` in its prediction.
fn weighted_confusion(truth: &[BTreeSet<usize>], pred: &[BTreeSet<usize>], w: &[Vec<f64>]) -> f64 {
    let k = w.len();
    let mut a = vec![Compensated::default(); k * k];
    for (t, p) in truth.iter().zip(pred) {
        let n = t.union(p).count().max(1) as f64;
        for &c in t {
            for &c2 in p {
                a[c * k + c2].add(1.0 / n);
            }
        }
    }
    let mut total = Compensated::default();
    for (i, cell) in a.iter().enumerate() {
        let v = cell.value();
        if v != 0.0 {
            total.add(w[i / k][i % k] * v);
        }
    }
    total.value()
}

/// Normalized multilabel challenge score over per-record label sets.
pub fn challenge_score(truth: &[Vec<String>], pred: &[Vec<String>], weights: &ScoreWeights) -> Result<ChallengeReport> {
    weights.validate()?;
    if truth.len() != pred.len() {
        return Err(MetricsError::ShapeMismatch(format!("{} reference records, {} predicted", truth.len(), pred.len())));
    }
    let t: Vec<BTreeSet<usize>> = truth.iter().map(|l| weights.indices(l)).collect::<Result<_>>()?;
    let p: Vec<BTreeSet<usize>> = pred.iter().map(|l| weights.indices(l)).collect::<Result<_>>()?;
    let normal: BTreeSet<usize> = [weights.index(&weights.normal_class)?].into();
    let inactive_pred = vec![normal; t.len()];
    let observed = weighted_confusion(&t, &p, &weights.w);
    let correct = weighted_confusion(&t, &t, &weights.w);
    let inactive = weighted_confusion(&t, &inactive_pred, &weights.w);
    if correct == inactive {
        return Err(MetricsError::DegenerateNormalization(correct));
    }
    Ok(ChallengeReport { observed, correct, inactive, score: (observed - inactive) / (correct - inactive) })
}
