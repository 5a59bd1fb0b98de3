//! Task output containers and annotation/mask conversions.
//!
//! Outputs are passive data with required-field validation. Required fields are `Option`
//! so a deserialized output missing one can be reported by name instead of failing to parse.

mod intervals;
mod window;

pub use intervals::{ann_to_intervals, intervals_to_mask, mask_to_intervals, normalize, IntervalList, PairedIntervals};
pub use window::{reassemble, window_record, PadMode, Windows};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wfdb::AnnotationSet;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TaskError {
    #[error("interval [{onset}, {offset}) is empty or reversed")]
    InvalidInterval { onset: usize, offset: usize },
    #[error("index {index} outside length {length}")]
    OutOfRange { index: usize, length: usize },
    #[error("offset annotation at sample {sample} has no open onset")]
    UnpairedOffset { sample: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, TaskError>;

/// One failed check of [`validate_output`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationOutput {
    #[serde(default)]
    pub classes: Option<Vec<String>>,
    /// `[batch][class]` probabilities.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prob: Option<Vec<Vec<f64>>>,
    /// `[batch][class]` binary predictions.
    #[serde(default)]
    pub pred: Option<Vec<Vec<u8>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Vec<f64>>,
}

impl ClassificationOutput {
    pub fn from_prob(classes: Vec<String>, prob: Vec<Vec<f64>>, thresholds: Vec<f64>) -> Result<Self> {
        let pred = binarize(&prob, &thresholds)?;
        Ok(Self { classes: Some(classes), prob: Some(prob), pred: Some(pred), thresholds: Some(thresholds) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationOutput {
    #[serde(default)]
    pub classes: Option<Vec<String>>,
    /// `[batch][time][class]`
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prob: Option<Vec<Vec<Vec<f64>>>>,
    /// `[batch][time]` class indices.
    #[serde(default)]
    pub mask: Option<Vec<Vec<usize>>>,
}

impl SegmentationOutput {
    /// Mask from the per-step argmax (first maximum on ties).
    pub fn from_prob(classes: Vec<String>, prob: Vec<Vec<Vec<f64>>>) -> Self {
        let mask = prob
            .iter()
            .map(|rows| {
                rows.iter()
                    .map(|p| p.iter().enumerate().fold((0, f64::NEG_INFINITY), |m, (i, &v)| if v > m.1 { (i, v) } else { m }).0)
                    .collect()
            })
            .collect();
        Self { classes: Some(classes), prob: Some(prob), mask: Some(mask) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RPeaksOutput {
    /// Per-record ascending sample indices.
    #[serde(default)]
    pub peaks: Option<Vec<Vec<usize>>>,
    #[serde(default)]
    pub fs: Option<f64>,
    /// Per-record lengths in samples, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_len: Option<Vec<usize>>,
}

impl RPeaksOutput {
    pub fn new(peaks: Vec<Vec<usize>>, fs: f64, record_len: Option<Vec<usize>>) -> Self {
        Self { peaks: Some(peaks), fs: Some(fs), record_len }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum TaskOutput {
    Classification(ClassificationOutput),
    Segmentation(SegmentationOutput),
    Rpeaks(RPeaksOutput),
}

/// `pred[b][k] = prob[b][k] >= thresholds[k]`.
pub fn binarize(prob: &[Vec<f64>], thresholds: &[f64]) -> Result<Vec<Vec<u8>>> {
    prob.iter()
        .enumerate()
        .map(|(b, row)| {
            if row.len() != thresholds.len() {
                return Err(TaskError::ShapeMismatch(format!(
                    "row {b} has {} classes, {} thresholds given",
                    row.len(),
                    thresholds.len()
                )));
            }
            Ok(row.iter().zip(thresholds).map(|(p, t)| u8::from(p >= t)).collect())
        })
        .collect()
}

/// R peaks are the samples whose symbol is one of `beat_symbols`.
pub fn ann_to_rpeaks(ann: &AnnotationSet, beat_symbols: &[&str], fs: f64, record_len: Option<usize>) -> RPeaksOutput {
    let mut peaks: Vec<usize> =
        ann.entries.iter().filter(|a| beat_symbols.contains(&a.symbol.as_str())).map(|a| a.sample as usize).collect();
    peaks.sort_unstable();
    peaks.dedup();
    RPeaksOutput::new(vec![peaks], fs, record_len.map(|l| vec![l]))
}

struct Checker(Vec<Violation>);

impl Checker {
    fn fail(&mut self, field: &str, message: impl Into<String>) {
        self.0.push(Violation { field: field.into(), message: message.into() });
    }

    fn required<'a, T>(&mut self, field: &str, v: &'a Option<T>) -> Option<&'a T> {
        if v.is_none() {
            self.fail(field, "required field is missing");
        }
        v.as_ref()
    }
}

/// Checks required fields and invariants, reporting every violation found.
pub fn validate_output(output: &TaskOutput) -> std::result::Result<(), Vec<Violation>> {
    let mut c = Checker(Vec::new());
    match output {
        TaskOutput::Classification(o) => {
            let k = c.required("classes", &o.classes).map(Vec::len);
            let pred = c.required("pred", &o.pred);
            if let Some(pred) = pred {
                for (b, row) in pred.iter().enumerate() {
                    if k.is_some_and(|k| row.len() != k) {
                        c.fail("pred", format!("row {b} has {} entries, expected {}", row.len(), k.unwrap_or(0)));
                    }
                    if row.iter().any(|&v| v > 1) {
                        c.fail("pred", format!("row {b} has non-binary values"));
                    }
                }
            }
            if let Some(prob) = &o.prob {
                if let Some(pred) = pred {
                    if prob.len() != pred.len() {
                        c.fail("prob", format!("{} rows, pred has {}", prob.len(), pred.len()));
                    }
                }
                for (b, row) in prob.iter().enumerate() {
                    if k.is_some_and(|k| row.len() != k) {
                        c.fail("prob", format!("row {b} has {} entries", row.len()));
                    }
                    if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                        c.fail("prob", format!("row {b} has values outside [0, 1]"));
                    }
                }
            }
            if let (Some(t), Some(k)) = (&o.thresholds, k) {
                if t.len() != k {
                    c.fail("thresholds", format!("{} thresholds for {k} classes", t.len()));
                }
            }
        }
        TaskOutput::Segmentation(o) => {
            let k = c.required("classes", &o.classes).map(Vec::len);
            let mask = c.required("mask", &o.mask);
            if let (Some(mask), Some(k)) = (mask, k) {
                for (b, row) in mask.iter().enumerate() {
                    if row.iter().any(|&v| v >= k) {
                        c.fail("mask", format!("row {b} has labels outside 0..{k}"));
                    }
                }
            }
            if let Some(prob) = &o.prob {
                for (b, rows) in prob.iter().enumerate() {
                    if let Some(m) = mask.and_then(|m| m.get(b)) {
                        if m.len() != rows.len() {
                            c.fail("prob", format!("sample {b} spans {} steps, mask {}", rows.len(), m.len()));
                        }
                    }
                    for (t, p) in rows.iter().enumerate() {
                        if k.is_some_and(|k| p.len() != k) || p.iter().any(|v| !(0.0..=1.0).contains(v)) {
                            c.fail("prob", format!("sample {b} step {t} is not a {}-class distribution", k.unwrap_or(0)));
                            break;
                        }
                    }
                }
                if mask.is_some_and(|m| m.len() != prob.len()) {
                    c.fail("prob", "batch size differs from mask");
                }
            }
        }
        TaskOutput::Rpeaks(o) => {
            if let Some(&fs) = c.required("fs", &o.fs) {
                if !(fs > 0.0 && fs.is_finite()) {
                    c.fail("fs", format!("sampling frequency {fs} is not positive"));
                }
            }
            if let Some(peaks) = c.required("peaks", &o.peaks) {
                for (r, p) in peaks.iter().enumerate() {
                    if p.windows(2).any(|w| w[0] >= w[1]) {
                        c.fail("peaks", format!("record {r} is not strictly ascending"));
                    }
                    if let Some(&len) = o.record_len.as_ref().and_then(|l| l.get(r)) {
                        if p.last().is_some_and(|&x| x >= len) {
                            c.fail("peaks", format!("record {r} has peaks beyond its length {len}"));
                        }
                    }
                }
                if o.record_len.as_ref().is_some_and(|l| l.len() != peaks.len()) {
                    c.fail("record_len", "one length per record is required");
                }
            }
        }
    }
    if c.0.is_empty() {
        Ok(())
    } else {
        Err(c.0)
    }
}
