use ndarray::{Array2, Array3, ArrayD, Axis};

use super::{AugmentError, Result};

/// Label tensor of a batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    /// `[batch, classes]`
    Classification(Array2<f64>),
    /// `[batch, time, classes]`
    Segmentation(Array3<f64>),
}

impl Labels {
    pub fn batch_size(&self) -> usize {
        match self {
            Self::Classification(a) => a.nrows(),
            Self::Segmentation(a) => a.len_of(Axis(0)),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Self::Classification(a) => a.ncols(),
            Self::Segmentation(a) => a.len_of(Axis(2)),
        }
    }

    fn all_finite(&self) -> bool {
        match self {
            Self::Classification(a) => a.iter().all(|v| v.is_finite()),
            Self::Segmentation(a) => a.iter().all(|v| v.is_finite()),
        }
    }
}

/// Unit of augmentation: `[batch, lead, time]` signals with aligned labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub signals: Array3<f64>,
    pub labels: Labels,
    /// Further tensors whose first axis is the batch; carried through untouched.
    pub extra: Vec<ArrayD<f64>>,
    /// Sampling frequency of the time axis.
    pub fs: f64,
    /// Optional per-sample indices of critical points (e.g. R peaks) used by masking.
    pub critical_points: Option<Vec<Vec<usize>>>,
}

impl Batch {
    pub fn new(signals: Array3<f64>, labels: Labels, fs: f64) -> Result<Self> {
        let b = Self { signals, labels, extra: Vec::new(), fs, critical_points: None };
        b.validate()?;
        Ok(b)
    }

    pub fn with_critical_points(mut self, points: Vec<Vec<usize>>) -> Result<Self> {
        self.critical_points = Some(points);
        self.validate()?;
        Ok(self)
    }

    pub fn batch_size(&self) -> usize {
        self.signals.len_of(Axis(0))
    }

    pub fn n_leads(&self) -> usize {
        self.signals.len_of(Axis(1))
    }

    pub fn len(&self) -> usize {
        self.signals.len_of(Axis(2))
    }

    pub fn is_empty(&self) -> bool {
        self.batch_size() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.batch_size();
        if self.labels.batch_size() != b {
            return Err(AugmentError::ShapeMismatch(format!(
                "signals have batch {b}, labels have {}",
                self.labels.batch_size()
            )));
        }
        if let Labels::Segmentation(seg) = &self.labels {
            if seg.len_of(Axis(1)) != self.len() {
                return Err(AugmentError::ShapeMismatch(format!(
                    "segmentation labels span {} steps, signals {}",
                    seg.len_of(Axis(1)),
                    self.len()
                )));
            }
        }
        for (i, e) in self.extra.iter().enumerate() {
            if e.shape().first() != Some(&b) {
                return Err(AugmentError::ShapeMismatch(format!(
                    "extra tensor {i} has leading dimension {:?}, expected {b}",
                    e.shape().first()
                )));
            }
        }
        if let Some(cp) = &self.critical_points {
            if cp.len() != b {
                return Err(AugmentError::ShapeMismatch(format!(
                    "{} critical point lists for a batch of {b}",
                    cp.len()
                )));
            }
        }
        if !(self.fs > 0.0) {
            return Err(AugmentError::InvalidParameter(format!("sampling frequency {}", self.fs)));
        }
        if !self.signals.iter().all(|v| v.is_finite()) || !self.labels.all_finite() {
            return Err(AugmentError::NonFinite);
        }
        Ok(())
    }
}
