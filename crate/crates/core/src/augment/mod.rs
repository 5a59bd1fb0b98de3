//! Batch-level augmentation.
//!
//! Augmenters share one calling convention (`Batch` in, `Batch` out) and are stochastic in
//! the batch dimension: every stage selects each sample independently with its own
//! probability. A manager runs them in listed or seeded-shuffled order, always finishing
//! with label smoothing.

mod batch;
mod ops;
mod rng;

pub use batch::{Batch, Labels};
pub use ops::*;
pub use rng::{SeedStream, StageRng};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ConfigError;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("batch contains non-finite values")]
    NonFinite,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("stage {index} ({name}): {source}")]
    Stage {
        index: usize,
        name: String,
        #[source]
        source: Box<AugmentError>,
    },
}

pub type Result<T> = std::result::Result<T, AugmentError>;

/// Common interface of augmenters.
pub trait Augmenter: Send + Sync {
    fn name(&self) -> &str;

    /// Stages reporting `true` run after all others, whatever the ordering.
    fn runs_last(&self) -> bool {
        false
    }

    fn apply(&self, batch: &Batch, rng: &StageRng) -> Result<Batch>;
}

fn default_beta() -> f64 {
    0.5
}

fn default_prob() -> f64 {
    0.5
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum AugmentStage {
    GaussianNoise {
        #[serde(default = "default_prob")]
        prob: f64,
        /// Noise standard deviation as a fraction of each lead's standard deviation.
        sigma_rel: f64,
    },
    SineNoise {
        #[serde(default = "default_prob")]
        prob: f64,
        amp_rel: f64,
        freq_hz_range: [f64; 2],
    },
    RandomFlip {
        #[serde(default = "default_prob")]
        prob: f64,
    },
    Mixup {
        #[serde(default = "default_prob")]
        prob: f64,
        #[serde(default = "default_beta")]
        beta_a: f64,
        #[serde(default = "default_beta")]
        beta_b: f64,
    },
    #[serde(rename = "cutmix")]
    CutMix {
        #[serde(default = "default_prob")]
        prob: f64,
        #[serde(default = "default_beta")]
        beta_a: f64,
        #[serde(default = "default_beta")]
        beta_b: f64,
    },
    Mask {
        #[serde(default = "default_prob")]
        prob: f64,
        window_s: f64,
        n_windows: usize,
        #[serde(default)]
        fill: f64,
        /// Centre windows on the batch's critical points when it carries them.
        #[serde(default)]
        at_critical_points: bool,
        #[serde(default)]
        pad_s: f64,
    },
    Stretch {
        #[serde(default = "default_prob")]
        prob: f64,
        ratio_range: [f64; 2],
    },
    LabelSmooth {
        #[serde(default = "one")]
        prob: f64,
        epsilon: f64,
        /// Defaults to the number of label classes.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k: Option<usize>,
    },
}

impl AugmentStage {
    pub fn prob(&self) -> f64 {
        match self {
            Self::GaussianNoise { prob, .. }
            | Self::SineNoise { prob, .. }
            | Self::RandomFlip { prob }
            | Self::Mixup { prob, .. }
            | Self::CutMix { prob, .. }
            | Self::Mask { prob, .. }
            | Self::Stretch { prob, .. }
            | Self::LabelSmooth { prob, .. } => *prob,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let p = self.prob();
        if !(0.0..=1.0).contains(&p) {
            return Err(format!("prob must lie in [0, 1], got {p}"));
        }
        let nonneg = |v: f64, what: &str| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(format!("{what} must be a finite non-negative number, got {v}"))
            }
        };
        match self {
            Self::GaussianNoise { sigma_rel, .. } => nonneg(*sigma_rel, "sigma_rel")?,
            Self::SineNoise { amp_rel, freq_hz_range, .. } => {
                nonneg(*amp_rel, "amp_rel")?;
                if !(freq_hz_range[0] > 0.0 && freq_hz_range[0] <= freq_hz_range[1]) {
                    return Err(format!("invalid frequency range {freq_hz_range:?}"));
                }
            }
            Self::RandomFlip { .. } => {}
            Self::Mixup { beta_a, beta_b, .. } | Self::CutMix { beta_a, beta_b, .. } => {
                if !(*beta_a > 0.0 && *beta_b > 0.0) {
                    return Err(format!("Beta parameters must be positive, got ({beta_a}, {beta_b})"));
                }
            }
            Self::Mask { window_s, pad_s, fill, .. } => {
                nonneg(*window_s, "window_s")?;
                nonneg(*pad_s, "pad_s")?;
                if !fill.is_finite() {
                    return Err("fill must be finite".into());
                }
            }
            Self::Stretch { ratio_range, .. } => {
                if !(ratio_range[0] > 0.0 && ratio_range[0] <= ratio_range[1] && ratio_range[1].is_finite()) {
                    return Err(format!("invalid ratio range {ratio_range:?}"));
                }
            }
            Self::LabelSmooth { epsilon, k, .. } => {
                if !(0.0..1.0).contains(epsilon) {
                    return Err(format!("epsilon must lie in [0, 1), got {epsilon}"));
                }
                if *k == Some(0) {
                    return Err("k must be positive".into());
                }
            }
        }
        Ok(())
    }
}

impl Augmenter for AugmentStage {
    fn name(&self) -> &str {
        match self {
            Self::GaussianNoise { .. } => "gaussian_noise",
            Self::SineNoise { .. } => "sine_noise",
            Self::RandomFlip { .. } => "random_flip",
            Self::Mixup { .. } => "mixup",
            Self::CutMix { .. } => "cutmix",
            Self::Mask { .. } => "mask",
            Self::Stretch { .. } => "stretch",
            Self::LabelSmooth { .. } => "label_smooth",
        }
    }

    fn runs_last(&self) -> bool {
        matches!(self, Self::LabelSmooth { .. })
    }

    fn apply(&self, batch: &Batch, rng: &StageRng) -> Result<Batch> {
        self.validate().map_err(AugmentError::InvalidParameter)?;
        Ok(match *self {
            Self::GaussianNoise { prob, sigma_rel } => add_gaussian_noise(batch, sigma_rel, prob, rng),
            Self::SineNoise { prob, amp_rel, freq_hz_range } => {
                add_sine_noise(batch, amp_rel, freq_hz_range, prob, rng)
            }
            Self::RandomFlip { prob } => random_flip(batch, prob, rng),
            Self::Mixup { prob, beta_a, beta_b } => mixup(batch, beta_a, beta_b, prob, rng)?,
            Self::CutMix { prob, beta_a, beta_b } => cutmix(batch, beta_a, beta_b, prob, rng)?,
            Self::Mask { prob, window_s, n_windows, fill, at_critical_points, pad_s } => {
                let cp = if at_critical_points { batch.critical_points.as_deref() } else { None };
                random_mask(batch, window_s, n_windows, fill, cp, pad_s, prob, rng)
            }
            Self::Stretch { prob, ratio_range } => stretch_compress(batch, ratio_range, prob, rng),
            Self::LabelSmooth { prob, epsilon, k } => {
                let k = k.unwrap_or_else(|| batch.labels.num_classes()).max(1);
                let selected = draw_selection(batch.batch_size(), prob, rng);
                apply_label_smooth(batch, &selected, epsilon, k)
            }
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    #[serde(default)]
    pub random_order: bool,
    #[serde(default)]
    pub stages: Vec<AugmentStage>,
}

impl AugmentConfig {
    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    pub fn validate(&self) -> std::result::Result<(), ConfigError> {
        for (index, stage) in self.stages.iter().enumerate() {
            stage.validate().map_err(|message| ConfigError { index, message })?;
        }
        Ok(())
    }
}

#[derive(Default)]
pub struct AugmentManager {
    stages: Vec<Box<dyn Augmenter>>,
    random_order: bool,
}

impl AugmentManager {
    pub fn new(random_order: bool) -> Self {
        Self { stages: Vec::new(), random_order }
    }

    pub fn from_config(config: &AugmentConfig) -> std::result::Result<Self, ConfigError> {
        config.validate()?;
        let mut m = Self::new(config.random_order);
        for s in &config.stages {
            m.push(Box::new(s.clone()));
        }
        Ok(m)
    }

    pub fn push(&mut self, stage: Box<dyn Augmenter>) -> &mut Self {
        self.stages.push(stage);
        self
    }

    /// Execution order for a seed: shuffled when random, then stages that run last moved
    /// to the end (keeping their relative order).
    pub fn ordering(&self, seeds: &SeedStream) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.stages.len()).collect();
        if self.random_order {
            order.shuffle(&mut seeds.ordering_rng());
        }
        let (mut body, last): (Vec<usize>, Vec<usize>) =
            order.into_iter().partition(|&i| !self.stages[i].runs_last());
        body.extend(last);
        body
    }

    pub fn run(&self, batch: &Batch, seed: u64) -> Result<Batch> {
        batch.validate()?;
        if self.stages.is_empty() {
            return Ok(batch.clone());
        }
        let seeds = SeedStream::new(seed);
        let mut current = batch.clone();
        for idx in self.ordering(&seeds) {
            let stage = &self.stages[idx];
            current = stage
                .apply(&current, &seeds.stage(idx))
                .map_err(|e| AugmentError::Stage { index: idx, name: stage.name().to_string(), source: Box::new(e) })?;
        }
        Ok(current)
    }
}

pub fn run_augment(batch: &Batch, config: &AugmentConfig, seed: u64) -> Result<Batch> {
    let manager = AugmentManager::from_config(config).map_err(|e| AugmentError::Stage {
        index: e.index,
        name: config.stages[e.index].name().to_string(),
        source: Box::new(AugmentError::InvalidParameter(e.message)),
    })?;
    manager.run(batch, seed)
}
