//! Building blocks for ECG deep-learning pipelines.

pub mod archsynth;
pub mod augment;
pub mod inferengine;
pub mod metrics;
pub mod selftest;
pub mod sigproc;
pub mod taskout;
pub mod wfdb;

/// A configuration problem pinned to the stage or layer that caused it.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("stage {index}: {message}")]
pub struct ConfigError {
    pub index: usize,
    pub message: String,
}
