//! Evaluation metrics for classification, R-peak detection and wave delineation.

mod challenge;
mod classification;
mod matching;

pub use challenge::{challenge_score, ChallengeReport, ScoreWeights};
pub use classification::{prf1, ClassScores, Prf1Report};
pub use matching::{
    delineation_metrics, match_points, qrs_score, qrs_score_record, Boundaries, DelineationReport, MatchResult,
    QrsRecordScore, QrsReport, WaveScores, Waves,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("{0} points are not in ascending order")]
    UnsortedInput(&'static str),
    #[error("label {0:?} is not among the weight classes")]
    UnknownLabel(String),
    #[error("correct and inactive scores coincide ({0}); the score is undefined")]
    DegenerateNormalization(f64),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// `a / b`, with `0 / 0` taken as 0.
pub(crate) fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

pub(crate) fn f1(precision: f64, recall: f64) -> f64 {
    ratio(2.0 * precision * recall, precision + recall)
}
