//! Signal preprocessing: resampling, band-pass filtering, median detrending and
//! normalization, run as an ordered (optionally shuffled) list of stages.
//!
//! Signals are `lead x time` matrices. Every stage receives the signal together with
//! its sampling frequency and returns both, so a resampling stage can change the rate
//! seen by the stages after it.

mod butter;
mod detrend;
mod fir;
mod normalize;
mod resample;

pub use butter::{apply_sos, butterworth_bandpass, sos_magnitude, sos_padlen, Sos, MAX_ORDER};
pub use detrend::{detrend_median, median_window, running_median, DEFAULT_WINDOW_S};
pub use fir::{default_taps, design_fir_bandpass, filtfilt};
pub use normalize::{normalize, NormalizeKind, NormalizeSpec, DEFAULT_EPS};
pub use resample::{interp_linear, resample};

pub(crate) use normalize::mean_std;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ConfigError;

#[derive(Debug, Error)]
pub enum SigprocError {
    #[error("signal of {0} samples is too short to resample")]
    DegenerateSignal(usize),
    #[error("invalid band {low}-{high} Hz at fs {fs} Hz")]
    InvalidBand { low: f64, high: f64, fs: f64 },
    #[error("signal of {len} samples is too short, need at least {required}")]
    SignalTooShort { len: usize, required: usize },
    #[error("filter section has a pole on or outside the unit circle")]
    UnstableSection,
    #[error("median window of {window} samples exceeds signal length {len}")]
    WindowTooLarge { window: usize, len: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("stage {index} ({name}): {source}")]
    Stage {
        index: usize,
        name: String,
        #[source]
        source: Box<SigprocError>,
    },
}

pub type Result<T> = std::result::Result<T, SigprocError>;

/// Common interface of all preprocessors, built-in or user supplied.
pub trait Preprocessor: Send + Sync {
    fn name(&self) -> &str;

    fn apply(&self, sig: Array2<f64>, fs: f64) -> Result<(Array2<f64>, f64)>;
}

/// Built-in preprocessing stages, as they appear in a JSON config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PreprocStage {
    Resample {
        fs_out: f64,
    },
    BandpassFir {
        low: f64,
        high: f64,
        /// Defaults to `round(fs) + 1`, made odd.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        taps: Option<usize>,
    },
    BandpassButter {
        low: f64,
        high: f64,
        #[serde(default = "default_butter_order")]
        order: usize,
    },
    DetrendMedian {
        #[serde(default = "default_window_s")]
        window_s: f64,
    },
    Normalize {
        #[serde(flatten)]
        spec: NormalizeSpec,
    },
}

fn default_butter_order() -> usize {
    2
}

fn default_window_s() -> f64 {
    DEFAULT_WINDOW_S
}

impl PreprocStage {
    /// Checks parameters that do not depend on the signal.
    pub fn validate(&self) -> std::result::Result<(), String> {
        match self {
            Self::Resample { fs_out } => {
                if !(*fs_out > 0.0) {
                    return Err(format!("fs_out must be positive, got {fs_out}"));
                }
            }
            Self::BandpassFir { low, high, taps } => {
                check_band(*low, *high)?;
                if let Some(t) = taps {
                    if t % 2 == 0 {
                        return Err(format!("taps must be odd, got {t}"));
                    }
                }
            }
            Self::BandpassButter { low, high, order } => {
                check_band(*low, *high)?;
                if *order == 0 || *order > MAX_ORDER {
                    return Err(format!("order must be in 1..={MAX_ORDER}, got {order}"));
                }
            }
            Self::DetrendMedian { window_s } => {
                if !(*window_s > 0.0) {
                    return Err(format!("window_s must be positive, got {window_s}"));
                }
            }
            Self::Normalize { spec } => spec.validate()?,
        }
        Ok(())
    }
}

fn check_band(low: f64, high: f64) -> std::result::Result<(), String> {
    if !(low > 0.0 && low < high) {
        return Err(format!("band must satisfy 0 < low < high, got {low}-{high}"));
    }
    Ok(())
}

impl Preprocessor for PreprocStage {
    fn name(&self) -> &str {
        match self {
            Self::Resample { .. } => "resample",
            Self::BandpassFir { .. } => "bandpass_fir",
            Self::BandpassButter { .. } => "bandpass_butter",
            Self::DetrendMedian { .. } => "detrend_median",
            Self::Normalize { .. } => "normalize",
        }
    }

    fn apply(&self, sig: Array2<f64>, fs: f64) -> Result<(Array2<f64>, f64)> {
        match self {
            Self::Resample { fs_out } => resample(&sig, fs, *fs_out),
            Self::BandpassFir { low, high, taps } => {
                let taps = design_fir_bandpass(fs, *low, *high, taps.unwrap_or_else(|| default_taps(fs)))?;
                Ok((filtfilt(&sig, &taps)?, fs))
            }
            Self::BandpassButter { low, high, order } => {
                let sos = butterworth_bandpass(*order, *low, *high, fs)?;
                Ok((apply_sos(&sig, &sos)?, fs))
            }
            Self::DetrendMedian { window_s } => Ok((detrend_median(&sig, *window_s, fs)?, fs)),
            Self::Normalize { spec } => Ok((normalize(&sig, spec), fs)),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocConfig {
    #[serde(default)]
    pub random_order: bool,
    #[serde(default)]
    pub stages: Vec<PreprocStage>,
}

impl PreprocConfig {
    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    pub fn validate(&self) -> std::result::Result<(), ConfigError> {
        let mut seen_resample = false;
        for (index, stage) in self.stages.iter().enumerate() {
            stage.validate().map_err(|message| ConfigError { index, message })?;
            if matches!(stage, PreprocStage::Resample { .. }) {
                if seen_resample {
                    return Err(ConfigError {
                        index,
                        message: "at most one resample stage is allowed".into(),
                    });
                }
                seen_resample = true;
            }
        }
        Ok(())
    }
}

/// Runs preprocessors in order, or in a seeded random order.
#[derive(Default)]
pub struct PreprocManager {
    stages: Vec<Box<dyn Preprocessor>>,
    random_order: bool,
}

impl PreprocManager {
    pub fn new(random_order: bool) -> Self {
        Self { stages: Vec::new(), random_order }
    }

    pub fn from_config(config: &PreprocConfig) -> std::result::Result<Self, ConfigError> {
        config.validate()?;
        let mut m = Self::new(config.random_order);
        for s in &config.stages {
            m.push(Box::new(s.clone()));
        }
        Ok(m)
    }

    pub fn push(&mut self, stage: Box<dyn Preprocessor>) -> &mut Self {
        self.stages.push(stage);
        self
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    /// The order in which stages run. `seed` is only consulted when the order is random;
    /// without a seed the permutation comes from the thread RNG.
    pub fn ordering(&self, seed: Option<u64>) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.stages.len()).collect();
        if self.random_order {
            match seed {
                Some(s) => order.shuffle(&mut ChaCha8Rng::seed_from_u64(s)),
                None => order.shuffle(&mut rand::rng()),
            }
        }
        order
    }

    pub fn run(&self, sig: Array2<f64>, fs: f64, seed: Option<u64>) -> Result<(Array2<f64>, f64)> {
        self.run_with(sig, fs, seed, |_, _| {})
    }

    /// Like [`run`](Self::run), calling `on_stage(name, elapsed)` after each stage.
    pub fn run_with(
        &self,
        sig: Array2<f64>,
        fs: f64,
        seed: Option<u64>,
        mut on_stage: impl FnMut(&str, std::time::Duration),
    ) -> Result<(Array2<f64>, f64)> {
        let (mut sig, mut fs) = (sig, fs);
        for idx in self.ordering(seed) {
            let stage = &self.stages[idx];
            let start = std::time::Instant::now();
            (sig, fs) = stage.apply(sig, fs).map_err(|e| SigprocError::Stage {
                index: idx,
                name: stage.name().to_string(),
                source: Box::new(e),
            })?;
            on_stage(stage.name(), start.elapsed());
        }
        Ok((sig, fs))
    }
}

/// Applies a preprocessing configuration to a `lead x time` signal.
pub fn run_preproc(
    sig: &Array2<f64>,
    fs: f64,
    config: &PreprocConfig,
    seed: Option<u64>,
) -> Result<(Array2<f64>, f64)> {
    let manager = PreprocManager::from_config(config).map_err(|e| SigprocError::Stage {
        index: e.index,
        name: config.stages[e.index].name().to_string(),
        source: Box::new(SigprocError::InvalidParameter(e.message)),
    })?;
    manager.run(sig.clone(), fs, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn ecg_like(n: usize, fs: f64) -> Array2<f64> {
        Array2::from_shape_fn((2, n), |(l, i)| {
            let t = i as f64 / fs;
            (2.0 * PI * 1.2 * t).sin() * (l as f64 + 1.0) + 0.4 * (2.0 * PI * 11.0 * t).cos() + 0.3 * t
        })
    }

    #[test]
    fn empty_config_is_identity() {
        let x = ecg_like(300, 250.0);
        let (y, fs) = run_preproc(&x, 250.0, &PreprocConfig::default(), None).unwrap();
        assert_eq!(y, x);
        assert_eq!(fs, 250.0);
    }

    #[test]
    fn resample_then_zscore() {
        let config = PreprocConfig {
            random_order: false,
            stages: vec![
                PreprocStage::Resample { fs_out: 250.0 },
                PreprocStage::Normalize { spec: NormalizeSpec::zscore() },
            ],
        };
        let x = ecg_like(5000, 500.0);
        let (y, fs) = run_preproc(&x, 500.0, &config, None).unwrap();
        assert_eq!(fs, 250.0);
        assert_eq!(y.dim(), (2, 2500));
        for row in y.rows() {
            let (mean, _) = mean_std(row.iter().copied());
            assert!(mean.abs() < 1e-9);
        }
    }

    #[test]
    fn sequential_run_is_composition() {
        let stages = vec![
            PreprocStage::DetrendMedian { window_s: 0.4 },
            PreprocStage::BandpassButter { low: 0.5, high: 40.0, order: 3 },
            PreprocStage::Normalize { spec: NormalizeSpec::min_max() },
        ];
        let x = ecg_like(2000, 250.0);
        let config = PreprocConfig { random_order: false, stages: stages.clone() };
        let (y, _) = run_preproc(&x, 250.0, &config, Some(3)).unwrap();
        let mut z = x.clone();
        for s in &stages {
            z = s.apply(z, 250.0).unwrap().0;
        }
        assert_eq!(y, z);
    }

    #[test]
    fn seeded_random_order_is_deterministic() {
        let config = PreprocConfig {
            random_order: true,
            stages: vec![
                PreprocStage::DetrendMedian { window_s: 0.4 },
                PreprocStage::BandpassFir { low: 0.5, high: 40.0, taps: Some(51) },
                PreprocStage::Normalize { spec: NormalizeSpec::zscore() },
                PreprocStage::Normalize { spec: NormalizeSpec::naive(0.1, 2.0) },
            ],
        };
        let x = ecg_like(2000, 250.0);
        let a = run_preproc(&x, 250.0, &config, Some(42)).unwrap();
        let b = run_preproc(&x, 250.0, &config, Some(42)).unwrap();
        assert_eq!(a, b);
        let m = PreprocManager::from_config(&config).unwrap();
        let mut o = m.ordering(Some(42));
        o.sort();
        assert_eq!(o, vec![0, 1, 2, 3]);
    }

    #[test]
    fn json_config_and_validation() {
        let text = r#"{"random_order": false, "stages": [
            {"type": "resample", "fs_out": 250},
            {"type": "bandpass_butter", "low": 0.5, "high": 45},
            {"type": "detrend_median"},
            {"type": "normalize", "kind": "zscore", "m": 0, "s": 1}
        ]}"#;
        let c = PreprocConfig::from_json(text).unwrap();
        assert_eq!(c.stages.len(), 4);
        assert_eq!(c.stages[1], PreprocStage::BandpassButter { low: 0.5, high: 45.0, order: 2 });
        assert_eq!(c.stages[2], PreprocStage::DetrendMedian { window_s: 0.6 });
        c.validate().unwrap();
        let back = PreprocConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);

        let bad = PreprocConfig::from_json(
            r#"{"stages": [{"type": "resample", "fs_out": 250}, {"type": "bandpass_fir", "low": 5, "high": 1}]}"#,
        )
        .unwrap();
        assert_eq!(bad.validate().unwrap_err().index, 1);

        let twice = PreprocConfig {
            random_order: false,
            stages: vec![PreprocStage::Resample { fs_out: 250.0 }, PreprocStage::Resample { fs_out: 100.0 }],
        };
        assert_eq!(twice.validate().unwrap_err().index, 1);
        assert!(PreprocConfig::from_json(r#"{"stages": [{"type": "wavelet"}]}"#).is_err());
    }

    #[test]
    fn stage_errors_name_the_stage() {
        let config = PreprocConfig {
            random_order: false,
            stages: vec![PreprocStage::DetrendMedian { window_s: 10.0 }],
        };
        let err = run_preproc(&ecg_like(100, 250.0), 250.0, &config, None).unwrap_err();
        assert!(matches!(err, SigprocError::Stage { index: 0, .. }));
    }

    struct Gain(f64);

    impl Preprocessor for Gain {
        fn name(&self) -> &str {
            "gain"
        }

        fn apply(&self, sig: Array2<f64>, fs: f64) -> Result<(Array2<f64>, f64)> {
            Ok((sig * self.0, fs))
        }
    }

    #[test]
    fn user_defined_stage() {
        let mut m = PreprocManager::new(false);
        m.push(Box::new(Gain(2.0)))
            .push(Box::new(PreprocStage::Resample { fs_out: 500.0 }));
        let x = ecg_like(100, 250.0);
        let (y, fs) = m.run(x.clone(), 250.0, None).unwrap();
        assert_eq!(fs, 500.0);
        assert_eq!(y[[1, 2]], 2.0 * x[[1, 1]]);
    }
}
