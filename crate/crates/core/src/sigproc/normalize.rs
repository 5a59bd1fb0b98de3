use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeKind {
    /// `(x - m) / s`
    Naive,
    /// `((x - mean(x)) / (std(x) + eps)) * s + m`
    #[serde(rename = "zscore")]
    ZScore,
    /// `(x - min(x)) / (max(x) - min(x) + eps)`
    MinMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizeSpec {
    pub kind: NormalizeKind,
    #[serde(default)]
    pub m: f64,
    #[serde(default = "one")]
    pub s: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn one() -> f64 {
    1.0
}

fn default_eps() -> f64 {
    DEFAULT_EPS
}

impl NormalizeSpec {
    pub fn zscore() -> Self {
        Self { kind: NormalizeKind::ZScore, m: 0.0, s: 1.0, eps: DEFAULT_EPS }
    }

    pub fn min_max() -> Self {
        Self { kind: NormalizeKind::MinMax, m: 0.0, s: 1.0, eps: DEFAULT_EPS }
    }

    pub fn naive(m: f64, s: f64) -> Self {
        Self { kind: NormalizeKind::Naive, m, s, eps: DEFAULT_EPS }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.eps > 0.0) {
            return Err(format!("eps must be positive, got {}", self.eps));
        }
        if self.kind == NormalizeKind::Naive && self.s == 0.0 {
            return Err("naive normalization needs a non-zero scale".into());
        }
        if !self.m.is_finite() || !self.s.is_finite() {
            return Err("offset and scale must be finite".into());
        }
        Ok(())
    }
}

/// Population mean and standard deviation.
pub(crate) fn mean_std(x: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = x.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = x.clone().sum::<f64>() / n as f64;
    let var = x.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

/// Normalizes every lead independently.
pub fn normalize(sig: &Array2<f64>, spec: &NormalizeSpec) -> Array2<f64> {
    let mut out = sig.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        match spec.kind {
            NormalizeKind::Naive => row.mapv_inplace(|v| (v - spec.m) / spec.s),
            NormalizeKind::ZScore => {
                let (mean, std) = mean_std(row.iter().copied());
                let denom = std + spec.eps;
                row.mapv_inplace(|v| (v - mean) / denom * spec.s + spec.m);
            }
            NormalizeKind::MinMax => {
                let min = row.iter().copied().fold(f64::INFINITY, f64::min);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let denom = max - min + spec.eps;
                row.mapv_inplace(|v| (v - min) / denom);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zscore_statistics() {
        let x = array![[1.0, 2.0, 3.0, 10.0, -4.0], [100.0, 101.0, 99.0, 100.5, 98.0]];
        let y = normalize(&x, &NormalizeSpec::zscore());
        for row in y.axis_iter(Axis(0)) {
            let (mean, std) = mean_std(row.iter().copied());
            assert!(mean.abs() <= 1e-9);
            assert!((std - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn zscore_is_idempotent() {
        let x = array![[0.3, -1.2, 4.4, 2.0, 0.0, 9.1]];
        let spec = NormalizeSpec::zscore();
        let once = normalize(&x, &spec);
        let twice = normalize(&once, &spec);
        for (a, b) in once.iter().zip(twice.iter()) {
            assert!((a - b).abs() <= 1e-7);
        }
    }

    #[test]
    fn constant_lead_maps_to_offset() {
        let x = Array2::from_elem((1, 10), 7.0);
        let spec = NormalizeSpec { m: 0.25, ..NormalizeSpec::zscore() };
        assert!(normalize(&x, &spec).iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn min_max_example() {
        let y = normalize(&array![[-1.0, 0.0, 3.0]], &NormalizeSpec::min_max());
        let expect = [0.0, 0.25, 1.0];
        for (a, b) in y.iter().zip(expect) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn naive() {
        let y = normalize(&array![[1.0, 3.0]], &NormalizeSpec::naive(1.0, 2.0));
        assert_eq!(y, array![[0.0, 1.0]]);
        assert!(NormalizeSpec::naive(0.0, 0.0).validate().is_err());
    }

    #[test]
    fn json_defaults() {
        let spec: NormalizeSpec = serde_json::from_str(r#"{"kind": "zscore"}"#).unwrap();
        assert_eq!(spec, NormalizeSpec::zscore());
        let spec: NormalizeSpec = serde_json::from_str(r#"{"kind": "min_max"}"#).unwrap();
        assert_eq!(spec.kind, NormalizeKind::MinMax);
    }
}
