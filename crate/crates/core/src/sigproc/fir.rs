use std::f64::consts::PI;

use ndarray::{Array2, Axis};

use super::{Result, SigprocError};

/// Default tap count for a sampling frequency: `round(fs) + 1`, made odd.
pub fn default_taps(fs: f64) -> usize {
    let n = fs.round() as usize + 1;
    if n.is_multiple_of(2) {
        n + 1
    } else {
        n
    }
}

fn hamming(n: usize, len: usize) -> f64 {
    if len == 1 {
        return 1.0;
    }
    0.54 - 0.46 * (2.0 * PI * n as f64 / (len - 1) as f64).cos()
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Hamming-windowed sinc lowpass with unit DC gain.
fn windowed_lowpass(fs: f64, cutoff: f64, taps: usize) -> Vec<f64> {
    let fc = cutoff / fs;
    let mid = (taps / 2) as f64;
    let mut h: Vec<f64> = (0..taps)
        .map(|n| 2.0 * fc * sinc(2.0 * fc * (n as f64 - mid)) * hamming(n, taps))
        .collect();
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= dc);
    h
}

/// Linear-phase band-pass taps: windowed lowpass at `high` minus windowed lowpass at `low`.
///
/// Both lowpass prototypes are scaled to unit DC gain before subtracting, so the taps sum
/// to zero and DC sits in the stopband.
pub fn design_fir_bandpass(fs: f64, low: f64, high: f64, taps: usize) -> Result<Vec<f64>> {
    if !(fs > 0.0 && low > 0.0 && low < high && high < fs / 2.0) {
        return Err(SigprocError::InvalidBand { low, high, fs });
    }
    if taps.is_multiple_of(2) || taps < 3 {
        return Err(SigprocError::InvalidParameter(format!(
            "FIR tap count must be odd and at least 3, got {taps}"
        )));
    }
    let hi = windowed_lowpass(fs, high, taps);
    let lo = windowed_lowpass(fs, low, taps);
    let mut h: Vec<f64> = hi.iter().zip(&lo).map(|(a, b)| a - b).collect();
    // symmetrize exactly; the two halves are computed independently above
    for n in 0..taps / 2 {
        let avg = 0.5 * (h[n] + h[taps - 1 - n]);
        h[n] = avg;
        h[taps - 1 - n] = avg;
    }
    Ok(h)
}

/// Odd (point) reflection of `pad` samples at both ends.
pub(crate) fn odd_extend(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((0..pad).rev().map(|j| 2.0 * x[0] - x[j + 1]));
    out.extend_from_slice(x);
    out.extend((0..pad).map(|j| 2.0 * x[n - 1] - x[n - 2 - j]));
    out
}

/// Zero-phase FIR filtering: forward then time-reversed convolution with `taps`.
///
/// Each lead is extended by odd reflection of `taps.len() - 1` samples before filtering.
/// With symmetric taps the two passes equal a single convolution with the kernel's
/// autocorrelation, which is what is computed.
pub fn filtfilt(sig: &Array2<f64>, taps: &[f64]) -> Result<Array2<f64>> {
    let k = taps.len();
    if k == 0 {
        return Err(SigprocError::InvalidParameter("empty FIR kernel".into()));
    }
    let len = sig.ncols();
    if len <= 3 * k {
        return Err(SigprocError::SignalTooShort { len, required: 3 * k + 1 });
    }
    // g = taps convolved with reversed taps
    let glen = 2 * k - 1;
    let mut g = vec![0.0; glen];
    for (i, &a) in taps.iter().enumerate() {
        for (j, &b) in taps.iter().rev().enumerate() {
            g[i + j] += a * b;
        }
    }
    let pad = k - 1;
    let mut out = Array2::zeros(sig.raw_dim());
    for (src, mut dst) in sig.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        let xp = odd_extend(&src.to_vec(), pad);
        for (i, d) in dst.iter_mut().enumerate() {
            // centre of g aligns with xp[i + pad]; window is xp[i .. i + glen]
            let window = &xp[i..i + glen];
            *d = window
                .iter()
                .zip(g.iter().rev())
                .map(|(x, c)| x * c)
                .sum();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// |H(f)| of an FIR kernel by direct evaluation of its DTFT.
    fn dtft_mag(h: &[f64], f: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * f / fs;
        let (re, im) = h.iter().enumerate().fold((0.0, 0.0), |(re, im), (n, &c)| {
            (re + c * (w * n as f64).cos(), im - c * (w * n as f64).sin())
        });
        (re * re + im * im).sqrt()
    }

    #[test]
    fn symmetric_taps() {
        for &(low, high, taps) in &[(0.5, 45.0, 501), (1.0, 40.0, 201), (5.0, 15.0, 33)] {
            let h = design_fir_bandpass(500.0, low, high, taps).unwrap();
            for n in 0..taps {
                assert_eq!(h[n], h[taps - 1 - n]);
            }
        }
    }

    #[test]
    fn dc_is_in_stopband() {
        for taps in [201, 301, 501] {
            let h = design_fir_bandpass(500.0, 0.5, 45.0, taps).unwrap();
            assert!(h.iter().sum::<f64>().abs() <= 1e-3);
        }
    }

    #[test]
    fn passband_and_stopband_by_dtft() {
        let fs = 500.0;
        let (low, high) = (0.5, 45.0);
        let h = design_fir_bandpass(fs, low, high, default_taps(fs)).unwrap();
        let mid = (low * high).sqrt();
        assert!(dtft_mag(&h, mid, fs) >= 0.9, "{}", dtft_mag(&h, mid, fs));
        assert!(dtft_mag(&h, 2.0 * high, fs) <= 0.1);
        assert!(dtft_mag(&h, 10.0, fs) >= 0.99);
    }

    #[test]
    fn invalid_designs() {
        assert!(matches!(
            design_fir_bandpass(500.0, 0.0, 45.0, 101),
            Err(SigprocError::InvalidBand { .. })
        ));
        assert!(matches!(
            design_fir_bandpass(500.0, 50.0, 45.0, 101),
            Err(SigprocError::InvalidBand { .. })
        ));
        assert!(matches!(
            design_fir_bandpass(500.0, 0.5, 250.0, 101),
            Err(SigprocError::InvalidBand { .. })
        ));
        assert!(design_fir_bandpass(500.0, 0.5, 45.0, 100).is_err());
    }

    #[test]
    fn default_tap_counts() {
        assert_eq!(default_taps(500.0), 501);
        assert_eq!(default_taps(360.0), 361);
        assert_eq!(default_taps(257.0), 259);
    }

    fn bandpass_250() -> Vec<f64> {
        design_fir_bandpass(250.0, 0.5, 40.0, 101).unwrap()
    }

    #[test]
    fn in_band_peak_does_not_move() {
        let fs = 250.0;
        let n = 2000;
        // single period of a 5 Hz tone windowed around sample 1000
        let x = Array2::from_shape_fn((1, n), |(_, i)| {
            let t = (i as f64 - 1000.0) / fs;
            (2.0 * PI * 5.0 * t).cos() * (-(t * t) / 0.02).exp()
        });
        let y = filtfilt(&x, &bandpass_250()).unwrap();
        let argmax = |v: &Array2<f64>| {
            v.row(0)
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0
        };
        assert!((argmax(&y) as i64 - argmax(&x) as i64).abs() <= 1);
    }

    #[test]
    fn zeros_and_constants() {
        let taps = bandpass_250();
        let z = Array2::zeros((2, 1000));
        assert!(filtfilt(&z, &taps).unwrap().iter().all(|&v| v == 0.0));
        let c = Array2::from_elem((1, 1000), 3.0);
        let y = filtfilt(&c, &taps).unwrap();
        assert!(y.iter().all(|v| v.abs() <= 1e-2 * 3.0));
    }

    #[test]
    fn time_reversal_symmetry() {
        let taps = bandpass_250();
        let x = Array2::from_shape_fn((2, 700), |(l, i)| ((i * 7 + l * 13) % 31) as f64 - 15.0);
        let y = filtfilt(&x, &taps).unwrap();
        let mut xr = x.clone();
        xr.invert_axis(Axis(1));
        let mut yr = filtfilt(&xr, &taps).unwrap();
        yr.invert_axis(Axis(1));
        for (a, b) in y.iter().zip(yr.iter()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn short_signal_rejected() {
        let taps = bandpass_250();
        let x = Array2::zeros((1, 3 * taps.len()));
        assert!(matches!(filtfilt(&x, &taps), Err(SigprocError::SignalTooShort { .. })));
    }
}
