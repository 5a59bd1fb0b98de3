use ndarray::{Array2, Axis};

use super::{Result, SigprocError};

pub const DEFAULT_WINDOW_S: f64 = 0.6;

/// Median window length in samples for a duration: `round(window_s * fs)`, made odd.
pub fn median_window(window_s: f64, fs: f64) -> Result<usize> {
    if !(window_s > 0.0 && fs > 0.0) {
        return Err(SigprocError::InvalidParameter(format!(
            "median window {window_s} s at {fs} Hz"
        )));
    }
    let mut w = (window_s * fs).round() as usize;
    if w.is_multiple_of(2) {
        w += 1;
    }
    if w < 3 {
        return Err(SigprocError::InvalidParameter(format!(
            "median window of {w} samples is shorter than 3"
        )));
    }
    Ok(w)
}

/// Running median of odd `window`, edges extended by reflection about the end samples.
pub fn running_median(x: &[f64], window: usize) -> Vec<f64> {
    let n = x.len();
    let half = window / 2;
    let reflect = |i: isize| -> f64 {
        let n = n as isize;
        let mut i = i;
        // a single reflection suffices because half < n
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * (n - 1) - i;
        }
        x[i as usize]
    };

    let mut sorted: Vec<f64> = (0..window as isize)
        .map(|j| reflect(j - half as isize))
        .collect();
    sorted.sort_by(f64::total_cmp);
    let mut out = Vec::with_capacity(n);
    out.push(sorted[half]);
    for t in 1..n as isize {
        let leaving = reflect(t - 1 - half as isize);
        let entering = reflect(t + half as isize);
        let pos = sorted.partition_point(|v| v.total_cmp(&leaving).is_lt());
        sorted.remove(pos);
        let pos = sorted.partition_point(|v| v.total_cmp(&entering).is_lt());
        sorted.insert(pos, entering);
        out.push(sorted[half]);
    }
    out
}

/// Subtracts a running median baseline from every lead.
pub fn detrend_median(sig: &Array2<f64>, window_s: f64, fs: f64) -> Result<Array2<f64>> {
    let window = median_window(window_s, fs)?;
    let len = sig.ncols();
    if window > len {
        return Err(SigprocError::WindowTooLarge { window, len });
    }
    let mut out = sig.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let x = row.to_vec();
        let baseline = running_median(&x, window);
        for (v, b) in row.iter_mut().zip(baseline) {
            *v -= b;
        }
    }
    Ok(out)
}
