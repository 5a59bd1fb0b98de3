use ndarray::{Array2, Axis};

use super::{Result, SigprocError};

/// Samples `src` by linear interpolation at positions `i * step`, `i < out_len`.
///
/// Positions at or beyond the last input sample take the last input value.
pub fn interp_linear(src: &[f64], out_len: usize, step: f64) -> Vec<f64> {
    let last = src.len().saturating_sub(1);
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let lo = pos.floor() as usize;
            if lo >= last {
                return src[last];
            }
            let frac = pos - lo as f64;
            if frac == 0.0 {
                src[lo]
            } else {
                src[lo] + (src[lo + 1] - src[lo]) * frac
            }
        })
        .collect()
}

/// Resamples every lead from `fs_in` to `fs_out` by linear interpolation.
///
/// The output holds `round(len * fs_out / fs_in)` samples on the uniform output grid.
pub fn resample(sig: &Array2<f64>, fs_in: f64, fs_out: f64) -> Result<(Array2<f64>, f64)> {
    if !(fs_in > 0.0 && fs_out > 0.0) {
        return Err(SigprocError::InvalidParameter(format!(
            "sampling frequencies must be positive, got {fs_in} -> {fs_out}"
        )));
    }
    let len = sig.ncols();
    if len < 2 {
        return Err(SigprocError::DegenerateSignal(len));
    }
    if fs_in == fs_out {
        return Ok((sig.clone(), fs_out));
    }
    let out_len = (len as f64 * fs_out / fs_in).round() as usize;
    if out_len == 0 {
        return Err(SigprocError::DegenerateSignal(len));
    }
    let step = fs_in / fs_out;
    let mut out = Array2::zeros((sig.nrows(), out_len));
    for (src, mut dst) in sig.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        let src = src.to_vec();
        for (d, v) in dst.iter_mut().zip(interp_linear(&src, out_len, step)) {
            *d = v;
        }
    }
    Ok((out, fs_out))
}
