use serde::{Deserialize, Serialize};

use super::{Result, TaskError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PadMode {
    /// Zero-pad the last partial window.
    #[default]
    Zero,
    /// Discard the last partial window.
    Drop,
}

/// Fixed-length segments of a `[lead][sample]` signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Windows {
    /// `[window][lead][sample]`
    pub segments: Vec<Vec<Vec<f64>>>,
    pub offsets: Vec<usize>,
    pub window_len: usize,
    pub stride: usize,
    pub source_len: usize,
}

impl Windows {
    /// Zero samples appended to the last window.
    pub fn trailing_pad(&self) -> usize {
        self.offsets.last().map_or(0, |&o| (o + self.window_len).saturating_sub(self.source_len))
    }
}

/// Splits a signal into windows of `window_s` seconds advancing by
/// `window_s - overlap_s`. Windowing stops at the first window that reaches the end.
pub fn window_record(signal: &[Vec<f64>], fs: f64, window_s: f64, overlap_s: f64, pad: PadMode) -> Result<Windows> {
    let w = (window_s * fs).round();
    let stride = ((window_s - overlap_s) * fs).round();
    if !(w >= 1.0 && stride >= 1.0 && overlap_s >= 0.0) {
        return Err(TaskError::InvalidParameter(format!(
            "window {window_s} s with overlap {overlap_s} s at {fs} Hz gives window {w} and stride {stride} samples"
        )));
    }
    let (w, stride) = (w as usize, stride as usize);
    let len = signal.first().map_or(0, Vec::len);
    if signal.iter().any(|l| l.len() != len) {
        return Err(TaskError::ShapeMismatch("leads differ in length".into()));
    }
    let mut out = Windows { segments: Vec::new(), offsets: Vec::new(), window_len: w, stride, source_len: len };
    if len == 0 {
        return Ok(out);
    }
    let mut off = 0;
    loop {
        let end = off + w;
        if end > len && pad == PadMode::Drop {
            break;
        }
        let seg = signal
            .iter()
            .map(|lead| {
                let mut s = lead[off..end.min(len)].to_vec();
                s.resize(w, 0.0);
                s
            })
            .collect();
        out.segments.push(seg);
        out.offsets.push(off);
        if end >= len {
            break;
        }
        off += stride;
    }
    Ok(out)
}

/// Rebuilds a `[lead][sample]` signal of `len` samples from windows (`[window][lead][sample]`)
/// at `offsets`, averaging where windows overlap. Uncovered samples are zero.
pub fn reassemble(segments: &[Vec<Vec<f64>>], offsets: &[usize], len: usize) -> Result<Vec<Vec<f64>>> {
    if segments.len() != offsets.len() {
        return Err(TaskError::ShapeMismatch(format!("{} windows, {} offsets", segments.len(), offsets.len())));
    }
    let leads = segments.first().map_or(0, Vec::len);
    let mut sum = vec![vec![0.0; len]; leads];
    let mut count = vec![0u32; len];
    for (seg, &off) in segments.iter().zip(offsets) {
        if seg.len() != leads {
            return Err(TaskError::ShapeMismatch("windows differ in lead count".into()));
        }
        let w = seg.first().map_or(0, Vec::len);
        for t in 0..w.min(len.saturating_sub(off)) {
            count[off + t] += 1;
            for (l, lead) in seg.iter().enumerate() {
                sum[l][off + t] += lead[t];
            }
        }
    }
    for lead in &mut sum {
        for (v, &c) in lead.iter_mut().zip(&count) {
            if c > 1 {
                *v /= c as f64;
            }
        }
    }
    Ok(sum)
}
