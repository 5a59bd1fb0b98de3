use serde::{Deserialize, Serialize};

use super::{Result, WfdbError};

/// On-disk sample encodings understood by the reader.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SignalFormat {
    /// 16-bit two's complement, little-endian.
    Fmt16,
    /// Two 12-bit two's complement samples packed into three bytes.
    Fmt212,
    /// 8-bit offset binary (subtract 128).
    Fmt80,
}

impl SignalFormat {
    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            16 => Ok(Self::Fmt16),
            212 => Ok(Self::Fmt212),
            80 => Ok(Self::Fmt80),
            other => Err(WfdbError::UnsupportedFormat(other.to_string())),
        }
    }

    pub fn code(self) -> u32 {
        match self {
            Self::Fmt16 => 16,
            Self::Fmt212 => 212,
            Self::Fmt80 => 80,
        }
    }
}

/// Decodes a signal file payload into per-channel ADC samples.
///
/// Samples of the `n_sig` channels stored in the file are interleaved frame by frame.
/// The result is indexed `[channel][sample]`.
pub fn decode_samples(raw: &[u8], fmt: SignalFormat, n_sig: usize) -> Result<Vec<Vec<i32>>> {
    if n_sig == 0 {
        return if raw.is_empty() {
            Ok(Vec::new())
        } else {
            Err(WfdbError::TruncatedData(
                "signal data present for a file with no channels".into(),
            ))
        };
    }
    let flat = decode_flat(raw, fmt)?;
    let n_frames = flat.len() / n_sig;
    let leftover = flat.len() - n_frames * n_sig;
    // Format 212 pads an odd sample count to a whole byte triple; at most one
    // sample of that padding may appear beyond the last frame.
    if leftover != 0 && !(fmt == SignalFormat::Fmt212 && leftover == 1 && raw.len().is_multiple_of(3)) {
        return Err(WfdbError::TruncatedData(format!(
            "{} samples is not a whole number of {n_sig}-channel frames",
            flat.len()
        )));
    }

    let mut channels = vec![Vec::with_capacity(n_frames); n_sig];
    for frame in flat.chunks_exact(n_sig).take(n_frames) {
        for (ch, &v) in channels.iter_mut().zip(frame) {
            ch.push(v);
        }
    }
    Ok(channels)
}

fn decode_flat(raw: &[u8], fmt: SignalFormat) -> Result<Vec<i32>> {
    match fmt {
        SignalFormat::Fmt16 => {
            if !raw.len().is_multiple_of(2) {
                return Err(WfdbError::TruncatedData(format!(
                    "format 16 payload of {} bytes is not a whole number of samples",
                    raw.len()
                )));
            }
            Ok(raw
                .chunks_exact(2)
                .map(|b| i16::from_le_bytes([b[0], b[1]]) as i32)
                .collect())
        }
        SignalFormat::Fmt80 => Ok(raw.iter().map(|&b| b as i32 - 128).collect()),
        SignalFormat::Fmt212 => {
            let tail = raw.len() % 3;
            if tail == 1 {
                return Err(WfdbError::TruncatedData(format!(
                    "format 212 payload of {} bytes ends mid-sample",
                    raw.len()
                )));
            }
            let mut out = Vec::with_capacity(raw.len() / 3 * 2 + 1);
            for b in raw.chunks_exact(3) {
                let s1 = ((b[1] as i32 & 0x0F) << 8) | b[0] as i32;
                let s2 = ((b[1] as i32 & 0xF0) << 4) | b[2] as i32;
                out.push(sign_extend_12(s1));
                out.push(sign_extend_12(s2));
            }
            if tail == 2 {
                let b = &raw[raw.len() - 2..];
                out.push(sign_extend_12(((b[1] as i32 & 0x0F) << 8) | b[0] as i32));
            }
            Ok(out)
        }
    }
}

fn sign_extend_12(v: i32) -> i32 {
    if v & 0x800 != 0 {
        v - 0x1000
    } else {
        v
    }
}

/// Interleaves channels frame by frame as little-endian 16-bit words.
pub fn encode_fmt16(channels: &[Vec<i32>]) -> Result<Vec<u8>> {
    let n_frames = channels.first().map_or(0, Vec::len);
    if channels.iter().any(|c| c.len() != n_frames) {
        return Err(WfdbError::InvalidRecord("channels differ in length".into()));
    }
    let mut out = Vec::with_capacity(n_frames * channels.len() * 2);
    for t in 0..n_frames {
        for (lead, ch) in channels.iter().enumerate() {
            let v = i16::try_from(ch[t]).map_err(|_| WfdbError::RangeOverflow {
                lead,
                value: ch[t] as f64,
            })?;
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Converts an ADC value to physical units: `(adc - baseline) / gain`.
pub fn adc_to_physical(adc: i32, gain: f64, baseline: i32) -> f64 {
    (adc as f64 - baseline as f64) / gain
}
