use serde::{Deserialize, Serialize};

use super::{Result, TaskError};
use crate::wfdb::AnnotationSet;

/// Half-open `[onset, offset)` sample intervals.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IntervalList(pub Vec<[usize; 2]>);

impl IntervalList {
    pub fn is_normalized(&self) -> bool {
        self.0.iter().all(|&[a, b]| a < b) && self.0.windows(2).all(|w| w[0][1] < w[1][0])
    }

    pub fn total_len(&self) -> usize {
        self.0.iter().map(|&[a, b]| b - a).sum()
    }
}

/// Sorts and merges overlapping or touching intervals.
pub fn normalize(intervals: &[[usize; 2]]) -> Result<IntervalList> {
    if let Some(&[a, b]) = intervals.iter().find(|&&[a, b]| a >= b) {
        return Err(TaskError::InvalidInterval { onset: a, offset: b });
    }
    let mut sorted = intervals.to_vec();
    sorted.sort_unstable();
    let mut out: Vec<[usize; 2]> = Vec::with_capacity(sorted.len());
    for [a, b] in sorted {
        match out.last_mut() {
            Some(last) if a <= last[1] => last[1] = last[1].max(b),
            _ => out.push([a, b]),
        }
    }
    Ok(IntervalList(out))
}

pub fn intervals_to_mask(intervals: &[[usize; 2]], length: usize) -> Result<Vec<u8>> {
    let mut mask = vec![0u8; length];
    for &[a, b] in intervals {
        if a >= b {
            return Err(TaskError::InvalidInterval { onset: a, offset: b });
        }
        if b > length {
            return Err(TaskError::OutOfRange { index: b, length });
        }
        mask[a..b].fill(1);
    }
    Ok(mask)
}

/// Maximal runs of non-zero entries.
pub fn mask_to_intervals(mask: &[u8]) -> IntervalList {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &m) in mask.iter().enumerate() {
        match (m != 0, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push([s, i]);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push([s, mask.len()]);
    }
    IntervalList(out)
}

/// Intervals recovered from onset/offset annotations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedIntervals {
    pub intervals: IntervalList,
    /// The last onset had no offset and was closed at the record end.
    pub open_ended: bool,
}

/// Pairs every onset with the next offset. Onsets seen while an interval is open are
/// ignored; a trailing onset closes at `record_len`.
pub fn ann_to_intervals(ann: &AnnotationSet, onset: &str, offset: &str, record_len: usize) -> Result<PairedIntervals> {
    let mut out = Vec::new();
    let mut open: Option<usize> = None;
    for a in &ann.entries {
        let s = a.sample as usize;
        if a.symbol == onset {
            open.get_or_insert(s);
        } else if a.symbol == offset {
            let start = open.take().ok_or(TaskError::UnpairedOffset { sample: s })?;
            if s > start {
                out.push([start, s]);
            }
        }
    }
    let open_ended = open.is_some();
    if let Some(start) = open {
        if start < record_len {
            out.push([start, record_len]);
        }
    }
    Ok(PairedIntervals { intervals: IntervalList(out), open_ended })
}
