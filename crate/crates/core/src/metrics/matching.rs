use serde::{Deserialize, Serialize};

use super::{f1, ratio, MetricsError, Result};
use crate::taskout::IntervalList;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// `pred - truth` of each matched pair, in truth order.
    pub errors: Vec<i64>,
    /// `(truth index, pred index)` of each matched pair, in truth order.
    pub pairs: Vec<(usize, usize)>,
}

fn check_sorted(v: &[usize], which: &'static str) -> Result<()> {
    if v.windows(2).all(|w| w[0] <= w[1]) {
        Ok(())
    } else {
        Err(MetricsError::UnsortedInput(which))
    }
}

/// Better of two `(matches, total |error|)` scores.
fn better(a: (usize, u64), b: (usize, u64)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Optimal non-crossing matching of `truth[ts..te]` against `pred[ps..pe]`.
fn match_cluster(truth: &[usize], pred: &[usize], tol: usize, pairs: &mut Vec<(usize, usize)>, ts: usize, ps: usize) {
    let (nt, np) = (truth.len(), pred.len());
    let w = np + 1;
    let mut dp = vec![(0usize, 0u64); (nt + 1) * w];
    for i in 1..=nt {
        for j in 1..=np {
            let mut best = dp[(i - 1) * w + j];
            let skip_pred = dp[i * w + j - 1];
            if better(skip_pred, best) {
                best = skip_pred;
            }
            let d = truth[i - 1].abs_diff(pred[j - 1]);
            if d <= tol {
                let prev = dp[(i - 1) * w + j - 1];
                let with = (prev.0 + 1, prev.1 + d as u64);
                if better(with, best) {
                    best = with;
                }
            }
            dp[i * w + j] = best;
        }
    }
    // walk back preferring to leave later predictions unmatched, so ties go to earlier ones
    let mut found = Vec::new();
    let (mut i, mut j) = (nt, np);
    while i > 0 && j > 0 {
        let cur = dp[i * w + j];
        if dp[i * w + j - 1] == cur {
            j -= 1;
            continue;
        }
        let d = truth[i - 1].abs_diff(pred[j - 1]);
        let prev = dp[(i - 1) * w + j - 1];
        if d <= tol && (prev.0 + 1, prev.1 + d as u64) == cur {
            found.push((ts + i - 1, ps + j - 1));
            i -= 1;
            j -= 1;
        } else {
            i -= 1;
        }
    }
    found.reverse();
    pairs.extend(found);
}

/// One-to-one matching of ascending point lists within `±tol` samples. Maximizes the number
/// of matches, then minimizes the summed absolute error.
pub fn match_points(pred: &[usize], truth: &[usize], tol: usize) -> Result<MatchResult> {
    check_sorted(pred, "predicted")?;
    check_sorted(truth, "reference")?;
    // Points separated by a gap wider than tol cannot share a pair, so the merged sequence
    // splits into independent clusters.
    let mut pairs = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < truth.len() && j < pred.len() {
        let (ts, ps) = (i, j);
        let mut last = truth[i].min(pred[j]);
        loop {
            let next = match (truth.get(i), pred.get(j)) {
                (Some(&a), Some(&b)) => a.min(b),
                (Some(&a), None) => a,
                (None, Some(&b)) => b,
                (None, None) => break,
            };
            if next - last > tol {
                break;
            }
            if truth.get(i) == Some(&next) {
                i += 1;
            } else {
                j += 1;
            }
            last = next;
        }
        match_cluster(&truth[ts..i], &pred[ps..j], tol, &mut pairs, ts, ps);
    }
    let errors = pairs.iter().map(|&(t, p)| pred[p] as i64 - truth[t] as i64).collect();
    Ok(MatchResult { tp: pairs.len(), fp: pred.len() - pairs.len(), fn_: truth.len() - pairs.len(), errors, pairs })
}

fn tol_samples(tol_s: f64, fs: f64) -> Result<usize> {
    if !(tol_s >= 0.0 && fs > 0.0 && tol_s.is_finite()) {
        return Err(MetricsError::InvalidParameter(format!("tolerance {tol_s} s at {fs} Hz")));
    }
    Ok((tol_s * fs).round() as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QrsRecordScore {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// 1 when the record has no false positives and no misses, else 0.
    pub score: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrsReport {
    pub records: Vec<QrsRecordScore>,
    pub score: f64,
}

/// Strict per-record R-peak score. Peaks are matched over the whole record; misses and
/// false positives count only within `[edge_s * fs, record_len - edge_s * fs]`.
pub fn qrs_score_record(
    pred: &[usize],
    truth: &[usize],
    fs: f64,
    tol_s: f64,
    edge_s: f64,
    record_len: usize,
) -> Result<QrsRecordScore> {
    let tol = tol_samples(tol_s, fs)?;
    let m = match_points(pred, truth, tol)?;
    let lo = edge_s * fs;
    let hi = record_len as f64 - edge_s * fs;
    let inside = |x: usize| (x as f64) >= lo && (x as f64) <= hi;
    let mut t_hit = vec![false; truth.len()];
    let mut p_hit = vec![false; pred.len()];
    for &(t, p) in &m.pairs {
        t_hit[t] = true;
        p_hit[p] = true;
    }
    let tp = truth.iter().zip(&t_hit).filter(|(&x, &h)| h && inside(x)).count();
    let fn_ = truth.iter().zip(&t_hit).filter(|(&x, &h)| !h && inside(x)).count();
    let fp = pred.iter().zip(&p_hit).filter(|(&x, &h)| !h && inside(x)).count();
    Ok(QrsRecordScore { tp, fp, fn_, score: u8::from(fp == 0 && fn_ == 0) })
}

/// Mean of per-record scores.
pub fn qrs_score(
    pred: &[Vec<usize>],
    truth: &[Vec<usize>],
    record_len: &[usize],
    fs: f64,
    tol_s: f64,
    edge_s: f64,
) -> Result<QrsReport> {
    if pred.len() != truth.len() || truth.len() != record_len.len() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{} predicted, {} reference records, {} lengths",
            pred.len(),
            truth.len(),
            record_len.len()
        )));
    }
    let records = pred
        .iter()
        .zip(truth)
        .zip(record_len)
        .map(|((p, t), &n)| qrs_score_record(p, t, fs, tol_s, edge_s, n))
        .collect::<Result<Vec<_>>>()?;
    let score = ratio(records.iter().map(|r| r.score as f64).sum(), records.len() as f64);
    Ok(QrsReport { records, score })
}

/// Onset and offset sample lists of one waveform.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Boundaries {
    pub onsets: Vec<usize>,
    pub offsets: Vec<usize>,
}

impl Boundaries {
    /// Onsets and offsets of half-open intervals; the offset is the last covered sample.
    pub fn from_intervals(iv: &IntervalList) -> Self {
        Self { onsets: iv.0.iter().map(|i| i[0]).collect(), offsets: iv.0.iter().map(|i| i[1] - 1).collect() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Waves {
    pub p: Boundaries,
    pub qrs: Boundaries,
    pub t: Boundaries,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveScores {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub se: f64,
    pub ppv: f64,
    pub f1: f64,
    pub mean_error_ms: f64,
    /// Population standard deviation of matched errors.
    pub std_error_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelineationReport {
    pub p: WaveScores,
    pub qrs: WaveScores,
    pub t: WaveScores,
    pub macro_f1: f64,
}

fn wave_scores(pred: &Boundaries, truth: &Boundaries, tol: usize, fs: f64) -> Result<WaveScores> {
    let on = match_points(&pred.onsets, &truth.onsets, tol)?;
    let off = match_points(&pred.offsets, &truth.offsets, tol)?;
    let (tp, fp, fn_) = (on.tp + off.tp, on.fp + off.fp, on.fn_ + off.fn_);
    let ms: Vec<f64> = on.errors.iter().chain(&off.errors).map(|&e| e as f64 * 1000.0 / fs).collect();
    let n = ms.len() as f64;
    let mean = ratio(ms.iter().sum(), n);
    let var = ratio(ms.iter().map(|e| (e - mean).powi(2)).sum(), n);
    let se = ratio(tp as f64, (tp + fn_) as f64);
    let ppv = ratio(tp as f64, (tp + fp) as f64);
    Ok(WaveScores { tp, fp, fn_, se, ppv, f1: f1(se, ppv), mean_error_ms: mean, std_error_ms: var.sqrt() })
}

/// Per-waveform sensitivity, positive predictive value, f1 and boundary error statistics,
/// with onsets and offsets matched separately and pooled.
pub fn delineation_metrics(pred: &Waves, truth: &Waves, fs: f64, tol_s: f64) -> Result<DelineationReport> {
    let tol = tol_samples(tol_s, fs)?;
    let p = wave_scores(&pred.p, &truth.p, tol, fs)?;
    let qrs = wave_scores(&pred.qrs, &truth.qrs, tol, fs)?;
    let t = wave_scores(&pred.t, &truth.t, tol, fs)?;
    Ok(DelineationReport { p, qrs, t, macro_f1: (p.f1 + qrs.f1 + t.f1) / 3.0 })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive search over all one-to-one matchings: most pairs, then least |error|.
    pub(crate) fn brute_force(pred: &[usize], truth: &[usize], tol: usize) -> (usize, u64) {
        fn go(i: usize, used: &mut Vec<bool>, pred: &[usize], truth: &[usize], tol: usize) -> (usize, u64) {
            if i == truth.len() {
                return (0, 0);
            }
            let mut best = go(i + 1, used, pred, truth, tol);
            for j in 0..pred.len() {
                let d = truth[i].abs_diff(pred[j]);
                if !used[j] && d <= tol {
                    used[j] = true;
                    let r = go(i + 1, used, pred, truth, tol);
                    used[j] = false;
                    let cand = (r.0 + 1, r.1 + d as u64);
                    if cand.0 > best.0 || (cand.0 == best.0 && cand.1 < best.1) {
                        best = cand;
                    }
                }
            }
            best
        }
        go(0, &mut vec![false; pred.len()], pred, truth, tol)
    }

    #[test]
    fn identical_lists() {
        let v = [3, 10, 40, 41];
        let m = match_points(&v, &v, 2).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (4, 0, 0));
        assert!(m.errors.iter().all(|&e| e == 0));
    }

    #[test]
    fn tolerance_boundary() {
        assert_eq!(match_points(&[105], &[100], 5).unwrap().tp, 1);
        let m = match_points(&[106], &[100], 5).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (0, 1, 1));
        assert!(matches!(match_points(&[5, 3], &[1], 1), Err(MetricsError::UnsortedInput(_))));
    }

    #[test]
    fn greedy_trap_is_avoided() {
        // nearest-first would pair 10 with 11 and leave 8 unmatched
        let m = match_points(&[8, 11], &[10, 13], 2).unwrap();
        assert_eq!(m.tp, 2);
        assert_eq!(m.errors, [-2, -2]);
    }

    #[test]
    fn ties_go_to_earlier_prediction() {
        let m = match_points(&[1, 3], &[2], 1).unwrap();
        assert_eq!(m.pairs, [(0, 0)]);
    }

    #[test]
    fn exhaustive_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..3000 {
            let n = rng.random_range(0..=8);
            let np = rng.random_range(0..=n);
            let mut pred: Vec<usize> = (0..np).map(|_| rng.random_range(0..40)).collect();
            let mut truth: Vec<usize> = (0..n - np).map(|_| rng.random_range(0..40)).collect();
            pred.sort_unstable();
            truth.sort_unstable();
            let tol = rng.random_range(0..6);
            let m = match_points(&pred, &truth, tol).unwrap();
            let cost: u64 = m.errors.iter().map(|e| e.unsigned_abs()).sum();
            assert_eq!((m.tp, cost), brute_force(&pred, &truth, tol), "{pred:?} {truth:?} {tol}");
            assert_eq!(m.tp, m.errors.len());
        }
    }

    #[test]
    fn qrs_rules() {
        let fs = 500.0;
        let truth: Vec<usize> = (1..20).map(|i| i * 250).collect();
        let len = 5000;
        assert_eq!(qrs_score_record(&truth, &truth, fs, 0.075, 0.5, len).unwrap().score, 1);
        // peak at 0.2 s inside the edge margin, missed
        let mut t2 = vec![100];
        t2.extend(&truth);
        assert_eq!(qrs_score_record(&truth, &t2, fs, 0.075, 0.5, len).unwrap().score, 1);
        let mut extra = truth.clone();
        extra.insert(10, 2600);
        let r = qrs_score_record(&extra, &truth, fs, 0.075, 0.5, len).unwrap();
        assert_eq!((r.fp, r.score), (1, 0));
        let rep = qrs_score(&[truth.clone(), extra], &[truth.clone(), truth], &[len, len], fs, 0.075, 0.5).unwrap();
        assert_eq!(rep.score, 0.5);
    }

    #[test]
    fn delineation_shift() {
        let truth = Waves {
            p: Boundaries { onsets: vec![100, 600], offsets: vec![150, 650] },
            qrs: Boundaries { onsets: vec![200, 700], offsets: vec![240, 740] },
            t: Boundaries { onsets: vec![300, 800], offsets: vec![400, 900] },
        };
        let shift = |b: &Boundaries| Boundaries {
            onsets: b.onsets.iter().map(|x| x + 2).collect(),
            offsets: b.offsets.iter().map(|x| x + 2).collect(),
        };
        let pred = Waves { p: shift(&truth.p), qrs: shift(&truth.qrs), t: shift(&truth.t) };
        let r = delineation_metrics(&pred, &truth, 500.0, 0.15).unwrap();
        for w in [r.p, r.qrs, r.t] {
            assert_eq!((w.se, w.ppv, w.f1), (1.0, 1.0, 1.0));
            assert!((w.mean_error_ms - 4.0).abs() < 1e-12);
            assert_eq!(w.std_error_ms, 0.0);
        }
        assert_eq!(r.macro_f1, 1.0);
        let perfect = delineation_metrics(&truth, &truth, 500.0, 0.15).unwrap();
        assert_eq!((perfect.qrs.mean_error_ms, perfect.qrs.std_error_ms), (0.0, 0.0));
    }

    #[test]
    fn delineation_counts_by_hand() {
        // QRS: truth onsets 10, 50, 90; pred onsets 12, 70, 91 (tol 5): tp 2 (10~12, 90~91), fp 1, fn 1
        //      truth offsets 20, 60, 100; pred offsets 19, 62: tp 2, fn 1
        let truth = Waves { qrs: Boundaries { onsets: vec![10, 50, 90], offsets: vec![20, 60, 100] }, ..Default::default() };
        let pred = Waves { qrs: Boundaries { onsets: vec![12, 70, 91], offsets: vec![19, 62] }, ..Default::default() };
        let r = delineation_metrics(&pred, &truth, 1000.0, 0.005).unwrap();
        assert_eq!((r.qrs.tp, r.qrs.fp, r.qrs.fn_), (4, 1, 2));
        assert!((r.qrs.se - 4.0 / 6.0).abs() < 1e-15);
        assert!((r.qrs.ppv - 0.8).abs() < 1e-15);
        let errs = [2.0, 1.0, -1.0, 2.0];
        let mean = errs.iter().sum::<f64>() / 4.0;
        assert!((r.qrs.mean_error_ms - mean).abs() < 1e-12);
        let sd = (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
        assert!((r.qrs.std_error_ms - sd).abs() < 1e-12);
        assert_eq!(r.p.f1, 0.0);
    }

    proptest! {
        #[test]
        fn swap_preserves_matches(mut a in proptest::collection::vec(0usize..500, 0..30), mut b in proptest::collection::vec(0usize..500, 0..30), tol in 0usize..10) {
            a.sort_unstable();
            b.sort_unstable();
            let x = match_points(&a, &b, tol).unwrap();
            let y = match_points(&b, &a, tol).unwrap();
            prop_assert_eq!(x.tp, y.tp);
            let cx: u64 = x.errors.iter().map(|e| e.unsigned_abs()).sum();
            let cy: u64 = y.errors.iter().map(|e| e.unsigned_abs()).sum();
            prop_assert_eq!(cx, cy);
        }

        #[test]
        fn qrs_tolerates_jitter(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let fs = 250.0;
            let truth: Vec<usize> = (0..60).map(|i| 100 + i * 200 + rng.random_range(0..20)).collect();
            let max = (0.075f64 * fs).floor() as i64;
            let pred: Vec<usize> = truth.iter().map(|&t| (t as i64 + rng.random_range(-max..=max)) as usize).collect();
            let mut pred = pred;
            pred.sort_unstable();
            let r = qrs_score_record(&pred, &truth, fs, 0.075, 0.5, 12_200).unwrap();
            prop_assert_eq!(r.score, 1);
        }
    }
}
