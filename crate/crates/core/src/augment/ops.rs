//! Individual augmenters.
//!
//! Stochastic augmenters are split into a draw step, which consumes one sample's random
//! stream, and a deterministic apply step over explicit draws. The public entry points
//! (`mixup`, `cutmix`, ...) combine both.

use std::f64::consts::PI;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use super::batch::{Batch, Labels};
use super::rng::StageRng;
use super::{AugmentError, Result};
use crate::sigproc::{interp_linear, mean_std};

/// Bernoulli selection of one sample.
pub fn is_selected(rng: &mut ChaCha8Rng, prob: f64) -> bool {
    if prob >= 1.0 {
        true
    } else if prob <= 0.0 {
        false
    } else {
        rng.random_bool(prob)
    }
}

fn beta(a: f64, b: f64) -> Result<Beta<f64>> {
    Beta::new(a, b).map_err(|e| AugmentError::InvalidParameter(format!("Beta({a}, {b}): {e}")))
}

fn draw_partner(rng: &mut ChaCha8Rng, batch_size: usize, index: usize) -> usize {
    let j = rng.random_range(0..batch_size - 1);
    if j >= index {
        j + 1
    } else {
        j
    }
}

// ---------------------------------------------------------------- mixup

/// Mixing coefficient and partner for one selected sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixDraw {
    pub alpha: f64,
    pub partner: usize,
}

/// Draws for every sample; `None` means the sample is left alone.
pub fn draw_mix(batch_size: usize, beta_a: f64, beta_b: f64, prob: f64, rng: &StageRng) -> Result<Vec<Option<MixDraw>>> {
    let dist = beta(beta_a, beta_b)?;
    Ok((0..batch_size)
        .map(|i| {
            let mut r = rng.sample(i);
            if batch_size < 2 || !is_selected(&mut r, prob) {
                return None;
            }
            let alpha = dist.sample(&mut r);
            let partner = draw_partner(&mut r, batch_size, i);
            Some(MixDraw { alpha, partner })
        })
        .collect())
}

/// `x_i <- a x_i + (1 - a) x_j`, `y_i <- a y_i + (1 - a) y_j`, using the unmodified batch
/// for partners.
pub fn apply_mixup(batch: &Batch, draws: &[Option<MixDraw>]) -> Batch {
    let mut out = batch.clone();
    for (i, d) in draws.iter().enumerate() {
        let Some(MixDraw { alpha, partner: j }) = *d else { continue };
        let mixed = &batch.signals.index_axis(Axis(0), i) * alpha
            + &batch.signals.index_axis(Axis(0), j) * (1.0 - alpha);
        out.signals.index_axis_mut(Axis(0), i).assign(&mixed);
        blend_labels(&mut out.labels, &batch.labels, i, j, alpha);
    }
    out
}

fn blend_labels(out: &mut Labels, src: &Labels, i: usize, j: usize, alpha: f64) {
    match (out, src) {
        (Labels::Classification(o), Labels::Classification(s)) => {
            let v = &s.row(i) * alpha + &s.row(j) * (1.0 - alpha);
            o.row_mut(i).assign(&v);
        }
        (Labels::Segmentation(o), Labels::Segmentation(s)) => {
            let v = &s.index_axis(Axis(0), i) * alpha + &s.index_axis(Axis(0), j) * (1.0 - alpha);
            o.index_axis_mut(Axis(0), i).assign(&v);
        }
        _ => unreachable!("label kind cannot change"),
    }
}

pub fn mixup(batch: &Batch, beta_a: f64, beta_b: f64, prob: f64, rng: &StageRng) -> Result<Batch> {
    let draws = draw_mix(batch.batch_size(), beta_a, beta_b, prob, rng)?;
    Ok(apply_mixup(batch, &draws))
}

// ---------------------------------------------------------------- cutmix

/// A contiguous segment `[start, start + cut)` taken from `partner`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutDraw {
    pub alpha: f64,
    pub partner: usize,
    pub start: usize,
}

impl CutDraw {
    /// Number of time steps kept from the sample itself: `round(alpha * len)`.
    pub fn kept(&self, len: usize) -> usize {
        ((self.alpha * len as f64).round() as usize).min(len)
    }

    pub fn cut(&self, len: usize) -> usize {
        len - self.kept(len)
    }

    /// Realized fraction of self samples, `kept / len`.
    pub fn realized_alpha(&self, len: usize) -> f64 {
        if len == 0 {
            1.0
        } else {
            self.kept(len) as f64 / len as f64
        }
    }

    /// Binary mask with ones where the sample keeps its own values.
    pub fn mask(&self, len: usize) -> Vec<u8> {
        let cut = self.cut(len);
        (0..len)
            .map(|t| u8::from(!(t >= self.start && t < self.start + cut)))
            .collect()
    }
}

pub fn draw_cut(batch_size: usize, len: usize, beta_a: f64, beta_b: f64, prob: f64, rng: &StageRng) -> Result<Vec<Option<CutDraw>>> {
    let dist = beta(beta_a, beta_b)?;
    Ok((0..batch_size)
        .map(|i| {
            let mut r = rng.sample(i);
            if batch_size < 2 || !is_selected(&mut r, prob) {
                return None;
            }
            let alpha = dist.sample(&mut r);
            let partner = draw_partner(&mut r, batch_size, i);
            let mut d = CutDraw { alpha, partner, start: 0 };
            d.start = r.random_range(0..=len - d.cut(len));
            Some(d)
        })
        .collect())
}

/// `x_i <- M x_i + (1 - M) x_j` with a single-segment mask; classification labels blended
/// by the realized fraction, segmentation labels spliced with the same mask.
pub fn apply_cutmix(batch: &Batch, draws: &[Option<CutDraw>]) -> Batch {
    let len = batch.len();
    let mut out = batch.clone();
    for (i, d) in draws.iter().enumerate() {
        let Some(d) = *d else { continue };
        let (a, b) = (d.start, d.start + d.cut(len));
        let j = d.partner;
        let src = batch.signals.slice(s![j, .., a..b]);
        out.signals.slice_mut(s![i, .., a..b]).assign(&src);
        match (&mut out.labels, &batch.labels) {
            (Labels::Segmentation(o), Labels::Segmentation(s)) => {
                o.slice_mut(s![i, a..b, ..]).assign(&s.slice(s![j, a..b, ..]));
            }
            (o @ Labels::Classification(_), s) => blend_labels(o, s, i, j, d.realized_alpha(len)),
            _ => unreachable!("label kind cannot change"),
        }
    }
    out
}

pub fn cutmix(batch: &Batch, beta_a: f64, beta_b: f64, prob: f64, rng: &StageRng) -> Result<Batch> {
    let draws = draw_cut(batch.batch_size(), batch.len(), beta_a, beta_b, prob, rng)?;
    Ok(apply_cutmix(batch, &draws))
}

// ---------------------------------------------------------------- flip

pub fn draw_selection(batch_size: usize, prob: f64, rng: &StageRng) -> Vec<bool> {
    (0..batch_size).map(|i| is_selected(&mut rng.sample(i), prob)).collect()
}

pub fn apply_flip(batch: &Batch, selected: &[bool]) -> Batch {
    let mut out = batch.clone();
    for (i, &sel) in selected.iter().enumerate() {
        if sel {
            out.signals.index_axis_mut(Axis(0), i).mapv_inplace(|v| -v);
        }
    }
    out
}

pub fn random_flip(batch: &Batch, prob: f64, rng: &StageRng) -> Batch {
    apply_flip(batch, &draw_selection(batch.batch_size(), prob, rng))
}

// ---------------------------------------------------------------- noise

fn lead_std(x: ArrayView2<f64>, lead: usize) -> f64 {
    mean_std(x.row(lead).iter().copied()).1
}

/// Adds zero-mean gaussian noise with standard deviation `sigma_rel * std(lead)`.
pub fn add_gaussian_noise(batch: &Batch, sigma_rel: f64, prob: f64, rng: &StageRng) -> Batch {
    let mut out = batch.clone();
    for i in 0..batch.batch_size() {
        let mut r = rng.sample(i);
        if !is_selected(&mut r, prob) {
            continue;
        }
        let x = batch.signals.index_axis(Axis(0), i);
        for lead in 0..batch.n_leads() {
            let sigma = sigma_rel * lead_std(x, lead);
            let mut row = out.signals.slice_mut(s![i, lead, ..]);
            if sigma == 0.0 {
                continue;
            }
            for v in row.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut r);
                *v += sigma * z;
            }
        }
    }
    out
}

/// Per-lead frequency (Hz) and phase (rad) of added sinusoidal noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SineDraw {
    pub freq_hz: Vec<f64>,
    pub phase: Vec<f64>,
}

pub fn draw_sine(batch_size: usize, n_leads: usize, freq_range: [f64; 2], prob: f64, rng: &StageRng) -> Vec<Option<SineDraw>> {
    (0..batch_size)
        .map(|i| {
            let mut r = rng.sample(i);
            if !is_selected(&mut r, prob) {
                return None;
            }
            let mut d = SineDraw { freq_hz: Vec::with_capacity(n_leads), phase: Vec::with_capacity(n_leads) };
            for _ in 0..n_leads {
                let f = if freq_range[0] == freq_range[1] {
                    freq_range[0]
                } else {
                    r.random_range(freq_range[0]..=freq_range[1])
                };
                d.freq_hz.push(f);
                d.phase.push(r.random_range(0.0..2.0 * PI));
            }
            Some(d)
        })
        .collect()
}

pub fn apply_sine_noise(batch: &Batch, amp_rel: f64, draws: &[Option<SineDraw>]) -> Batch {
    let mut out = batch.clone();
    for (i, d) in draws.iter().enumerate() {
        let Some(d) = d else { continue };
        let x = batch.signals.index_axis(Axis(0), i);
        for lead in 0..batch.n_leads() {
            let amp = amp_rel * lead_std(x, lead);
            let w = 2.0 * PI * d.freq_hz[lead] / batch.fs;
            for (t, v) in out.signals.slice_mut(s![i, lead, ..]).iter_mut().enumerate() {
                *v += amp * (w * t as f64 + d.phase[lead]).sin();
            }
        }
    }
    out
}

pub fn add_sine_noise(batch: &Batch, amp_rel: f64, freq_range: [f64; 2], prob: f64, rng: &StageRng) -> Batch {
    let draws = draw_sine(batch.batch_size(), batch.n_leads(), freq_range, prob, rng);
    apply_sine_noise(batch, amp_rel, &draws)
}

// ---------------------------------------------------------------- masking

/// Masking windows for one sample as half-open `[start, end)` ranges.
///
/// Without critical points, windows of `round(window_s * fs)` samples start uniformly at
/// random. With critical points, up to `n_windows` distinct points are chosen and each
/// window is centred on its point, widened by `pad_s` on both sides and clipped to the signal.
pub fn draw_mask_windows(
    rng: &mut ChaCha8Rng,
    len: usize,
    fs: f64,
    window_s: f64,
    n_windows: usize,
    pad_s: f64,
    critical_points: Option<&[usize]>,
) -> Vec<(usize, usize)> {
    let width = (window_s * fs).round() as usize;
    if width == 0 || n_windows == 0 || len == 0 {
        return Vec::new();
    }
    match critical_points {
        Some(points) if !points.is_empty() => {
            let pad = (pad_s * fs).round() as i64;
            let k = n_windows.min(points.len());
            let mut chosen: Vec<usize> = sample_indices(rng, points.len(), k).into_iter().map(|j| points[j]).collect();
            chosen.sort_unstable();
            chosen
                .into_iter()
                .map(|c| {
                    let start = c as i64 - (width / 2) as i64 - pad;
                    let end = start + width as i64 + 2 * pad;
                    (start.clamp(0, len as i64) as usize, end.clamp(0, len as i64) as usize)
                })
                .filter(|(a, b)| a < b)
                .collect()
        }
        Some(_) => Vec::new(),
        None => (0..n_windows)
            .map(|_| {
                let w = width.min(len);
                let start = rng.random_range(0..=len - w);
                (start, start + w)
            })
            .collect(),
    }
}

pub fn apply_mask(batch: &Batch, windows: &[Vec<(usize, usize)>], fill: f64) -> Batch {
    let mut out = batch.clone();
    for (i, ws) in windows.iter().enumerate() {
        for &(a, b) in ws {
            out.signals.slice_mut(s![i, .., a..b]).fill(fill);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn random_mask(
    batch: &Batch,
    window_s: f64,
    n_windows: usize,
    fill: f64,
    critical_points: Option<&[Vec<usize>]>,
    pad_s: f64,
    prob: f64,
    rng: &StageRng,
) -> Batch {
    let windows: Vec<Vec<(usize, usize)>> = (0..batch.batch_size())
        .map(|i| {
            let mut r = rng.sample(i);
            if !is_selected(&mut r, prob) {
                return Vec::new();
            }
            let cp = critical_points.map(|c| c[i].as_slice());
            draw_mask_windows(&mut r, batch.len(), batch.fs, window_s, n_windows, pad_s, cp)
        })
        .collect();
    apply_mask(batch, &windows, fill)
}

// ---------------------------------------------------------------- stretch / compress

/// Ratio drawn log-uniformly in `range`.
pub fn draw_ratio(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        return range[0];
    }
    rng.random_range(range[0].ln()..=range[1].ln()).exp()
}

/// Maps each output step to the stretched-signal index it shows, or `None` in zero padding.
fn stretch_layout(len: usize, ratio: f64) -> (usize, Vec<Option<usize>>) {
    let new_len = ((len as f64 * ratio).round() as usize).max(1);
    let layout = if new_len >= len {
        let crop = (new_len - len) / 2;
        (0..len).map(|t| Some(t + crop)).collect()
    } else {
        let pad = (len - new_len) / 2;
        (0..len)
            .map(|t| t.checked_sub(pad).filter(|&s| s < new_len))
            .collect()
    };
    (new_len, layout)
}

/// Resamples a `[lead, time]` signal by `ratio` in time, then centre-crops or zero-pads
/// back to the original length.
pub fn stretch_signal(x: ArrayView2<f64>, ratio: f64) -> Array2<f64> {
    let len = x.ncols();
    let (new_len, layout) = stretch_layout(len, ratio);
    let mut out = Array2::zeros(x.raw_dim());
    for (src, mut dst) in x.rows().into_iter().zip(out.rows_mut()) {
        let stretched = interp_linear(&src.to_vec(), new_len, 1.0 / ratio);
        for (d, pos) in dst.iter_mut().zip(&layout) {
            if let Some(p) = pos {
                *d = stretched[*p];
            }
        }
    }
    out
}

/// Nearest-neighbour version of [`stretch_signal`] for `[time, class]` label maps.
pub fn stretch_labels(y: ArrayView2<f64>, ratio: f64) -> Array2<f64> {
    let len = y.nrows();
    let (_, layout) = stretch_layout(len, ratio);
    let mut out = Array2::zeros(y.raw_dim());
    for (t, pos) in layout.iter().enumerate() {
        if let Some(p) = pos {
            let src = ((*p as f64 / ratio).round() as usize).min(len - 1);
            out.row_mut(t).assign(&y.row(src));
        }
    }
    out
}

pub fn apply_stretch(batch: &Batch, ratios: &[Option<f64>]) -> Batch {
    let mut out = batch.clone();
    for (i, r) in ratios.iter().enumerate() {
        let Some(r) = *r else { continue };
        let x = stretch_signal(batch.signals.index_axis(Axis(0), i), r);
        out.signals.index_axis_mut(Axis(0), i).assign(&x);
        if let (Labels::Segmentation(o), Labels::Segmentation(s)) = (&mut out.labels, &batch.labels) {
            let y = stretch_labels(s.index_axis(Axis(0), i), r);
            o.index_axis_mut(Axis(0), i).assign(&y);
        }
    }
    out
}

pub fn stretch_compress(batch: &Batch, ratio_range: [f64; 2], prob: f64, rng: &StageRng) -> Batch {
    let ratios: Vec<Option<f64>> = (0..batch.batch_size())
        .map(|i| {
            let mut r = rng.sample(i);
            is_selected(&mut r, prob).then(|| draw_ratio(&mut r, ratio_range))
        })
        .collect();
    apply_stretch(batch, &ratios)
}

// ---------------------------------------------------------------- label smoothing

/// `y' = (1 - eps) y + eps / k`.
pub fn label_smooth(labels: &Array2<f64>, epsilon: f64, k: usize) -> Array2<f64> {
    labels.mapv(|y| smooth_value(y, epsilon, k))
}

fn smooth_value(y: f64, epsilon: f64, k: usize) -> f64 {
    (1.0 - epsilon) * y + epsilon / k as f64
}

pub fn apply_label_smooth(batch: &Batch, selected: &[bool], epsilon: f64, k: usize) -> Batch {
    let mut out = batch.clone();
    for (i, &sel) in selected.iter().enumerate() {
        if !sel {
            continue;
        }
        match &mut out.labels {
            Labels::Classification(y) => y.row_mut(i).mapv_inplace(|v| smooth_value(v, epsilon, k)),
            Labels::Segmentation(y) => y
                .index_axis_mut(Axis(0), i)
                .mapv_inplace(|v| smooth_value(v, epsilon, k)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::SeedStream;
    use ndarray::{array, Array3};

    fn toy_batch(b: usize, leads: usize, len: usize, k: usize) -> Batch {
        let x = Array3::from_shape_fn((b, leads, len), |(i, l, t)| (i * 100 + l * 10 + t) as f64 * 0.1 - 3.0);
        let y = Array2::from_shape_fn((b, k), |(i, c)| if c == i % k { 1.0 } else { 0.0 });
        Batch::new(x, Labels::Classification(y), 250.0).unwrap()
    }

    fn stage(seed: u64) -> StageRng {
        SeedStream::new(seed).stage(0)
    }

    #[test]
    fn zero_probability_is_identity() {
        let b = toy_batch(4, 2, 16, 3);
        let r = stage(1);
        assert_eq!(mixup(&b, 0.5, 0.5, 0.0, &r).unwrap(), b);
        assert_eq!(cutmix(&b, 0.5, 0.5, 0.0, &r).unwrap(), b);
        assert_eq!(random_flip(&b, 0.0, &r), b);
        assert_eq!(add_gaussian_noise(&b, 0.5, 0.0, &r), b);
        assert_eq!(add_sine_noise(&b, 0.5, [1.0, 5.0], 0.0, &r), b);
        assert_eq!(stretch_compress(&b, [0.8, 1.25], 0.0, &r), b);
        assert_eq!(random_mask(&b, 0.01, 2, 0.0, None, 0.0, 0.0, &r), b);
    }

    #[test]
    fn mixup_pair_by_hand() {
        let x = array![[[1.0, 2.0, -1.0]], [[3.0, -4.0, 5.0]]];
        let y = array![[1.0, 0.0], [0.0, 1.0]];
        let b = Batch::new(x, Labels::Classification(y), 100.0).unwrap();
        let d = [Some(MixDraw { alpha: 0.25, partner: 1 }), Some(MixDraw { alpha: 0.25, partner: 0 })];
        let out = apply_mixup(&b, &d);
        let expect_x = array![
            [[0.25 * 1.0 + 0.75 * 3.0, 0.25 * 2.0 + 0.75 * -4.0, -0.25 + 0.75 * 5.0]],
            [[0.25 * 3.0 + 0.75 * 1.0, 0.25 * -4.0 + 0.75 * 2.0, 0.25 * 5.0 + -0.75]]
        ];
        for (a, e) in out.signals.iter().zip(expect_x.iter()) {
            assert!((a - e).abs() <= 1e-7);
        }
        let Labels::Classification(ly) = &out.labels else { panic!() };
        assert_eq!(ly, &array![[0.25, 0.75], [0.75, 0.25]]);

        let ident = apply_mixup(&b, &[Some(MixDraw { alpha: 1.0, partner: 1 }), None]);
        assert_eq!(ident, b);
    }

    #[test]
    fn mixup_partners_differ() {
        let b = toy_batch(5, 1, 4, 2);
        for seed in 0..50 {
            let draws = draw_mix(5, 0.5, 0.5, 1.0, &stage(seed)).unwrap();
            for (i, d) in draws.iter().enumerate() {
                let d = d.unwrap();
                assert_ne!(d.partner, i);
                assert!(d.partner < 5);
                assert!((0.0..=1.0).contains(&d.alpha));
            }
        }
        // a single sample has nobody to mix with
        let one = toy_batch(1, 1, 4, 2);
        assert_eq!(mixup(&one, 0.5, 0.5, 1.0, &stage(0)).unwrap(), one);
        let _ = b;
    }

    #[test]
    fn cutmix_segment_by_hand() {
        let x = Array3::from_shape_fn((2, 2, 8), |(i, l, t)| if i == 0 { (l * 8 + t) as f64 } else { -1.0 - (l * 8 + t) as f64 });
        let y = array![[1.0, 0.0], [0.0, 1.0]];
        let b = Batch::new(x.clone(), Labels::Classification(y), 100.0).unwrap();
        let d = CutDraw { alpha: 0.5, partner: 1, start: 4 };
        assert_eq!(d.realized_alpha(8), 0.5);
        assert_eq!(d.mask(8), vec![1, 1, 1, 1, 0, 0, 0, 0]);
        let out = apply_cutmix(&b, &[Some(d), None]);
        for l in 0..2 {
            for t in 0..8 {
                let m = if t < 4 { 1.0 } else { 0.0 };
                let expect = m * x[[0, l, t]] + (1.0 - m) * x[[1, l, t]];
                assert_eq!(out.signals[[0, l, t]], expect);
            }
        }
        let Labels::Classification(ly) = &out.labels else { panic!() };
        assert_eq!(ly.row(0).to_vec(), vec![0.5, 0.5]);
        assert_eq!(out.signals.index_axis(Axis(0), 1), x.index_axis(Axis(0), 1));

        let ident = apply_cutmix(&b, &[Some(CutDraw { alpha: 1.0, partner: 1, start: 8 }), None]);
        assert_eq!(ident, b);
    }

    #[test]
    fn cutmix_splices_segmentation_labels() {
        let x = Array3::zeros((2, 1, 6));
        let y = Array3::from_shape_fn((2, 6, 2), |(i, _, c)| if c == i { 1.0 } else { 0.0 });
        let b = Batch::new(x, Labels::Segmentation(y), 10.0).unwrap();
        let out = apply_cutmix(&b, &[Some(CutDraw { alpha: 0.5, partner: 1, start: 1 }), None]);
        let Labels::Segmentation(ly) = &out.labels else { panic!() };
        let col0: Vec<f64> = (0..6).map(|t| ly[[0, t, 0]]).collect();
        assert_eq!(col0, vec![1.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn cutmix_realized_count_matches_rounding() {
        for t in [7usize, 8, 100, 5000] {
            for seed in 0..200u64 {
                for d in draw_cut(3, t, 0.5, 0.5, 1.0, &stage(seed)).unwrap().into_iter().flatten() {
                    let ones = d.mask(t).iter().filter(|&&m| m == 1).count();
                    assert_eq!(ones, (d.alpha * t as f64).round() as usize);
                    assert!(d.start + d.cut(t) <= t);
                }
            }
        }
    }

    #[test]
    fn flip_is_an_involution() {
        let b = toy_batch(3, 2, 5, 2);
        let sel = [true, false, true];
        let once = apply_flip(&b, &sel);
        assert_eq!(once.signals.index_axis(Axis(0), 0), b.signals.index_axis(Axis(0), 0).mapv(|v| -v));
        assert_eq!(once.signals.index_axis(Axis(0), 1), b.signals.index_axis(Axis(0), 1));
        assert_eq!(apply_flip(&once, &sel), b);
        assert_eq!(once.labels, b.labels);
    }

    #[test]
    fn gaussian_noise_level() {
        let len = 20_000;
        let x = Array3::from_shape_fn((1, 2, len), |(_, l, t)| ((t as f64) * 0.05).sin() * (l as f64 + 0.5) * 3.0);
        let b = Batch::new(x, Labels::Classification(Array2::zeros((1, 1))), 500.0).unwrap();
        let out = add_gaussian_noise(&b, 0.2, 1.0, &stage(5));
        for lead in 0..2 {
            let diff: Vec<f64> = (0..len).map(|t| out.signals[[0, lead, t]] - b.signals[[0, lead, t]]).collect();
            let (_, sd) = mean_std(diff.iter().copied());
            let target = 0.2 * mean_std(b.signals.slice(s![0, lead, ..]).iter().copied()).1;
            assert!((sd - target).abs() <= 0.1 * target, "{sd} vs {target}");
        }
        assert_eq!(add_gaussian_noise(&b, 0.0, 1.0, &stage(5)), b);
    }

    #[test]
    fn sine_noise_frequency() {
        use rustfft::{num_complex::Complex, FftPlanner};
        let len = 4096;
        let fs = 256.0;
        let x = Array3::from_shape_fn((1, 1, len), |(_, _, t)| if t % 2 == 0 { 1.0 } else { -1.0 });
        let b = Batch::new(x, Labels::Classification(Array2::zeros((1, 1))), fs).unwrap();
        let r = stage(11);
        let draws = draw_sine(1, 1, [2.0, 20.0], 1.0, &r);
        let f = draws[0].as_ref().unwrap().freq_hz[0];
        let out = add_sine_noise(&b, 0.3, [2.0, 20.0], 1.0, &r);
        let mut buf: Vec<Complex<f64>> = (0..len)
            .map(|t| Complex::new(out.signals[[0, 0, t]] - b.signals[[0, 0, t]], 0.0))
            .collect();
        FftPlanner::new().plan_fft_forward(len).process(&mut buf);
        let peak = (0..len / 2).max_by(|&a, &c| buf[a].norm().total_cmp(&buf[c].norm())).unwrap();
        let expected_bin = (f * len as f64 / fs).round() as usize;
        assert!((peak as i64 - expected_bin as i64).abs() <= 1, "{peak} vs {expected_bin}");
    }

    #[test]
    fn mask_at_critical_point() {
        let mut r = stage(0).sample(0);
        let w = draw_mask_windows(&mut r, 1000, 250.0, 0.2, 1, 0.0, Some(&[500]));
        assert_eq!(w, vec![(475, 525)]);
        let w = draw_mask_windows(&mut r, 1000, 250.0, 0.2, 1, 0.02, Some(&[10]));
        assert_eq!(w, vec![(0, 40)]);
        assert!(draw_mask_windows(&mut r, 1000, 250.0, 0.2, 0, 0.0, None).is_empty());
    }

    #[test]
    fn mask_touches_only_its_windows() {
        let b = toy_batch(3, 2, 200, 2);
        let out = random_mask(&b, 0.04, 3, 0.0, None, 0.0, 1.0, &stage(2));
        for i in 0..3 {
            let mut r = stage(2).sample(i);
            assert!(is_selected(&mut r, 1.0));
            let ws = draw_mask_windows(&mut r, 200, 250.0, 0.04, 3, 0.0, None);
            assert_eq!(ws.len(), 3);
            for t in 0..200 {
                let inside = ws.iter().any(|&(a, c)| t >= a && t < c);
                for l in 0..2 {
                    if inside {
                        assert_eq!(out.signals[[i, l, t]], 0.0);
                    } else {
                        assert_eq!(out.signals[[i, l, t]], b.signals[[i, l, t]]);
                    }
                }
            }
        }
    }

    #[test]
    fn stretch_identity_and_length() {
        let b = toy_batch(2, 3, 50, 2);
        assert_eq!(apply_stretch(&b, &[Some(1.0), Some(1.0)]), b);
        for r in [0.8, 0.93, 1.1, 1.25, 2.0] {
            let out = apply_stretch(&b, &[Some(r), None]);
            assert_eq!(out.signals.dim(), b.signals.dim());
        }
    }

    #[test]
    fn stretch_halves_frequency() {
        use rustfft::{num_complex::Complex, FftPlanner};
        let len = 512;
        let cycles = 8.0;
        let x = Array2::from_shape_fn((1, len), |(_, t)| (2.0 * PI * cycles * t as f64 / len as f64).sin());
        let y = stretch_signal(x.view(), 2.0);
        let dominant = |v: Vec<f64>| {
            let mut buf: Vec<Complex<f64>> = v.into_iter().map(|r| Complex::new(r, 0.0)).collect();
            FftPlanner::new().plan_fft_forward(len).process(&mut buf);
            (1..len / 2).max_by(|&a, &c| buf[a].norm().total_cmp(&buf[c].norm())).unwrap()
        };
        assert_eq!(dominant(x.row(0).to_vec()), 8);
        assert_eq!(dominant(y.row(0).to_vec()), 4);
    }

    #[test]
    fn stretch_moves_segmentation_labels_with_signal() {
        let len = 40;
        let x = Array3::from_shape_fn((1, 1, len), |(_, _, t)| if (18..22).contains(&t) { 1.0 } else { 0.0 });
        let y = Array3::from_shape_fn((1, len, 1), |(_, t, _)| if (18..22).contains(&t) { 1.0 } else { 0.0 });
        let b = Batch::new(x, Labels::Segmentation(y), 10.0).unwrap();
        let out = apply_stretch(&b, &[Some(1.5)]);
        let Labels::Segmentation(ly) = &out.labels else { panic!() };
        let lab: Vec<usize> = (0..len).filter(|&t| ly[[0, t, 0]] == 1.0).collect();
        assert!(lab.len() >= 5 && lab.len() <= 7, "{lab:?}");
        for &t in &lab {
            assert!(out.signals[[0, 0, t]] > 0.0);
        }
    }

    #[test]
    fn label_smoothing_values() {
        let y = array![[0.0, 1.0, 0.0, 0.0]];
        let s = label_smooth(&y, 0.1, 4);
        for (v, e) in s.iter().zip([0.025, 0.925, 0.025, 0.025]) {
            assert!((v - e).abs() < 1e-15);
        }
        assert_eq!(label_smooth(&y, 0.0, 4), y);
        let soft = array![[0.2, 0.3, 0.5], [1.0, 0.0, 0.0]];
        for row in label_smooth(&soft, 0.3, 3).rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}
