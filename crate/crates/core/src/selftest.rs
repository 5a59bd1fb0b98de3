//! Desk-scale acceptance suite.
//!
//! Ten checks on synthetic data, each comparing library output against an independent
//! reference computation written out here in plain loops. `ecgkit selftest` runs them, as
//! does the crate's acceptance test target.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::archsynth::{
    count_params, infer_shapes, layer_params, receptive_field, ActivationKind, ArchConfig, FamilySpec, HeadActivation,
    HeadSpec, LayerNode, Len, LstmSpec, Padding, PoolKind, ReceptiveField, StageSpec, StemSpec,
};
use crate::augment::{apply_cutmix, apply_mixup, draw_cut, label_smooth, Batch, CutDraw, Labels, MixDraw, SeedStream};
use crate::inferengine::{forward_sample, init_weights, ops, run_graph, Tensor};
use crate::metrics::{challenge_score, delineation_metrics, match_points, qrs_score, Boundaries, ScoreWeights, Waves};
use crate::sigproc::{
    apply_sos, butterworth_bandpass, default_taps, design_fir_bandpass, normalize, run_preproc, NormalizeSpec,
    PreprocConfig, PreprocStage,
};
use crate::taskout::{intervals_to_mask, mask_to_intervals, normalize as normalize_intervals, window_record, PadMode};
use crate::wfdb::{decode_samples, read_record, write_record, EcgRecord, SignalFormat};

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

type Check = fn() -> Result<String, String>;

pub const CHECKS: [(&str, Check); 10] = [
    ("WFDB round trip", wfdb_round_trip),
    ("filter fixtures", filter_fixtures),
    ("normalization", normalization),
    ("mixup, cutmix and label smoothing exactness", mixing_exactness),
    ("inference oracles", inference_oracles),
    ("architecture accounting", architecture_accounting),
    ("receptive field", receptive_field_perturbation),
    ("interval/mask round trip", interval_round_trip),
    ("metrics fixtures", metrics_fixtures),
    ("end-to-end pipeline", end_to_end),
];

/// Runs check `id` (1-based).
pub fn run_check(id: usize) -> CheckOutcome {
    let (name, f) = CHECKS[id - 1];
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let (passed, detail) = match result {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    CheckOutcome { id, name, passed, detail, seconds: start.elapsed().as_secs_f64() }
}

pub fn run_all() -> Vec<CheckOutcome> {
    (1..=CHECKS.len()).map(run_check).collect()
}

impl CheckOutcome {
    pub fn line(&self) -> String {
        format!(
            "[{}] {:>2}. {} ({:.2} s): {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.seconds,
            self.detail
        )
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

struct TempDir(PathBuf);

impl TempDir {
    fn new(tag: &str) -> Result<Self, String> {
        let nanos = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_nanos());
        let p = std::env::temp_dir().join(format!("ecgkit-{tag}-{}-{nanos}", std::process::id()));
        std::fs::create_dir_all(&p).map_err(err)?;
        Ok(Self(p))
    }
}

impl Drop for TempDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

// ---------------------------------------------------------------- 1

/// Reference packer: two 12-bit two's-complement samples into three bytes.
fn pack_212(samples: &[i32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(samples.len() / 2 * 3);
    for pair in samples.chunks(2) {
        let a = (pair[0] & 0xfff) as u16;
        let b = (pair[1] & 0xfff) as u16;
        out.push((a & 0xff) as u8);
        out.push(((a >> 8) as u8) | (((b >> 8) as u8) << 4));
        out.push((b & 0xff) as u8);
    }
    out
}

fn wfdb_round_trip() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dir = TempDir::new("wfdb")?;
    let gain = 200.0;
    for r in 0..200 {
        let leads = rng.random_range(1..=3);
        let len = rng.random_range(1..=10_000);
        let adc: Vec<Vec<i32>> =
            (0..leads).map(|_| (0..len).map(|_| rng.random_range(-32767..=32767)).collect()).collect();
        let phys = adc.iter().map(|l| l.iter().map(|&v| v as f64 / gain).collect()).collect();
        let names: Vec<String> = (0..leads).map(|i| format!("L{i}")).collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        let rec = EcgRecord::new(format!("r{r}"), 500.0, &names, gain, phys).map_err(err)?;
        write_record(&rec, &dir.0).map_err(err)?;
        let back = read_record(&dir.0, &format!("r{r}")).map_err(err)?;
        ensure(back.to_adc().map_err(err)? == adc, || format!("record {r}: ADC values differ after write/read"))?;
    }
    for i in 0..1000 {
        let len = 2 * rng.random_range(1..=500);
        let v: Vec<i32> = (0..len).map(|_| rng.random_range(-2048..=2047)).collect();
        let decoded = decode_samples(&pack_212(&v), SignalFormat::Fmt212, 1).map_err(err)?;
        ensure(decoded.len() == 1 && decoded[0] == v, || format!("212 vector {i} did not survive"))?;
    }
    Ok("200 format-16 records and 1000 format-212 vectors round-trip exactly".into())
}

// ---------------------------------------------------------------- 2

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn dtft_magnitude(h: &[f64], f: f64, fs: f64) -> f64 {
    let w = 2.0 * std::f64::consts::PI * f / fs;
    let (mut re, mut im) = (0.0, 0.0);
    for (n, &c) in h.iter().enumerate() {
        re += c * (w * n as f64).cos();
        im -= c * (w * n as f64).sin();
    }
    re.hypot(im)
}

fn filter_fixtures() -> Result<String, String> {
    let fs = 500.0;
    let sos = butterworth_bandpass(2, 0.5, 45.0, fs).map_err(err)?;
    let n = 10 * fs as usize;
    let edge = fs as usize;
    let mut gains = Vec::new();
    for f in [50.0, 10.0] {
        let x = Array2::from_shape_fn((1, n), |(_, i)| (2.0 * std::f64::consts::PI * f * i as f64 / fs).sin());
        let y = apply_sos(&x, &sos).map_err(err)?;
        let inner = |a: &Array2<f64>| a.row(0).iter().skip(edge).take(n - 2 * edge).copied().collect::<Vec<f64>>();
        gains.push(20.0 * (rms(&inner(&y)) / rms(&inner(&x))).log10());
    }
    ensure(gains[0] <= -6.0, || format!("50 Hz attenuated by only {:.2} dB", -gains[0]))?;
    ensure(gains[1] >= -1.0, || format!("10 Hz attenuated by {:.2} dB", -gains[1]))?;
    for taps in [201, 301, 501] {
        let h = design_fir_bandpass(fs, 0.5, 45.0, taps).map_err(err)?;
        ensure((0..taps).all(|i| h[i] == h[taps - 1 - i]), || format!("{taps} taps not symmetric"))?;
        ensure(h.iter().sum::<f64>().abs() <= 1e-3, || format!("{taps} taps: DC gain {}", h.iter().sum::<f64>()))?;
    }
    let h = design_fir_bandpass(fs, 0.5, 45.0, default_taps(fs)).map_err(err)?;
    let mid = dtft_magnitude(&h, (0.5f64 * 45.0).sqrt(), fs);
    let stop = dtft_magnitude(&h, 90.0, fs);
    ensure(mid >= 0.9 && stop <= 0.1, || format!("FIR |H(mid)| = {mid:.4}, |H(2 high)| = {stop:.4}"))?;
    Ok(format!(
        "Butterworth: 50 Hz {:.2} dB, 10 Hz {:.3} dB; FIR |H(mid)| {mid:.4}, |H(90 Hz)| {stop:.5}",
        gains[0], gains[1]
    ))
}

// ---------------------------------------------------------------- 3

fn normalization() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = (0.0f64, 0.0f64);
    for i in 0..100 {
        let leads = rng.random_range(1..=4);
        let len = rng.random_range(10..=3000);
        let offset = rng.random_range(-50.0..50.0);
        let scale = rng.random_range(0.01..20.0);
        let x = Array2::from_shape_fn((leads, len), |_| offset + scale * rng.random_range(-1.0..1.0));
        let z = normalize(&x, &NormalizeSpec::zscore());
        for row in z.rows() {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let sd = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            worst = (worst.0.max(mean.abs()), worst.1.max((sd - 1.0).abs()));
        }
        let mm = normalize(&x, &NormalizeSpec::min_max());
        ensure(mm.iter().all(|v| (0.0..=1.0).contains(v)), || format!("signal {i}: min-max output outside [0, 1]"))?;
    }
    ensure(worst.0 <= 1e-9 && worst.1 <= 1e-6, || format!("worst |mean| {:.2e}, |std - 1| {:.2e}", worst.0, worst.1))?;
    Ok(format!("z-score worst |mean| {:.1e}, |std - 1| {:.1e}; min-max within [0, 1]", worst.0, worst.1))
}

// ---------------------------------------------------------------- 4

fn mixing_exactness() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (b, l, t, k) = (4, 2, 50, 3);
    let x = Array3::from_shape_fn((b, l, t), |_| rng.random_range(-2.0..2.0));
    let y = Array2::from_shape_fn((b, k), |(i, c)| f64::from(c == i % k));
    let batch = Batch::new(x.clone(), Labels::Classification(y.clone()), 100.0).map_err(err)?;
    let mut worst = 0.0f64;

    let mix = [Some(MixDraw { alpha: 0.3, partner: 2 }), None, Some(MixDraw { alpha: 0.85, partner: 0 }), None];
    let out = apply_mixup(&batch, &mix);
    let Labels::Classification(oy) = &out.labels else { return Err("label kind changed".into()) };
    for (i, d) in mix.iter().enumerate() {
        let (a, j) = d.map_or((1.0, i), |d| (d.alpha, d.partner));
        for li in 0..l {
            for ti in 0..t {
                worst = worst.max((out.signals[[i, li, ti]] - (a * x[[i, li, ti]] + (1.0 - a) * x[[j, li, ti]])).abs());
            }
        }
        for c in 0..k {
            worst = worst.max((oy[[i, c]] - (a * y[[i, c]] + (1.0 - a) * y[[j, c]])).abs());
        }
    }

    let cut = [None, Some(CutDraw { alpha: 0.62, partner: 3, start: 11 }), None, Some(CutDraw { alpha: 0.1, partner: 1, start: 0 })];
    let out = apply_cutmix(&batch, &cut);
    let Labels::Classification(oy) = &out.labels else { return Err("label kind changed".into()) };
    for (i, d) in cut.iter().enumerate() {
        let Some(d) = d else { continue };
        let kept = (d.alpha * t as f64).round() as usize;
        let m: Vec<f64> = (0..t).map(|ti| if ti >= d.start && ti < d.start + (t - kept) { 0.0 } else { 1.0 }).collect();
        let lam = m.iter().sum::<f64>() / t as f64;
        for li in 0..l {
            for ti in 0..t {
                let e = m[ti] * x[[i, li, ti]] + (1.0 - m[ti]) * x[[d.partner, li, ti]];
                worst = worst.max((out.signals[[i, li, ti]] - e).abs());
            }
        }
        for c in 0..k {
            worst = worst.max((oy[[i, c]] - (lam * y[[i, c]] + (1.0 - lam) * y[[d.partner, c]])).abs());
        }
    }
    ensure(worst <= 1e-7, || format!("mixup/cutmix deviate from the closed form by {worst:.2e}"))?;

    let eps = 0.1;
    let smoothed = label_smooth(&y, eps, k);
    for ((i, c), &v) in smoothed.indexed_iter() {
        let expect = (1.0 - eps) * y[[i, c]] + eps / k as f64;
        ensure(v == expect, || format!("label smoothing [{i}, {c}] = {v}, expected {expect}"))?;
    }

    let len = 1000;
    let mut draws = 0;
    for seed in 0..1000 {
        let d = draw_cut(2, len, 0.5, 0.5, 1.0, &SeedStream::new(seed).stage(0)).map_err(err)?;
        let Some(d) = d[0] else { continue };
        let ones = d.mask(len).iter().filter(|&&m| m == 1).count();
        let expect = (d.alpha * len as f64).round() as usize;
        ensure(ones == expect, || format!("seed {seed}: {ones} kept samples, round(alpha T) = {expect}"))?;
        draws += 1;
    }
    ensure(draws == 1000, || format!("only {draws} of 1000 draws selected at prob 1"))?;
    Ok(format!("max deviation {worst:.1e}; smoothing exact; 1000 cutmix proportions equal round(alpha T)/T"))
}

// ---------------------------------------------------------------- 5

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0f32..1.0))
}

fn rel_close(got: &[f32], want: &[f64], what: &str) -> Result<(), String> {
    ensure(got.len() == want.len(), || format!("{what}: {} values, expected {}", got.len(), want.len()))?;
    for (i, (&g, &w)) in got.iter().zip(want).enumerate() {
        if (g as f64 - w).abs() > 1e-5 * w.abs().max(1.0) {
            return Err(format!("{what}: element {i} is {g}, reference {w}"));
        }
    }
    Ok(())
}

fn lw(p: &[Tensor; 4]) -> ops::LstmWeights<'_> {
    ops::LstmWeights { w_ih: &p[0], w_hh: &p[1], b_ih: p[2].data(), b_hh: p[3].data() }
}

fn sig(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn inference_oracles() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let at = |t: &Tensor, c: usize, i: usize| t.data()[c * t.shape()[1] + i] as f64;
    for case in 0..100 {
        // convolution over a zero-padded copy
        let g = rng.random_range(1..=3);
        let cin = g * rng.random_range(1..=4);
        let cout = g * rng.random_range(1..=4);
        let k = rng.random_range(1..=9);
        let (s, d) = (rng.random_range(1..=3), rng.random_range(1..=2));
        let span = d * (k - 1) + 1;
        let t = rng.random_range(span..=64);
        let p = rng.random_range(0..=3);
        let x = rand_tensor(&mut rng, vec![cin, t]);
        let w = rand_tensor(&mut rng, vec![cout, cin / g, k]);
        let bias = rand_tensor(&mut rng, vec![cout]);
        let y = ops::conv1d(&x, &w, Some(bias.data()), s, d, Padding::Explicit(p), g).map_err(err)?;
        let n = (t + 2 * p - span) / s + 1;
        let mut want = Vec::new();
        for c in 0..cout {
            let grp = c / (cout / g);
            for o in 0..n {
                let mut acc = bias.data()[c] as f64;
                for j in 0..cin / g {
                    for kk in 0..k {
                        let pos = (o * s + kk * d) as i64 - p as i64;
                        if pos >= 0 && (pos as usize) < t {
                            acc += w.data()[(c * (cin / g) + j) * k + kk] as f64 * at(&x, grp * (cin / g) + j, pos as usize);
                        }
                    }
                }
                want.push(acc);
            }
        }
        rel_close(y.data(), &want, &format!("conv1d case {case}"))?;

        // batch norm
        let (ch, tt) = (rng.random_range(1..=16), rng.random_range(1..=64));
        let x = rand_tensor(&mut rng, vec![ch, tt]);
        let prm: Vec<Vec<f32>> = (0..4).map(|i| (0..ch).map(|_| rng.random_range(if i == 3 { 0.05 } else { -1.0 }..2.0)).collect()).collect();
        let y = ops::batchnorm(&x, &prm[0], &prm[1], &prm[2], &prm[3], 1e-5).map_err(err)?;
        let mut want = Vec::new();
        for c in 0..ch {
            for i in 0..tt {
                want.push(prm[0][c] as f64 * (at(&x, c, i) - prm[2][c] as f64) / (prm[3][c] as f64 + 1e-5).sqrt() + prm[1][c] as f64);
            }
        }
        rel_close(y.data(), &want, &format!("batchnorm case {case}"))?;

        // pooling
        let (kp, sp) = (rng.random_range(1..=5), rng.random_range(1..=3));
        let tp = rng.random_range(kp..=64);
        let x = rand_tensor(&mut rng, vec![ch, tp]);
        let np = (tp - kp) / sp + 1;
        for kind in [PoolKind::Max, PoolKind::Avg] {
            let y = ops::pool1d(&x, kind, kp, sp).map_err(err)?;
            let mut want = Vec::new();
            for c in 0..ch {
                for o in 0..np {
                    let win = (0..kp).map(|j| at(&x, c, o * sp + j));
                    want.push(match kind {
                        PoolKind::Max => win.fold(f64::MIN, f64::max),
                        PoolKind::Avg => win.sum::<f64>() / kp as f64,
                    });
                }
            }
            rel_close(y.data(), &want, &format!("{kind:?} pool case {case}"))?;
        }

        // linear upsampling
        let scale = [2.0, 3.0, 4.0, 2.5][case % 4];
        let tu = rng.random_range(1..=64);
        let x = rand_tensor(&mut rng, vec![ch, tu]);
        let y = ops::upsample_linear(&x, scale).map_err(err)?;
        let nu = (tu as f64 * scale).round() as usize;
        let mut want = Vec::new();
        for c in 0..ch {
            for i in 0..nu {
                let pos = i as f64 / scale;
                let lo = pos.floor() as usize;
                want.push(if lo + 1 >= tu { at(&x, c, tu - 1) } else { at(&x, c, lo) + (pos - lo as f64) * (at(&x, c, lo + 1) - at(&x, c, lo)) });
            }
        }
        rel_close(y.data(), &want, &format!("upsample case {case}"))?;

        // LSTM, both directions
        let (f, h, tl) = (rng.random_range(1..=6), rng.random_range(1..=8), rng.random_range(1..=64));
        let x = rand_tensor(&mut rng, vec![f, tl]);
        let dirs: Vec<[Tensor; 4]> = (0..2)
            .map(|_| [rand_tensor(&mut rng, vec![4 * h, f]), rand_tensor(&mut rng, vec![4 * h, h]), rand_tensor(&mut rng, vec![4 * h]), rand_tensor(&mut rng, vec![4 * h])])
            .collect();
        let y = ops::lstm(&x, &lw(&dirs[0]), Some(&lw(&dirs[1]))).map_err(err)?;
        let mut want = vec![0.0; 2 * h * tl];
        for (di, p) in dirs.iter().enumerate() {
            let (mut hs, mut cs) = (vec![0.0; h], vec![0.0; h]);
            let steps: Vec<usize> = if di == 0 { (0..tl).collect() } else { (0..tl).rev().collect() };
            for ti in steps {
                let z: Vec<f64> = (0..4 * h)
                    .map(|gi| {
                        let mut a = p[2].data()[gi] as f64 + p[3].data()[gi] as f64;
                        for fi in 0..f {
                            a += p[0].data()[gi * f + fi] as f64 * at(&x, fi, ti);
                        }
                        for hi in 0..h {
                            a += p[1].data()[gi * h + hi] as f64 * hs[hi];
                        }
                        a
                    })
                    .collect();
                for j in 0..h {
                    cs[j] = sig(z[h + j]) * cs[j] + sig(z[j]) * z[2 * h + j].tanh();
                    hs[j] = sig(z[3 * h + j]) * cs[j].tanh();
                    want[(di * h + j) * tl + ti] = hs[j];
                }
            }
        }
        rel_close(y.data(), &want, &format!("lstm case {case}"))?;

        // squeeze-and-excitation
        let hd = rng.random_range(1..=4);
        let x = rand_tensor(&mut rng, vec![ch, tt]);
        let (w1, b1, w2, b2) = (rand_tensor(&mut rng, vec![hd, ch]), rand_tensor(&mut rng, vec![hd]), rand_tensor(&mut rng, vec![ch, hd]), rand_tensor(&mut rng, vec![ch]));
        let y = ops::se(&x, &w1, b1.data(), &w2, b2.data()).map_err(err)?;
        let mean: Vec<f64> = (0..ch).map(|c| (0..tt).map(|i| at(&x, c, i)).sum::<f64>() / tt as f64).collect();
        let u: Vec<f64> = (0..hd).map(|j| (b1.data()[j] as f64 + (0..ch).map(|c| w1.data()[j * ch + c] as f64 * mean[c]).sum::<f64>()).max(0.0)).collect();
        let mut want = Vec::new();
        for c in 0..ch {
            let gate = sig(b2.data()[c] as f64 + (0..hd).map(|j| w2.data()[c * hd + j] as f64 * u[j]).sum::<f64>());
            want.extend((0..tt).map(|i| gate * at(&x, c, i)));
        }
        rel_close(y.data(), &want, &format!("se case {case}"))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(55);
    for c in 0..20 {
        let (cfg, t) = random_config(&mut rng, false);
        let w = init_weights(&cfg, c).map_err(err)?;
        let b = rng.random_range(1..=3);
        let x = rand_tensor(&mut rng, vec![b, cfg.in_channels, t]);
        let y = run_graph(&cfg, &w, &x).map_err(err)?;
        let (ch, len) = infer_shapes(&cfg, Some(t)).map_err(err)?.output();
        let want = match len {
            Len::Known(1) => vec![b, ch],
            Len::Known(n) => vec![b, n, ch],
            Len::Expr(e) => return Err(format!("config {c}: symbolic length {e}")),
        };
        ensure(y.shape() == want, || format!("config {c}: output {:?}, predicted {want:?}", y.shape()))?;
    }
    Ok("conv1d, batchnorm, pooling, upsample, lstm, se match reference loops on 100 shapes; 20 graph shapes agree".into())
}

// ---------------------------------------------------------------- 5-7 random architectures

fn random_layer(rng: &mut ChaCha8Rng, ch: usize, valid_only: bool) -> LayerNode {
    let pick = if valid_only { rng.random_range(0..6) } else { rng.random_range(0..12) };
    match pick {
        0 | 1 => {
            let groups = if ch.is_multiple_of(2) && rng.random_bool(0.3) { 2 } else { 1 };
            let out_ch = groups * rng.random_range(1..=4);
            let padding = if valid_only {
                Padding::Valid
            } else {
                [Padding::Same, Padding::Valid, Padding::Explicit(rng.random_range(0..3))][rng.random_range(0..3)]
            };
            LayerNode::Conv1d {
                in_ch: ch,
                out_ch,
                kernel: rng.random_range(1..=5),
                stride: rng.random_range(1..=2),
                dilation: rng.random_range(1..=2),
                padding,
                groups,
                bias: rng.random_bool(0.5),
            }
        }
        2 => LayerNode::BatchNorm { ch },
        3 => LayerNode::Activation {
            kind: [ActivationKind::Relu, ActivationKind::LeakyRelu(0.1), ActivationKind::Tanh, ActivationKind::Sigmoid]
                [rng.random_range(0..4)],
        },
        4 => {
            let kernel = rng.random_range(2..=3);
            if rng.random_bool(0.5) {
                LayerNode::MaxPool { kernel, stride: None }
            } else {
                LayerNode::AvgPool { kernel, stride: Some(rng.random_range(1..=kernel)) }
            }
        }
        5 => LayerNode::Linear { in_f: ch, out_f: rng.random_range(1..=5), bias: rng.random_bool(0.5) },
        6 => LayerNode::SeBlock { ch, reduction: rng.random_range(1..=2) },
        7 => LayerNode::ResBasicBlock { ch_in: ch, ch_out: rng.random_range(1..=4), kernel: rng.random_range(1..=5), stride: rng.random_range(1..=2) },
        8 => LayerNode::Lstm { input: ch, hidden: rng.random_range(1..=3), bidirectional: rng.random_bool(0.5) },
        9 => LayerNode::UpsampleLinear { scale: 2.0 },
        10 => LayerNode::Dropout { p: 0.3 },
        _ => LayerNode::Softmax,
    }
}

fn random_family(rng: &mut ChaCha8Rng, in_channels: usize) -> ArchConfig {
    let pattern = ["crnn", "plain_cnn", "unet_encoder_decoder", "rr_lstm"][rng.random_range(0..4)];
    let rr = pattern == "rr_lstm";
    let stages = if rr {
        vec![]
    } else {
        (0..rng.random_range(1..=3))
            .map(|_| StageSpec { blocks: rng.random_range(1..=2), ch: rng.random_range(2..=6), stride: rng.random_range(1..=2), kernel: rng.random_range(1..=5), in_ch: None })
            .collect()
    };
    ArchConfig {
        name: pattern.into(),
        fs: 250.0,
        in_channels,
        input_len: None,
        layers: None,
        family: Some(FamilySpec {
            pattern: pattern.into(),
            stem: (!rr).then(|| StemSpec { out_ch: rng.random_range(2..=6), kernel: rng.random_range(1..=7), stride: rng.random_range(1..=2) }),
            stages,
            lstm: (rr || rng.random_bool(0.3)).then(|| LstmSpec { hidden: rng.random_range(1..=4), bidirectional: rng.random_bool(0.5), layers: rng.random_range(1..=2) }),
            head: HeadSpec { num_classes: rng.random_range(1..=4), activation: [HeadActivation::None, HeadActivation::Softmax, HeadActivation::Sigmoid][rng.random_range(0..3)] },
            se_reduction: rng.random_bool(0.3).then_some(2),
        }),
    }
}

/// A random small architecture with an input length it accepts.
fn random_config(rng: &mut ChaCha8Rng, valid_only: bool) -> (ArchConfig, usize) {
    loop {
        let in_channels = rng.random_range(1..=4);
        let t = rng.random_range(24..=64);
        let cfg = if !valid_only && rng.random_bool(0.25) {
            random_family(rng, in_channels)
        } else {
            let mut ch = in_channels;
            let mut layers = Vec::new();
            for _ in 0..rng.random_range(1..=6) {
                let l = random_layer(rng, ch, valid_only);
                ch = l.out_channels(ch);
                layers.push(l);
            }
            if rng.random_bool(0.3) && !valid_only {
                layers.push(LayerNode::GlobalPool { kind: PoolKind::Avg });
                layers.push(LayerNode::Linear { in_f: ch, out_f: 2, bias: true });
            }
            ArchConfig::from_layers("random", 250.0, in_channels, layers)
        };
        if infer_shapes(&cfg, Some(t)).is_ok() {
            return (cfg, t);
        }
    }
}

fn architecture_accounting() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for c in 0..50 {
        let (cfg, _) = random_config(&mut rng, false);
        let counted = count_params(&cfg).map_err(err)?.total.total();
        let bundle = init_weights(&cfg, c).map_err(err)?;
        let enumerated: usize = bundle.layers.values().flat_map(|l| l.values()).map(|t| t.shape().iter().product::<usize>()).sum();
        ensure(counted == enumerated, || format!("config {c} ({}): counted {counted}, enumerated {enumerated}", cfg.name))?;
    }
    let conv = |groups| LayerNode::Conv1d { in_ch: 12, out_ch: 64, kernel: 16, stride: 1, dilation: 1, padding: Padding::Same, groups, bias: true };
    let full = layer_params(&conv(1)).trainable;
    let lead_wise = layer_params(&conv(12)).trainable;
    ensure(full == 12 * 64 * 16 + 64 && lead_wise == 64 * 16 + 64, || format!("lead-wise fixture gave {full} -> {lead_wise}"))?;
    Ok(format!("50 random configs: counts equal enumerated weights; lead-wise conv {full} -> {lead_wise}"))
}

// ---------------------------------------------------------------- 7

fn receptive_field_perturbation() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut done = 0;
    let mut sizes = Vec::new();
    while done < 20 {
        let (cfg, _) = random_config(&mut rng, true);
        let ReceptiveField::Bounded { samples: rf, .. } = receptive_field(&cfg).map_err(err)? else { continue };
        let t = rf + rng.random_range(5..=40);
        if infer_shapes(&cfg, Some(t)).is_err() {
            continue;
        }
        let layers = cfg.expanded_layers().map_err(err)?;
        let w = init_weights(&cfg, done as u64).map_err(err)?;
        let x = rand_tensor(&mut rng, vec![cfg.in_channels, t]);
        let mut xp = x.clone();
        for c in 0..cfg.in_channels {
            for i in rf..t {
                xp.data_mut()[c * t + i] += rng.random_range(1.0f32..5.0);
            }
        }
        let y = forward_sample(&layers, &w, &x).map_err(err)?;
        let yp = forward_sample(&layers, &w, &xp).map_err(err)?;
        let len = y.shape()[1];
        for c in 0..y.shape()[0] {
            let (a, b) = (y.data()[c * len], yp.data()[c * len]);
            ensure(a.to_bits() == b.to_bits(), || format!("config {done}: rf {rf}, output channel {c} moved {a} -> {b}"))?;
        }
        sizes.push(rf);
        done += 1;
    }
    Ok(format!("20 valid-padding configs (rf {}..{} samples): position 0 unchanged", sizes.iter().min().unwrap_or(&0), sizes.iter().max().unwrap_or(&0)))
}

// ---------------------------------------------------------------- 8

fn interval_round_trip() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..1000 {
        let len = rng.random_range(1..=500);
        let raw: Vec<[usize; 2]> = (0..rng.random_range(0..=15))
            .map(|_| {
                let a = rng.random_range(0..len);
                [a, rng.random_range(a + 1..=len)]
            })
            .collect();
        let n = normalize_intervals(&raw).map_err(err)?;
        let back = mask_to_intervals(&intervals_to_mask(&n.0, len).map_err(err)?);
        ensure(back == n, || format!("list {i}: {:?} -> {:?}", n.0, back.0))?;
        let twice = mask_to_intervals(&intervals_to_mask(&back.0, len).map_err(err)?);
        ensure(twice == back, || format!("list {i} is not a fixed point"))?;
        // independent mask: coverage by any raw interval
        let cover: Vec<u8> = (0..len).map(|s| u8::from(raw.iter().any(|&[a, b]| a <= s && s < b))).collect();
        ensure(intervals_to_mask(&n.0, len).map_err(err)? == cover, || format!("list {i}: mask differs from coverage"))?;
    }
    Ok("1000 random interval lists reach a fixed point".into())
}

// ---------------------------------------------------------------- 9

fn optimal_matching(pred: &[usize], truth: &[usize], tol: usize) -> (usize, u64) {
    fn go(i: usize, used: &mut [bool], pred: &[usize], truth: &[usize], tol: usize) -> (usize, u64) {
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

fn metrics_fixtures() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let fs = 500.0;
    let len = 30 * 500;
    let max_jitter = (0.075 * fs) as i64;
    let mut truth = Vec::new();
    let mut pos = 300;
    while pos < len - 300 {
        truth.push(pos);
        pos += rng.random_range(300..500);
    }
    for trial in 0..200 {
        let mut pred: Vec<usize> = truth.iter().map(|&p| (p as i64 + rng.random_range(-max_jitter..=max_jitter)) as usize).collect();
        pred.sort_unstable();
        let s = qrs_score(&[pred], &[truth.clone()], &[len], fs, 0.075, 0.5).map_err(err)?.score;
        ensure(s == 1.0, || format!("jitter trial {trial} scored {s}"))?;
    }
    let mid = (truth[truth.len() / 2] + truth[truth.len() / 2 + 1]) / 2;
    let mut extra = truth.clone();
    extra.push(mid);
    extra.sort_unstable();
    let s = qrs_score(&[extra], &[truth.clone()], &[len], fs, 0.075, 0.5).map_err(err)?.score;
    ensure(s == 0.0, || format!("extra mid-record peak scored {s}"))?;

    for i in 0..20_000 {
        let n = rng.random_range(0..=8);
        let np = rng.random_range(0..=n);
        let mut p: Vec<usize> = (0..np).map(|_| rng.random_range(0..30)).collect();
        let mut t: Vec<usize> = (0..n - np).map(|_| rng.random_range(0..30)).collect();
        p.sort_unstable();
        t.sort_unstable();
        let tol = rng.random_range(0..=5);
        let m = match_points(&p, &t, tol).map_err(err)?;
        let cost = m.errors.iter().map(|e| e.unsigned_abs()).sum::<u64>();
        let best = optimal_matching(&p, &t, tol);
        ensure((m.tp, cost) == best, || format!("instance {i}: matched {:?}, optimum {best:?} ({p:?} vs {t:?}, tol {tol})", (m.tp, cost)))?;
    }

    let classes = ["AF", "RBBB", "PVC", "NSR"];
    let wm = vec![
        vec![1.0, 0.4, 0.3, 0.1],
        vec![0.4, 1.0, 0.5, 0.2],
        vec![0.3, 0.5, 1.0, 0.35],
        vec![0.1, 0.2, 0.35, 1.0],
    ];
    let weights = ScoreWeights::new(classes.iter().map(|s| s.to_string()).collect(), wm.clone(), "NSR").map_err(err)?;
    let sets = |v: &[&[usize]]| -> Vec<Vec<String>> { v.iter().map(|r| r.iter().map(|&i| classes[i].to_string()).collect()).collect() };
    let truth_sets = sets(&[&[0], &[1, 2], &[3], &[0, 2], &[1]]);
    let id = challenge_score(&truth_sets, &truth_sets, &weights).map_err(err)?.score;
    let normal = challenge_score(&truth_sets, &sets(&[&[3], &[3], &[3], &[3], &[3]]), &weights).map_err(err)?.score;
    ensure(id == 1.0 && normal == 0.0, || format!("identity {id}, all-normal {normal}"))?;

    let t3: [&[usize]; 3] = [&[0], &[1, 2], &[0, 3]];
    let p3: [&[usize]; 3] = [&[0, 1], &[2], &[3]];
    let brute = |pred: &[&[usize]]| -> f64 {
        let mut a = [[0.0f64; 4]; 4];
        for (t, p) in t3.iter().zip(pred) {
            let mut u: Vec<usize> = t.iter().chain(p.iter()).copied().collect();
            u.sort_unstable();
            u.dedup();
            for &c in t.iter() {
                for &c2 in p.iter() {
                    a[c][c2] += 1.0 / u.len() as f64;
                }
            }
        }
        (0..4).flat_map(|i| (0..4).map(move |j| (i, j))).map(|(i, j)| wm[i][j] * a[i][j]).sum()
    };
    let (obs, cor, ina) = (brute(&p3), brute(&t3), brute(&[&[3], &[3], &[3]]));
    let want = (obs - ina) / (cor - ina);
    let got = challenge_score(&sets(&t3), &sets(&p3), &weights).map_err(err)?.score;
    ensure((got - want).abs() <= 1e-12, || format!("3-record fixture {got}, brute force {want}"))?;

    let shift = |v: &[usize]| v.iter().map(|x| x + 2).collect::<Vec<_>>();
    let b = |on: &[usize], off: &[usize]| Boundaries { onsets: on.to_vec(), offsets: off.to_vec() };
    let tw = Waves { p: b(&[100, 600], &[150, 650]), qrs: b(&[200, 700], &[250, 750]), t: b(&[320, 820], &[420, 920]) };
    let pw = Waves {
        p: b(&shift(&tw.p.onsets), &shift(&tw.p.offsets)),
        qrs: b(&shift(&tw.qrs.onsets), &shift(&tw.qrs.offsets)),
        t: b(&shift(&tw.t.onsets), &shift(&tw.t.offsets)),
    };
    let r = delineation_metrics(&pw, &tw, 500.0, 0.15).map_err(err)?;
    for (name, w) in [("P", r.p), ("QRS", r.qrs), ("T", r.t)] {
        ensure((w.mean_error_ms - 4.0).abs() < 1e-12 && w.std_error_ms == 0.0 && w.f1 == 1.0, || {
            format!("{name}: mean {} ms, std {} ms, f1 {}", w.mean_error_ms, w.std_error_ms, w.f1)
        })?;
    }
    Ok(format!(
        "qrs 1.0 under jitter, 0.0 with an extra peak; 20000 matchings optimal; challenge 1/0/{got:.6}; delineation +4 ms"
    ))
}

// ---------------------------------------------------------------- 10

/// Synthetic ECG: gaussian P, QRS and T bumps around known R positions, baseline wander
/// and a little noise. Returns the signal and the R-peak samples.
pub fn synthetic_ecg(fs: f64, seconds: f64, seed: u64) -> (Vec<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (fs * seconds) as usize;
    let mut peaks = Vec::new();
    let mut t = 0.4 + rng.random_range(0.0..0.3);
    while t < seconds - 0.3 {
        peaks.push((t * fs).round() as usize);
        t += rng.random_range(0.65..1.0);
    }
    let bump = |x: f64, c: f64, w: f64, a: f64| a * (-0.5 * ((x - c) / w).powi(2)).exp();
    let mut sig: Vec<f64> = (0..n)
        .map(|i| {
            let x = i as f64 / fs;
            0.15 * (2.0 * std::f64::consts::PI * 0.3 * x).sin() + rng.random_range(-0.02..0.02)
        })
        .collect();
    for &p in &peaks {
        let c = p as f64 / fs;
        let lo = p.saturating_sub((0.4 * fs) as usize);
        let hi = (p + (0.5 * fs) as usize).min(n);
        for (i, v) in sig.iter_mut().enumerate().take(hi).skip(lo) {
            let x = i as f64 / fs;
            *v += bump(x, c - 0.18, 0.025, 0.12) + bump(x, c, 0.012, 1.2) - bump(x, c + 0.03, 0.01, 0.25)
                + bump(x, c + 0.3, 0.05, 0.3);
        }
    }
    (sig, peaks)
}

fn end_to_end() -> Result<String, String> {
    let start = Instant::now();
    let fs = 250.0;
    let (ecg, peaks) = synthetic_ecg(fs, 60.0, 10);
    let sig = Array2::from_shape_vec((1, ecg.len()), ecg).map_err(err)?;
    let config = PreprocConfig {
        random_order: false,
        stages: vec![
            PreprocStage::BandpassButter { low: 0.5, high: 45.0, order: 2 },
            PreprocStage::Normalize { spec: NormalizeSpec::zscore() },
        ],
    };
    let (clean, fs_out) = run_preproc(&sig, fs, &config, None).map_err(err)?;
    ensure(fs_out == fs && clean.dim() == sig.dim(), || "preprocessing changed the signal geometry".into())?;

    let rows: Vec<Vec<f64>> = clean.rows().into_iter().map(|r| r.to_vec()).collect();
    let windows = window_record(&rows, fs, 10.0, 0.0, PadMode::Zero).map_err(err)?;
    let (b, w) = (windows.segments.len(), windows.window_len);
    ensure(b == 6 && w == 2500, || format!("{b} windows of {w} samples"))?;

    let model = ArchConfig {
        name: "tiny_plain_cnn".into(),
        fs,
        in_channels: 1,
        input_len: Some(w),
        layers: None,
        family: Some(FamilySpec {
            pattern: "plain_cnn".into(),
            stem: Some(StemSpec { out_ch: 8, kernel: 9, stride: 2 }),
            stages: vec![StageSpec { blocks: 2, ch: 8, stride: 2, kernel: 7, in_ch: None }],
            lstm: None,
            head: HeadSpec { num_classes: 2, activation: HeadActivation::Softmax },
            se_reduction: None,
        }),
    };
    let weights = init_weights(&model, 10).map_err(err)?;
    let data: Vec<f32> = windows.segments.iter().flatten().flatten().map(|&v| v as f32).collect();
    let input = Tensor::new(vec![b, 1, w], data).map_err(err)?;
    let out = run_graph(&model, &weights, &input).map_err(err)?;
    ensure(out.shape() == [b, w, 2], || format!("model output {:?}", out.shape()))?;
    ensure(out.data().chunks(2).all(|p| (p[0] + p[1] - 1.0).abs() < 1e-5), || "softmax rows do not sum to 1".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let max_jitter = (0.05 * fs).floor() as i64;
    let mut pred: Vec<usize> =
        peaks.iter().map(|&p| (p as i64 + rng.random_range(-max_jitter..=max_jitter)).max(0) as usize).collect();
    pred.sort_unstable();
    let report = qrs_score(&[pred], std::slice::from_ref(&peaks), &[clean.ncols()], fs, 0.075, 0.5).map_err(err)?;
    let elapsed = start.elapsed().as_secs_f64();
    ensure(report.score == 1.0, || format!("qrs score {}", report.score))?;
    ensure(elapsed <= 10.0, || format!("pipeline took {elapsed:.1} s"))?;
    Ok(format!("{} beats, {b} windows -> {:?}, qrs score 1.0 in {elapsed:.2} s", peaks.len(), out.shape()))
}
