//! Butterworth band-pass design as second-order sections and zero-phase application.

use std::f64::consts::PI;

use ndarray::{Array2, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fir::odd_extend;
use super::{Result, SigprocError};

pub const MAX_ORDER: usize = 8;

/// One biquad `H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)`; `a[0]` is always 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sos {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Sos {
    pub fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + self.b[1] * z_inv + self.b[2] * z2) / (self.a[0] + self.a[1] * z_inv + self.a[2] * z2)
    }

    /// Pole magnitudes of the section.
    pub fn pole_radii(&self) -> [f64; 2] {
        let (a1, a2) = (self.a[1], self.a[2]);
        let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
        let p1 = (-a1 + disc) / 2.0;
        let p2 = (-a1 - disc) / 2.0;
        [p1.norm(), p2.norm()]
    }

    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }

    /// Steady-state transposed direct-form II state for a unit step input.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[2] * g;
        let z1 = self.b[1] - self.a[1] * g + z2;
        [z1, z2]
    }
}

/// Magnitude of the cascade's frequency response at `f` Hz.
pub fn sos_magnitude(sections: &[Sos], f: f64, fs: f64) -> f64 {
    let z_inv = Complex64::from_polar(1.0, -2.0 * PI * f / fs);
    sections
        .iter()
        .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
        .norm()
}

/// Designs an order-`order` Butterworth band-pass (`2 * order` poles) as `order` biquads.
///
/// Analog low-pass prototype, low-pass to band-pass transform at pre-warped edges, then the
/// bilinear transform. Gain is normalized to unity at the band centre.
pub fn butterworth_bandpass(order: usize, low: f64, high: f64, fs: f64) -> Result<Vec<Sos>> {
    if !(fs > 0.0 && low > 0.0 && low < high && high < fs / 2.0) {
        return Err(SigprocError::InvalidBand { low, high, fs });
    }
    if order == 0 || order > MAX_ORDER {
        return Err(SigprocError::InvalidParameter(format!(
            "Butterworth order must be in 1..={MAX_ORDER}, got {order}"
        )));
    }

    let fs2 = 2.0 * fs;
    let w_lo = fs2 * (PI * low / fs).tan();
    let w_hi = fs2 * (PI * high / fs).tan();
    let bw = w_hi - w_lo;
    let w0_sq = w_lo * w_hi;

    let mut digital_poles = Vec::with_capacity(2 * order);
    for k in 0..order {
        let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
        let proto = Complex64::from_polar(1.0, theta);
        let scaled = proto * bw / 2.0;
        let root = (scaled * scaled - w0_sq).sqrt();
        for analog in [scaled + root, scaled - root] {
            digital_poles.push((fs2 + analog) / (fs2 - analog));
        }
    }

    let mut sections = Vec::with_capacity(order);
    for [p1, p2] in pair_conjugates(digital_poles)? {
        sections.push(Sos {
            b: [1.0, 0.0, -1.0],
            a: [1.0, -(p1 + p2).re, (p1 * p2).re],
        });
    }

    for s in &sections {
        if s.pole_radii().iter().any(|&r| r >= 1.0) {
            return Err(SigprocError::UnstableSection);
        }
    }

    let w_centre = (w0_sq.sqrt() / fs2).atan() * 2.0;
    let gain = sos_magnitude(&sections, w_centre * fs / (2.0 * PI), fs);
    sections[0].b.iter_mut().for_each(|b| *b /= gain);
    Ok(sections)
}

/// Groups poles into conjugate pairs; real poles are paired with each other.
fn pair_conjugates(mut poles: Vec<Complex64>) -> Result<Vec<[Complex64; 2]>> {
    const TOL: f64 = 1e-10;
    let (mut reals, complex): (Vec<Complex64>, Vec<Complex64>) =
        poles.drain(..).partition(|p| p.im.abs() <= TOL * p.norm().max(1.0));
    let upper: Vec<Complex64> = complex.into_iter().filter(|p| p.im > 0.0).collect();
    let mut pairs: Vec<[Complex64; 2]> = upper.into_iter().map(|p| [p, p.conj()]).collect();
    if reals.len() % 2 != 0 {
        return Err(SigprocError::UnstableSection);
    }
    reals.sort_by(|a, b| a.re.total_cmp(&b.re));
    for r in reals.chunks_exact(2) {
        pairs.push([Complex64::new(r[0].re, 0.0), Complex64::new(r[1].re, 0.0)]);
    }
    Ok(pairs)
}

fn sos_pass(x: &mut [f64], sections: &[Sos]) {
    if x.is_empty() {
        return;
    }
    // initial states scaled to the first sample so a constant input starts in steady state
    let mut level = x[0];
    let mut states: Vec<[f64; 2]> = sections
        .iter()
        .map(|s| {
            let st = s.step_state();
            let z = [st[0] * level, st[1] * level];
            level *= s.dc_gain();
            z
        })
        .collect();
    for v in x.iter_mut() {
        let mut u = *v;
        for (s, z) in sections.iter().zip(states.iter_mut()) {
            let y = s.b[0] * u + z[0];
            z[0] = s.b[1] * u - s.a[1] * y + z[1];
            z[1] = s.b[2] * u - s.a[2] * y;
            u = y;
        }
        *v = u;
    }
}

/// Minimum edge padding, matching `3 * (2 * sections + 1)`.
pub fn sos_padlen(sections: &[Sos]) -> usize {
    3 * (2 * sections.len() + 1)
}

/// Forward-backward application of a biquad cascade to every lead.
pub fn apply_sos(sig: &Array2<f64>, sections: &[Sos]) -> Result<Array2<f64>> {
    let pad = sos_padlen(sections);
    let len = sig.ncols();
    if len <= pad {
        return Err(SigprocError::SignalTooShort { len, required: pad + 1 });
    }
    let mut out = Array2::zeros(sig.raw_dim());
    for (src, mut dst) in sig.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        let mut x = odd_extend(&src.to_vec(), pad);
        sos_pass(&mut x, sections);
        x.reverse();
        sos_pass(&mut x, sections);
        x.reverse();
        for (d, v) in dst.iter_mut().zip(&x[pad..pad + len]) {
            *d = *v;
        }
    }
    Ok(out)
}
