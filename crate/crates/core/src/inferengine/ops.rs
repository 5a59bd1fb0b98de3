//! Single-sample operators over `[channels, time]` tensors.

use super::{InferError, Result, Tensor};
use crate::archsynth::{conv_geometry, ActivationKind, Padding, PoolKind};
use crate::sigproc::interp_linear;

fn mismatch(msg: String) -> InferError {
    InferError::ShapeMismatch(msg)
}

fn check_len(what: &str, v: &[f32], n: usize) -> Result<()> {
    if v.len() == n {
        Ok(())
    } else {
        Err(mismatch(format!("{what} has {} values, expected {n}", v.len())))
    }
}

/// Grouped, dilated 1D convolution. `weight` is `[c_out, c_in / groups, k]`; output
/// channel `c` reads input group `c * groups / c_out`.
pub fn conv1d(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&[f32]>,
    stride: usize,
    dilation: usize,
    padding: Padding,
    groups: usize,
) -> Result<Tensor> {
    let (c_in, t) = x.dims2()?;
    let [c_out, per_group, k] = weight.shape()[..] else {
        return Err(mismatch(format!("conv weight must be rank 3, got {:?}", weight.shape())));
    };
    if groups == 0 || c_in % groups != 0 || per_group != c_in / groups || groups > c_out {
        return Err(mismatch(format!("conv weight {:?} does not fit {c_in} channels in {groups} groups", weight.shape())));
    }
    if let Some(b) = bias {
        check_len("conv bias", b, c_out)?;
    }
    let (out_len, pad) = conv_geometry(t, k, stride, dilation, padding)
        .ok_or_else(|| mismatch(format!("kernel {k} (dilation {dilation}) exceeds input length {t}")))?;
    let xd = x.data();
    let wd = weight.data();
    let mut out = vec![0f32; c_out * out_len];
    for c in 0..c_out {
        let offset = (c * groups / c_out) * per_group;
        let b = bias.map_or(0.0, |b| b[c] as f64);
        for (o, slot) in out[c * out_len..(c + 1) * out_len].iter_mut().enumerate() {
            let mut acc = b;
            for j in 0..per_group {
                let row = &xd[(offset + j) * t..(offset + j + 1) * t];
                let w = &wd[(c * per_group + j) * k..(c * per_group + j + 1) * k];
                for (kk, &wv) in w.iter().enumerate() {
                    let pos = (o * stride + kk * dilation) as isize - pad as isize;
                    if pos >= 0 && (pos as usize) < t {
                        acc += wv as f64 * row[pos as usize] as f64;
                    }
                }
            }
            *slot = acc as f32;
        }
    }
    Tensor::new(vec![c_out, out_len], out)
}

pub const BN_EPS: f64 = 1e-5;

pub fn batchnorm(x: &Tensor, gamma: &[f32], beta: &[f32], mean: &[f32], var: &[f32], eps: f64) -> Result<Tensor> {
    let (c, t) = x.dims2()?;
    for (what, v) in [("gamma", gamma), ("beta", beta), ("running mean", mean), ("running var", var)] {
        check_len(what, v, c)?;
    }
    let mut out = x.clone();
    for ch in 0..c {
        let scale = gamma[ch] as f64 / (var[ch] as f64 + eps).sqrt();
        let m = mean[ch] as f64;
        let b = beta[ch] as f64;
        for v in &mut out.data_mut()[ch * t..(ch + 1) * t] {
            *v = (scale * (*v as f64 - m) + b) as f32;
        }
    }
    Ok(out)
}

/// Valid-window pooling.
pub fn pool1d(x: &Tensor, kind: PoolKind, kernel: usize, stride: usize) -> Result<Tensor> {
    let (c, t) = x.dims2()?;
    let (out_len, _) = conv_geometry(t, kernel, stride, 1, Padding::Valid)
        .ok_or_else(|| mismatch(format!("pool kernel {kernel} exceeds input length {t}")))?;
    let mut out = Vec::with_capacity(c * out_len);
    for ch in 0..c {
        let row = x.row(ch);
        for o in 0..out_len {
            let w = &row[o * stride..o * stride + kernel];
            out.push(match kind {
                PoolKind::Max => w.iter().copied().fold(f32::NEG_INFINITY, f32::max),
                PoolKind::Avg => (w.iter().map(|&v| v as f64).sum::<f64>() / kernel as f64) as f32,
            });
        }
    }
    Tensor::new(vec![c, out_len], out)
}

pub fn global_pool(x: &Tensor, kind: PoolKind) -> Result<Tensor> {
    let (c, t) = x.dims2()?;
    if t == 0 {
        return Err(mismatch("global pooling over an empty sequence".into()));
    }
    pool1d(x, kind, t, 1).map(|p| Tensor::new(vec![c, 1], p.into_data()).expect("c values"))
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn activation(x: &Tensor, kind: ActivationKind) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        let a = *v as f64;
        *v = match kind {
            ActivationKind::Relu => a.max(0.0),
            ActivationKind::LeakyRelu(s) => {
                if a >= 0.0 {
                    a
                } else {
                    s * a
                }
            }
            ActivationKind::Sigmoid => sigmoid(a),
            ActivationKind::Tanh => a.tanh(),
        } as f32;
    }
    out
}

/// Dense map over channels at every time step: `[f, t] -> [o, t]` with `weight` `[o, f]`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: Option<&[f32]>) -> Result<Tensor> {
    let (f, t) = x.dims2()?;
    let (o, wf) = weight.dims2()?;
    if wf != f {
        return Err(mismatch(format!("linear weight expects {wf} features, input has {f}")));
    }
    if let Some(b) = bias {
        check_len("linear bias", b, o)?;
    }
    let mut out = vec![0f32; o * t];
    for oc in 0..o {
        let w = weight.row(oc);
        for ti in 0..t {
            let mut acc = bias.map_or(0.0, |b| b[oc] as f64);
            for (fi, &wv) in w.iter().enumerate() {
                acc += wv as f64 * x.data()[fi * t + ti] as f64;
            }
            out[oc * t + ti] = acc as f32;
        }
    }
    Tensor::new(vec![o, t], out)
}

/// Linear interpolation to `round(t * scale)` samples, same rule as resampling.
pub fn upsample_linear(x: &Tensor, scale: f64) -> Result<Tensor> {
    let (c, t) = x.dims2()?;
    let out_len = (t as f64 * scale).round() as usize;
    if t == 0 || out_len == 0 {
        return Err(mismatch(format!("cannot upsample length {t} by {scale}")));
    }
    let mut out = Vec::with_capacity(c * out_len);
    for ch in 0..c {
        let src: Vec<f64> = x.row(ch).iter().map(|&v| v as f64).collect();
        out.extend(interp_linear(&src, out_len, 1.0 / scale).into_iter().map(|v| v as f32));
    }
    Tensor::new(vec![c, out_len], out)
}

/// Softmax across channels, independently per time step.
pub fn softmax_channels(x: &Tensor) -> Result<Tensor> {
    let (c, t) = x.dims2()?;
    let mut out = x.clone();
    for ti in 0..t {
        let max = (0..c).map(|ch| x.data()[ch * t + ti] as f64).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = (0..c).map(|ch| (x.data()[ch * t + ti] as f64 - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (ch, e) in exps.iter().enumerate() {
            out.data_mut()[ch * t + ti] = (e / sum) as f32;
        }
    }
    Ok(out)
}

/// Parameters of one LSTM direction; gate order i, f, g, o.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights<'a> {
    /// `[4h, f]`
    pub w_ih: &'a Tensor,
    /// `[4h, h]`
    pub w_hh: &'a Tensor,
    pub b_ih: &'a [f32],
    pub b_hh: &'a [f32],
}

impl LstmWeights<'_> {
    fn hidden(&self, f: usize) -> Result<usize> {
        let (g4, wf) = self.w_ih.dims2()?;
        let h = g4 / 4;
        if g4 % 4 != 0 || wf != f || self.w_hh.shape() != [4 * h, h] {
            return Err(mismatch(format!(
                "lstm weights {:?}/{:?} do not fit {f} input features",
                self.w_ih.shape(),
                self.w_hh.shape()
            )));
        }
        check_len("lstm input bias", self.b_ih, 4 * h)?;
        check_len("lstm hidden bias", self.b_hh, 4 * h)?;
        Ok(h)
    }
}

fn lstm_direction(x: &Tensor, w: &LstmWeights, reverse: bool, out: &mut [f32], row0: usize) -> Result<()> {
    let (f, t) = x.dims2()?;
    let h = w.hidden(f)?;
    let mut hs = vec![0f64; h];
    let mut cs = vec![0f64; h];
    let mut gates = vec![0f64; 4 * h];
    let steps: Box<dyn Iterator<Item = usize>> = if reverse { Box::new((0..t).rev()) } else { Box::new(0..t) };
    for ti in steps {
        for (g, gate) in gates.iter_mut().enumerate() {
            let mut acc = w.b_ih[g] as f64 + w.b_hh[g] as f64;
            for (fi, &wv) in w.w_ih.row(g).iter().enumerate() {
                acc += wv as f64 * x.data()[fi * t + ti] as f64;
            }
            for (hi, &wv) in w.w_hh.row(g).iter().enumerate() {
                acc += wv as f64 * hs[hi];
            }
            *gate = acc;
        }
        for j in 0..h {
            let i = sigmoid(gates[j]);
            let fg = sigmoid(gates[h + j]);
            let g = gates[2 * h + j].tanh();
            let o = sigmoid(gates[3 * h + j]);
            cs[j] = fg * cs[j] + i * g;
            hs[j] = o * cs[j].tanh();
            out[(row0 + j) * t + ti] = hs[j] as f32;
        }
    }
    Ok(())
}

/// LSTM over the time axis from a zero state: `[f, t] -> [h * dirs, t]`. The reverse
/// direction, when given, runs from the last step and fills the second half of channels.
pub fn lstm(x: &Tensor, forward: &LstmWeights, backward: Option<&LstmWeights>) -> Result<Tensor> {
    let (f, t) = x.dims2()?;
    let h = forward.hidden(f)?;
    let dirs = if backward.is_some() { 2 } else { 1 };
    let mut out = vec![0f32; dirs * h * t];
    lstm_direction(x, forward, false, &mut out, 0)?;
    if let Some(b) = backward {
        if b.hidden(f)? != h {
            return Err(mismatch("lstm directions differ in hidden size".into()));
        }
        lstm_direction(x, b, true, &mut out, h)?;
    }
    Tensor::new(vec![dirs * h, t], out)
}

/// Squeeze-and-excitation: channels rescaled by `sigmoid(w2 · relu(w1 · mean_t(x) + b1) + b2)`.
pub fn se(x: &Tensor, w1: &Tensor, b1: &[f32], w2: &Tensor, b2: &[f32]) -> Result<Tensor> {
    let (c, t) = x.dims2()?;
    let squeezed = global_pool(x, PoolKind::Avg)?;
    let hidden = activation(&linear(&squeezed, w1, Some(b1))?, ActivationKind::Relu);
    let gate = activation(&linear(&hidden, w2, Some(b2))?, ActivationKind::Sigmoid);
    if gate.shape() != [c, 1] {
        return Err(mismatch(format!("SE gate has shape {:?}, expected [{c}, 1]", gate.shape())));
    }
    let mut out = x.clone();
    for ch in 0..c {
        let s = gate.data()[ch];
        for v in &mut out.data_mut()[ch * t..(ch + 1) * t] {
            *v *= s;
        }
    }
    Ok(out)
}
