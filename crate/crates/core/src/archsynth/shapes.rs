use std::fmt;

use serde::{Deserialize, Serialize};

use super::{layer_name, se_hidden, ArchConfig, ArchError, LayerNode, Padding, Result};

/// A length that is either known or an expression in the input length `T`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Len {
    Known(usize),
    Expr(String),
}

impl fmt::Display for Len {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Known(n) => write!(f, "{n}"),
            Self::Expr(e) => f.write_str(e),
        }
    }
}

/// Output length and left padding of a convolution or pooling window, `None` when no
/// output sample fits.
pub fn conv_geometry(t: usize, kernel: usize, stride: usize, dilation: usize, padding: Padding) -> Option<(usize, usize)> {
    let span = dilation * (kernel - 1) + 1;
    match padding {
        Padding::Same => {
            if t == 0 {
                return None;
            }
            let out = t.div_ceil(stride);
            let total = ((out - 1) * stride + span).saturating_sub(t);
            Some((out, total / 2))
        }
        Padding::Valid => (t >= span).then(|| ((t - span) / stride + 1, 0)),
        Padding::Explicit(p) => (t + 2 * p >= span).then(|| ((t + 2 * p - span) / stride + 1, p)),
    }
}

fn wrap(e: &str) -> String {
    if e.contains(' ') {
        format!("({e})")
    } else {
        e.to_string()
    }
}

fn symbolic_window(e: &str, kernel: usize, stride: usize, dilation: usize, padding: Padding) -> String {
    let span = (dilation * (kernel - 1) + 1) as i64;
    let inner = match padding {
        Padding::Same if stride == 1 => return e.to_string(),
        Padding::Same => return format!("ceil({}/{stride})", wrap(e)),
        Padding::Valid => offset(e, 1 - span),
        Padding::Explicit(p) => offset(e, 2 * p as i64 + 1 - span),
    };
    if stride == 1 {
        inner
    } else {
        format!("floor({}/{stride}) + 1", wrap(&inner))
    }
}

/// `e + delta`, folding into a trailing constant when there is one.
fn offset(e: &str, delta: i64) -> String {
    let mut parts = e.rsplitn(3, ' ');
    let (base, delta) = match (parts.next(), parts.next(), parts.next()) {
        (Some(n), Some(op @ ("+" | "-")), Some(base)) if n.parse::<i64>().is_ok() => {
            let n: i64 = n.parse().unwrap_or(0);
            (base.to_string(), delta + if op == "+" { n } else { -n })
        }
        _ => (wrap(e), delta),
    };
    match delta {
        0 => base,
        d if d > 0 => format!("{base} + {d}"),
        d => format!("{base} - {}", -d),
    }
}

fn pool_stride(kernel: usize, stride: Option<usize>) -> usize {
    stride.unwrap_or(kernel)
}

/// Output length of one layer for a concrete input length.
pub(crate) fn layer_out_len(layer: &LayerNode, t: usize) -> Option<usize> {
    match *layer {
        LayerNode::Conv1d { kernel, stride, dilation, padding, .. } => {
            conv_geometry(t, kernel, stride, dilation, padding).map(|g| g.0)
        }
        LayerNode::MaxPool { kernel, stride } | LayerNode::AvgPool { kernel, stride } => {
            conv_geometry(t, kernel, pool_stride(kernel, stride), 1, Padding::Valid).map(|g| g.0)
        }
        LayerNode::ResBasicBlock { kernel, stride, .. } => {
            conv_geometry(t, kernel, stride, 1, Padding::Same).map(|g| g.0)
        }
        LayerNode::GlobalPool { .. } => (t > 0).then_some(1),
        LayerNode::UpsampleLinear { scale } => {
            let out = (t as f64 * scale).round() as usize;
            (out > 0).then_some(out)
        }
        _ => (t > 0).then_some(t),
    }
}

fn layer_out_expr(layer: &LayerNode, e: &str) -> Len {
    match *layer {
        LayerNode::Conv1d { kernel, stride, dilation, padding, .. } => {
            Len::Expr(symbolic_window(e, kernel, stride, dilation, padding))
        }
        LayerNode::MaxPool { kernel, stride } | LayerNode::AvgPool { kernel, stride } => {
            Len::Expr(symbolic_window(e, kernel, pool_stride(kernel, stride), 1, Padding::Valid))
        }
        LayerNode::ResBasicBlock { kernel, stride, .. } => {
            Len::Expr(symbolic_window(e, kernel, stride, 1, Padding::Same))
        }
        LayerNode::GlobalPool { .. } => Len::Known(1),
        LayerNode::UpsampleLinear { scale } => Len::Expr(format!("round({}*{scale})", wrap(e))),
        _ => Len::Expr(e.to_string()),
    }
}

/// Trainable parameters and running statistics of a layer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub trainable: usize,
    pub non_trainable: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.trainable + self.non_trainable
    }

    fn bn(ch: usize) -> Self {
        Self { trainable: 2 * ch, non_trainable: 2 * ch }
    }

    fn weights(n: usize) -> Self {
        Self { trainable: n, non_trainable: 0 }
    }
}

impl std::ops::Add for ParamCount {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self { trainable: self.trainable + o.trainable, non_trainable: self.non_trainable + o.non_trainable }
    }
}

impl std::iter::Sum for ParamCount {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

pub fn layer_params(layer: &LayerNode) -> ParamCount {
    match *layer {
        LayerNode::Conv1d { in_ch, out_ch, kernel, groups, bias, .. } => {
            ParamCount::weights(out_ch * (in_ch / groups) * kernel + if bias { out_ch } else { 0 })
        }
        LayerNode::BatchNorm { ch } => ParamCount::bn(ch),
        LayerNode::Linear { in_f, out_f, bias } => ParamCount::weights(out_f * in_f + if bias { out_f } else { 0 }),
        LayerNode::SeBlock { ch, reduction } => {
            let h = se_hidden(ch, reduction);
            ParamCount::weights(2 * ch * h + h + ch)
        }
        LayerNode::ResBasicBlock { ch_in, ch_out, kernel, stride } => {
            let mut p = ParamCount::weights(ch_out * ch_in * kernel)
                + ParamCount::bn(ch_out)
                + ParamCount::weights(ch_out * ch_out * kernel)
                + ParamCount::bn(ch_out);
            if ch_in != ch_out || stride != 1 {
                p = p + ParamCount::weights(ch_out * ch_in) + ParamCount::bn(ch_out);
            }
            p
        }
        LayerNode::Lstm { input, hidden, bidirectional } => {
            let dirs = if bidirectional { 2 } else { 1 };
            ParamCount::weights(dirs * 4 * (hidden * input + hidden * hidden + 2 * hidden))
        }
        _ => ParamCount::default(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamReport {
    pub per_layer: Vec<ParamCount>,
    pub total: ParamCount,
}

pub fn count_params(config: &ArchConfig) -> Result<ParamReport> {
    let layers = config.expanded_layers()?;
    let per_layer: Vec<ParamCount> = layers.iter().map(layer_params).collect();
    let total = per_layer.iter().copied().sum();
    Ok(ParamReport { per_layer, total })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReceptiveField {
    Bounded { samples: usize, seconds: f64 },
    /// Some layer sees the whole sequence (recurrence, global pooling or SE gating).
    Unbounded { layer: usize },
}

impl fmt::Display for ReceptiveField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Bounded { samples, seconds } => write!(f, "{samples} samples ({seconds:.3} s)"),
            Self::Unbounded { layer } => write!(f, "unbounded (from layer {layer})"),
        }
    }
}

/// Input span that can influence one output sample, for the expanded layer list.
pub fn receptive_field(config: &ArchConfig) -> Result<ReceptiveField> {
    let layers = config.expanded_layers()?;
    let mut rf = 1.0f64;
    let mut jump = 1.0f64;
    let window = |rf: &mut f64, jump: &mut f64, k: usize, s: usize, d: usize| {
        *rf += ((k - 1) * d) as f64 * *jump;
        *jump *= s as f64;
    };
    for (i, layer) in layers.iter().enumerate() {
        match *layer {
            LayerNode::Conv1d { kernel, stride, dilation, .. } => window(&mut rf, &mut jump, kernel, stride, dilation),
            LayerNode::MaxPool { kernel, stride } | LayerNode::AvgPool { kernel, stride } => {
                window(&mut rf, &mut jump, kernel, pool_stride(kernel, stride), 1)
            }
            LayerNode::ResBasicBlock { kernel, stride, .. } => {
                window(&mut rf, &mut jump, kernel, stride, 1);
                window(&mut rf, &mut jump, kernel, 1, 1);
            }
            LayerNode::UpsampleLinear { scale } => {
                // interpolation may reach one further input sample
                rf += jump;
                jump /= scale;
            }
            LayerNode::Lstm { .. } | LayerNode::GlobalPool { .. } | LayerNode::SeBlock { .. } => {
                return Ok(ReceptiveField::Unbounded { layer: i });
            }
            _ => {}
        }
    }
    let samples = (rf - 1e-9).ceil() as usize;
    Ok(ReceptiveField::Bounded { samples, seconds: samples as f64 / config.fs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub out_channels: usize,
    pub out_len: Len,
    pub params: usize,
    pub trainable: usize,
    pub non_trainable: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeTotals {
    pub params: usize,
    pub trainable: usize,
    pub non_trainable: usize,
    pub receptive_field: ReceptiveField,
    /// Input samples per output sample along the layer stack.
    pub downsample_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeReport {
    pub name: String,
    pub in_channels: usize,
    pub input_len: Len,
    pub layers: Vec<LayerShape>,
    pub totals: ShapeTotals,
}

impl ShapeReport {
    /// Final `(channels, length)`.
    pub fn output(&self) -> (usize, Len) {
        match self.layers.last() {
            Some(l) => (l.out_channels, l.out_len.clone()),
            None => (self.in_channels, self.input_len.clone()),
        }
    }

    pub fn to_table(&self) -> String {
        let mut rows = vec![["layer".to_string(), "channels".into(), "length".into(), "params".into()]];
        rows.push(["input".into(), self.in_channels.to_string(), self.input_len.to_string(), "".into()]);
        for l in &self.layers {
            rows.push([l.name.clone(), l.out_channels.to_string(), l.out_len.to_string(), l.params.to_string()]);
        }
        let widths: Vec<usize> = (0..4).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for r in &rows {
            out.push_str(&format!(
                "{:<w0$}  {:>w1$}  {:>w2$}  {:>w3$}\n",
                r[0],
                r[1],
                r[2],
                r[3],
                w0 = widths[0],
                w1 = widths[1],
                w2 = widths[2],
                w3 = widths[3]
            ));
        }
        let t = &self.totals;
        out.push_str(&format!(
            "total params {} (trainable {}, running stats {})\nreceptive field {}\ndownsample factor {}\n",
            t.params, t.trainable, t.non_trainable, t.receptive_field, t.downsample_factor
        ));
        out
    }
}

/// Per-layer output shapes. Without a length (argument or config `input_len`) lengths are
/// reported as expressions in `T`.
pub fn infer_shapes(config: &ArchConfig, input_len: Option<usize>) -> Result<ShapeReport> {
    let layers = config.expanded_layers()?;
    let input = match input_len.or(config.input_len) {
        Some(t) => Len::Known(t),
        None => Len::Expr("T".into()),
    };
    let mut ch = config.in_channels;
    let mut len = input.clone();
    let mut factor = 1.0f64;
    let mut shapes = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        len = match &len {
            Len::Known(t) => Len::Known(layer_out_len(layer, *t).ok_or_else(|| ArchError::NegativeLength {
                layer: i,
                what: layer.type_name().to_string(),
                len: *t,
            })?),
            Len::Expr(e) => layer_out_expr(layer, e),
        };
        factor *= match *layer {
            LayerNode::Conv1d { stride, .. } | LayerNode::ResBasicBlock { stride, .. } => stride as f64,
            LayerNode::MaxPool { kernel, stride } | LayerNode::AvgPool { kernel, stride } => {
                pool_stride(kernel, stride) as f64
            }
            LayerNode::UpsampleLinear { scale } => 1.0 / scale,
            _ => 1.0,
        };
        ch = layer.out_channels(ch);
        let p = layer_params(layer);
        shapes.push(LayerShape {
            name: layer_name(i, layer),
            out_channels: ch,
            out_len: len.clone(),
            params: p.total(),
            trainable: p.trainable,
            non_trainable: p.non_trainable,
        });
    }
    let trainable = shapes.iter().map(|s| s.trainable).sum();
    let non_trainable = shapes.iter().map(|s| s.non_trainable).sum();
    Ok(ShapeReport {
        name: config.name.clone(),
        in_channels: config.in_channels,
        input_len: input,
        totals: ShapeTotals {
            params: shapes.iter().map(|s| s.params).sum(),
            trainable,
            non_trainable,
            receptive_field: receptive_field(config)?,
            downsample_factor: factor,
        },
        layers: shapes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archsynth::{PoolKind, ActivationKind};
    use proptest::prelude::*;

    fn conv(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: Padding, groups: usize) -> LayerNode {
        LayerNode::Conv1d { in_ch, out_ch, kernel, stride, dilation: 1, padding, groups, bias: true }
    }

    fn cfg(in_ch: usize, layers: Vec<LayerNode>) -> ArchConfig {
        ArchConfig::from_layers("t", 500.0, in_ch, layers)
    }

    #[test]
    fn same_conv_and_global_pool_shapes() {
        let c = cfg(12, vec![conv(12, 64, 16, 2, Padding::Same, 1), LayerNode::GlobalPool { kind: PoolKind::Avg }]);
        let r = infer_shapes(&c, Some(5000)).unwrap();
        assert_eq!((r.layers[0].out_channels, r.layers[0].out_len.clone()), (64, Len::Known(2500)));
        assert_eq!((r.layers[1].out_channels, r.layers[1].out_len.clone()), (64, Len::Known(1)));
    }

    #[test]
    fn oversized_valid_kernel_fails() {
        let c = cfg(1, vec![conv(1, 1, 17, 1, Padding::Valid, 1)]);
        assert!(matches!(infer_shapes(&c, Some(16)), Err(ArchError::NegativeLength { layer: 0, .. })));
        assert!(infer_shapes(&c, Some(17)).is_ok());
    }

    #[test]
    fn lead_wise_conv_counts() {
        assert_eq!(layer_params(&conv(12, 64, 16, 1, Padding::Same, 1)).total(), 12352);
        assert_eq!(layer_params(&conv(12, 64, 16, 1, Padding::Same, 12)).total(), 1088);
        assert_eq!(layer_params(&LayerNode::Linear { in_f: 16, out_f: 3, bias: true }).total(), 51);
    }

    #[test]
    fn batchnorm_and_lstm_counts() {
        let bn = layer_params(&LayerNode::BatchNorm { ch: 8 });
        assert_eq!((bn.trainable, bn.non_trainable), (16, 16));
        let lstm = layer_params(&LayerNode::Lstm { input: 1, hidden: 16, bidirectional: true });
        assert_eq!(lstm.total(), 2 * 4 * (16 + 256 + 32));
    }

    #[test]
    fn receptive_field_recurrence() {
        let one = cfg(1, vec![conv(1, 4, 16, 1, Padding::Valid, 1)]);
        assert_eq!(receptive_field(&one).unwrap(), ReceptiveField::Bounded { samples: 16, seconds: 16.0 / 500.0 });
        let two = cfg(1, vec![conv(1, 4, 16, 2, Padding::Valid, 1), conv(4, 4, 16, 1, Padding::Valid, 1)]);
        assert!(matches!(receptive_field(&two).unwrap(), ReceptiveField::Bounded { samples: 46, .. }));
        let rec = cfg(1, vec![conv(1, 4, 3, 1, Padding::Valid, 1), LayerNode::Lstm { input: 4, hidden: 2, bidirectional: false }]);
        assert_eq!(receptive_field(&rec).unwrap(), ReceptiveField::Unbounded { layer: 1 });
    }

    #[test]
    fn symbolic_lengths() {
        let c = cfg(
            1,
            vec![
                conv(1, 4, 5, 2, Padding::Same, 1),
                conv(4, 4, 5, 1, Padding::Valid, 1),
                LayerNode::MaxPool { kernel: 2, stride: None },
                LayerNode::UpsampleLinear { scale: 4.0 },
            ],
        );
        let r = infer_shapes(&c, None).unwrap();
        let lens: Vec<String> = r.layers.iter().map(|l| l.out_len.to_string()).collect();
        assert_eq!(lens, ["ceil(T/2)", "ceil(T/2) - 4", "floor((ceil(T/2) - 5)/2) + 1", "round((floor((ceil(T/2) - 5)/2) + 1)*4)"]);
        assert_eq!(r.totals.downsample_factor, 1.0);
    }

    #[test]
    fn report_totals_sum_layers() {
        let c = cfg(
            2,
            vec![
                conv(2, 8, 7, 2, Padding::Same, 2),
                LayerNode::BatchNorm { ch: 8 },
                LayerNode::Activation { kind: ActivationKind::Relu },
                LayerNode::ResBasicBlock { ch_in: 8, ch_out: 16, kernel: 5, stride: 2 },
                LayerNode::SeBlock { ch: 16, reduction: 4 },
                LayerNode::GlobalPool { kind: PoolKind::Max },
                LayerNode::Linear { in_f: 16, out_f: 3, bias: true },
            ],
        );
        let r = infer_shapes(&c, Some(100)).unwrap();
        assert_eq!(r.totals.params, r.layers.iter().map(|l| l.params).sum::<usize>());
        assert_eq!(r.totals.params, count_params(&c).unwrap().total.total());
        assert_eq!(r.output(), (3, Len::Known(1)));
        assert!(r.to_table().contains("3.res_basic_block"));
    }

    proptest! {
        #[test]
        fn geometry_matches_closed_form(t in 1usize..300, k in 1usize..12, s in 1usize..5, d in 1usize..4, p in 0usize..6) {
            let span = d * (k - 1) + 1;
            let valid = conv_geometry(t, k, s, d, Padding::Valid).map(|g| g.0);
            let expect = if t >= span { Some((t - span) / s + 1) } else { None };
            prop_assert_eq!(valid, expect);
            let same = conv_geometry(t, k, s, d, Padding::Same).unwrap();
            prop_assert_eq!(same.0, t.div_ceil(s));
            let expl = conv_geometry(t, k, s, d, Padding::Explicit(p)).map(|g| g.0);
            let num = t as i64 + 2 * p as i64 - span as i64;
            prop_assert_eq!(expl, (num >= 0).then(|| (num as usize) / s + 1));
        }
    }
}
