//! Config-driven 1D network graphs.
//!
//! A config either lists layers explicitly or names a family pattern (`crnn`,
//! `unet_encoder_decoder`, `rr_lstm`, `plain_cnn`) that [`expand_family`] turns into a
//! layer list. Shape inference, parameter counting and receptive-field analysis all work
//! on the expanded list.

mod family;
mod shapes;

pub use family::{expand_family, FamilySpec, HeadActivation, HeadSpec, LstmSpec, StageSpec, StemSpec};
pub use shapes::{
    conv_geometry, count_params, infer_shapes, layer_params, receptive_field, LayerShape, Len, ParamCount,
    ParamReport, ReceptiveField, ShapeReport, ShapeTotals,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ArchError {
    #[error("unknown family pattern {0:?}")]
    UnknownFamily(String),
    #[error("layer {layer}: expected {expected} input channels, found {found}")]
    ChannelMismatch { layer: usize, expected: usize, found: usize },
    #[error("layer {layer}: {what} leaves no output samples for input length {len}")]
    NegativeLength { layer: usize, what: String, len: usize },
    #[error("layer {index}: {message}")]
    InvalidLayer { index: usize, message: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, ArchError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Output length `ceil(T / stride)`, padding split with the extra sample on the right.
    #[default]
    Same,
    Valid,
    Explicit(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Avg,
    Max,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerNode {
    /// With `groups > 1`, output channel `c` reads input group `c * groups / out_ch`.
    Conv1d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default = "one")]
        dilation: usize,
        #[serde(default)]
        padding: Padding,
        #[serde(default = "one")]
        groups: usize,
        #[serde(default = "yes")]
        bias: bool,
    },
    BatchNorm {
        ch: usize,
    },
    Activation {
        kind: ActivationKind,
    },
    /// Pools use valid windows; `stride` defaults to `kernel`.
    MaxPool {
        kernel: usize,
        #[serde(default)]
        stride: Option<usize>,
    },
    AvgPool {
        kernel: usize,
        #[serde(default)]
        stride: Option<usize>,
    },
    GlobalPool {
        kind: PoolKind,
    },
    /// Dense layer over channels, applied independently at every time step.
    Linear {
        in_f: usize,
        out_f: usize,
        #[serde(default = "yes")]
        bias: bool,
    },
    #[serde(rename = "se_block")]
    SeBlock {
        ch: usize,
        reduction: usize,
    },
    /// conv-bn-relu-conv-bn plus identity (or 1x1 conv + bn) shortcut, then relu.
    ResBasicBlock {
        ch_in: usize,
        ch_out: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
    },
    Lstm {
        input: usize,
        hidden: usize,
        #[serde(default)]
        bidirectional: bool,
    },
    UpsampleLinear {
        scale: f64,
    },
    Dropout {
        p: f64,
    },
    /// Softmax across channels at every time step.
    Softmax,
    SigmoidHead,
}

impl LayerNode {
    pub fn type_name(&self) -> &'static str {
        match self {
            Self::Conv1d { .. } => "conv1d",
            Self::BatchNorm { .. } => "batch_norm",
            Self::Activation { .. } => "activation",
            Self::MaxPool { .. } => "max_pool",
            Self::AvgPool { .. } => "avg_pool",
            Self::GlobalPool { .. } => "global_pool",
            Self::Linear { .. } => "linear",
            Self::SeBlock { .. } => "se_block",
            Self::ResBasicBlock { .. } => "res_basic_block",
            Self::Lstm { .. } => "lstm",
            Self::UpsampleLinear { .. } => "upsample_linear",
            Self::Dropout { .. } => "dropout",
            Self::Softmax => "softmax",
            Self::SigmoidHead => "sigmoid_head",
        }
    }

    /// Channels this layer expects, when it constrains them.
    pub fn in_channels(&self) -> Option<usize> {
        match *self {
            Self::Conv1d { in_ch, .. } => Some(in_ch),
            Self::BatchNorm { ch } | Self::SeBlock { ch, .. } => Some(ch),
            Self::Linear { in_f, .. } => Some(in_f),
            Self::ResBasicBlock { ch_in, .. } => Some(ch_in),
            Self::Lstm { input, .. } => Some(input),
            _ => None,
        }
    }

    pub fn out_channels(&self, in_ch: usize) -> usize {
        match *self {
            Self::Conv1d { out_ch, .. } => out_ch,
            Self::Linear { out_f, .. } => out_f,
            Self::ResBasicBlock { ch_out, .. } => ch_out,
            Self::Lstm { hidden, bidirectional, .. } => hidden * if bidirectional { 2 } else { 1 },
            _ => in_ch,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let pos = |v: usize, what: &str| if v >= 1 { Ok(()) } else { Err(format!("{what} must be at least 1")) };
        match *self {
            Self::Conv1d { in_ch, out_ch, kernel, stride, dilation, groups, .. } => {
                pos(in_ch, "in_ch")?;
                pos(out_ch, "out_ch")?;
                pos(kernel, "kernel")?;
                pos(stride, "stride")?;
                pos(dilation, "dilation")?;
                pos(groups, "groups")?;
                if in_ch % groups != 0 || groups > out_ch {
                    return Err(format!("groups {groups} must divide in_ch {in_ch} and not exceed out_ch {out_ch}"));
                }
            }
            Self::BatchNorm { ch } => pos(ch, "ch")?,
            Self::Activation { kind } => {
                if let ActivationKind::LeakyRelu(s) = kind {
                    if !s.is_finite() {
                        return Err("leaky_relu slope must be finite".into());
                    }
                }
            }
            Self::MaxPool { kernel, stride } | Self::AvgPool { kernel, stride } => {
                pos(kernel, "kernel")?;
                pos(stride.unwrap_or(kernel), "stride")?;
            }
            Self::GlobalPool { .. } | Self::Softmax | Self::SigmoidHead => {}
            Self::Linear { in_f, out_f, .. } => {
                pos(in_f, "in_f")?;
                pos(out_f, "out_f")?;
            }
            Self::SeBlock { ch, reduction } => {
                pos(ch, "ch")?;
                pos(reduction, "reduction")?;
            }
            Self::ResBasicBlock { ch_in, ch_out, kernel, stride } => {
                pos(ch_in, "ch_in")?;
                pos(ch_out, "ch_out")?;
                pos(kernel, "kernel")?;
                pos(stride, "stride")?;
            }
            Self::Lstm { input, hidden, .. } => {
                pos(input, "input")?;
                pos(hidden, "hidden")?;
            }
            Self::UpsampleLinear { scale } => {
                if !(scale > 0.0 && scale.is_finite()) {
                    return Err(format!("scale must be positive, got {scale}"));
                }
            }
            Self::Dropout { p } => {
                if !(p > 0.0 && p < 1.0) {
                    return Err(format!("dropout p must lie in (0, 1), got {p}"));
                }
            }
        }
        Ok(())
    }
}

/// Name of layer `index`, shared by shape reports and weight bundles.
pub fn layer_name(index: usize, layer: &LayerNode) -> String {
    format!("{index}.{}", layer.type_name())
}

/// Hidden width of a squeeze-and-excitation block.
pub fn se_hidden(ch: usize, reduction: usize) -> usize {
    (ch / reduction).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub name: String,
    /// Sampling frequency the model expects.
    pub fs: f64,
    pub in_channels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<LayerNode>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<FamilySpec>,
}

impl ArchConfig {
    pub fn from_layers(name: &str, fs: f64, in_channels: usize, layers: Vec<LayerNode>) -> Self {
        Self { name: name.into(), fs, in_channels, input_len: None, layers: Some(layers), family: None }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| ArchError::InvalidConfig(e.to_string()))
    }

    /// Expanded layer list, validated for per-layer invariants and channel chaining.
    pub fn expanded_layers(&self) -> Result<Vec<LayerNode>> {
        let cfg = expand_family(self)?;
        let layers = cfg.layers.unwrap_or_default();
        check_layers(self.in_channels, &layers)?;
        Ok(layers)
    }
}

pub(crate) fn check_layers(in_channels: usize, layers: &[LayerNode]) -> Result<()> {
    if in_channels == 0 {
        return Err(ArchError::InvalidConfig("in_channels must be at least 1".into()));
    }
    let mut ch = in_channels;
    for (index, layer) in layers.iter().enumerate() {
        layer.validate().map_err(|message| ArchError::InvalidLayer { index, message })?;
        if let Some(expected) = layer.in_channels() {
            if expected != ch {
                return Err(ArchError::ChannelMismatch { layer: index, expected, found: ch });
            }
        }
        ch = layer.out_channels(ch);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_json_forms() {
        let l: LayerNode = serde_json::from_str(
            r#"{"type": "conv1d", "in_ch": 12, "out_ch": 64, "kernel": 16, "stride": 2, "padding": {"explicit": 3}}"#,
        )
        .unwrap();
        assert_eq!(
            l,
            LayerNode::Conv1d {
                in_ch: 12,
                out_ch: 64,
                kernel: 16,
                stride: 2,
                dilation: 1,
                padding: Padding::Explicit(3),
                groups: 1,
                bias: true
            }
        );
        let a: LayerNode = serde_json::from_str(r#"{"type": "activation", "kind": {"leaky_relu": 0.1}}"#).unwrap();
        assert_eq!(a, LayerNode::Activation { kind: ActivationKind::LeakyRelu(0.1) });
        let s: LayerNode = serde_json::from_str(r#"{"type": "softmax"}"#).unwrap();
        assert_eq!(s, LayerNode::Softmax);
        let text = serde_json::to_string(&l).unwrap();
        assert_eq!(serde_json::from_str::<LayerNode>(&text).unwrap(), l);
    }

    #[test]
    fn layer_invariants() {
        let conv = |groups| LayerNode::Conv1d {
            in_ch: 12,
            out_ch: 64,
            kernel: 3,
            stride: 1,
            dilation: 1,
            padding: Padding::Same,
            groups,
            bias: false,
        };
        assert!(conv(12).validate().is_ok());
        assert!(conv(4).validate().is_ok());
        assert!(conv(5).validate().is_err());
        assert!(LayerNode::Dropout { p: 1.0 }.validate().is_err());
        assert!(LayerNode::Dropout { p: 0.2 }.validate().is_ok());
        assert!(LayerNode::BatchNorm { ch: 0 }.validate().is_err());
    }

    #[test]
    fn channel_chaining() {
        let layers = vec![
            LayerNode::Conv1d {
                in_ch: 2,
                out_ch: 8,
                kernel: 3,
                stride: 1,
                dilation: 1,
                padding: Padding::Valid,
                groups: 1,
                bias: true,
            },
            LayerNode::BatchNorm { ch: 4 },
        ];
        assert_eq!(
            check_layers(2, &layers).unwrap_err(),
            ArchError::ChannelMismatch { layer: 1, expected: 4, found: 8 }
        );
    }
}
