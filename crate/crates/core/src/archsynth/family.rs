use serde::{Deserialize, Serialize};

use super::{ActivationKind, ArchConfig, ArchError, LayerNode, Padding, PoolKind, Result};

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StemSpec {
    pub out_ch: usize,
    pub kernel: usize,
    #[serde(default = "one")]
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub blocks: usize,
    pub ch: usize,
    /// Applied by the first block of the stage.
    #[serde(default = "one")]
    pub stride: usize,
    pub kernel: usize,
    /// Expected input channels; checked against the running channel count when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_ch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LstmSpec {
    pub hidden: usize,
    #[serde(default)]
    pub bidirectional: bool,
    #[serde(default = "one")]
    pub layers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeadActivation {
    #[default]
    None,
    Softmax,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    pub num_classes: usize,
    #[serde(default)]
    pub activation: HeadActivation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub pattern: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stem: Option<StemSpec>,
    #[serde(default)]
    pub stages: Vec<StageSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lstm: Option<LstmSpec>,
    pub head: HeadSpec,
    /// Adds an SE block after every stage (crnn only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se_reduction: Option<usize>,
}

struct Builder {
    layers: Vec<LayerNode>,
    ch: usize,
}

impl Builder {
    fn conv_bn_relu(&mut self, out_ch: usize, kernel: usize, stride: usize) {
        self.layers.push(LayerNode::Conv1d {
            in_ch: self.ch,
            out_ch,
            kernel,
            stride,
            dilation: 1,
            padding: Padding::Same,
            groups: 1,
            bias: false,
        });
        self.layers.push(LayerNode::BatchNorm { ch: out_ch });
        self.layers.push(LayerNode::Activation { kind: ActivationKind::Relu });
        self.ch = out_ch;
    }

    fn stem(&mut self, stem: &Option<StemSpec>) -> usize {
        match stem {
            Some(s) => {
                self.conv_bn_relu(s.out_ch, s.kernel, s.stride);
                s.stride
            }
            None => 1,
        }
    }

    fn check_stage(&self, stage: &StageSpec) -> Result<()> {
        match stage.in_ch {
            Some(expected) if expected != self.ch => {
                Err(ArchError::ChannelMismatch { layer: self.layers.len(), expected, found: self.ch })
            }
            _ => Ok(()),
        }
    }

    fn lstm(&mut self, spec: &LstmSpec) {
        for _ in 0..spec.layers {
            self.layers.push(LayerNode::Lstm { input: self.ch, hidden: spec.hidden, bidirectional: spec.bidirectional });
            self.ch = spec.hidden * if spec.bidirectional { 2 } else { 1 };
        }
    }

    fn upsample(&mut self, scale: usize) {
        if scale > 1 {
            self.layers.push(LayerNode::UpsampleLinear { scale: scale as f64 });
        }
    }

    fn head(&mut self, head: &HeadSpec) {
        self.layers.push(LayerNode::Linear { in_f: self.ch, out_f: head.num_classes, bias: true });
        self.ch = head.num_classes;
        match head.activation {
            HeadActivation::None => {}
            HeadActivation::Softmax => self.layers.push(LayerNode::Softmax),
            HeadActivation::Sigmoid => self.layers.push(LayerNode::SigmoidHead),
        }
    }
}

/// Turns a family config into an explicit layer list; explicit configs are returned unchanged.
pub fn expand_family(config: &ArchConfig) -> Result<ArchConfig> {
    let fam = match (&config.layers, &config.family) {
        (Some(_), None) => return Ok(config.clone()),
        (None, Some(f)) => f,
        _ => return Err(ArchError::InvalidConfig("exactly one of `layers` and `family` must be given".into())),
    };
    let mut b = Builder { layers: Vec::new(), ch: config.in_channels };
    match fam.pattern.as_str() {
        "crnn" => {
            b.stem(&fam.stem);
            for stage in &fam.stages {
                b.check_stage(stage)?;
                for i in 0..stage.blocks {
                    let stride = if i == 0 { stage.stride } else { 1 };
                    b.layers.push(LayerNode::ResBasicBlock { ch_in: b.ch, ch_out: stage.ch, kernel: stage.kernel, stride });
                    b.ch = stage.ch;
                }
                if let Some(reduction) = fam.se_reduction {
                    b.layers.push(LayerNode::SeBlock { ch: b.ch, reduction });
                }
            }
            if let Some(l) = &fam.lstm {
                b.lstm(l);
            }
            b.layers.push(LayerNode::GlobalPool { kind: PoolKind::Avg });
            b.head(&fam.head);
        }
        "plain_cnn" => {
            let mut factor = b.stem(&fam.stem);
            for stage in &fam.stages {
                b.check_stage(stage)?;
                for i in 0..stage.blocks {
                    b.conv_bn_relu(stage.ch, stage.kernel, if i == 0 { stage.stride } else { 1 });
                }
                factor *= stage.stride;
            }
            b.upsample(factor);
            b.head(&fam.head);
        }
        "unet_encoder_decoder" => {
            let stem_stride = b.stem(&fam.stem);
            let mut path = Vec::new();
            for stage in &fam.stages {
                b.check_stage(stage)?;
                path.push((b.ch, stage.stride, stage.kernel));
                for i in 0..stage.blocks {
                    b.conv_bn_relu(stage.ch, stage.kernel, if i == 0 { stage.stride } else { 1 });
                }
            }
            for &(ch, stride, kernel) in path.iter().rev() {
                b.upsample(stride);
                b.conv_bn_relu(ch, kernel, 1);
            }
            b.upsample(stem_stride);
            b.head(&fam.head);
        }
        "rr_lstm" => {
            if fam.stem.is_some() || !fam.stages.is_empty() {
                return Err(ArchError::InvalidConfig("rr_lstm takes no stem or stages".into()));
            }
            let l = fam.lstm.as_ref().ok_or_else(|| ArchError::InvalidConfig("rr_lstm needs an `lstm` spec".into()))?;
            b.lstm(l);
            b.head(&fam.head);
        }
        other => return Err(ArchError::UnknownFamily(other.to_string())),
    }
    Ok(ArchConfig { layers: Some(b.layers), family: None, ..config.clone() })
}
