use rayon::prelude::*;

use super::ops::{self, LstmWeights, BN_EPS};
use super::{InferError, Result, Tensor, WeightsBundle};
use crate::archsynth::{layer_name, ActivationKind, ArchConfig, LayerNode, Padding};

fn bn(x: &Tensor, w: &WeightsBundle, layer: &str, prefix: &str) -> Result<Tensor> {
    let g = |n: &str| w.get(layer, &format!("{prefix}{n}")).map(Tensor::data);
    ops::batchnorm(x, g("weight")?, g("bias")?, g("running_mean")?, g("running_var")?, BN_EPS)
}

fn lstm_dir<'a>(w: &'a WeightsBundle, layer: &str, suffix: &str) -> Result<LstmWeights<'a>> {
    let g = |n: &str| w.get(layer, &format!("{n}{suffix}"));
    Ok(LstmWeights { w_ih: g("weight_ih")?, w_hh: g("weight_hh")?, b_ih: g("bias_ih")?.data(), b_hh: g("bias_hh")?.data() })
}

fn apply_layer(i: usize, layer: &LayerNode, w: &WeightsBundle, x: &Tensor) -> Result<Tensor> {
    let name = layer_name(i, layer);
    let name = name.as_str();
    match *layer {
        LayerNode::Conv1d { stride, dilation, padding, groups, bias, .. } => {
            let b = if bias { Some(w.get(name, "bias")?.data()) } else { None };
            ops::conv1d(x, w.get(name, "weight")?, b, stride, dilation, padding, groups)
        }
        LayerNode::BatchNorm { .. } => bn(x, w, name, ""),
        LayerNode::Activation { kind } => Ok(ops::activation(x, kind)),
        LayerNode::MaxPool { kernel, stride } => ops::pool1d(x, crate::archsynth::PoolKind::Max, kernel, stride.unwrap_or(kernel)),
        LayerNode::AvgPool { kernel, stride } => ops::pool1d(x, crate::archsynth::PoolKind::Avg, kernel, stride.unwrap_or(kernel)),
        LayerNode::GlobalPool { kind } => ops::global_pool(x, kind),
        LayerNode::Linear { bias, .. } => {
            let b = if bias { Some(w.get(name, "bias")?.data()) } else { None };
            ops::linear(x, w.get(name, "weight")?, b)
        }
        LayerNode::SeBlock { .. } => ops::se(
            x,
            w.get(name, "fc1.weight")?,
            w.get(name, "fc1.bias")?.data(),
            w.get(name, "fc2.weight")?,
            w.get(name, "fc2.bias")?.data(),
        ),
        LayerNode::ResBasicBlock { ch_in, ch_out, stride, .. } => {
            let y = ops::conv1d(x, w.get(name, "conv1.weight")?, None, stride, 1, Padding::Same, 1)?;
            let y = ops::activation(&bn(&y, w, name, "bn1.")?, ActivationKind::Relu);
            let y = ops::conv1d(&y, w.get(name, "conv2.weight")?, None, 1, 1, Padding::Same, 1)?;
            let y = bn(&y, w, name, "bn2.")?;
            let shortcut = if ch_in != ch_out || stride != 1 {
                let s = ops::conv1d(x, w.get(name, "shortcut.weight")?, None, stride, 1, Padding::Same, 1)?;
                bn(&s, w, name, "shortcut_bn.")?
            } else {
                x.clone()
            };
            if shortcut.shape() != y.shape() {
                return Err(InferError::ShapeMismatch(format!(
                    "{name}: shortcut {:?} vs main path {:?}",
                    shortcut.shape(),
                    y.shape()
                )));
            }
            let sum: Vec<f32> = y.data().iter().zip(shortcut.data()).map(|(a, b)| (a + b).max(0.0)).collect();
            Tensor::new(y.shape().to_vec(), sum)
        }
        LayerNode::Lstm { bidirectional, .. } => {
            let fwd = lstm_dir(w, name, "")?;
            let bwd = if bidirectional { Some(lstm_dir(w, name, "_reverse")?) } else { None };
            ops::lstm(x, &fwd, bwd.as_ref())
        }
        LayerNode::UpsampleLinear { scale } => ops::upsample_linear(x, scale),
        LayerNode::Dropout { .. } => Ok(x.clone()),
        LayerNode::Softmax => ops::softmax_channels(x),
        LayerNode::SigmoidHead => Ok(ops::activation(x, ActivationKind::Sigmoid)),
    }
}

/// Runs one `[channels, time]` sample through an expanded layer list.
pub fn forward_sample(layers: &[LayerNode], weights: &WeightsBundle, x: &Tensor) -> Result<Tensor> {
    let mut cur = x.clone();
    for (i, layer) in layers.iter().enumerate() {
        cur = apply_layer(i, layer, weights, &cur)?;
        if !cur.is_finite() {
            return Err(InferError::NonFinite(layer_name(i, layer)));
        }
    }
    Ok(cur)
}

/// Batched forward pass over `[batch, leads, time]`. Returns `[batch, classes]` when the
/// network ends with length 1 and `[batch, time, classes]` otherwise.
pub fn run_graph(config: &ArchConfig, weights: &WeightsBundle, input: &Tensor) -> Result<Tensor> {
    let layers = config.expanded_layers()?;
    weights.validate(&layers)?;
    let [b, leads, _t] = input.shape()[..] else {
        return Err(InferError::ShapeMismatch(format!("input must be [batch, leads, time], got {:?}", input.shape())));
    };
    if leads != config.in_channels {
        return Err(InferError::ShapeMismatch(format!("input has {leads} leads, model expects {}", config.in_channels)));
    }
    if !input.is_finite() {
        return Err(InferError::NonFinite("input".into()));
    }
    let outs: Vec<Tensor> = (0..b)
        .into_par_iter()
        .map(|i| forward_sample(&layers, weights, &input.index0(i)))
        .collect::<Result<_>>()?;
    let Some(first) = outs.first() else {
        return Ok(Tensor::zeros(vec![0, 0]));
    };
    let (k, len) = first.dims2()?;
    if len == 1 {
        let flat = Tensor::stack(&outs)?;
        Tensor::new(vec![b, k], flat.into_data())
    } else {
        let transposed: Vec<Tensor> = outs.iter().map(Tensor::transpose2).collect::<Result<_>>()?;
        Tensor::stack(&transposed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archsynth::{infer_shapes, Len, PoolKind};
    use crate::inferengine::init_weights;
    use indexmap::IndexMap;

    fn toy() -> (ArchConfig, WeightsBundle) {
        let layers = vec![
            LayerNode::Conv1d { in_ch: 1, out_ch: 2, kernel: 2, stride: 1, dilation: 1, padding: Padding::Valid, groups: 1, bias: true },
            LayerNode::Activation { kind: ActivationKind::Relu },
            LayerNode::GlobalPool { kind: PoolKind::Max },
            LayerNode::Linear { in_f: 2, out_f: 1, bias: true },
        ];
        let cfg = ArchConfig::from_layers("toy", 100.0, 1, layers);
        let mut w = WeightsBundle::default();
        let mut conv = IndexMap::new();
        conv.insert("weight".to_string(), Tensor::new(vec![2, 1, 2], vec![1.0, -1.0, 0.5, 0.5]).unwrap());
        conv.insert("bias".to_string(), Tensor::new(vec![2], vec![0.0, -1.0]).unwrap());
        w.layers.insert("0.conv1d".into(), conv);
        let mut lin = IndexMap::new();
        lin.insert("weight".to_string(), Tensor::new(vec![1, 2], vec![2.0, 1.0]).unwrap());
        lin.insert("bias".to_string(), Tensor::new(vec![1], vec![0.5]).unwrap());
        w.layers.insert("3.linear".into(), lin);
        (cfg, w)
    }

    #[test]
    fn toy_network_by_hand() {
        let (cfg, w) = toy();
        // x = [3, 1, 4, 1]
        // ch0: x[t]-x[t+1] = [2, -3, 3] -> relu max 3
        // ch1: (x[t]+x[t+1])/2 - 1 = [1, 1.5, 1.5] -> max 1.5
        // logit = 2*3 + 1.5 + 0.5 = 8
        let x = Tensor::new(vec![1, 1, 4], vec![3.0, 1.0, 4.0, 1.0]).unwrap();
        let y = run_graph(&cfg, &w, &x).unwrap();
        assert_eq!(y.shape(), [1, 1]);
        assert_eq!(y.data(), [8.0]);
    }

    #[test]
    fn identical_rows_and_permutation() {
        let (cfg, w) = toy();
        let x = Tensor::new(vec![3, 1, 4], vec![3.0, 1.0, 4.0, 1.0, 3.0, 1.0, 4.0, 1.0, 0.0, 2.0, -1.0, 5.0]).unwrap();
        let y = run_graph(&cfg, &w, &x).unwrap();
        assert_eq!(y.data()[0], y.data()[1]);
        let p = Tensor::new(vec![3, 1, 4], [&x.data()[8..], &x.data()[..8]].concat()).unwrap();
        let yp = run_graph(&cfg, &w, &p).unwrap();
        assert_eq!(yp.data(), [y.data()[2], y.data()[0], y.data()[1]]);
    }

    #[test]
    fn segmentation_output_layout() {
        let layers = vec![
            LayerNode::Conv1d { in_ch: 2, out_ch: 4, kernel: 3, stride: 2, dilation: 1, padding: Padding::Same, groups: 2, bias: true },
            LayerNode::UpsampleLinear { scale: 2.0 },
            LayerNode::Linear { in_f: 4, out_f: 3, bias: true },
            LayerNode::Softmax,
        ];
        let cfg = ArchConfig::from_layers("seg", 100.0, 2, layers);
        let w = init_weights(&cfg, 0).unwrap();
        let x = Tensor::from_fn(vec![2, 2, 10], |i| (i as f32 * 0.37).sin());
        let y = run_graph(&cfg, &w, &x).unwrap();
        let r = infer_shapes(&cfg, Some(10)).unwrap();
        assert_eq!(r.output(), (3, Len::Known(10)));
        assert_eq!(y.shape(), [2, 10, 3]);
        for row in y.data().chunks(3) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let (cfg, w) = toy();
        assert!(matches!(run_graph(&cfg, &w, &Tensor::zeros(vec![1, 2, 4])), Err(InferError::ShapeMismatch(_))));
        let mut bad = w.clone();
        bad.layers.shift_remove("3.linear");
        assert!(matches!(run_graph(&cfg, &bad, &Tensor::zeros(vec![1, 1, 4])), Err(InferError::WeightsMismatch(_))));
    }
}
