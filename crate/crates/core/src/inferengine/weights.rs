use std::path::Path;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{read_container, write_container, Container, Entry, InferError, Result, Tensor, Values};
use crate::archsynth::{layer_name, se_hidden, ArchConfig, LayerNode};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    Uniform { fan_in: usize },
    Ones,
    Zeros,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn spec(name: &str, shape: Vec<usize>, init: Init) -> TensorSpec {
    TensorSpec { name: name.into(), shape, init }
}

fn bn_specs(prefix: &str, ch: usize, out: &mut Vec<TensorSpec>) {
    out.push(spec(&format!("{prefix}weight"), vec![ch], Init::Ones));
    out.push(spec(&format!("{prefix}bias"), vec![ch], Init::Zeros));
    out.push(spec(&format!("{prefix}running_mean"), vec![ch], Init::Zeros));
    out.push(spec(&format!("{prefix}running_var"), vec![ch], Init::Ones));
}

/// Named tensors a layer owns, in storage order.
pub fn tensor_specs(layer: &LayerNode) -> Vec<TensorSpec> {
    let mut out = Vec::new();
    match *layer {
        LayerNode::Conv1d { in_ch, out_ch, kernel, groups, bias, .. } => {
            let fan_in = in_ch / groups * kernel;
            out.push(spec("weight", vec![out_ch, in_ch / groups, kernel], Init::Uniform { fan_in }));
            if bias {
                out.push(spec("bias", vec![out_ch], Init::Uniform { fan_in }));
            }
        }
        LayerNode::BatchNorm { ch } => bn_specs("", ch, &mut out),
        LayerNode::Linear { in_f, out_f, bias } => {
            out.push(spec("weight", vec![out_f, in_f], Init::Uniform { fan_in: in_f }));
            if bias {
                out.push(spec("bias", vec![out_f], Init::Uniform { fan_in: in_f }));
            }
        }
        LayerNode::SeBlock { ch, reduction } => {
            let h = se_hidden(ch, reduction);
            out.push(spec("fc1.weight", vec![h, ch], Init::Uniform { fan_in: ch }));
            out.push(spec("fc1.bias", vec![h], Init::Uniform { fan_in: ch }));
            out.push(spec("fc2.weight", vec![ch, h], Init::Uniform { fan_in: h }));
            out.push(spec("fc2.bias", vec![ch], Init::Uniform { fan_in: h }));
        }
        LayerNode::ResBasicBlock { ch_in, ch_out, kernel, stride } => {
            out.push(spec("conv1.weight", vec![ch_out, ch_in, kernel], Init::Uniform { fan_in: ch_in * kernel }));
            bn_specs("bn1.", ch_out, &mut out);
            out.push(spec("conv2.weight", vec![ch_out, ch_out, kernel], Init::Uniform { fan_in: ch_out * kernel }));
            bn_specs("bn2.", ch_out, &mut out);
            if ch_in != ch_out || stride != 1 {
                out.push(spec("shortcut.weight", vec![ch_out, ch_in, 1], Init::Uniform { fan_in: ch_in }));
                bn_specs("shortcut_bn.", ch_out, &mut out);
            }
        }
        LayerNode::Lstm { input, hidden, bidirectional } => {
            let suffixes: &[&str] = if bidirectional { &["", "_reverse"] } else { &[""] };
            for s in suffixes {
                let u = Init::Uniform { fan_in: hidden };
                out.push(spec(&format!("weight_ih{s}"), vec![4 * hidden, input], u));
                out.push(spec(&format!("weight_hh{s}"), vec![4 * hidden, hidden], u));
                out.push(spec(&format!("bias_ih{s}"), vec![4 * hidden], u));
                out.push(spec(&format!("bias_hh{s}"), vec![4 * hidden], u));
            }
        }
        _ => {}
    }
    out
}

/// Layer name to named tensors, for layers that own parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightsBundle {
    pub layers: IndexMap<String, IndexMap<String, Tensor>>,
}

impl WeightsBundle {
    pub fn get(&self, layer: &str, name: &str) -> Result<&Tensor> {
        self.layers
            .get(layer)
            .and_then(|l| l.get(name))
            .ok_or_else(|| InferError::WeightsMismatch(format!("missing tensor {layer}/{name}")))
    }

    pub fn element_count(&self) -> usize {
        self.layers.values().flat_map(|l| l.values()).map(Tensor::len).sum()
    }

    /// Checks that names and shapes match the layer list exactly.
    pub fn validate(&self, layers: &[LayerNode]) -> Result<()> {
        let mut expected = 0;
        for (i, layer) in layers.iter().enumerate() {
            let specs = tensor_specs(layer);
            if specs.is_empty() {
                continue;
            }
            expected += 1;
            let lname = layer_name(i, layer);
            let got = self
                .layers
                .get(&lname)
                .ok_or_else(|| InferError::WeightsMismatch(format!("no tensors for layer {lname}")))?;
            if got.len() != specs.len() {
                return Err(InferError::WeightsMismatch(format!(
                    "layer {lname} has {} tensors, expected {}",
                    got.len(),
                    specs.len()
                )));
            }
            for s in &specs {
                let t = self.get(&lname, &s.name)?;
                if t.shape() != s.shape {
                    return Err(InferError::WeightsMismatch(format!(
                        "{lname}/{} has shape {:?}, expected {:?}",
                        s.name,
                        t.shape(),
                        s.shape
                    )));
                }
            }
        }
        if self.layers.len() != expected {
            return Err(InferError::WeightsMismatch(format!(
                "bundle has {} layers with tensors, architecture has {expected}",
                self.layers.len()
            )));
        }
        Ok(())
    }

    pub fn to_container(&self, meta: serde_json::Value) -> Container {
        let entries = self
            .layers
            .iter()
            .flat_map(|(g, ts)| {
                ts.iter().map(move |(n, t)| Entry {
                    group: g.clone(),
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                    values: Values::F32(t.data().to_vec()),
                })
            })
            .collect();
        Container { kind: "weights".into(), meta, entries }
    }

    pub fn from_container(c: Container) -> Result<Self> {
        if c.kind != "weights" {
            return Err(InferError::Container(format!("expected a weights container, found {:?}", c.kind)));
        }
        let mut b = WeightsBundle::default();
        for e in c.entries {
            let Values::F32(v) = e.values else {
                return Err(InferError::Container(format!("{}/{} must be f32", e.group, e.name)));
            };
            b.layers.entry(e.group).or_default().insert(e.name, Tensor::new(e.shape, v)?);
        }
        Ok(b)
    }
}

/// Seeded initialization: weights uniform in `±1/sqrt(fan_in)`, batch norm at identity.
pub fn init_weights(config: &ArchConfig, seed: u64) -> Result<WeightsBundle> {
    let layers = config.expanded_layers()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bundle = WeightsBundle::default();
    for (i, layer) in layers.iter().enumerate() {
        let specs = tensor_specs(layer);
        if specs.is_empty() {
            continue;
        }
        let mut named = IndexMap::new();
        for s in specs {
            let n: usize = s.shape.iter().product();
            let data = match s.init {
                Init::Uniform { fan_in } => {
                    let b = 1.0 / (fan_in as f32).sqrt();
                    (0..n).map(|_| rng.random_range(-b..=b)).collect()
                }
                Init::Ones => vec![1.0; n],
                Init::Zeros => vec![0.0; n],
            };
            named.insert(s.name, Tensor::new(s.shape, data)?);
        }
        bundle.layers.insert(layer_name(i, layer), named);
    }
    Ok(bundle)
}

pub fn save_weights(bundle: &WeightsBundle, path: &Path) -> Result<()> {
    std::fs::write(path, write_container(&bundle.to_container(serde_json::Value::Null))?)?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<WeightsBundle> {
    WeightsBundle::from_container(read_container(&std::fs::read(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archsynth::{count_params, FamilySpec, HeadActivation, HeadSpec, LstmSpec, StageSpec, StemSpec};

    fn crnn() -> ArchConfig {
        ArchConfig {
            name: "c".into(),
            fs: 250.0,
            in_channels: 2,
            input_len: None,
            layers: None,
            family: Some(FamilySpec {
                pattern: "crnn".into(),
                stem: Some(StemSpec { out_ch: 8, kernel: 7, stride: 2 }),
                stages: vec![
                    StageSpec { blocks: 2, ch: 8, stride: 1, kernel: 5, in_ch: None },
                    StageSpec { blocks: 1, ch: 16, stride: 2, kernel: 3, in_ch: None },
                ],
                lstm: Some(LstmSpec { hidden: 4, bidirectional: true, layers: 1 }),
                head: HeadSpec { num_classes: 3, activation: HeadActivation::Sigmoid },
                se_reduction: Some(4),
            }),
        }
    }

    #[test]
    fn seeded_and_counted() {
        let c = crnn();
        let a = init_weights(&c, 3).unwrap();
        assert_eq!(a, init_weights(&c, 3).unwrap());
        assert_ne!(a, init_weights(&c, 4).unwrap());
        assert_eq!(a.element_count(), count_params(&c).unwrap().total.total());
        a.validate(&c.expanded_layers().unwrap()).unwrap();
        let bound = 1.0 / ((2 * 7) as f32).sqrt();
        assert!(a.get("0.conv1d", "weight").unwrap().data().iter().all(|v| v.abs() <= bound));
        assert!(a.get("1.batch_norm", "running_var").unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn save_load_round_trip() {
        let c = crnn();
        let a = init_weights(&c, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.ecgw");
        save_weights(&a, &p).unwrap();
        let b = load_weights(&p).unwrap();
        assert_eq!(a, b);
        for (la, lb) in a.layers.values().zip(b.layers.values()) {
            for (ta, tb) in la.values().zip(lb.values()) {
                assert!(ta.data().iter().zip(tb.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
    }

    #[test]
    fn mismatch_detected() {
        let c = crnn();
        let layers = c.expanded_layers().unwrap();
        let mut a = init_weights(&c, 1).unwrap();
        a.layers.get_mut("0.conv1d").unwrap().insert("weight".into(), Tensor::zeros(vec![8, 2, 5]));
        assert!(matches!(a.validate(&layers), Err(InferError::WeightsMismatch(_))));
        let mut b = init_weights(&c, 1).unwrap();
        b.layers.shift_remove("1.batch_norm");
        assert!(b.validate(&layers).is_err());
    }
}
