//! Signal batches stored in the ECGW container with manifest kind `"batch"`.
//!
//! Entries: `signals/x` `[batch, lead, time]`, optionally `labels/classification`
//! `[batch, class]` or `labels/segmentation` `[batch, time, class]`, and any number of
//! `extra/*` tensors. `meta.fs` holds the sampling frequency and `meta.critical_points`
//! optional per-sample index lists.

use anyhow::{anyhow, bail, Context, Result};
use ecgkit::augment::{Batch, Labels};
use ecgkit::inferengine::{read_container, write_container, Container, Entry, Values};
use ndarray::{Array2, Array3, ArrayD, IxDyn};
use serde_json::{json, Value};

pub const KIND: &str = "batch";

pub struct BatchFile {
    pub batch: Batch,
    pub has_labels: bool,
    pub meta: Value,
}

fn as_f64(values: &Values) -> Vec<f64> {
    match values {
        Values::F64(v) => v.clone(),
        Values::F32(v) => v.iter().map(|&x| x as f64).collect(),
    }
}

pub fn decode(bytes: &[u8]) -> Result<BatchFile> {
    let c = read_container(bytes)?;
    if c.kind != KIND {
        bail!("container kind is {:?}, expected {KIND:?}", c.kind);
    }
    let fs = c.meta.get("fs").and_then(Value::as_f64).ok_or_else(|| anyhow!("batch meta lacks a numeric `fs`"))?;
    let mut signals = None;
    let mut labels = None;
    let mut extra = Vec::new();
    for e in &c.entries {
        let data = as_f64(&e.values);
        match (e.group.as_str(), e.name.as_str()) {
            ("signals", "x") => {
                let [b, l, t] = e.shape[..] else { bail!("signals must be 3-D, got shape {:?}", e.shape) };
                signals = Some(Array3::from_shape_vec((b, l, t), data)?);
            }
            ("labels", "classification") => {
                let [b, k] = e.shape[..] else { bail!("classification labels must be 2-D, got {:?}", e.shape) };
                labels = Some(Labels::Classification(Array2::from_shape_vec((b, k), data)?));
            }
            ("labels", "segmentation") => {
                let [b, t, k] = e.shape[..] else { bail!("segmentation labels must be 3-D, got {:?}", e.shape) };
                labels = Some(Labels::Segmentation(Array3::from_shape_vec((b, t, k), data)?));
            }
            ("extra", _) => extra.push(ArrayD::from_shape_vec(IxDyn(&e.shape), data)?),
            (g, n) => bail!("unexpected batch entry {g}/{n}"),
        }
    }
    let signals = signals.ok_or_else(|| anyhow!("batch has no signals/x entry"))?;
    let has_labels = labels.is_some();
    let labels = labels.unwrap_or_else(|| Labels::Classification(Array2::zeros((signals.dim().0, 0))));
    let mut batch = Batch::new(signals, labels, fs)?;
    batch.extra = extra;
    if let Some(cp) = c.meta.get("critical_points").filter(|v| !v.is_null()) {
        let points: Vec<Vec<usize>> = serde_json::from_value(cp.clone()).context("meta.critical_points")?;
        batch = batch.with_critical_points(points)?;
    }
    batch.validate()?;
    Ok(BatchFile { batch, has_labels, meta: c.meta })
}

pub fn encode(file: &BatchFile) -> Result<Vec<u8>> {
    let b = &file.batch;
    let mut entries = vec![Entry {
        group: "signals".into(),
        name: "x".into(),
        shape: b.signals.shape().to_vec(),
        values: Values::F64(b.signals.iter().copied().collect()),
    }];
    if file.has_labels {
        let (name, shape, data): (&str, Vec<usize>, Vec<f64>) = match &b.labels {
            Labels::Classification(a) => ("classification", a.shape().to_vec(), a.iter().copied().collect()),
            Labels::Segmentation(a) => ("segmentation", a.shape().to_vec(), a.iter().copied().collect()),
        };
        entries.push(Entry { group: "labels".into(), name: name.into(), shape, values: Values::F64(data) });
    }
    for (i, e) in b.extra.iter().enumerate() {
        entries.push(Entry {
            group: "extra".into(),
            name: i.to_string(),
            shape: e.shape().to_vec(),
            values: Values::F64(e.iter().copied().collect()),
        });
    }
    let mut meta = file.meta.clone();
    if !meta.is_object() {
        meta = json!({});
    }
    meta["fs"] = json!(b.fs);
    if let Some(cp) = &b.critical_points {
        meta["critical_points"] = json!(cp);
    }
    Ok(write_container(&Container { kind: KIND.into(), meta, entries })?)
}

/// A single-sample batch holding a `[lead, time]` signal.
pub fn from_signal(signal: Array2<f64>, fs: f64, meta: Value) -> Result<BatchFile> {
    let (l, t) = signal.dim();
    let signals = signal.into_shape_with_order((1, l, t))?;
    let batch = Batch::new(signals, Labels::Classification(Array2::zeros((1, 0))), fs)?;
    Ok(BatchFile { batch, has_labels: false, meta })
}
