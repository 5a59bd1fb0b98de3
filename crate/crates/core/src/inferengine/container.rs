//! `ECGW0001` tensor container: magic, little-endian `u64` manifest length, JSON manifest,
//! then raw little-endian payloads at the manifest's offsets.

use serde::{Deserialize, Serialize};

use super::{InferError, Result};

const MAGIC: &[u8; 8] = b"ECGW0001";

#[derive(Debug, Clone, PartialEq)]
pub enum Values {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl Values {
    fn dtype(&self) -> &'static str {
        match self {
            Self::F32(_) => "f32",
            Self::F64(_) => "f64",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::F32(v) => v.len(),
            Self::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        match self {
            Self::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Self::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    /// Owning layer (weights) or role (batches).
    pub group: String,
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Values,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    /// `"weights"` or `"batch"`.
    pub kind: String,
    pub meta: serde_json::Value,
    pub entries: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    group: String,
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
    nbytes: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    kind: String,
    #[serde(default)]
    meta: serde_json::Value,
    tensors: Vec<ManifestEntry>,
}

fn bad(msg: impl Into<String>) -> InferError {
    InferError::Container(msg.into())
}

pub fn write_container(c: &Container) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    let mut tensors = Vec::with_capacity(c.entries.len());
    for e in &c.entries {
        if e.shape.iter().product::<usize>() != e.values.len() {
            return Err(InferError::ShapeMismatch(format!("{}/{}: shape {:?} vs {} values", e.group, e.name, e.shape, e.values.len())));
        }
        let offset = payload.len();
        e.values.write_le(&mut payload);
        tensors.push(ManifestEntry {
            group: e.group.clone(),
            name: e.name.clone(),
            shape: e.shape.clone(),
            dtype: e.values.dtype().into(),
            offset,
            nbytes: payload.len() - offset,
        });
    }
    let manifest = serde_json::to_vec(&Manifest { kind: c.kind.clone(), meta: c.meta.clone(), tensors })
        .map_err(|e| bad(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + manifest.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn read_container(bytes: &[u8]) -> Result<Container> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing ECGW0001 magic"));
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let mlen = usize::try_from(mlen).map_err(|_| bad("manifest length overflows"))?;
    let body = &bytes[16..];
    if mlen > body.len() {
        return Err(bad(format!("manifest length {mlen} exceeds file size")));
    }
    let manifest: Manifest = serde_json::from_slice(&body[..mlen]).map_err(|e| bad(format!("manifest: {e}")))?;
    let payload = &body[mlen..];
    let mut entries = Vec::with_capacity(manifest.tensors.len());
    for t in manifest.tensors {
        let n: usize = t.shape.iter().product();
        let width = match t.dtype.as_str() {
            "f32" => 4,
            "f64" => 8,
            other => return Err(bad(format!("{}/{}: unsupported dtype {other}", t.group, t.name))),
        };
        let end = t.offset.checked_add(t.nbytes).filter(|&e| e <= payload.len());
        let Some(end) = end.filter(|_| t.nbytes == n * width) else {
            return Err(bad(format!("{}/{}: payload range does not fit", t.group, t.name)));
        };
        let raw = &payload[t.offset..end];
        let values = if width == 4 {
            Values::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
        } else {
            Values::F64(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
        };
        entries.push(Entry { group: t.group, name: t.name, shape: t.shape, values });
    }
    Ok(Container { kind: manifest.kind, meta: manifest.meta, entries })
}
