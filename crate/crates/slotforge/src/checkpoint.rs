//! Binary checkpoint container.
//!
//! Layout: 4 magic bytes, `u32` version, `u32` byte length of a UTF-8 JSON
//! header, the header, then every tensor as little-endian `f32` in manifest
//! order. All integers are little-endian. The header is a JSON object whose
//! `tensors` field lists `{name, shape}`; models put their config and
//! vocabulary alongside it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::nn::{ParamSet, Tensor};

pub const VERSION: u32 = 1;
pub const GENERATOR_MAGIC: [u8; 4] = *b"SFGN";
pub const TAGGER_MAGIC: [u8; 4] = *b"SFTG";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("trailing bytes after tensor data")]
    Trailing,
    #[error("header: {0}")]
    Header(String),
    #[error("tensor layout does not match the model: {0}")]
    Layout(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn encode(magic: [u8; 4], mut meta: Map<String, Value>, params: &ParamSet) -> Vec<u8> {
    let manifest: Vec<ManifestEntry> = params
        .tensors()
        .iter()
        .map(|t| ManifestEntry {
            name: t.name.clone(),
            shape: t.shape.clone(),
        })
        .collect();
    meta.insert(
        "tensors".into(),
        serde_json::to_value(manifest).expect("manifest serializes"),
    );
    let header = serde_json::to_vec(&Value::Object(meta)).expect("header serializes");

    let mut out = Vec::with_capacity(12 + header.len() + 4 * params.num_values());
    out.extend_from_slice(&magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for t in params.tensors() {
        for &v in &t.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Returns the header object (without the manifest) and the tensors.
pub fn decode(bytes: &[u8], magic: [u8; 4]) -> Result<(Map<String, Value>, ParamSet), CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    let found: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
    if found != magic {
        return Err(CheckpointError::BadMagic { found, expected: magic });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let header_len = r.u32()? as usize;
    let header: Value =
        serde_json::from_slice(r.take(header_len)?).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let Value::Object(mut meta) = header else {
        return Err(CheckpointError::Header("not a JSON object".into()));
    };
    let manifest: Vec<ManifestEntry> = meta
        .remove("tensors")
        .ok_or_else(|| CheckpointError::Header("missing tensor manifest".into()))
        .and_then(|v| serde_json::from_value(v).map_err(|e| CheckpointError::Header(e.to_string())))?;

    let mut params = ParamSet::new();
    for entry in manifest {
        let n: usize = entry.shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or(CheckpointError::Truncated)?)?;
        let idx = params.add(entry.name, entry.shape);
        let data = params.get_mut(idx);
        for (v, chunk) in data.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64;
        }
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Trailing);
    }
    Ok((meta, params))
}

/// Copies loaded tensors into a freshly laid-out parameter set, checking
/// that names and shapes agree.
pub fn adopt(layout: &ParamSet, loaded: ParamSet) -> Result<ParamSet, CheckpointError> {
    if !layout.same_layout(&loaded) {
        let describe = |p: &ParamSet| {
            p.tensors()
                .iter()
                .map(|t: &Tensor| format!("{}{:?}", t.name, t.shape))
                .collect::<Vec<_>>()
                .join(", ")
        };
        return Err(CheckpointError::Layout(format!(
            "expected [{}], found [{}]",
            describe(layout),
            describe(&loaded)
        )));
    }
    Ok(loaded)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CheckpointError> {
    std::fs::write(path, bytes).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, CheckpointError> {
    std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}
