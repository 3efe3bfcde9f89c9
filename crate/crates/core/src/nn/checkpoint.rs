//! Checkpoint file: one JSON header line, then little-endian `f32` tensor data.
//!
//! ```text
//! {"format_version":1,"config":{..},"tensors":[{"name":..,"shape":..,"dtype":"f32","byte_offset":..}],..}\n
//! <raw bytes>
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DistilledIntentEmbedder, Model, Parameters, Real};
use crate::error::{Error, Result};
use crate::types::ModelConfig;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub byte_offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
    /// sha256 of the data section.
    pub checksum: String,
    /// Checksum of the frozen teacher parameters a student was distilled from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_checksum: Option<String>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub provenance: serde_json::Value,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// sha256 over the `f32` bytes of every tensor whose name starts with one of `prefixes`.
pub fn param_checksum<T: Real>(model: &Model<T>, prefixes: &[&str]) -> String {
    let mut h = Sha256::new();
    for t in model.tensors() {
        if prefixes.iter().any(|p| t.name.starts_with(p)) {
            h.update(t.name.as_bytes());
            for v in t.data {
                h.update(v.to_f32().unwrap().to_le_bytes());
            }
        }
    }
    hex(&h.finalize())
}

/// Prefixes of the parameters that define the guided teacher.
pub const TEACHER_PREFIXES: [&str; 3] = ["net.", "embedder.", "prev_table."];

pub fn to_bytes<T: Real>(model: &Model<T>, provenance: serde_json::Value) -> Vec<u8> {
    let mut data = Vec::new();
    let mut tensors = Vec::new();
    for t in model.tensors() {
        tensors.push(TensorEntry {
            name: t.name.clone(),
            shape: t.shape.clone(),
            dtype: "f32".into(),
            byte_offset: data.len(),
        });
        for v in t.data {
            data.extend_from_slice(&v.to_f32().unwrap().to_le_bytes());
        }
    }
    let teacher_checksum = model
        .distilled
        .as_ref()
        .map(|_| param_checksum(model, &TEACHER_PREFIXES));
    let header = Header {
        format_version: FORMAT_VERSION,
        config: model.config.clone(),
        tensors,
        checksum: hex(&Sha256::digest(&data)),
        teacher_checksum,
        provenance,
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.extend_from_slice(&data);
    out
}

pub fn from_bytes<T: Real>(bytes: &[u8]) -> Result<(Model<T>, Header)> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::CorruptFile("missing header line".into()))?;
    let raw: serde_json::Value = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| Error::CorruptFile(format!("header: {e}")))?;
    match raw.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(v) => {
            return Err(Error::VersionMismatch(format!(
                "checkpoint format {v}, expected {FORMAT_VERSION}"
            )))
        }
        None => return Err(Error::CorruptFile("header lacks format_version".into())),
    }
    let header: Header =
        serde_json::from_value(raw).map_err(|e| Error::CorruptFile(format!("header: {e}")))?;
    if header.config.num_intents != crate::types::NUM_INTENTS {
        return Err(Error::VersionMismatch(format!(
            "checkpoint has K={}, this build expects K={}",
            header.config.num_intents,
            crate::types::NUM_INTENTS
        )));
    }
    let data = &bytes[nl + 1..];
    if hex(&Sha256::digest(data)) != header.checksum {
        return Err(Error::CorruptFile("data checksum mismatch".into()));
    }

    let mut model = Model::<T>::new(&header.config)?;
    if header.tensors.iter().any(|t| t.name.starts_with("distilled.")) {
        model.distilled = Some(DistilledIntentEmbedder::new(
            &header.config,
            &mut super::component_rng(0, "load"),
        ));
    }
    let expected: Vec<(String, Vec<usize>)> = model
        .tensors()
        .into_iter()
        .map(|t| (t.name, t.shape))
        .collect();
    if expected.len() != header.tensors.len() {
        return Err(Error::CorruptFile(format!(
            "expected {} tensors, found {}",
            expected.len(),
            header.tensors.len()
        )));
    }
    for ((name, shape), (entry, (_, dst))) in expected
        .iter()
        .zip(header.tensors.iter().zip(model.tensors_mut()))
    {
        if &entry.name != name || &entry.shape != shape || entry.dtype != "f32" {
            return Err(Error::CorruptFile(format!("unexpected tensor {}", entry.name)));
        }
        let end = entry.byte_offset + 4 * dst.len();
        let src = data
            .get(entry.byte_offset..end)
            .ok_or_else(|| Error::CorruptFile(format!("tensor {name} truncated")))?;
        for (d, c) in dst.iter_mut().zip(src.chunks_exact(4)) {
            let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            if !v.is_finite() {
                return Err(Error::CorruptFile(format!("non-finite value in {name}")));
            }
            *d = T::from(v).unwrap();
        }
    }
    Ok((model, header))
}

pub fn save<T: Real>(model: &Model<T>, path: &Path, provenance: serde_json::Value) -> Result<()> {
    fs::write(path, to_bytes(model, provenance))?;
    Ok(())
}

pub fn load<T: Real>(path: &Path) -> Result<(Model<T>, Header)> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            hidden: 8,
            intent_embed_inner: 8,
            scene_dim: 4,
            chunk_len: 4,
            memory_capacity: 8,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact_for_f32() {
        let m = Model::<f32>::new(&cfg()).unwrap();
        let bytes = to_bytes(&m, serde_json::json!({"seed": 0}));
        let (back, header) = from_bytes::<f32>(&bytes).unwrap();
        assert_eq!(back, m);
        assert!(header.teacher_checksum.is_none());
    }

    #[test]
    fn distilled_checkpoint_records_teacher() {
        let mut m = Model::<f32>::new(&cfg()).unwrap();
        m.distilled = Some(DistilledIntentEmbedder::new(&cfg(), &mut super::super::component_rng(1, "d")));
        let (back, header) = from_bytes::<f32>(&to_bytes(&m, serde_json::Value::Null)).unwrap();
        assert_eq!(back, m);
        assert_eq!(header.teacher_checksum.unwrap(), param_checksum(&m, &TEACHER_PREFIXES));
    }

    #[test]
    fn version_and_corruption_detected() {
        let m = Model::<f32>::new(&cfg()).unwrap();
        let bytes = to_bytes(&m, serde_json::Value::Null);
        let text = String::from_utf8_lossy(&bytes).into_owned();
        let bumped = text.replacen("\"format_version\":1", "\"format_version\":9", 1);
        assert!(matches!(
            from_bytes::<f32>(bumped.as_bytes()),
            Err(Error::VersionMismatch(_))
        ));
        let mut flipped = bytes.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 0xff;
        assert!(matches!(from_bytes::<f32>(&flipped), Err(Error::CorruptFile(_))));
        assert!(matches!(
            from_bytes::<f32>(&bytes[..bytes.len() - 4]),
            Err(Error::CorruptFile(_))
        ));
        assert!(matches!(from_bytes::<f32>(b"garbage"), Err(Error::CorruptFile(_))));
        let wrong_k = text.replacen("\"num_intents\":20", "\"num_intents\":12", 1);
        assert!(matches!(
            from_bytes::<f32>(wrong_k.as_bytes()),
            Err(Error::VersionMismatch(_))
        ));
    }
}
