//! Single-file checkpoints: an 8-byte magic, a little-endian `u64` manifest
//! length, the JSON manifest, then every parameter as little-endian `f64` in
//! manifest order. The manifest carries a SHA-256 of the payload, so two
//! identical manifests imply identical weights.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;
use crate::tokenize::Vocab;

const MAGIC: &[u8; 8] = b"CFMRCKP1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the payload, in `f64` elements.
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ModelConfig,
    pub vocab: Vec<String>,
    pub tensors: Vec<TensorEntry>,
    pub payload_sha256: String,
    /// Free-form training summary (seed, best epoch, metrics).
    #[serde(default)]
    pub training: serde_json::Value,
}

impl Manifest {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn payload(model: &Model) -> (Vec<TensorEntry>, Vec<u8>) {
    let mut entries = Vec::with_capacity(model.store.len());
    let mut bytes = Vec::with_capacity(model.store.scalar_count() * 8);
    let mut offset = 0;
    for (name, t) in model.store.iter() {
        entries.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape.clone(),
            offset,
            len: t.numel(),
        });
        offset += t.numel();
        for v in &t.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    (entries, bytes)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn manifest(model: &Model, vocab: &Vocab, training: serde_json::Value) -> Manifest {
    let (tensors, bytes) = payload(model);
    Manifest {
        config: model.config.clone(),
        vocab: vocab.pieces().to_vec(),
        tensors,
        payload_sha256: hex(&Sha256::digest(&bytes)),
        training,
    }
}

/// Serializes a checkpoint to bytes; the output is a pure function of the inputs.
pub fn to_bytes(model: &Model, vocab: &Vocab, training: serde_json::Value) -> Result<Vec<u8>> {
    let (_, body) = payload(model);
    let header = manifest(model, vocab, training).to_json()?;
    let mut out = Vec::with_capacity(16 + header.len() + body.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

pub fn save(
    path: impl AsRef<Path>,
    model: &Model,
    vocab: &Vocab,
    training: serde_json::Value,
) -> Result<()> {
    let bytes = to_bytes(model, vocab, training)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

#[derive(Debug)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub model: Model,
    pub vocab: Vocab,
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |msg: &str| Error::Checkpoint(msg.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let header_end = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated manifest"))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[16..header_end])?;
    let body = &bytes[header_end..];
    if hex(&Sha256::digest(body)) != manifest.payload_sha256 {
        return Err(bad("payload checksum mismatch"));
    }
    let vocab = Vocab::from_pieces(manifest.vocab.iter().map(String::as_str));
    if vocab.pieces() != manifest.vocab.as_slice() {
        return Err(bad("vocabulary is not in canonical order"));
    }
    // Seed is irrelevant: every tensor is overwritten below.
    let mut model = Model::new(manifest.config.clone(), 0)?;
    if model.store.len() != manifest.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} tensors, config expects {}",
            manifest.tensors.len(),
            model.store.len()
        )));
    }
    for entry in &manifest.tensors {
        let end = entry
            .offset
            .checked_add(entry.len)
            .filter(|&e| e * 8 <= body.len())
            .ok_or_else(|| {
                Error::Checkpoint(format!("tensor {} out of payload bounds", entry.name))
            })?;
        let data = body[entry.offset * 8..end * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        model
            .store
            .set(&entry.name, Tensor::new(entry.shape.clone(), data)?)?;
    }
    Ok(Checkpoint {
        manifest,
        model,
        vocab,
    })
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    from_bytes(&fs::read(path)?)
}
