//! Checkpoint files: an opaque blob (`<stem>.bin`) holding the model's
//! architecture metadata and raw parameters, and a JSON sidecar
//! (`<stem>.json`) describing it.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::write_file;
use crate::encoder::EncoderVariant;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"MGCRCKPT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub kind: String,
    pub variant: EncoderVariant,
    pub hidden_dim: usize,
    pub vocab_hash: String,
    pub version: u32,
    pub blob_sha256: String,
    /// Model-specific fields (e.g. `pos_dim`, `refiner_layers`).
    #[serde(default)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

pub fn blob_path(stem: &Path) -> PathBuf {
    stem.with_extension("bin")
}

pub fn sidecar_path(stem: &Path) -> PathBuf {
    stem.with_extension("json")
}

pub fn encode_blob<M: Serialize, F: Scalar>(meta: &M, store: &ParamStore<F>) -> Vec<u8> {
    let meta = serde_json::to_vec(meta).expect("metadata serializes");
    let params = store.to_bytes();
    let mut out = Vec::with_capacity(16 + meta.len() + params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&params);
    out
}

pub fn decode_blob<M: DeserializeOwned, F: Scalar>(bytes: &[u8]) -> Result<(M, ParamStore<F>)> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint blob".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let meta_end = 16usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Checkpoint("truncated checkpoint metadata".into()))?;
    let meta = serde_json::from_slice(&bytes[16..meta_end])?;
    let store = ParamStore::from_bytes(&bytes[meta_end..])?;
    Ok((meta, store))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Sidecar fields supplied by the model being saved.
#[derive(Debug, Clone)]
pub struct Describe {
    pub kind: &'static str,
    pub variant: EncoderVariant,
    pub hidden_dim: usize,
    pub vocab_hash: String,
    pub extra: serde_json::Map<String, serde_json::Value>,
}

/// Writes blob and sidecar for `stem`. Returns the sidecar.
pub fn save<M: Serialize, F: Scalar>(stem: &Path, describe: Describe, meta: &M, store: &ParamStore<F>) -> Result<Sidecar> {
    let blob = encode_blob(meta, store);
    let sidecar = Sidecar {
        kind: describe.kind.to_string(),
        variant: describe.variant,
        hidden_dim: describe.hidden_dim,
        vocab_hash: describe.vocab_hash,
        version: CHECKPOINT_VERSION,
        blob_sha256: sha256_hex(&blob),
        extra: describe.extra,
    };
    write_file(&blob_path(stem), &blob)?;
    let mut json = serde_json::to_vec_pretty(&sidecar)?;
    json.push(b'\n');
    write_file(&sidecar_path(stem), &json)?;
    Ok(sidecar)
}

pub fn read_sidecar(stem: &Path) -> Result<Sidecar> {
    let p = sidecar_path(stem);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads and cross-checks blob and sidecar.
pub fn load<M: DeserializeOwned, F: Scalar>(stem: &Path, kind: &str) -> Result<(M, ParamStore<F>, Sidecar)> {
    let sidecar = read_sidecar(stem)?;
    if sidecar.kind != kind {
        return Err(Error::Checkpoint(format!(
            "expected a {kind} checkpoint, found {}",
            sidecar.kind
        )));
    }
    if sidecar.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {}",
            sidecar.version
        )));
    }
    let bp = blob_path(stem);
    let blob = std::fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
    let digest = sha256_hex(&blob);
    if digest != sidecar.blob_sha256 {
        return Err(Error::HashMismatch {
            expected: sidecar.blob_sha256.clone(),
            found: digest,
        });
    }
    let (meta, store) = decode_blob(&blob)?;
    Ok((meta, store, sidecar))
}
