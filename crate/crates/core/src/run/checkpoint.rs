//! Binary checkpoints.
//!
//! ```text
//! "KGTXCKPT" | u32 version | u64 header length | JSON header | f32 payload | sha256
//! ```
//!
//! Integers and floats are little-endian. The digest covers every byte
//! before it. Parameters appear in the payload in store order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{RelationVocab, TokenTable};
use crate::diff::{ParamId, ParamStore, Real, Tensor};
use crate::error::{Error, Result};
use crate::train::{GraphModel, ModelState, Stage, TextModel, TrainConfig};

pub const MAGIC: &[u8; 8] = b"KGTXCKPT";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    shape: Vec<usize>,
    /// Offset into the payload, in floats.
    offset: usize,
    trainable: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    stage: Stage,
    config: TrainConfig,
    vocab: RelationVocab,
    tokens: Option<TokenTable>,
    text: Option<TextModel>,
    graph: Option<GraphModel>,
    shared_relation: Option<ParamId>,
    thresholds: BTreeMap<String, Vec<f64>>,
    /// Stage generators derive from this seed and the stage name.
    rng_seed: u64,
    params: Vec<ParamRecord>,
    payload_floats: usize,
}

fn integrity(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Serializes a model. Values are stored as 32-bit floats, so `f32` models
/// round-trip exactly.
pub fn encode<T: Real>(state: &ModelState<T>) -> Vec<u8> {
    let mut params = Vec::with_capacity(state.store.len());
    let mut payload: Vec<u8> = Vec::new();
    let mut offset = 0;
    for (id, name, value) in state.store.iter() {
        params.push(ParamRecord {
            name: name.to_string(),
            shape: value.shape().to_vec(),
            offset,
            trainable: state.store.is_trainable(id),
        });
        offset += value.data().len();
        for &x in value.data() {
            payload.extend_from_slice(&x.to_f32().to_le_bytes());
        }
    }
    let header = Header {
        stage: state.stage,
        config: state.config.clone(),
        vocab: state.vocab.clone(),
        tokens: state.tokens.clone(),
        text: state.text.clone(),
        graph: state.graph.clone(),
        shared_relation: state.shared_relation,
        thresholds: state.thresholds.clone(),
        rng_seed: state.config.seed,
        params,
        payload_floats: offset,
    };
    let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
    let mut out = Vec::with_capacity(20 + json.len() + payload.len() + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn decode(bytes: &[u8]) -> Result<ModelState<f32>> {
    if bytes.len() < 20 + DIGEST_LEN {
        return Err(integrity(format!("file is {} bytes, too short for a checkpoint", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(integrity("bad magic; not a checkpoint"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(integrity(format!("format version {version}, this build reads {VERSION}")));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(integrity("checksum mismatch; file is truncated or corrupted"));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let payload_start = 20usize.checked_add(header_len).filter(|&e| e <= body.len()).ok_or_else(|| integrity("header length exceeds file"))?;
    let header: Header = serde_json::from_slice(&body[20..payload_start]).map_err(|e| integrity(format!("header: {e}")))?;
    let payload = &body[payload_start..];
    if payload.len() != header.payload_floats * 4 {
        return Err(integrity(format!("payload holds {} bytes, header declares {} floats", payload.len(), header.payload_floats)));
    }
    let mut store = ParamStore::new();
    for (i, p) in header.params.iter().enumerate() {
        let n: usize = p.shape.iter().product();
        let end = p.offset.checked_add(n).filter(|&e| e <= header.payload_floats).ok_or_else(|| integrity(format!("`{}` overruns the payload", p.name)))?;
        let data: Vec<f32> = payload[p.offset * 4..end * 4].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let value = Tensor::new(p.shape.clone(), data)?;
        let id = if p.trainable { store.add(p.name.clone(), value) } else { store.add_frozen(p.name.clone(), value) };
        if id.index() != i {
            return Err(integrity(format!("duplicate parameter `{}`", p.name)));
        }
    }
    let mut tokens = header.tokens;
    if let Some(t) = tokens.as_mut() {
        t.freeze();
    }
    Ok(ModelState {
        stage: header.stage,
        vocab: header.vocab,
        config: header.config,
        store,
        tokens,
        text: header.text,
        graph: header.graph,
        shared_relation: header.shared_relation,
        thresholds: header.thresholds,
    })
}

pub fn save_checkpoint<T: Real>(state: &ModelState<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode(state)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}
