//! Model checkpoints: `b"UGCK"`, a little-endian `u32` header length, a
//! JSON header (config, seed, parameter names, free-form metadata), then
//! one UGT1 `f32` record per parameter in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ugt::{decode_prefix, encode, Dtype};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

const MAGIC: [u8; 4] = *b"UGCK";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    seed: u64,
    params: Vec<String>,
    #[serde(default)]
    meta: serde_json::Value,
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model, meta: serde_json::Value) -> Result<()> {
    let header = Header {
        config: model.config().clone(),
        seed: model.params().seed(),
        params: model.params().iter().map(|(_, e)| e.name.clone()).collect(),
        meta,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Malformed(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, e) in model.params().iter() {
        out.extend(encode(&e.value, Dtype::F32)?);
    }
    fs::write(path, out)?;
    Ok(())
}

/// Returns the model and the metadata stored with it.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model, serde_json::Value)> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    if bytes.len() < 8 {
        return Err(Error::TruncatedFile(path.display().to_string()));
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let json = bytes.get(8..8 + len).ok_or_else(|| Error::TruncatedFile("checkpoint header".into()))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| Error::Malformed(e.to_string()))?;
    let mut rest = &bytes[8 + len..];
    let mut values = Vec::with_capacity(header.params.len());
    for name in header.params {
        let (t, _) = decode_prefix(&mut rest)?;
        values.push((name, t));
    }
    if !rest.is_empty() {
        return Err(Error::Malformed(format!("{} trailing bytes in checkpoint", rest.len())));
    }
    let mut model = Model::new(header.config, header.seed)?;
    model.params_mut().load_exact(values)?;
    Ok((model, header.meta))
}
