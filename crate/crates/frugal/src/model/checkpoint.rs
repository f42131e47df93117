//! Checkpoint files: magic `FRGL`, u32 version, length-prefixed JSON block
//! carrying the config and vocabulary, then named tensors as
//! `(u32 name length, name bytes, u32 rank, u32 dims.., little-endian f32 data)`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::Vocabulary;

use super::net::{RegressorConfig, RegressorModel};
use super::tensor::Tensor;

const MAGIC: &[u8; 4] = b"FRGL";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    config: RegressorConfig,
    vocab: Vec<String>,
}

pub fn save_checkpoint(path: &Path, model: &RegressorModel, vocab: &Vocabulary) -> Result<()> {
    let meta = CheckpointMeta {
        config: model.config.clone(),
        vocab: vocab.tokens().to_vec(),
    };
    let json = serde_json::to_vec(&meta)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.write_all(&VERSION.to_le_bytes())?;
    buf.write_all(&(json.len() as u32).to_le_bytes())?;
    buf.write_all(&json)?;
    for (name, tensor) in model.params.names().iter().zip(model.params.tensors()) {
        buf.write_all(&(name.len() as u32).to_le_bytes())?;
        buf.write_all(name.as_bytes())?;
        buf.write_all(&2u32.to_le_bytes())?;
        buf.write_all(&(tensor.rows as u32).to_le_bytes())?;
        buf.write_all(&(tensor.cols as u32).to_le_bytes())?;
        for &x in &tensor.data {
            buf.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    crate::util::atomic_write(path, &buf)
}

pub fn load_checkpoint(path: &Path) -> Result<(RegressorModel, Vocabulary)> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Load(format!("cannot read checkpoint {}: {e}", path.display())))?;
    let mut cursor = std::io::Cursor::new(&bytes);
    let mut magic = [0u8; 4];
    cursor
        .read_exact(&mut magic)
        .map_err(|_| Error::Load("checkpoint truncated".into()))?;
    if &magic != MAGIC {
        return Err(Error::Load("bad checkpoint magic".into()));
    }
    let version = read_u32(&mut cursor)?;
    if version != VERSION {
        return Err(Error::Load(format!("unsupported checkpoint version {version}")));
    }
    let json_len = read_u32(&mut cursor)? as usize;
    let mut json = vec![0u8; json_len];
    cursor
        .read_exact(&mut json)
        .map_err(|_| Error::Load("checkpoint truncated in metadata".into()))?;
    let meta: CheckpointMeta =
        serde_json::from_slice(&json).map_err(|e| Error::Load(format!("bad metadata: {e}")))?;
    meta.config.validate()?;
    let vocab = Vocabulary::from_tokens(meta.vocab);

    // Initialize a skeleton with the right parameter layout, then overwrite
    // every tensor from the file.
    let mut init_rng = crate::rng::seeded_rng(0, "checkpoint.skeleton");
    let mut model = RegressorModel::init(meta.config, &mut init_rng)?;
    let mut loaded = 0usize;
    while (cursor.position() as usize) < bytes.len() {
        let name_len = read_u32(&mut cursor)? as usize;
        let mut name = vec![0u8; name_len];
        cursor
            .read_exact(&mut name)
            .map_err(|_| Error::Load("checkpoint truncated in tensor name".into()))?;
        let name = String::from_utf8(name).map_err(|_| Error::Load("bad tensor name".into()))?;
        let rank = read_u32(&mut cursor)?;
        if rank != 2 {
            return Err(Error::Load(format!("tensor {name} has rank {rank}, expected 2")));
        }
        let rows = read_u32(&mut cursor)? as usize;
        let cols = read_u32(&mut cursor)? as usize;
        let mut raw = vec![0u8; rows * cols * 4];
        cursor
            .read_exact(&mut raw)
            .map_err(|_| Error::Load(format!("checkpoint truncated in tensor {name}")))?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let idx = model
            .params
            .names()
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| Error::Load(format!("unexpected tensor {name}")))?;
        let slot = &mut model.params.tensors_mut()[idx];
        if slot.rows != rows || slot.cols != cols {
            return Err(Error::Load(format!(
                "tensor {name} is {rows}x{cols}, expected {}x{}",
                slot.rows, slot.cols
            )));
        }
        *slot = Tensor::from_vec(rows, cols, data);
        loaded += 1;
    }
    if loaded != model.params.len() {
        return Err(Error::Load(format!(
            "checkpoint has {loaded} tensors, model needs {}",
            model.params.len()
        )));
    }
    Ok((model, vocab))
}

fn read_u32(cursor: &mut std::io::Cursor<&Vec<u8>>) -> Result<u32> {
    let mut buf = [0u8; 4];
    cursor
        .read_exact(&mut buf)
        .map_err(|_| Error::Load("checkpoint truncated".into()))?;
    Ok(u32::from_le_bytes(buf))
}
