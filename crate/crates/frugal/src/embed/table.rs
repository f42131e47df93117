//! Binary embedding-table files and the lookup provider.
//!
//! File layout: magic `FEMB`, u32 version, u32 vocab size, u32 dim, then
//! `vocab * dim` little-endian f32 values in id order.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::text::UNK_ID;
use crate::types::{EmbeddingMatrix, TokenSequence};

use super::EmbeddingProvider;

const MAGIC: &[u8; 4] = b"FEMB";
const VERSION: u32 = 1;

pub fn save_embedding_table(path: &Path, rows: &[Vec<f32>]) -> Result<()> {
    let dim = rows.first().map(|r| r.len()).unwrap_or(0);
    let mut buf = Vec::with_capacity(16 + rows.len() * dim * 4);
    buf.extend_from_slice(MAGIC);
    buf.write_all(&VERSION.to_le_bytes())?;
    buf.write_all(&(rows.len() as u32).to_le_bytes())?;
    buf.write_all(&(dim as u32).to_le_bytes())?;
    for row in rows {
        if row.len() != dim {
            return Err(Error::Dim("ragged embedding table rows".into()));
        }
        for v in row {
            buf.write_all(&v.to_le_bytes())?;
        }
    }
    crate::util::atomic_write(path, &buf)
}

/// Load and validate a table file. Rows are normalized on load; a zero row
/// cannot be normalized and is a load error, as is a table too small to
/// contain the `[UNK]` row.
pub fn load_embedding_table(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let mut file = std::fs::File::open(path)
        .map_err(|e| Error::Load(format!("cannot open embedding table {}: {e}", path.display())))?;
    let mut header = [0u8; 16];
    file.read_exact(&mut header)
        .map_err(|_| Error::Load("embedding table truncated in header".into()))?;
    if &header[0..4] != MAGIC {
        return Err(Error::Load("bad embedding table magic".into()));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Load(format!("unsupported embedding table version {version}")));
    }
    let vocab = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    if vocab <= UNK_ID as usize {
        return Err(Error::Load(format!(
            "embedding table has {vocab} rows, too few to contain the [UNK] row"
        )));
    }
    if dim < 2 {
        return Err(Error::Load(format!("embedding table dim {dim} too small")));
    }
    let mut raw = vec![0u8; vocab * dim * 4];
    file.read_exact(&mut raw)
        .map_err(|_| Error::Load("embedding table truncated in data".into()))?;
    let mut data = Vec::with_capacity(vocab * dim);
    for chunk in raw.chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
    }
    for r in 0..vocab {
        let row = &mut data[r * dim..(r + 1) * dim];
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 1e-12) || !norm.is_finite() {
            return Err(Error::Load(format!("embedding table row {r} cannot be normalized")));
        }
        for x in row {
            *x /= norm;
        }
    }
    Ok((data, vocab, dim))
}

/// Embedding lookup backed by a table file loaded at construction. Ids
/// beyond the table fall back to the `[UNK]` row.
#[derive(Debug)]
pub struct TableProvider {
    name: String,
    data: Vec<f64>,
    vocab: usize,
    dim: usize,
}

impl TableProvider {
    pub fn load(path: &Path) -> Result<Self> {
        let (data, vocab, dim) = load_embedding_table(path)?;
        Ok(Self {
            name: format!("table:{}", path.display()),
            data,
            vocab,
            dim,
        })
    }

    fn row(&self, id: u32) -> &[f64] {
        let idx = if (id as usize) < self.vocab {
            id as usize
        } else {
            UNK_ID as usize
        };
        &self.data[idx * self.dim..(idx + 1) * self.dim]
    }
}

impl EmbeddingProvider for TableProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn contextual(&self) -> bool {
        false
    }

    fn embed(&self, seq: &TokenSequence) -> Result<EmbeddingMatrix> {
        let mut data = Vec::with_capacity(seq.len() * self.dim);
        for &id in &seq.ids {
            data.extend_from_slice(self.row(id));
        }
        EmbeddingMatrix::from_flat(data, seq.len(), self.dim, true)
    }
}
