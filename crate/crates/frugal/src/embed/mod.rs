//! Embedding providers: pluggable backends mapping a token sequence to a
//! per-token embedding matrix. Local providers are pure and bit-reproducible;
//! the remote provider is a client for external encoder services.

mod remote;
mod table;

pub use remote::{RemoteConfig, RemoteProvider};
pub use table::{load_embedding_table, save_embedding_table, TableProvider};

use crate::error::{Error, Result};
use crate::rng::seeded_rng;
use crate::types::{EmbeddingMatrix, TokenSequence};

/// A provider turns a token sequence into one embedding row per token, all
/// rows unit-norm, with a fixed output dimension.
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    /// Whether identical tokens can receive different rows depending on
    /// their neighborhood.
    fn contextual(&self) -> bool;
    fn embed(&self, seq: &TokenSequence) -> Result<EmbeddingMatrix>;
}

/// Window and decay of the cheap contextualization pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContextMixParams {
    pub window: usize,
    pub decay: f64,
}

impl ContextMixParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::Config("context mix decay must be in (0,1)".into()));
        }
        Ok(())
    }
}

/// Deterministic per-token-id embedding: row `i` is a unit vector derived
/// from `(id, salt)` by seeded normal draws, so identical ids always share a
/// row and different salts give independent tables.
pub fn hash_embed(seq: &TokenSequence, dim: usize, salt: u64) -> Result<EmbeddingMatrix> {
    if dim < 2 {
        return Err(Error::Dim(format!("hash embedding dim must be >= 2, got {dim}")));
    }
    let mut data = Vec::with_capacity(seq.len() * dim);
    for &id in &seq.ids {
        data.extend_from_slice(&hash_row(id, dim, salt));
    }
    EmbeddingMatrix::from_flat(data, seq.len(), dim, true)
}

fn hash_row(id: u32, dim: usize, salt: u64) -> Vec<f64> {
    let mut rng = seeded_rng(salt, &format!("hash-embed.{id}"));
    loop {
        let mut row: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            for x in &mut row {
                *x /= norm;
            }
            return row;
        }
    }
}

/// Blend each row with its neighbors: `row_i' = normalize(row_i +
/// sum_{1<=|j-i|<=w} decay^{|j-i|} row_j)`. A zero window renormalizes only.
pub fn contextual_mix(mat: &EmbeddingMatrix, params: &ContextMixParams) -> Result<EmbeddingMatrix> {
    params.validate()?;
    let n = mat.rows();
    let d = mat.dim();
    let mut data = vec![0.0; n * d];
    for i in 0..n {
        let out = &mut data[i * d..(i + 1) * d];
        out.copy_from_slice(mat.row(i));
        for offset in 1..=params.window {
            let weight = params.decay.powi(offset as i32);
            if i >= offset {
                for (o, x) in out.iter_mut().zip(mat.row(i - offset)) {
                    *o += weight * x;
                }
            }
            if i + offset < n {
                for (o, x) in out.iter_mut().zip(mat.row(i + offset)) {
                    *o += weight * x;
                }
            }
        }
        let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 1e-12 {
            return Err(Error::Dim(format!("context mix produced a zero row at {i}")));
        }
        for o in out.iter_mut() {
            *o /= norm;
        }
    }
    EmbeddingMatrix::from_flat(data, n, d, true)
}

/// Hash embeddings with an optional contextual mix on top. The default
/// teacher backend.
pub struct HashProvider {
    name: String,
    dim: usize,
    salt: u64,
    mix: Option<ContextMixParams>,
}

impl HashProvider {
    pub fn new(dim: usize, salt: u64, mix: Option<ContextMixParams>) -> Self {
        let name = match &mix {
            Some(m) => format!("hash{dim}-w{}a{}", m.window, m.decay),
            None => format!("hash{dim}"),
        };
        Self {
            name,
            dim,
            salt,
            mix,
        }
    }

    /// Teacher default: 256 dimensions, window 2, decay 0.5.
    pub fn teacher_default() -> Self {
        Self::new(
            256,
            0,
            Some(ContextMixParams {
                window: 2,
                decay: 0.5,
            }),
        )
    }

    /// Larger-teacher configuration used by speed benchmarks.
    pub fn teacher_large() -> Self {
        Self::new(
            512,
            0,
            Some(ContextMixParams {
                window: 2,
                decay: 0.5,
            }),
        )
    }
}

impl EmbeddingProvider for HashProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn contextual(&self) -> bool {
        self.mix.map(|m| m.window > 0).unwrap_or(false)
    }

    fn embed(&self, seq: &TokenSequence) -> Result<EmbeddingMatrix> {
        let base = hash_embed(seq, self.dim, self.salt)?;
        match &self.mix {
            Some(params) if params.window > 0 => contextual_mix(&base, params),
            _ => Ok(base),
        }
    }
}
