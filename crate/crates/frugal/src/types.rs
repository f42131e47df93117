//! Core domain types shared by every pipeline stage.
//!
//! All types here are immutable after construction and safe to share across
//! threads. Floating point is double precision; single precision appears only
//! inside checkpoint and embedding-table files.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tokenized text with stable integer ids, one id per surface token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub ids: Vec<u32>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<String>, ids: Vec<u32>) -> Self {
        assert_eq!(tokens.len(), ids.len(), "tokens and ids must align");
        Self { tokens, ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Dense per-token embedding matrix, row-major, one row per token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    data: Vec<f64>,
    rows: usize,
    dim: usize,
    /// True when every row is guaranteed unit Euclidean norm.
    normalized: bool,
}

impl EmbeddingMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>, normalized: bool) -> Result<Self> {
        let n = rows.len();
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(n * dim);
        for row in &rows {
            if row.len() != dim {
                return Err(Error::Dim(format!(
                    "ragged embedding rows: {} vs {}",
                    row.len(),
                    dim
                )));
            }
            data.extend_from_slice(row);
        }
        let mat = Self {
            data,
            rows: n,
            dim,
            normalized,
        };
        if normalized {
            mat.check_unit_rows()?;
        }
        Ok(mat)
    }

    pub fn from_flat(data: Vec<f64>, rows: usize, dim: usize, normalized: bool) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::Dim(format!(
                "flat data length {} does not match {rows}x{dim}",
                data.len()
            )));
        }
        let mat = Self {
            data,
            rows,
            dim,
            normalized,
        };
        if normalized {
            mat.check_unit_rows()?;
        }
        Ok(mat)
    }

    fn check_unit_rows(&self) -> Result<()> {
        for i in 0..self.rows {
            let norm = self.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::Dim(format!(
                    "row {i} has norm {norm}, expected 1 within 1e-6"
                )));
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    /// Scale every entry by `c`. Drops the normalized flag unless `c == 1`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            data: self.data.iter().map(|x| x * c).collect(),
            rows: self.rows,
            dim: self.dim,
            normalized: self.normalized && c == 1.0,
        }
    }
}

/// Origin of a synthetic pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum PairSource {
    Summarization,
    Backtranslation,
    Denoising,
    Random,
}

impl PairSource {
    pub const ALL: [PairSource; 4] = [
        PairSource::Summarization,
        PairSource::Backtranslation,
        PairSource::Denoising,
        PairSource::Random,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PairSource::Summarization => "summarization",
            PairSource::Backtranslation => "backtranslation",
            PairSource::Denoising => "denoising",
            PairSource::Random => "random",
        }
    }
}

impl std::str::FromStr for PairSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "summarization" => Ok(PairSource::Summarization),
            "backtranslation" => Ok(PairSource::Backtranslation),
            "denoising" => Ok(PairSource::Denoising),
            "random" => Ok(PairSource::Random),
            other => Err(Error::Data(format!("unknown pair source {other:?}"))),
        }
    }
}

/// A (reference, candidate) pair, optionally annotated with a teacher score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedPair {
    #[serde(rename = "ref")]
    pub reference: String,
    #[serde(rename = "cand")]
    pub candidate: String,
    pub source: PairSource,
    pub score: Option<f64>,
}

impl AnnotatedPair {
    pub fn unscored(reference: String, candidate: String, source: PairSource) -> Self {
        Self {
            reference,
            candidate,
            source,
            score: None,
        }
    }

    /// Content hash used for content-addressed ordering; independent of the
    /// order pairs were stored in a file.
    pub fn content_key(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.reference.as_bytes());
        h.update([0x1f]);
        h.update(self.candidate.as_bytes());
        h.update([0x1f]);
        h.update(self.source.as_str().as_bytes());
        h.update([0x1f]);
        h.update(self.score.unwrap_or(f64::NAN).to_bits().to_le_bytes());
        h.finalize().into()
    }
}

/// Which metric produced a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    BertscoreF,
    BertscoreP,
    BertscoreR,
    Moverscore,
    Student,
}

impl MetricKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetricKind::BertscoreF => "bertscore_f",
            MetricKind::BertscoreP => "bertscore_p",
            MetricKind::BertscoreR => "bertscore_r",
            MetricKind::Moverscore => "moverscore",
            MetricKind::Student => "student",
        }
    }
}

impl std::str::FromStr for MetricKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bertscore_f" => Ok(MetricKind::BertscoreF),
            "bertscore_p" => Ok(MetricKind::BertscoreP),
            "bertscore_r" => Ok(MetricKind::BertscoreR),
            "moverscore" => Ok(MetricKind::Moverscore),
            "student" => Ok(MetricKind::Student),
            other => Err(Error::Config(format!("unknown metric {other:?}"))),
        }
    }
}

/// Fully qualified metric identity: kind plus the embedding/model provider.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MetricId {
    pub kind: MetricKind,
    pub provider: String,
}

impl MetricId {
    pub fn new(kind: MetricKind, provider: impl Into<String>) -> Self {
        Self {
            kind,
            provider: provider.into(),
        }
    }
}

impl std::fmt::Display for MetricId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}@{}", self.kind.as_str(), self.provider)
    }
}

/// One evaluation record of the correlation harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub system: String,
    pub segment: String,
    #[serde(rename = "ref")]
    pub reference: String,
    #[serde(rename = "cand")]
    pub candidate: String,
    pub human: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_matrix_rejects_ragged_rows() {
        let err = EmbeddingMatrix::from_rows(vec![vec![1.0, 0.0], vec![1.0]], false);
        assert!(matches!(err, Err(Error::Dim(_))));
    }

    #[test]
    fn embedding_matrix_checks_normalization_flag() {
        let err = EmbeddingMatrix::from_rows(vec![vec![2.0, 0.0]], true);
        assert!(matches!(err, Err(Error::Dim(_))));
        let ok = EmbeddingMatrix::from_rows(vec![vec![1.0, 0.0]], true);
        assert!(ok.is_ok());
    }

    #[test]
    fn pair_serde_uses_wire_names() {
        let pair = AnnotatedPair {
            reference: "a".into(),
            candidate: "b".into(),
            source: PairSource::Denoising,
            score: Some(0.5),
        };
        let json = serde_json::to_string(&pair).unwrap();
        assert_eq!(
            json,
            r#"{"ref":"a","cand":"b","source":"denoising","score":0.5}"#
        );
        let back: AnnotatedPair = serde_json::from_str(&json).unwrap();
        assert_eq!(back, pair);
    }

    #[test]
    fn content_key_ignores_file_order_but_not_content() {
        let a = AnnotatedPair::unscored("x".into(), "y".into(), PairSource::Random);
        let b = AnnotatedPair::unscored("x".into(), "z".into(), PairSource::Random);
        assert_eq!(a.content_key(), a.content_key());
        assert_ne!(a.content_key(), b.content_key());
    }
}
