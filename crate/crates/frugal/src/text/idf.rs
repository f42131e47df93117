//! Inverse document frequency statistics.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::Vocabulary;

/// Per-token IDF weights with add-one smoothing:
/// `idf(t) = ln((N + 1) / (df(t) + 1))`, where `df` is the number of
/// documents containing `t`. Tokens never seen in the corpus fall back to
/// `ln(N + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdfTable {
    weights: BTreeMap<String, f64>,
    document_count: usize,
}

impl IdfTable {
    pub fn document_count(&self) -> usize {
        self.document_count
    }

    pub fn idf(&self, token: &str) -> f64 {
        self.weights
            .get(token)
            .copied()
            .unwrap_or_else(|| self.unseen_idf())
    }

    pub fn unseen_idf(&self) -> f64 {
        ((self.document_count + 1) as f64).ln()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, f64)> {
        self.weights.iter().map(|(t, &w)| (t.as_str(), w))
    }

    /// TSV `token<TAB>idf`, one entry per line, sorted by token. The document
    /// count is stored in a leading comment line.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        writeln!(buf, "#documents\t{}", self.document_count)?;
        for (token, weight) in &self.weights {
            writeln!(buf, "{token}\t{weight}")?;
        }
        crate::util::atomic_write(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Load(format!("cannot open idf table {}: {e}", path.display())))?;
        let mut weights = BTreeMap::new();
        let mut document_count = 0usize;
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (token, value) = line.split_once('\t').ok_or_else(|| {
                Error::Load(format!("{}:{}: expected token<TAB>idf", path.display(), lineno + 1))
            })?;
            if token == "#documents" {
                document_count = value
                    .parse()
                    .map_err(|_| Error::Load(format!("bad document count {value:?}")))?;
                continue;
            }
            let weight: f64 = value
                .parse()
                .map_err(|_| Error::Load(format!("bad idf value {value:?} for {token:?}")))?;
            weights.insert(token.to_string(), weight);
        }
        Ok(Self {
            weights,
            document_count,
        })
    }
}

/// Compute IDF over a corpus of documents. Tokens are vocabulary-mapped, so
/// out-of-vocabulary surface forms aggregate under `[UNK]`.
pub fn compute_idf<S: AsRef<str>>(corpus: &[S], vocab: &Vocabulary) -> Result<IdfTable> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("idf corpus has no documents".into()));
    }
    let n = corpus.len();
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in corpus {
        let mut seen: HashSet<u32> = HashSet::new();
        for token in super::split_tokens(doc.as_ref()) {
            let id = vocab.id_or_unk(&token);
            if seen.insert(id) {
                let mapped = vocab.token_of(id).unwrap_or("[UNK]").to_string();
                *df.entry(mapped).or_insert(0) += 1;
            }
        }
    }
    let weights = df
        .into_iter()
        .map(|(token, count)| {
            let idf = ((n + 1) as f64 / (count + 1) as f64).ln();
            (token, idf)
        })
        .collect();
    Ok(IdfTable {
        weights,
        document_count: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::from_tokens(["the", "cat", "dog", "bird"].map(String::from))
    }

    #[test]
    fn token_in_every_document_has_zero_idf() {
        let corpus = ["the cat", "the dog", "the bird"];
        let table = compute_idf(&corpus, &vocab()).unwrap();
        assert_eq!(table.idf("the"), 0.0);
    }

    #[test]
    fn token_in_one_of_three_documents() {
        let corpus = ["the cat", "the dog", "the bird"];
        let table = compute_idf(&corpus, &vocab()).unwrap();
        let expected = (4.0f64 / 2.0).ln(); // ln 2
        assert!((table.idf("cat") - expected).abs() < 1e-12);
        assert!((table.idf("cat") - 0.6931).abs() < 1e-4);
    }

    #[test]
    fn unseen_token_gets_ln_n_plus_one() {
        let corpus = ["the cat", "the dog", "the bird"];
        let table = compute_idf(&corpus, &vocab()).unwrap();
        let expected = 4.0f64.ln();
        assert!((table.idf("absent") - expected).abs() < 1e-12);
        assert!((table.idf("absent") - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn empty_corpus_is_error() {
        let corpus: [&str; 0] = [];
        let err = compute_idf(&corpus, &vocab()).unwrap_err();
        assert_eq!(err.kind(), "EmptyInput");
    }

    #[test]
    fn idf_bounded_and_monotone() {
        let corpus = ["a a b c", "a b", "a", "d"];
        let v = Vocabulary::from_tokens(["a", "b", "c", "d"].map(String::from));
        let table = compute_idf(&corpus, &v).unwrap();
        let bound = (corpus.len() as f64 + 1.0).ln();
        for (_, w) in table.entries() {
            assert!(w >= 0.0 && w <= bound);
        }
        // df(a)=3 > df(b)=2 > df(c)=1, so idf must be non-increasing in df.
        assert!(table.idf("a") <= table.idf("b"));
        assert!(table.idf("b") <= table.idf("c"));
    }

    #[test]
    fn save_load_round_trip() {
        let corpus = ["x y", "x z"];
        let v = Vocabulary::from_tokens(["x", "y", "z"].map(String::from));
        let table = compute_idf(&corpus, &v).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idf.tsv");
        table.save(&path).unwrap();
        let back = IdfTable::load(&path).unwrap();
        assert_eq!(back, table);
        assert_eq!(back.document_count(), 2);
    }
}
