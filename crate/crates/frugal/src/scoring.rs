//! Common interface over teacher metrics and trained students: anything that
//! maps a (reference, candidate) pair to one scalar score.

use std::sync::Arc;

use crate::bertscore::BertScoreTeacher;
use crate::embed::{EmbeddingProvider, HashProvider};
use crate::error::{Error, Result};
use crate::model::StudentScorer;
use crate::mover::{MoverTeacher, SolverKind};
use crate::text::{IdfTable, Vocabulary};
use crate::types::{MetricId, MetricKind};

pub trait PairScorer: Send + Sync {
    fn metric_id(&self) -> MetricId;
    fn score_pair(&self, reference: &str, candidate: &str) -> Result<f64>;
}

/// BERTScore teacher exposing one of its three components as the score.
pub struct BertScoreScorer {
    teacher: BertScoreTeacher,
    kind: MetricKind,
}

impl BertScoreScorer {
    pub fn new(teacher: BertScoreTeacher, kind: MetricKind) -> Result<Self> {
        match kind {
            MetricKind::BertscoreF | MetricKind::BertscoreP | MetricKind::BertscoreR => {
                Ok(Self { teacher, kind })
            }
            other => Err(Error::Config(format!(
                "{} is not a greedy-matching metric",
                other.as_str()
            ))),
        }
    }
}

impl PairScorer for BertScoreScorer {
    fn metric_id(&self) -> MetricId {
        self.teacher.metric_id(self.kind)
    }

    fn score_pair(&self, reference: &str, candidate: &str) -> Result<f64> {
        let result = self.teacher.score(reference, candidate)?;
        Ok(match self.kind {
            MetricKind::BertscoreF => result.f,
            MetricKind::BertscoreP => result.precision,
            MetricKind::BertscoreR => result.recall,
            _ => unreachable!("validated at construction"),
        })
    }
}

impl PairScorer for MoverTeacher {
    fn metric_id(&self) -> MetricId {
        MoverTeacher::metric_id(self)
    }

    fn score_pair(&self, reference: &str, candidate: &str) -> Result<f64> {
        self.score(reference, candidate)
    }
}

impl PairScorer for StudentScorer {
    fn metric_id(&self) -> MetricId {
        StudentScorer::metric_id(self)
    }

    fn score_pair(&self, reference: &str, candidate: &str) -> Result<f64> {
        self.score(reference, candidate)
    }
}

/// Build a teacher scorer for a metric kind with the default hash-embedding
/// provider, or a custom provider.
pub fn teacher_scorer(
    kind: MetricKind,
    vocab: Arc<Vocabulary>,
    provider: Option<Arc<dyn EmbeddingProvider>>,
    idf: Option<Arc<IdfTable>>,
    solver: SolverKind,
) -> Result<Arc<dyn PairScorer>> {
    let provider = provider.unwrap_or_else(|| Arc::new(HashProvider::teacher_default()));
    match kind {
        MetricKind::BertscoreF | MetricKind::BertscoreP | MetricKind::BertscoreR => {
            let teacher = BertScoreTeacher::new(vocab, provider);
            Ok(Arc::new(BertScoreScorer::new(teacher, kind)?))
        }
        MetricKind::Moverscore => {
            let idf = idf.ok_or_else(|| {
                Error::Config("moverscore needs an idf table".into())
            })?;
            Ok(Arc::new(MoverTeacher::new(vocab, provider, idf, solver)))
        }
        MetricKind::Student => Err(Error::Config(
            "student scorers load from a checkpoint, not a metric name".into(),
        )),
    }
}
