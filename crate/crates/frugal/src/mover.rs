//! Word Mover's Distance teacher: minimum-cost transport between the two
//! token-embedding clouds under IDF unigram weights, reported as a
//! similarity by negation.

use std::sync::Arc;

use crate::embed::EmbeddingProvider;
use crate::error::Result;
use crate::text::{tokenize, IdfTable, Vocabulary};
use crate::transport::{solve_exact, solve_sinkhorn_annealed, TransportProblem};
use crate::types::{EmbeddingMatrix, MetricId, MetricKind, TokenSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Exact,
    Sinkhorn,
}

impl std::str::FromStr for SolverKind {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(SolverKind::Exact),
            "sinkhorn" => Ok(SolverKind::Sinkhorn),
            other => Err(crate::Error::Config(format!("unknown solver {other:?}"))),
        }
    }
}

/// Default annealing floor for the Sinkhorn route.
pub const SINKHORN_EPSILON_MIN: f64 = 1e-4;
pub const SINKHORN_MAX_ITER: usize = 50_000;

pub struct MoverTeacher {
    vocab: Arc<Vocabulary>,
    provider: Arc<dyn EmbeddingProvider>,
    idf: Arc<IdfTable>,
    pub solver: SolverKind,
}

impl MoverTeacher {
    pub fn new(
        vocab: Arc<Vocabulary>,
        provider: Arc<dyn EmbeddingProvider>,
        idf: Arc<IdfTable>,
        solver: SolverKind,
    ) -> Self {
        Self {
            vocab,
            provider,
            idf,
            solver,
        }
    }

    pub fn metric_id(&self) -> MetricId {
        MetricId::new(MetricKind::Moverscore, self.provider.name())
    }

    /// Similarity between two texts: the negated Word Mover's Distance, so
    /// higher is better and identical texts score zero.
    pub fn score(&self, reference: &str, candidate: &str) -> Result<f64> {
        let ref_seq = tokenize(reference, &self.vocab)?;
        let cand_seq = tokenize(candidate, &self.vocab)?;
        // Canonical orientation: the solver sees the same problem whichever
        // way the pair comes in, making the similarity exactly symmetric.
        let swap = order_key(&cand_seq) < order_key(&ref_seq);
        let (a, b) = if swap {
            (&cand_seq, &ref_seq)
        } else {
            (&ref_seq, &cand_seq)
        };
        let wmd = self.distance_between(a, b)?;
        Ok(-wmd)
    }

    fn distance_between(&self, a: &TokenSequence, b: &TokenSequence) -> Result<f64> {
        let a_mat = self.provider.embed(a)?;
        let b_mat = self.provider.embed(b)?;
        let supply = self.unigram_weights(a);
        let demand = self.unigram_weights(b);
        let problem = build_problem(&a_mat, &b_mat, supply, demand)?;
        let plan = match self.solver {
            SolverKind::Exact => solve_exact(&problem)?,
            SolverKind::Sinkhorn => {
                solve_sinkhorn_annealed(&problem, SINKHORN_EPSILON_MIN, SINKHORN_MAX_ITER)?
            }
        };
        Ok(plan.objective)
    }

    /// Per-occurrence weights proportional to the token's IDF, normalized to
    /// sum one. When every occurrence has zero IDF the weights fall back to
    /// uniform.
    fn unigram_weights(&self, seq: &TokenSequence) -> Vec<f64> {
        let mut weights: Vec<f64> = seq
            .ids
            .iter()
            .map(|&id| {
                let token = self.vocab.token_of(id).unwrap_or("[UNK]");
                self.idf.idf(token)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        if total > 0.0 {
            for w in &mut weights {
                *w /= total;
            }
        } else {
            let uniform = 1.0 / weights.len() as f64;
            weights.iter_mut().for_each(|w| *w = uniform);
        }
        weights
    }
}

fn order_key(seq: &TokenSequence) -> (usize, &[u32]) {
    (seq.len(), &seq.ids)
}

/// Build the transportation problem whose costs are Euclidean distances
/// between embedding rows.
pub fn build_problem(
    x: &EmbeddingMatrix,
    y: &EmbeddingMatrix,
    supply: Vec<f64>,
    demand: Vec<f64>,
) -> Result<TransportProblem> {
    if x.dim() != y.dim() {
        return Err(crate::Error::Dim(format!(
            "embedding dims differ: {} vs {}",
            x.dim(),
            y.dim()
        )));
    }
    let mut cost = Vec::with_capacity(x.rows() * y.rows());
    for i in 0..x.rows() {
        let xi = x.row(i);
        for j in 0..y.rows() {
            let d: f64 = xi
                .iter()
                .zip(y.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            cost.push(d);
        }
    }
    TransportProblem::new(cost, supply, demand)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashProvider;
    use crate::rng::seeded_rng;
    use crate::text::compute_idf;
    use crate::transport::solve_exact;

    fn teacher(solver: SolverKind) -> MoverTeacher {
        let corpus = ["alpha beta gamma", "alpha delta", "beta epsilon zeta"];
        let vocab = Arc::new(Vocabulary::from_tokens(
            ["alpha", "beta", "gamma", "delta", "epsilon", "zeta"].map(String::from),
        ));
        let idf = Arc::new(compute_idf(&corpus, &vocab).unwrap());
        MoverTeacher::new(
            vocab,
            Arc::new(HashProvider::teacher_default()),
            idf,
            solver,
        )
    }

    #[test]
    fn identical_texts_score_zero() {
        let t = teacher(SolverKind::Exact);
        let s = t.score("alpha beta gamma", "alpha beta gamma").unwrap();
        assert!(s.abs() < 1e-7, "score {s}");
    }

    #[test]
    fn symmetry_is_exact() {
        let t = teacher(SolverKind::Exact);
        let texts = ["alpha beta", "beta gamma delta", "epsilon", "zeta alpha beta gamma"];
        for a in &texts {
            for b in &texts {
                let ab = t.score(a, b).unwrap();
                let ba = t.score(b, a).unwrap();
                assert_eq!(ab.to_bits(), ba.to_bits(), "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn distance_is_nonnegative_similarity_nonpositive() {
        let t = teacher(SolverKind::Exact);
        let s = t.score("alpha beta", "gamma delta").unwrap();
        assert!(s <= 0.0);
    }

    #[test]
    fn single_token_pair_is_negated_distance() {
        // Two single-token texts whose embeddings are 3-4-5 apart.
        let x = EmbeddingMatrix::from_rows(vec![vec![0.0, 0.0]], false).unwrap();
        let y = EmbeddingMatrix::from_rows(vec![vec![3.0, 4.0]], false).unwrap();
        let p = build_problem(&x, &y, vec![1.0], vec![1.0]).unwrap();
        let plan = solve_exact(&p).unwrap();
        assert!((-plan.objective - (-5.0)).abs() < 1e-12);
    }

    #[test]
    fn scaling_embeddings_scales_distance_exactly() {
        // c = 2 is a power of two, so every float op scales exactly.
        let mut rng = seeded_rng(40, "mover.scale");
        for _ in 0..20 {
            let n = 2 + rng.usize_below(4);
            let m = 2 + rng.usize_below(4);
            let rows = |rng: &mut crate::rng::StreamRng, k: usize| {
                (0..k)
                    .map(|_| (0..3).map(|_| rng.normal()).collect::<Vec<f64>>())
                    .collect::<Vec<_>>()
            };
            let x = EmbeddingMatrix::from_rows(rows(&mut rng, n), false).unwrap();
            let y = EmbeddingMatrix::from_rows(rows(&mut rng, m), false).unwrap();
            let supply = vec![1.0 / n as f64; n];
            let demand = vec![1.0 / m as f64; m];
            let base = solve_exact(
                &build_problem(&x, &y, supply.clone(), demand.clone()).unwrap(),
            )
            .unwrap();
            let scaled = solve_exact(
                &build_problem(&x.scaled(2.0), &y.scaled(2.0), supply, demand).unwrap(),
            )
            .unwrap();
            assert_eq!(scaled.objective.to_bits(), (2.0 * base.objective).to_bits());
        }
    }

    #[test]
    fn sinkhorn_route_close_to_exact() {
        let t_exact = teacher(SolverKind::Exact);
        let t_apx = teacher(SolverKind::Sinkhorn);
        let pairs = [
            ("alpha beta gamma", "alpha delta"),
            ("beta epsilon zeta", "zeta beta"),
        ];
        for (a, b) in pairs {
            let e = t_exact.score(a, b).unwrap();
            let s = t_apx.score(a, b).unwrap();
            assert!((e - s).abs() < 1e-3, "{a:?}/{b:?}: exact {e} sinkhorn {s}");
        }
    }

    #[test]
    fn self_distance_zero_is_lower_bound() {
        let t = teacher(SolverKind::Exact);
        let texts = ["alpha beta", "gamma delta epsilon", "zeta"];
        for a in &texts {
            assert!(t.score(a, a).unwrap().abs() < 1e-7);
            for b in &texts {
                // WMD(a,a)=0 <= WMD(a,b), i.e. similarity <= 0.
                assert!(t.score(a, b).unwrap() <= 1e-7);
            }
        }
    }
}
