//! Denoising perturbations: sentence permutation and span infilling, plus the
//! deterministic reconstruction stub that stands in for a seq2seq denoiser.
//!
//! Perturbation operates on whitespace tokens, so punctuation stays attached
//! to its word and pass-through text keeps its sentence segmentation. A word
//! that ends a sentence in the middle of the segment is never masked and
//! random replacements never introduce sentence delimiters, which keeps the
//! sentence count stable while only infilling is enabled.

use crate::error::{Error, Result};
use crate::rng::StreamRng;

use super::{split_sentences, Vocabulary};

pub const MASK_TOKEN: &str = "[MASK]";

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationParams {
    /// Poisson mean for span lengths; draws of zero are rejected, so the
    /// realized mean is `lambda / (1 - e^-lambda)`.
    pub lambda: f64,
    /// Fraction of segment tokens to cover with spans.
    pub mask_ratio: f64,
    /// Fraction of the masked-out tokens re-emitted as random tokens.
    pub random_replace_ratio: f64,
    pub shuffle_sentences: bool,
}

impl Default for PerturbationParams {
    fn default() -> Self {
        Self {
            lambda: 3.0,
            mask_ratio: 0.5,
            random_replace_ratio: 0.2,
            shuffle_sentences: true,
        }
    }
}

impl PerturbationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::Config("lambda must be > 0".into()));
        }
        for (name, v) in [
            ("mask_ratio", self.mask_ratio),
            ("random_replace_ratio", self.random_replace_ratio),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0,1]")));
            }
        }
        Ok(())
    }
}

/// Counters describing what one perturbation actually did.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PerturbStats {
    pub tokens_total: usize,
    pub tokens_masked: usize,
    pub random_replacements: usize,
    pub span_lengths: Vec<usize>,
}

/// Full perturbation outcome, including the post-shuffle intermediate that
/// reconstruction aligns against.
#[derive(Debug, Clone)]
pub struct PerturbOutcome {
    pub shuffled: String,
    pub perturbed: String,
    pub stats: PerturbStats,
}

/// Apply sentence permutation and span infilling. See [`perturb_with_stats`].
pub fn perturb(
    segment: &str,
    params: &PerturbationParams,
    vocab: &Vocabulary,
    rng: &mut StreamRng,
) -> String {
    perturb_with_stats(segment, params, vocab, rng).perturbed
}

/// Perturb `segment`:
///
/// 1. shuffle sentences with a uniform non-identity permutation (when enabled
///    and there are at least two sentences);
/// 2. cover at least `mask_ratio` of the tokens with non-overlapping spans,
///    placed left to right, with lengths drawn from `Poisson(lambda)`
///    conditioned on being at least one; each span emits a single `[MASK]`;
/// 3. re-emit each covered token, with probability `random_replace_ratio`,
///    as a uniformly random vocabulary token in place of its mask.
pub fn perturb_with_stats(
    segment: &str,
    params: &PerturbationParams,
    vocab: &Vocabulary,
    rng: &mut StreamRng,
) -> PerturbOutcome {
    let mut sentences = split_sentences(segment);
    if params.shuffle_sentences && sentences.len() >= 2 {
        let perm = rng.non_identity_permutation(sentences.len());
        sentences = perm.into_iter().map(|i| sentences[i].clone()).collect();
    }
    let shuffled = sentences.join(" ");

    // Masking happens sentence by sentence: spans never cross a sentence
    // boundary and a word carrying the sentence delimiter is never covered,
    // so the sentence segmentation survives infilling.
    let pool = vocab.replacement_pool();
    let mut out: Vec<String> = Vec::new();
    let mut stats = PerturbStats::default();
    for sentence in &sentences {
        let tokens: Vec<&str> = sentence.split_whitespace().collect();
        let n = tokens.len();
        if n == 0 {
            continue;
        }
        stats.tokens_total += n;
        let maskable: Vec<usize> = (0..n)
            .filter(|&i| !tokens[i].ends_with(['.', '!', '?']))
            .collect();

        let budget = ((params.mask_ratio * n as f64).ceil() as usize).min(maskable.len());
        let mut span_lengths: Vec<usize> = Vec::new();
        let mut covered = 0usize;
        if budget > 0 {
            while covered < budget {
                let cap = maskable.len() - covered;
                let len = (rng.poisson_at_least_one(params.lambda) as usize).min(cap);
                span_lengths.push(len);
                covered += len;
            }
        }

        // Spread the uncovered slack uniformly into the gaps around spans.
        let k = span_lengths.len();
        let slack = maskable.len() - covered;
        let mut cuts: Vec<usize> = (0..k).map(|_| rng.usize_below(slack + 1)).collect();
        cuts.sort_unstable();

        // span_of[t] = Some(span index) for covered token positions.
        let mut span_of: Vec<Option<usize>> = vec![None; n];
        let mut offset = 0usize;
        let mut prev_cut = 0usize;
        for (s, &len) in span_lengths.iter().enumerate() {
            offset += cuts[s] - prev_cut;
            prev_cut = cuts[s];
            for _ in 0..len {
                span_of[maskable[offset]] = Some(s);
                offset += 1;
            }
        }

        let mut replaced: Vec<Option<String>> = vec![None; n];
        for i in 0..n {
            if span_of[i].is_some() && rng.chance(params.random_replace_ratio) {
                let token = if pool.is_empty() {
                    "[UNK]".to_string()
                } else {
                    let id = pool[rng.usize_below(pool.len())];
                    vocab.token_of(id).unwrap().to_string()
                };
                replaced[i] = Some(token);
                stats.random_replacements += 1;
            }
        }

        let mut mask_emitted = vec![false; k];
        for i in 0..n {
            match span_of[i] {
                None => out.push(tokens[i].to_string()),
                Some(s) => {
                    if let Some(token) = replaced[i].take() {
                        out.push(token);
                    } else if !mask_emitted[s] {
                        mask_emitted[s] = true;
                        out.push(MASK_TOKEN.to_string());
                    }
                }
            }
        }

        stats.tokens_masked += covered;
        stats.span_lengths.extend(span_lengths);
    }

    PerturbOutcome {
        shuffled,
        perturbed: out.join(" "),
        stats,
    }
}

/// Fill each `[MASK]` in `perturbed` from `original`: with probability
/// `fidelity` the mask recovers the original tokens it stands for, otherwise
/// it is replaced by random vocabulary tokens of the same count. Non-mask
/// tokens pass through unchanged.
///
/// Mask-to-token correspondence is recovered by a greedy two-pointer
/// alignment: the run behind a mask extends until the next perturbed token
/// that still occurs in the remaining original suffix.
pub fn pseudo_reconstruct(
    perturbed: &str,
    original: &str,
    fidelity: f64,
    vocab: &Vocabulary,
    rng: &mut StreamRng,
) -> String {
    let p: Vec<&str> = perturbed.split_whitespace().collect();
    let o: Vec<&str> = original.split_whitespace().collect();
    let pool = vocab.replacement_pool();
    let mut out: Vec<String> = Vec::with_capacity(o.len());
    let mut j = 0usize;
    for i in 0..p.len() {
        if p[i] == MASK_TOKEN {
            let anchor = p[i + 1..]
                .iter()
                .find(|t| **t != MASK_TOKEN && o[j..].contains(t))
                .copied();
            let run_start = j;
            match anchor {
                Some(a) => {
                    while j < o.len() && o[j] != a {
                        j += 1;
                    }
                }
                None => j = o.len(),
            }
            let run = &o[run_start..j];
            if run.is_empty() {
                continue;
            }
            if rng.chance(fidelity) {
                out.extend(run.iter().map(|t| t.to_string()));
            } else {
                for _ in 0..run.len() {
                    let token = if pool.is_empty() {
                        "[UNK]".to_string()
                    } else {
                        let id = pool[rng.usize_below(pool.len())];
                        vocab.token_of(id).unwrap().to_string()
                    };
                    out.push(token);
                }
            }
        } else {
            out.push(p[i].to_string());
            if j < o.len() && o[j] == p[i] {
                j += 1;
            }
        }
    }
    out.join(" ")
}
