//! MSE training of the regressor: Adam with linear warmup/decay, seeded
//! shuffling, and deterministic parallel gradient accumulation.

use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::rng::{seeded_rng, StreamRng};
use crate::text::Vocabulary;
use crate::types::AnnotatedPair;

use super::net::{encode_pair, ForwardBuilder, RegressorModel};
use super::tensor::{Tape, Tensor};

/// Gradient chunks are fixed-size so the accumulation order, and therefore
/// the result, does not depend on the worker count.
const GRAD_CHUNK: usize = 8;

/// Mean squared error between aligned prediction and target lists.
pub fn mse_loss(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::Shape(format!(
            "mse over {} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::EmptyInput("mse over empty lists".into()));
    }
    let sum: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / predictions.len() as f64)
}

/// One encoded training example.
#[derive(Debug, Clone)]
pub struct Example {
    pub ids: Vec<u32>,
    pub target: f64,
}

pub fn encode_examples(
    pairs: &[AnnotatedPair],
    vocab: &Vocabulary,
    max_positions: usize,
) -> Result<Vec<Example>> {
    pairs
        .iter()
        .map(|pair| {
            let score = pair
                .score
                .ok_or_else(|| Error::Data("pair without a teacher score".into()))?;
            Ok(Example {
                ids: encode_pair(&pair.reference, &pair.candidate, vocab, max_positions)?,
                target: score,
            })
        })
        .collect()
}

/// Batch loss and parameter gradients (both averaged over the batch).
pub fn batch_gradients(
    model: &RegressorModel,
    batch: &[Example],
    dropout_seed: Option<(u64, u64)>,
) -> Result<(f64, Vec<Tensor>)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    let chunks: Vec<&[Example]> = batch.chunks(GRAD_CHUNK).collect();
    let partials: Vec<Result<(f64, Vec<Tensor>)>> = chunks
        .par_iter()
        .enumerate()
        .map(|(chunk_idx, chunk)| {
            let mut loss_sum = 0.0;
            let mut grads: Vec<Tensor> = model
                .params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.rows, t.cols))
                .collect();
            for (k, example) in chunk.iter().enumerate() {
                let mut tape = Tape::new();
                let builder = ForwardBuilder::new(model, &mut tape);
                let mut dropout_rng = dropout_seed.map(|(seed, step)| {
                    seeded_rng(
                        seed,
                        &format!("train.dropout.{step}.{}", chunk_idx * GRAD_CHUNK + k),
                    )
                });
                let out = builder.output(&mut tape, &example.ids, dropout_rng.as_mut())?;
                let target = tape.leaf(Tensor::scalar(example.target));
                let diff = tape.sub(out, target);
                let loss = tape.mul(diff, diff);
                loss_sum += tape.value(loss).data[0];
                let g = tape.backward(loss)?;
                for (acc, var) in grads.iter_mut().zip(builder.param_vars()) {
                    if let Some(gp) = g.get(*var) {
                        for (a, b) in acc.data.iter_mut().zip(&gp.data) {
                            *a += b;
                        }
                    }
                }
            }
            Ok((loss_sum, grads))
        })
        .collect();

    let inv = 1.0 / batch.len() as f64;
    let mut total_loss = 0.0;
    let mut total: Vec<Tensor> = model
        .params
        .tensors()
        .iter()
        .map(|t| Tensor::zeros(t.rows, t.cols))
        .collect();
    for partial in partials {
        let (loss_sum, grads) = partial?;
        total_loss += loss_sum;
        for (acc, g) in total.iter_mut().zip(&grads) {
            for (a, b) in acc.data.iter_mut().zip(&g.data) {
                *a += b;
            }
        }
    }
    for g in &mut total {
        for x in &mut g.data {
            *x *= inv;
        }
    }
    Ok((total_loss * inv, total))
}

/// Adam moments aligned with the model parameters.
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    pub step: usize,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(model: &RegressorModel) -> Self {
        let zeros = |m: &RegressorModel| {
            m.params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.rows, t.cols))
                .collect::<Vec<_>>()
        };
        Self {
            m: zeros(model),
            v: zeros(model),
            step: 0,
        }
    }

    pub fn update(&mut self, model: &mut RegressorModel, grads: &[Tensor], lr: f64) {
        self.step += 1;
        let t = self.step as f64;
        let bias1 = 1.0 - ADAM_BETA1.powf(t);
        let bias2 = 1.0 - ADAM_BETA2.powf(t);
        for ((param, grad), (m, v)) in model
            .params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for k in 0..param.data.len() {
                let g = grad.data[k];
                m.data[k] = ADAM_BETA1 * m.data[k] + (1.0 - ADAM_BETA1) * g;
                v.data[k] = ADAM_BETA2 * v.data[k] + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = m.data[k] / bias1;
                let v_hat = v.data[k] / bias2;
                param.data[k] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Linear warmup to `peak` over `warmup` steps, then linear decay to zero at
/// `total` steps. `step` is 1-based.
pub fn lr_schedule(peak: f64, warmup: usize, total: usize, step: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    if warmup > 0 && step <= warmup {
        return peak * step as f64 / warmup as f64;
    }
    if total <= warmup {
        return peak;
    }
    let rest = (total - step) as f64 / (total - warmup) as f64;
    peak * rest.max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

pub struct TrainOutcome {
    pub model: RegressorModel,
    pub history: Vec<LossRecord>,
}

/// Train on annotated pairs with Adam and the linear warmup/decay schedule.
///
/// Batch composition is invariant to the order pairs arrive in: examples are
/// first sorted by content hash, then shuffled per epoch from the seeded
/// stream. The returned model is quantized to checkpoint (f32) precision so
/// save/load round trips are bit-exact.
pub fn train(
    pairs: &[AnnotatedPair],
    vocab: &Vocabulary,
    mut model: RegressorModel,
    run: &RunConfig,
) -> Result<TrainOutcome> {
    run.validate()?;
    if pairs.is_empty() {
        return Err(Error::EmptyInput("training set is empty".into()));
    }
    let mut sorted: Vec<&AnnotatedPair> = pairs.iter().collect();
    sorted.sort_by_key(|p| p.content_key());
    let owned: Vec<AnnotatedPair> = sorted.into_iter().cloned().collect();
    let examples = encode_examples(&owned, vocab, model.config.max_positions)?;

    let steps_per_epoch = examples.len().div_ceil(run.batch_size);
    let total_steps = steps_per_epoch * run.epochs;
    let warmup_steps = (run.warmup_fraction * total_steps as f64).ceil() as usize;
    let mut adam = AdamState::new(&model);
    let mut history = Vec::with_capacity(total_steps);
    let dropout = model.config.dropout > 0.0;

    for epoch in 0..run.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut shuffle_rng = seeded_rng(run.seed, &format!("train.shuffle.{epoch}"));
        shuffle_rng.shuffle(&mut order);
        for batch_indices in order.chunks(run.batch_size) {
            let batch: Vec<Example> = batch_indices
                .iter()
                .map(|&i| examples[i].clone())
                .collect();
            let step = adam.step + 1;
            let lr = lr_schedule(run.learning_rate, warmup_steps, total_steps, step);
            let dropout_seed = dropout.then_some((run.seed, step as u64));
            let (loss, grads) = batch_gradients(&model, &batch, dropout_seed)?;
            adam.update(&mut model, &grads, lr);
            history.push(LossRecord {
                step: adam.step,
                loss,
                lr,
            });
        }
    }
    model.quantize_to_f32();
    Ok(TrainOutcome { model, history })
}

/// A labelled (pair, human score) example for fine-tuning and validation.
#[derive(Debug, Clone)]
pub struct HumanExample {
    pub reference: String,
    pub candidate: String,
    pub score: f64,
}

/// Continue training on human annotations with a linearly decaying learning
/// rate (no warmup), keeping the per-epoch checkpoint with the best
/// validation Pearson correlation. Zero epochs returns the input model
/// unchanged.
pub fn finetune(
    model: RegressorModel,
    train_set: &[HumanExample],
    validation: &[HumanExample],
    vocab: &Vocabulary,
    run: &RunConfig,
) -> Result<(RegressorModel, f64)> {
    if run.epochs == 0 {
        return Ok((model, f64::NAN));
    }
    if validation.is_empty() {
        return Err(Error::Config("fine-tuning needs a validation set".into()));
    }
    if train_set.is_empty() {
        return Err(Error::EmptyInput("fine-tuning train set is empty".into()));
    }
    let to_pairs = |xs: &[HumanExample]| -> Vec<AnnotatedPair> {
        xs.iter()
            .map(|x| AnnotatedPair {
                reference: x.reference.clone(),
                candidate: x.candidate.clone(),
                source: crate::types::PairSource::Random,
                score: Some(x.score),
            })
            .collect()
    };
    let train_pairs = to_pairs(train_set);
    let mut sorted: Vec<&AnnotatedPair> = train_pairs.iter().collect();
    sorted.sort_by_key(|p| p.content_key());
    let owned: Vec<AnnotatedPair> = sorted.into_iter().cloned().collect();
    let examples = encode_examples(&owned, vocab, model.config.max_positions)?;
    let val_examples: Vec<Example> = validation
        .iter()
        .map(|x| {
            Ok(Example {
                ids: encode_pair(&x.reference, &x.candidate, vocab, model.config.max_positions)?,
                target: x.score,
            })
        })
        .collect::<Result<_>>()?;

    let steps_per_epoch = examples.len().div_ceil(run.batch_size);
    let total_steps = steps_per_epoch * run.epochs;
    let mut adam = AdamState::new(&model);
    let mut current = model;
    let mut best: Option<(RegressorModel, f64)> = None;
    for epoch in 0..run.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut shuffle_rng = seeded_rng(run.seed, &format!("finetune.shuffle.{epoch}"));
        shuffle_rng.shuffle(&mut order);
        for batch_indices in order.chunks(run.batch_size) {
            let batch: Vec<Example> = batch_indices
                .iter()
                .map(|&i| examples[i].clone())
                .collect();
            let step = adam.step + 1;
            let lr = lr_schedule(run.learning_rate, 0, total_steps, step);
            let (_, grads) = batch_gradients(&current, &batch, None)?;
            adam.update(&mut current, &grads, lr);
        }
        let mut snapshot = current.clone();
        snapshot.quantize_to_f32();
        let r = validation_pearson(&snapshot, &val_examples)?;
        let better = match &best {
            None => true,
            Some((_, best_r)) => r > *best_r,
        };
        if better {
            best = Some((snapshot, r));
        }
        let _ = epoch;
    }
    Ok(best.expect("at least one epoch ran"))
}

fn validation_pearson(model: &RegressorModel, examples: &[Example]) -> Result<f64> {
    let predictions = predict_all(model, examples)?;
    let targets: Vec<f64> = examples.iter().map(|e| e.target).collect();
    crate::evalbench::pearson(&predictions, &targets)
}

pub fn predict_all(model: &RegressorModel, examples: &[Example]) -> Result<Vec<f64>> {
    examples
        .par_iter()
        .map(|e| super::net::forward(model, &e.ids))
        .collect()
}

/// Analytic-vs-numeric gradient comparison for sampled coordinates of every
/// parameter, grouped by parameter name. The numeric side is a central
/// finite difference of the batch loss, touching only the forward pass.
pub fn gradient_check(
    model: &RegressorModel,
    batch: &[Example],
    samples_per_tensor: usize,
    h: f64,
    rng: &mut StreamRng,
) -> Result<Vec<GradCheckEntry>> {
    let (_, grads) = batch_gradients(model, batch, None)?;
    let loss_of = |m: &RegressorModel| -> Result<f64> {
        let predictions: Vec<f64> = batch
            .iter()
            .map(|e| super::net::forward(m, &e.ids))
            .collect::<Result<_>>()?;
        let targets: Vec<f64> = batch.iter().map(|e| e.target).collect();
        mse_loss(&predictions, &targets)
    };
    let mut entries = Vec::new();
    for (idx, name) in model.params.names().iter().enumerate() {
        let len = model.params.tensors()[idx].len();
        let samples = samples_per_tensor.min(len);
        let mut worst_rel = 0.0f64;
        for _ in 0..samples {
            let k = rng.usize_below(len);
            let mut shifted = model.clone();
            shifted.params.tensors_mut()[idx].data[k] += h;
            let up = loss_of(&shifted)?;
            shifted.params.tensors_mut()[idx].data[k] -= 2.0 * h;
            let down = loss_of(&shifted)?;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads[idx].data[k];
            let denom = analytic.abs().max(numeric.abs());
            let diff = (analytic - numeric).abs();
            let rel = if diff <= 1e-7 {
                0.0
            } else {
                diff / denom.max(1e-12)
            };
            worst_rel = worst_rel.max(rel);
        }
        entries.push(GradCheckEntry {
            name: name.clone(),
            worst_rel,
        });
    }
    Ok(entries)
}

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    /// Worst relative error among sampled coordinates, zero when the
    /// absolute difference is below the 1e-7 floor.
    pub worst_rel: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::net::RegressorConfig;
    use crate::types::PairSource;

    fn vocab() -> Vocabulary {
        Vocabulary::from_tokens((0..30).map(|i| format!("w{i}")).collect::<Vec<_>>())
    }

    fn config(vocab_size: usize) -> RegressorConfig {
        RegressorConfig {
            layers: 2,
            width: 16,
            heads: 2,
            ffn_mult: 2,
            max_positions: 24,
            vocab_size,
            dropout: 0.0,
        }
    }

    fn toy_pairs(n: usize) -> Vec<AnnotatedPair> {
        let mut rng = seeded_rng(70, "train.toy");
        (0..n)
            .map(|_| {
                let a = format!("w{} w{} w{}", rng.below(30), rng.below(30), rng.below(30));
                let b = format!("w{} w{}", rng.below(30), rng.below(30));
                let overlap = a.split_whitespace().filter(|t| b.contains(*t)).count();
                AnnotatedPair {
                    reference: a,
                    candidate: b,
                    source: PairSource::Denoising,
                    score: Some(overlap as f64 / 3.0),
                }
            })
            .collect()
    }

    #[test]
    fn mse_basics() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[0.0, 1.0], &[1.0, 1.0]).unwrap(), 0.5);
        assert_eq!(
            mse_loss(&[1.0], &[1.0, 2.0]).unwrap_err().kind(),
            "ShapeError"
        );
    }

    #[test]
    fn mse_matches_two_pass_oracle() {
        let mut rng = seeded_rng(71, "train.mse");
        let a: Vec<f64> = (0..500).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..500).map(|_| rng.normal()).collect();
        // Independent route: accumulate differences first, then square in a
        // second pass over a stored buffer.
        let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let oracle = diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64;
        assert!((mse_loss(&a, &b).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn lr_schedule_shape() {
        let peak = 1e-3;
        // Warmup 10 of 100 steps.
        assert!((lr_schedule(peak, 10, 100, 1) - peak * 0.1).abs() < 1e-18);
        assert!((lr_schedule(peak, 10, 100, 10) - peak).abs() < 1e-18);
        assert!((lr_schedule(peak, 10, 100, 55) - peak * 0.5).abs() < 1e-18);
        assert_eq!(lr_schedule(peak, 10, 100, 100), 0.0);
    }

    #[test]
    fn zero_residual_batch_has_zero_head_gradient() {
        let v = vocab();
        let mut rng = seeded_rng(72, "train.zero");
        let model = RegressorModel::init(config(v.len()), &mut rng).unwrap();
        // Fresh model outputs exactly 0 (zero head), so targets of 0 give
        // zero loss and a zero gradient for the head weight.
        let pairs: Vec<AnnotatedPair> = toy_pairs(4)
            .into_iter()
            .map(|mut p| {
                p.score = Some(0.0);
                p
            })
            .collect();
        let examples = encode_examples(&pairs, &v, 24).unwrap();
        let (loss, grads) = batch_gradients(&model, &examples, None).unwrap();
        assert_eq!(loss, 0.0);
        let head_idx = model
            .params
            .names()
            .iter()
            .position(|n| n == "head.weight")
            .unwrap();
        assert!(grads[head_idx].data.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn duplicated_example_doubles_its_contribution() {
        let v = vocab();
        let mut rng = seeded_rng(73, "train.dup");
        let mut model = RegressorModel::init(config(v.len()), &mut rng).unwrap();
        // Nonzero head so gradients flow.
        let head_idx = model
            .params
            .names()
            .iter()
            .position(|n| n == "head.weight")
            .unwrap();
        for (k, x) in model.params.tensors_mut()[head_idx].data.iter_mut().enumerate() {
            *x = 0.01 * (k as f64 + 1.0);
        }
        let pairs = toy_pairs(2);
        let single = encode_examples(&pairs[..1], &v, 24).unwrap();
        let other = encode_examples(&pairs[1..], &v, 24).unwrap();
        let (_, g_single) = batch_gradients(&model, &single, None).unwrap();
        let (_, g_other) = batch_gradients(&model, &other, None).unwrap();
        let doubled: Vec<Example> = vec![single[0].clone(), single[0].clone(), other[0].clone()];
        let (_, g_mixed) = batch_gradients(&model, &doubled, None).unwrap();
        // mixed = (2*single + other) / 3.
        for i in 0..g_mixed.len() {
            for k in 0..g_mixed[i].data.len() {
                let expected = (2.0 * g_single[i].data[k] + g_other[i].data[k]) / 3.0;
                assert!(
                    (g_mixed[i].data[k] - expected).abs() < 1e-12,
                    "param {i} elem {k}"
                );
            }
        }
    }

    #[test]
    fn gradient_check_tiny_model() {
        let v = vocab();
        let mut rng = seeded_rng(74, "train.gradcheck");
        let mut model = RegressorModel::init(config(v.len()), &mut rng).unwrap();
        // Random head so every path carries gradient.
        let head_idx = model
            .params
            .names()
            .iter()
            .position(|n| n == "head.weight")
            .unwrap();
        for x in &mut model.params.tensors_mut()[head_idx].data {
            *x = 0.05 * rng.normal();
        }
        let pairs = toy_pairs(3);
        let batch = encode_examples(&pairs, &v, 24).unwrap();
        let entries = gradient_check(&model, &batch, 6, 1e-5, &mut rng).unwrap();
        for entry in entries {
            assert!(
                entry.worst_rel < 1e-4,
                "{}: rel {}",
                entry.name,
                entry.worst_rel
            );
        }
    }

    #[test]
    fn training_is_deterministic_and_file_order_invariant() {
        let v = vocab();
        let run = RunConfig {
            seed: 5,
            batch_size: 4,
            learning_rate: 1e-3,
            warmup_fraction: 0.1,
            epochs: 2,
        };
        let pairs = toy_pairs(12);
        let mut reversed = pairs.clone();
        reversed.reverse();
        let init = |seed| {
            let mut rng = seeded_rng(seed, "model.init");
            RegressorModel::init(config(v.len()), &mut rng).unwrap()
        };
        let a = train(&pairs, &v, init(1), &run).unwrap();
        let b = train(&reversed, &v, init(1), &run).unwrap();
        for (ta, tb) in a.model.params.tensors().iter().zip(b.model.params.tensors()) {
            assert_eq!(ta.data, tb.data);
        }
        assert_eq!(a.history.len(), b.history.len());
        for (ra, rb) in a.history.iter().zip(&b.history) {
            assert_eq!(ra.loss.to_bits(), rb.loss.to_bits());
        }
    }

    #[test]
    fn training_reduces_loss_on_learnable_signal() {
        let v = vocab();
        let run = RunConfig {
            seed: 9,
            batch_size: 8,
            learning_rate: 3e-3,
            warmup_fraction: 0.06,
            epochs: 8,
        };
        let pairs = toy_pairs(64);
        let mut rng = seeded_rng(75, "train.learn");
        let model = RegressorModel::init(config(v.len()), &mut rng).unwrap();
        let out = train(&pairs, &v, model, &run).unwrap();
        let first: f64 = out.history[..8].iter().map(|r| r.loss).sum::<f64>() / 8.0;
        let last: f64 =
            out.history[out.history.len() - 8..].iter().map(|r| r.loss).sum::<f64>() / 8.0;
        assert!(last < first, "loss went {first} -> {last}");
    }

    #[test]
    fn finetune_zero_epochs_returns_input() {
        let v = vocab();
        let mut rng = seeded_rng(76, "train.ft0");
        let model = RegressorModel::init(config(v.len()), &mut rng).unwrap();
        let run = RunConfig {
            epochs: 0,
            ..RunConfig::default()
        };
        let examples = vec![HumanExample {
            reference: "w1 w2".into(),
            candidate: "w1".into(),
            score: 0.5,
        }];
        let before: Vec<Vec<f64>> = model.params.tensors().iter().map(|t| t.data.clone()).collect();
        let (out, _) = finetune(model, &examples, &examples, &v, &run).unwrap();
        let after: Vec<Vec<f64>> = out.params.tensors().iter().map(|t| t.data.clone()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn finetune_returns_best_validation_epoch() {
        let v = vocab();
        let mut rng = seeded_rng(77, "train.ftbest");
        let model = RegressorModel::init(config(v.len()), &mut rng).unwrap();
        let run = RunConfig {
            seed: 3,
            batch_size: 4,
            learning_rate: 2e-5,
            warmup_fraction: 0.0,
            epochs: 3,
        };
        let mut data = Vec::new();
        let mut rng2 = seeded_rng(78, "train.ftdata");
        for _ in 0..16 {
            let a = format!("w{} w{}", rng2.below(30), rng2.below(30));
            let b = format!("w{} w{}", rng2.below(30), rng2.below(30));
            data.push(HumanExample {
                reference: a,
                candidate: b,
                score: rng2.f64(),
            });
        }
        let (train_set, validation) = data.split_at(10);
        let (_, best_r) = finetune(model, train_set, validation, &v, &run).unwrap();
        assert!(best_r.is_finite());
        assert!((-1.0..=1.0).contains(&best_r));
    }
}
