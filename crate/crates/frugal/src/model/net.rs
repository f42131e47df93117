//! The miniature transformer regressor: configuration, parameters, and the
//! forward graph.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::text::{Vocabulary, CLS_ID, PAD_ID, SEP_ID};

use super::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorConfig {
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub max_positions: usize,
    pub vocab_size: usize,
    pub dropout: f64,
}

impl RegressorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || self.ffn_mult == 0 || self.max_positions == 0 {
            return Err(Error::Config("regressor dimensions must be positive".into()));
        }
        if self.width % self.heads != 0 {
            return Err(Error::Config(format!(
                "width {} not divisible by heads {}",
                self.width, self.heads
            )));
        }
        if self.vocab_size == 0 {
            return Err(Error::Config("vocab_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0,1)".into()));
        }
        Ok(())
    }

    /// Named shape presets; `vocab_size` is filled in from the data.
    pub fn preset(name: &str, vocab_size: usize) -> Result<Self> {
        let (layers, width, heads, max_positions) = match name {
            "tiny-desk" => (2, 64, 2, 256),
            "small-desk" => (4, 128, 4, 256),
            "tiny-paper" => (2, 128, 2, 512),
            "small-paper" => (4, 512, 8, 512),
            "medium-paper" => (8, 512, 8, 512),
            other => {
                return Err(Error::Config(format!("unknown preset {other:?}")));
            }
        };
        Ok(Self {
            layers,
            width,
            heads,
            ffn_mult: 4,
            max_positions,
            vocab_size,
            dropout: 0.0,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    pub fn ffn_dim(&self) -> usize {
        self.ffn_mult * self.width
    }
}

/// Closed-form total parameter count for a configuration.
pub fn param_count(cfg: &RegressorConfig) -> usize {
    let h = cfg.width;
    let f = cfg.ffn_dim();
    let embeddings = cfg.vocab_size * h + cfg.max_positions * h;
    let attention = 4 * (h * h + h);
    let norms = 2 * (2 * h);
    let ffn = h * f + f + f * h + h;
    let head = h + 1;
    embeddings + cfg.layers * (attention + norms + ffn) + head
}

/// Ordered named parameter tensors.
#[derive(Debug, Clone)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn push(&mut self, name: String, tensor: Tensor) {
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }
}

/// The regressor: embeddings, `layers` post-norm transformer blocks, and a
/// linear head projecting the `[CLS]` vector to a scalar.
#[derive(Debug, Clone)]
pub struct RegressorModel {
    pub config: RegressorConfig,
    pub params: ParamSet,
}

fn truncated_normal(rng: &mut StreamRng, sigma: f64) -> f64 {
    loop {
        let z = rng.normal();
        if z.abs() <= 2.0 {
            return z * sigma;
        }
    }
}

impl RegressorModel {
    /// Random initialization: truncated normal (sigma 0.02) for weight
    /// matrices and embeddings, zeros for biases and the regression head,
    /// ones for layer-norm gains.
    pub fn init(config: RegressorConfig, rng: &mut StreamRng) -> Result<Self> {
        config.validate()?;
        let h = config.width;
        let f = config.ffn_dim();
        let mut params = ParamSet::new();
        let mut weight = |rng: &mut StreamRng, rows: usize, cols: usize| {
            Tensor::from_vec(
                rows,
                cols,
                (0..rows * cols).map(|_| truncated_normal(rng, 0.02)).collect(),
            )
        };
        params.push("token_embedding".into(), weight(rng, config.vocab_size, h));
        params.push("position_embedding".into(), weight(rng, config.max_positions, h));
        for l in 0..config.layers {
            for part in ["wq", "wk", "wv", "wo"] {
                params.push(format!("layer{l}.attn.{part}"), weight(rng, h, h));
                params.push(
                    format!("layer{l}.attn.{}", part.replace('w', "b")),
                    Tensor::zeros(1, h),
                );
            }
            params.push(format!("layer{l}.ln1.gamma"), Tensor::from_vec(1, h, vec![1.0; h]));
            params.push(format!("layer{l}.ln1.beta"), Tensor::zeros(1, h));
            params.push(format!("layer{l}.ffn.w1"), weight(rng, h, f));
            params.push(format!("layer{l}.ffn.b1"), Tensor::zeros(1, f));
            params.push(format!("layer{l}.ffn.w2"), weight(rng, f, h));
            params.push(format!("layer{l}.ffn.b2"), Tensor::zeros(1, h));
            params.push(format!("layer{l}.ln2.gamma"), Tensor::from_vec(1, h, vec![1.0; h]));
            params.push(format!("layer{l}.ln2.beta"), Tensor::zeros(1, h));
        }
        params.push("head.weight".into(), Tensor::zeros(h, 1));
        params.push("head.bias".into(), Tensor::zeros(1, 1));
        Ok(Self { config, params })
    }

    /// Round every parameter to its nearest f32 value, the checkpoint
    /// precision, so a save/load round trip is bit-exact.
    pub fn quantize_to_f32(&mut self) {
        for t in self.params.tensors_mut() {
            for x in &mut t.data {
                *x = *x as f32 as f64;
            }
        }
    }
}

/// Per-example forward pass builder: loads model parameters onto a tape once
/// and then builds scalar-output graphs for id sequences.
pub struct ForwardBuilder<'m> {
    model: &'m RegressorModel,
    vars: Vec<Var>,
}

impl<'m> ForwardBuilder<'m> {
    pub fn new(model: &'m RegressorModel, tape: &mut Tape) -> Self {
        let vars = model
            .params
            .tensors()
            .iter()
            .map(|t| tape.leaf(t.clone()))
            .collect();
        Self { model, vars }
    }

    pub fn param_vars(&self) -> &[Var] {
        &self.vars
    }

    fn var(&self, name: &str) -> Var {
        let idx = self.model.params.index[name];
        self.vars[idx]
    }

    /// Build the scalar output for one id sequence. Dropout masks are drawn
    /// from `dropout_rng` when training; pass `None` for eval mode.
    pub fn output(
        &self,
        tape: &mut Tape,
        ids: &[u32],
        mut dropout_rng: Option<&mut StreamRng>,
    ) -> Result<Var> {
        let cfg = &self.model.config;
        if ids.is_empty() {
            return Err(Error::EmptyInput("empty id sequence".into()));
        }
        if ids.len() > cfg.max_positions {
            return Err(Error::Shape(format!(
                "sequence length {} exceeds max_positions {}",
                ids.len(),
                cfg.max_positions
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
            return Err(Error::Vocab(format!(
                "id {bad} out of range for vocab_size {}",
                cfg.vocab_size
            )));
        }
        let t = ids.len();
        let h = cfg.width;
        let heads = cfg.heads;
        let dh = cfg.head_dim();

        let tok = tape.gather(self.var("token_embedding"), ids);
        let pos_table = self.var("position_embedding");
        let pos = tape.slice_rows(pos_table, t);
        let mut x = tape.add(tok, pos);
        x = self.maybe_dropout(tape, x, &mut dropout_rng);

        // Additive attention mask: [PAD] columns are unreachable.
        let pad_mask = if ids.contains(&PAD_ID) {
            let mut data = vec![0.0; t * t];
            for (j, &id) in ids.iter().enumerate() {
                if id == PAD_ID {
                    for i in 0..t {
                        data[i * t + j] = -1e30;
                    }
                }
            }
            Some(tape.leaf(Tensor::from_vec(t, t, data)))
        } else {
            None
        };

        for l in 0..cfg.layers {
            let q = tape.matmul(x, self.var(&format!("layer{l}.attn.wq")));
            let q = tape.add_row(q, self.var(&format!("layer{l}.attn.bq")));
            let k = tape.matmul(x, self.var(&format!("layer{l}.attn.wk")));
            let k = tape.add_row(k, self.var(&format!("layer{l}.attn.bk")));
            let v = tape.matmul(x, self.var(&format!("layer{l}.attn.wv")));
            let v = tape.add_row(v, self.var(&format!("layer{l}.attn.bv")));

            let mut head_outputs = Vec::with_capacity(heads);
            for head in 0..heads {
                let qh = tape.slice_cols(q, head * dh, dh);
                let kh = tape.slice_cols(k, head * dh, dh);
                let vh = tape.slice_cols(v, head * dh, dh);
                let kt = tape.transpose(kh);
                let scores = tape.matmul(qh, kt);
                let mut scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
                if let Some(mask) = pad_mask {
                    scores = tape.add(scores, mask);
                }
                let attn = tape.softmax_rows(scores);
                head_outputs.push(tape.matmul(attn, vh));
            }
            let merged = tape.concat_cols(&head_outputs);
            let proj = tape.matmul(merged, self.var(&format!("layer{l}.attn.wo")));
            let mut proj = tape.add_row(proj, self.var(&format!("layer{l}.attn.bo")));
            proj = self.maybe_dropout(tape, proj, &mut dropout_rng);
            let res = tape.add(x, proj);
            x = tape.layer_norm(
                res,
                self.var(&format!("layer{l}.ln1.gamma")),
                self.var(&format!("layer{l}.ln1.beta")),
            );

            let inner = tape.matmul(x, self.var(&format!("layer{l}.ffn.w1")));
            let inner = tape.add_row(inner, self.var(&format!("layer{l}.ffn.b1")));
            let act = tape.gelu(inner);
            let outer = tape.matmul(act, self.var(&format!("layer{l}.ffn.w2")));
            let mut outer = tape.add_row(outer, self.var(&format!("layer{l}.ffn.b2")));
            outer = self.maybe_dropout(tape, outer, &mut dropout_rng);
            let res = tape.add(x, outer);
            x = tape.layer_norm(
                res,
                self.var(&format!("layer{l}.ln2.gamma")),
                self.var(&format!("layer{l}.ln2.beta")),
            );
        }

        let cls = tape.row(x, 0);
        let projected = tape.matmul(cls, self.var("head.weight"));
        let out = tape.add(projected, self.var("head.bias"));
        Ok(out)
    }

    fn maybe_dropout(
        &self,
        tape: &mut Tape,
        x: Var,
        rng: &mut Option<&mut StreamRng>,
    ) -> Var {
        let p = self.model.config.dropout;
        let Some(rng) = rng.as_deref_mut() else {
            return x;
        };
        if p <= 0.0 {
            return x;
        }
        let n = tape.value(x).len();
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.chance(p) { 0.0 } else { keep })
            .collect();
        tape.dropout(x, mask)
    }
}

/// Deterministic eval-mode forward pass.
pub fn forward(model: &RegressorModel, ids: &[u32]) -> Result<f64> {
    let mut tape = Tape::new();
    let builder = ForwardBuilder::new(model, &mut tape);
    let out = builder.output(&mut tape, ids, None)?;
    Ok(tape.value(out).data[0])
}

/// `[CLS] ref [SEP] cand [SEP]`, truncated from the tails of the longer side
/// first until the sequence fits `max_positions`.
pub fn encode_pair(
    reference: &str,
    candidate: &str,
    vocab: &Vocabulary,
    max_positions: usize,
) -> Result<Vec<u32>> {
    let mut ref_ids = crate::text::tokenize(reference, vocab)?.ids;
    let mut cand_ids = crate::text::tokenize(candidate, vocab)?.ids;
    if max_positions < 5 {
        return Err(Error::Config(format!(
            "max_positions {max_positions} cannot fit [CLS] r [SEP] c [SEP]"
        )));
    }
    while ref_ids.len() + cand_ids.len() + 3 > max_positions {
        if ref_ids.len() > cand_ids.len() && ref_ids.len() > 1 {
            ref_ids.pop();
        } else if cand_ids.len() > 1 {
            cand_ids.pop();
        } else {
            ref_ids.pop();
        }
    }
    let mut ids = Vec::with_capacity(ref_ids.len() + cand_ids.len() + 3);
    ids.push(CLS_ID);
    ids.extend(ref_ids);
    ids.push(SEP_ID);
    ids.extend(cand_ids);
    ids.push(SEP_ID);
    Ok(ids)
}
