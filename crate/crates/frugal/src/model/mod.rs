//! The miniature transformer regressor: tensor engine, network, training
//! loop, and checkpoint format.

mod checkpoint;
mod net;
pub mod tensor;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use net::{
    encode_pair, forward, param_count, ForwardBuilder, ParamSet, RegressorConfig, RegressorModel,
};
pub use train::{
    batch_gradients, encode_examples, finetune, gradient_check, lr_schedule, mse_loss, predict_all,
    train, AdamState, Example, GradCheckEntry, HumanExample, LossRecord, TrainOutcome,
    ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
};

use std::path::Path;
use std::sync::Arc;

use crate::error::Result;
use crate::text::Vocabulary;
use crate::types::{MetricId, MetricKind};

/// A trained regressor plus its vocabulary, usable as a pair scorer.
pub struct StudentScorer {
    pub model: RegressorModel,
    pub vocab: Arc<Vocabulary>,
    name: String,
}

impl StudentScorer {
    pub fn new(model: RegressorModel, vocab: Arc<Vocabulary>, name: impl Into<String>) -> Self {
        Self {
            model,
            vocab,
            name: name.into(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (model, vocab) = load_checkpoint(path)?;
        Ok(Self {
            model,
            vocab: Arc::new(vocab),
            name: path.display().to_string(),
        })
    }

    pub fn metric_id(&self) -> MetricId {
        MetricId::new(MetricKind::Student, &self.name)
    }

    pub fn score(&self, reference: &str, candidate: &str) -> Result<f64> {
        let ids = encode_pair(reference, candidate, &self.vocab, self.model.config.max_positions)?;
        forward(&self.model, &ids)
    }
}
