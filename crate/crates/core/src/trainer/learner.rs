use std::path::Path;

use super::optim::{Adam, AdamConfig};
use crate::error::{LabError, Result};
use crate::lm::CausalLm;
use crate::micro_lm::{save_checkpoint, Distributions, MicroModel};
use crate::string_lab::TokenId;

/// One training sequence: raw inputs (BOS included) and the token each
/// position must predict.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sequence {
    pub inputs: Vec<TokenId>,
    pub targets: Vec<TokenId>,
}

impl Sequence {
    /// `BOS ∘ s[..n-1]` predicting `s`.
    pub fn next_token(bos: TokenId, s: &[TokenId]) -> Self {
        let mut inputs = Vec::with_capacity(s.len());
        if !s.is_empty() {
            inputs.push(bos);
            inputs.extend_from_slice(&s[..s.len() - 1]);
        }
        Self {
            inputs,
            targets: s.to_vec(),
        }
    }
}

/// A model that can take optimizer steps.
pub trait Learner: CausalLm {
    /// One optimizer step on the mean per-token loss of `batch` (each
    /// sequence weighted equally); returns that loss before the step.
    fn train_step(&mut self, batch: &[Sequence], lr: f64) -> Result<f64>;

    /// Drops optimizer state so the next step starts from fresh moments.
    fn reset_optimizer(&mut self) -> Result<()>;

    fn save(&self, path: &Path) -> Result<()>;
}

/// The micro model with its Adam state.
#[derive(Clone, Debug)]
pub struct MicroLearner {
    pub model: MicroModel,
    adam_cfg: AdamConfig,
    opt: Adam,
    grads: Vec<f32>,
}

impl MicroLearner {
    pub fn new(model: MicroModel, adam_cfg: AdamConfig) -> Self {
        let n = model.num_params();
        Self {
            model,
            adam_cfg,
            opt: Adam::new(adam_cfg, n),
            grads: vec![0.0; n],
        }
    }

    pub fn into_model(self) -> MicroModel {
        self.model
    }
}

impl CausalLm for MicroLearner {
    fn vocab_size(&self) -> usize {
        self.model.config().vocab_size
    }

    fn bos_token_id(&self) -> TokenId {
        self.model.config().bos_token_id
    }

    fn max_seq_len(&self) -> usize {
        self.model.config().max_seq_len
    }

    fn forward_inputs(&self, inputs: &[TokenId]) -> Result<Distributions> {
        self.model.forward_inputs(inputs)
    }

    fn next_token_dist(&self, context: &[TokenId]) -> Result<Vec<f32>> {
        self.model.next_token_dist(context)
    }
}

impl Learner for MicroLearner {
    fn train_step(&mut self, batch: &[Sequence], lr: f64) -> Result<f64> {
        if batch.is_empty() {
            return Err(LabError::invalid("empty batch"));
        }
        self.grads.iter_mut().for_each(|g| *g = 0.0);
        let w = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for seq in batch {
            loss += w * self.model.accumulate_grads(&seq.inputs, &seq.targets, w, &mut self.grads)?;
        }
        if !self.grads.iter().all(|g| g.is_finite()) {
            return Err(LabError::NumericalFailure("non-finite gradient".into()));
        }
        self.opt.step(self.model.params_mut(), &self.grads, lr);
        self.model.bump_step();
        if !self.model.all_finite() {
            return Err(LabError::NumericalFailure("non-finite parameter after step".into()));
        }
        Ok(loss)
    }

    fn reset_optimizer(&mut self) -> Result<()> {
        self.opt = Adam::new(self.adam_cfg, self.model.num_params());
        Ok(())
    }

    fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(&self.model, path)
    }
}
