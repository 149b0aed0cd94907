//! The contract shared by the micro model and externally hosted models.

use crate::error::{LabError, Result};
use crate::micro_lm::{Distributions, Model, Scalar};
use crate::string_lab::TokenId;

/// A causal language model that can score token sequences.
///
/// Inputs passed to `forward_inputs` are raw: callers add the BOS token
/// themselves (the provided methods do this).
pub trait CausalLm: Sync {
    fn vocab_size(&self) -> usize;
    fn bos_token_id(&self) -> TokenId;
    fn max_seq_len(&self) -> usize;

    /// Next-token distribution after every prefix of `inputs`.
    fn forward_inputs(&self, inputs: &[TokenId]) -> Result<Distributions>;

    /// Distribution of the token following `BOS ∘ context`.
    fn next_token_dist(&self, context: &[TokenId]) -> Result<Vec<f32>> {
        let mut inputs = Vec::with_capacity(context.len() + 1);
        inputs.push(self.bos_token_id());
        inputs.extend_from_slice(context);
        let d = self.forward_inputs(&inputs)?;
        Ok(d.row(d.len() - 1).to_vec())
    }

    /// Distribution at every position of `s`, conditioned on `BOS` and the
    /// tokens before it.
    fn forward(&self, s: &[TokenId]) -> Result<Distributions> {
        if s.is_empty() {
            return Err(LabError::invalid("empty string"));
        }
        let mut inputs = Vec::with_capacity(s.len());
        inputs.push(self.bos_token_id());
        inputs.extend_from_slice(&s[..s.len() - 1]);
        self.forward_inputs(&inputs)
    }
}

impl<S: Scalar> CausalLm for Model<S> {
    fn vocab_size(&self) -> usize {
        self.config().vocab_size
    }

    fn bos_token_id(&self) -> TokenId {
        self.config().bos_token_id
    }

    fn max_seq_len(&self) -> usize {
        self.config().max_seq_len
    }

    fn forward_inputs(&self, inputs: &[TokenId]) -> Result<Distributions> {
        Model::forward_inputs(self, inputs)
    }

    fn next_token_dist(&self, context: &[TokenId]) -> Result<Vec<f32>> {
        Model::next_token_dist(self, context)
    }

    fn forward(&self, s: &[TokenId]) -> Result<Distributions> {
        if s.is_empty() {
            return Err(LabError::invalid("empty string"));
        }
        Model::forward(self, s)
    }
}
