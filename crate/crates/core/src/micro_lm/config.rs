use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::string_lab::{Alphabet, TokenId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosEncoding {
    /// Rotary embeddings on queries and keys (half-split pairing, base 10000).
    Rotary,
    /// Learned absolute position embeddings added to the token embeddings.
    Absolute,
}

/// Architecture of the micro model.
///
/// Fixed choices: pre-norm residual blocks, LayerNorm with eps 1e-5,
/// attention logits scaled by `1/sqrt(head_dim)`, tanh-approximated GELU in
/// the feed-forward, biases on every linear layer except the untied output
/// projection, no dropout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub pos_encoding: PosEncoding,
    pub bos_token_id: TokenId,
    pub init_seed: u64,
    /// Standard deviation of the token-embedding init. Kept small so the
    /// untrained model's output barely depends on the input token.
    #[serde(default = "default_embed_init_std")]
    pub embed_init_std: f64,
}

fn default_embed_init_std() -> f64 {
    4e-4
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 512,
            d_model: 128,
            n_layers: 2,
            n_heads: 4,
            d_ff: 512,
            max_seq_len: 2112,
            pos_encoding: PosEncoding::Rotary,
            bos_token_id: 511,
            init_seed: 0,
            embed_init_std: default_embed_init_std(),
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LabError::InvalidArgument(m));
        if self.vocab_size < 2 || self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return bad(format!("degenerate model config {self:?}"));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.pos_encoding == PosEncoding::Rotary && !self.head_dim().is_multiple_of(2) {
            return bad(format!("rotary encoding needs an even head dim, got {}", self.head_dim()));
        }
        if self.bos_token_id as usize >= self.vocab_size {
            return bad(format!("bos id {} outside vocabulary {}", self.bos_token_id, self.vocab_size));
        }
        if !(self.embed_init_std.is_finite() && self.embed_init_std >= 0.0) {
            return bad(format!("embed_init_std must be finite and non-negative, got {}", self.embed_init_std));
        }
        if self.max_seq_len < 2 {
            return bad("max_seq_len must be at least 2".into());
        }
        Ok(())
    }

    pub fn check_alphabet(&self, alphabet: &Alphabet) -> Result<()> {
        if alphabet.vocab_size() != self.vocab_size {
            return Err(LabError::invalid(format!(
                "alphabet vocabulary {} differs from model vocabulary {}",
                alphabet.vocab_size(),
                self.vocab_size
            )));
        }
        if alphabet.contains(self.bos_token_id) {
            return Err(LabError::invalid(format!("bos id {} is inside the alphabet", self.bos_token_id)));
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (v, d, f) = (self.vocab_size, self.d_model, self.d_ff);
        let pos = match self.pos_encoding {
            PosEncoding::Absolute => self.max_seq_len * d,
            PosEncoding::Rotary => 0,
        };
        let per_layer = 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * f + f) + (f * d + d);
        v * d + pos + self.n_layers * per_layer + 2 * d + d * v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn heads_must_divide() {
        let c = ModelConfig {
            n_heads: 3,
            ..ModelConfig::default()
        };
        assert!(matches!(c.validate(), Err(LabError::InvalidArgument(_))));
    }

    #[test]
    fn bos_in_range() {
        let c = ModelConfig {
            bos_token_id: 512,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
