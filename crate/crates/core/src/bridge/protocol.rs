use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{LabError, Result};
use crate::micro_lm::Distributions;
use crate::string_lab::TokenId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub op: String,
    #[serde(default)]
    pub payload: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reply {
    /// `None` only when the request could not be parsed far enough to read its id.
    pub id: Option<u64>,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Reply {
    pub fn ok(id: u64, result: Value) -> Self {
        Self {
            id: Some(id),
            ok: true,
            result: Some(result),
            error: None,
        }
    }

    pub fn err(id: Option<u64>, error: impl Into<String>) -> Self {
        Self {
            id,
            ok: false,
            result: None,
            error: Some(error.into()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgeInfo {
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub bos_token_id: TokenId,
    #[serde(default)]
    pub name: String,
}

impl BridgeInfo {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 || self.max_seq_len == 0 || self.bos_token_id as usize >= self.vocab_size {
            return Err(LabError::Bridge(format!("implausible bridge info {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardReply {
    /// One row of `vocab_size` float32 logits per input position.
    pub logits: Vec<Vec<f32>>,
    #[serde(default)]
    pub truncated: bool,
}

/// Row-wise softmax (accumulated in f64) of transmitted logits.
pub fn logits_to_distributions(logits: &[Vec<f32>], vocab: usize) -> Result<Distributions> {
    let mut probs = Vec::with_capacity(logits.len() * vocab);
    for (i, row) in logits.iter().enumerate() {
        if row.len() != vocab {
            return Err(LabError::Bridge(format!("logit row {i} has width {}, expected {vocab}", row.len())));
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(LabError::NumericalFailure(format!("non-finite logit in row {i}")));
        }
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let exps: Vec<f64> = row.iter().map(|&x| (x as f64 - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        probs.extend(exps.iter().map(|e| (e / sum) as f32));
    }
    Distributions::new(vocab, probs)
}
