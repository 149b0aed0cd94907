use std::io::{BufRead, Write};

use serde_json::{json, Value};

use super::protocol::{logits_to_distributions, BridgeInfo, Reply, Request};
use crate::error::{LabError, Result};
use crate::lm::CausalLm;
use crate::micro_lm::Distributions;
use crate::string_lab::TokenId;

const OFF_LOGIT: f32 = -1e4;

/// Logits that put all mass on the input token itself, i.e. each position
/// predicts that the next token repeats the previous one.
pub fn echo_logits(inputs: &[TokenId], vocab: usize) -> Vec<Vec<f32>> {
    inputs
        .iter()
        .map(|&t| {
            let mut row = vec![OFF_LOGIT; vocab];
            row[t as usize] = 0.0;
            row
        })
        .collect()
}

/// In-process twin of the echo-stub bridge.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EchoModel {
    pub info: BridgeInfo,
}

impl EchoModel {
    pub fn new(vocab_size: usize, bos_token_id: TokenId, max_seq_len: usize) -> Self {
        Self {
            info: BridgeInfo {
                vocab_size,
                max_seq_len,
                bos_token_id,
                name: "echo".into(),
            },
        }
    }

    fn check(&self, tokens: &[TokenId]) -> Result<()> {
        if tokens.is_empty() || tokens.len() > self.info.max_seq_len {
            return Err(LabError::invalid(format!("input length {} outside 1..={}", tokens.len(), self.info.max_seq_len)));
        }
        if let Some(t) = tokens.iter().find(|&&t| t as usize >= self.info.vocab_size) {
            return Err(LabError::invalid(format!("token {t} outside vocabulary")));
        }
        Ok(())
    }

    fn loss(&self, inputs: &[TokenId], targets: &[TokenId]) -> Result<f64> {
        self.check(inputs)?;
        if inputs.len() != targets.len() {
            return Err(LabError::invalid("inputs and targets differ in length"));
        }
        let v = self.info.vocab_size as f64;
        // log-softmax of the echo row: 0 logit on the input, OFF_LOGIT elsewhere.
        let lse = (1.0 + (v - 1.0) * (OFF_LOGIT as f64).exp()).ln();
        let total: f64 = inputs
            .iter()
            .zip(targets)
            .map(|(i, t)| lse - if i == t { 0.0 } else { OFF_LOGIT as f64 })
            .sum();
        Ok(total / inputs.len() as f64)
    }

    fn handle(&self, req: &Request) -> Result<Value> {
        let tokens = |key: &str| -> Result<Vec<TokenId>> {
            serde_json::from_value(req.payload.get(key).cloned().unwrap_or(Value::Null))
                .map_err(|e| LabError::invalid(format!("payload field {key}: {e}")))
        };
        match req.op.as_str() {
            "info" | "init" => Ok(serde_json::to_value(&self.info)?),
            "forward" => {
                let t = tokens("tokens")?;
                self.check(&t)?;
                Ok(json!({ "logits": echo_logits(&t, self.info.vocab_size), "truncated": false }))
            }
            "train_step" => {
                let batch = req
                    .payload
                    .get("batch")
                    .and_then(Value::as_array)
                    .filter(|b| !b.is_empty())
                    .ok_or_else(|| LabError::invalid("train_step needs a non-empty batch"))?;
                let mut loss = 0.0;
                for item in batch {
                    let get = |k: &str| -> Result<Vec<TokenId>> {
                        serde_json::from_value(item.get(k).cloned().unwrap_or(Value::Null))
                            .map_err(|e| LabError::invalid(format!("batch field {k}: {e}")))
                    };
                    loss += self.loss(&get("inputs")?, &get("targets")?)?;
                }
                Ok(json!({ "loss": loss / batch.len() as f64 }))
            }
            "save" => {
                let path = req
                    .payload
                    .get("path")
                    .and_then(Value::as_str)
                    .ok_or_else(|| LabError::invalid("save needs a path"))?;
                std::fs::write(path, serde_json::to_string(&self.info)?)?;
                Ok(json!({ "status": "saved" }))
            }
            other => Err(LabError::invalid(format!("unknown op {other:?}"))),
        }
    }
}

impl CausalLm for EchoModel {
    fn vocab_size(&self) -> usize {
        self.info.vocab_size
    }

    fn bos_token_id(&self) -> TokenId {
        self.info.bos_token_id
    }

    fn max_seq_len(&self) -> usize {
        self.info.max_seq_len
    }

    fn forward_inputs(&self, inputs: &[TokenId]) -> Result<Distributions> {
        self.check(inputs)?;
        logits_to_distributions(&echo_logits(inputs, self.info.vocab_size), self.info.vocab_size)
    }
}

/// Answers requests from `input` until end of stream. Malformed requests get
/// an error reply and the loop continues.
pub fn serve_echo(model: &EchoModel, input: impl BufRead, mut output: impl Write) -> Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Request>(&line) {
            Ok(req) => match model.handle(&req) {
                Ok(v) => Reply::ok(req.id, v),
                Err(e) => Reply::err(Some(req.id), e.to_string()),
            },
            Err(e) => {
                let id = serde_json::from_str::<Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(Value::as_u64));
                Reply::err(id, format!("malformed request: {e}"))
            }
        };
        serde_json::to_writer(&mut output, &reply)?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serves_and_survives_garbage() {
        let m = EchoModel::new(8, 7, 64);
        let input = b"{\"id\":1,\"op\":\"info\",\"payload\":{}}\nnot json\n{\"id\":2,\"op\":\"nope\"}\n{\"id\":3,\"op\":\"forward\",\"payload\":{\"tokens\":[7,2]}}\n";
        let mut out = Vec::new();
        serve_echo(&m, &input[..], &mut out).unwrap();
        let replies: Vec<Reply> = String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(replies.len(), 4);
        assert!(replies[0].ok);
        assert_eq!(replies[1].id, None);
        assert!(!replies[1].ok);
        assert_eq!(replies[2].id, Some(2));
        assert!(!replies[2].ok);
        let logits: Vec<Vec<f32>> = serde_json::from_value(replies[3].result.as_ref().unwrap()["logits"].clone()).unwrap();
        assert_eq!(logits.len(), 2);
        assert_eq!(logits[1][2], 0.0);
    }

    #[test]
    fn echo_loss_is_finite_and_small_for_repeats() {
        let m = EchoModel::new(8, 7, 64);
        assert!(m.loss(&[1, 2], &[1, 2]).unwrap() < 1e-3);
        let miss = m.loss(&[1, 2], &[3, 4]).unwrap();
        assert!(miss.is_finite() && miss > 1000.0);
    }
}
