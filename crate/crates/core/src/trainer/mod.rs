//! Training loops for every memorisation regime.

mod learner;
mod optim;
mod run;
mod trace;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::string_lab::ContextSource;

pub use learner::{Learner, MicroLearner, Sequence};
pub use optim::{Adam, AdamConfig};
pub use run::{run_memorisation, run_memorisation_with, run_sequential, SequentialRun};
pub use trace::{read_trace_jsonl, write_summary_csv, write_trace_jsonl, EpochTrace, JsonlTraceWriter, SUMMARY_COLUMNS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    LinearDecayToZero,
    Constant,
}

/// How each optimizer step sees the string.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum BatchRegime {
    /// The whole string is one training sequence.
    Single,
    /// The string is cut into equal pieces that form one batch.
    Partitioned { pieces: usize },
    /// The string plus `batch_size - 1` fresh filler sequences of the same length.
    InBatch {
        batch_size: usize,
        #[serde(default)]
        context: ContextSource,
    },
    /// The string at a fresh random position inside `context_size` tokens of filler.
    Embedded {
        context_size: usize,
        #[serde(default)]
        context: ContextSource,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub initial_lr: f64,
    pub lr_schedule: LrSchedule,
    #[serde(default)]
    pub adam: AdamConfig,
    pub batch_regime: BatchRegime,
    pub eval_every: usize,
    pub seed: u64,
    /// Stop once this many consecutive evaluations reached accuracy 1.
    #[serde(default)]
    pub stop_after_full: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            initial_lr: 1e-3,
            lr_schedule: LrSchedule::LinearDecayToZero,
            adam: AdamConfig::default(),
            batch_regime: BatchRegime::Single,
            eval_every: 1,
            seed: 0,
            stop_after_full: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(LabError::invalid("epochs must be at least 1"));
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(LabError::invalid(format!("initial_lr must be positive, got {}", self.initial_lr)));
        }
        if self.eval_every == 0 {
            return Err(LabError::invalid("eval_every must be at least 1"));
        }
        if self.stop_after_full == Some(0) {
            return Err(LabError::invalid("stop_after_full must be at least 1"));
        }
        match self.batch_regime {
            BatchRegime::Partitioned { pieces: 0 } => Err(LabError::invalid("pieces must be at least 1")),
            BatchRegime::InBatch { batch_size: 0, .. } => Err(LabError::invalid("batch_size must be at least 1")),
            _ => Ok(()),
        }
    }
}

/// Learning rate for the optimizer step taken during `epoch` (0-based).
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(LabError::invalid(format!("epoch {epoch} outside 0..{}", cfg.epochs)));
    }
    Ok(match cfg.lr_schedule {
        LrSchedule::Constant => cfg.initial_lr,
        LrSchedule::LinearDecayToZero => cfg.initial_lr * (1.0 - epoch as f64 / cfg.epochs as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_schedule_endpoints() {
        let cfg = TrainConfig {
            epochs: 50,
            initial_lr: 2e-3,
            ..TrainConfig::default()
        };
        assert_eq!(lr_at(&cfg, 0).unwrap(), 2e-3);
        assert!((lr_at(&cfg, 49).unwrap() - 2e-3 / 50.0).abs() < 1e-18);
        assert!(lr_at(&cfg, 50).is_err());
        let c = TrainConfig {
            lr_schedule: LrSchedule::Constant,
            ..cfg
        };
        assert_eq!(lr_at(&c, 49).unwrap(), 2e-3);
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = TrainConfig {
            batch_regime: BatchRegime::Embedded {
                context_size: 1024,
                context: ContextSource::default(),
            },
            ..TrainConfig::default()
        };
        let back: TrainConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { initial_lr: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig {
            batch_regime: BatchRegime::Partitioned { pieces: 0 },
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
    }
}
