use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::learner::{Learner, Sequence};
use super::trace::EpochTrace;
use super::{lr_at, BatchRegime, TrainConfig};
use crate::error::{LabError, Result};
use crate::lm::CausalLm;
use crate::metrics::{self, SpanEval};
use crate::micro_lm::Distributions;
use crate::rng::LabRng;
use crate::string_lab::{embed_in_context, partition_string, Alphabet, ContextStream, Placement, TokenId, TokenString};

/// Per-run state of the batch regime: filler streams and the current
/// embedding of the string.
struct Regime {
    kind: BatchRegime,
    bos: TokenId,
    stream: Option<ContextStream>,
    rng: LabRng,
    pieces: Vec<TokenString>,
    current: Option<TokenString>,
}

impl Regime {
    fn new(s: &TokenString, cfg: &TrainConfig, lm: &dyn CausalLm) -> Result<Self> {
        let bos = lm.bos_token_id();
        let mut excluded = s.alphabet()?.tokens().to_vec();
        excluded.push(bos);
        let stream = match &cfg.batch_regime {
            BatchRegime::InBatch { context, .. } | BatchRegime::Embedded { context, .. } => {
                Some(context.stream(lm.vocab_size(), &excluded)?)
            }
            _ => None,
        };
        let pieces = match cfg.batch_regime {
            BatchRegime::Partitioned { pieces } => partition_string(s, pieces)?,
            _ => Vec::new(),
        };
        if let BatchRegime::Embedded { context_size, .. } = cfg.batch_regime {
            if context_size < s.len() {
                return Err(LabError::invalid(format!("context size {context_size} below string length {}", s.len())));
            }
        }
        let mut r = Self {
            kind: cfg.batch_regime.clone(),
            bos,
            stream,
            rng: LabRng::derive(cfg.seed, "trainer-regime"),
            pieces,
            current: None,
        };
        if matches!(r.kind, BatchRegime::Embedded { .. }) {
            r.current = Some(r.fresh_embedding(s)?);
        }
        Ok(r)
    }

    fn fresh_embedding(&mut self, s: &TokenString) -> Result<TokenString> {
        let BatchRegime::Embedded { context_size, .. } = self.kind else {
            unreachable!("only the embedded regime embeds")
        };
        let fill = context_size - s.len();
        let ctx = self.stream.as_mut().expect("embedded regime has a stream").take(fill);
        let at = self.rng.below_usize(fill + 1);
        embed_in_context(s, &ctx, context_size, Placement::At(at), self.rng.next_u64())
    }

    fn next_batch(&mut self, s: &TokenString) -> Result<Vec<Sequence>> {
        Ok(match &self.kind {
            BatchRegime::Single => vec![Sequence::next_token(self.bos, s.tokens())],
            BatchRegime::Partitioned { .. } => self
                .pieces
                .iter()
                .map(|p| Sequence::next_token(self.bos, p.tokens()))
                .collect(),
            BatchRegime::InBatch { batch_size, .. } => {
                let bs = *batch_size;
                let stream = self.stream.as_mut().expect("in-batch regime has a stream");
                let mut batch = vec![Sequence::next_token(self.bos, s.tokens())];
                for _ in 1..bs {
                    batch.push(Sequence::next_token(self.bos, &stream.take(s.len())));
                }
                batch
            }
            BatchRegime::Embedded { .. } => {
                let e = self.fresh_embedding(s)?;
                let seq = Sequence::next_token(self.bos, e.tokens());
                self.current = Some(e);
                vec![seq]
            }
        })
    }

    /// The sequences whose random spans are evaluated.
    fn eval_views<'a>(&'a self, s: &'a TokenString) -> Vec<(&'a [TokenId], Range<usize>)> {
        match &self.kind {
            BatchRegime::Partitioned { .. } => self.pieces.iter().map(|p| (p.tokens(), 0..p.len())).collect(),
            BatchRegime::Embedded { .. } => {
                let e = self.current.as_ref().expect("embedding exists");
                vec![(e.tokens(), e.span())]
            }
            _ => vec![(s.tokens(), s.span())],
        }
    }
}

fn evaluate(lm: &dyn CausalLm, views: &[(&[TokenId], Range<usize>)], alphabet: &Alphabet, epoch: usize, lr: f64) -> Result<EpochTrace> {
    let mut probs = Vec::new();
    let mut targets = Vec::new();
    for (tokens, span) in views {
        let e = SpanEval::of_tokens(lm, tokens, span.clone())?;
        targets.extend_from_slice(e.targets());
        probs.extend_from_slice(e.distributions().probs());
    }
    let dists = Distributions::new(lm.vocab_size(), probs)?;
    let bitmap = metrics::greedy_bitmap(&dists, &targets, epoch)?;
    let ent = metrics::mean_alphabet_entropy_of(&dists, alphabet, true)?;
    let kld = metrics::kld_from_true_of(&dists, alphabet)?;
    let trace = EpochTrace {
        epoch,
        lr,
        loss: metrics::mean_nll(&dists, &targets)?,
        accuracy: metrics::accuracy(&bitmap)?,
        agg_prob: metrics::aggregate_alphabet_prob_of(&dists, alphabet)?,
        entropy: ent.mean,
        entropy_skipped: ent.skipped,
        kld: kld.mean,
        kld_clamped: kld.clamped,
        correct: bitmap.to_bitstring(),
    };
    if [trace.loss, trace.agg_prob, trace.entropy, trace.kld].iter().all(|v| v.is_finite()) {
        Ok(trace)
    } else {
        Err(LabError::NumericalFailure(format!("non-finite metrics at epoch {epoch}")))
    }
}

/// Trains `learner` on `s` and returns the evaluated epochs, starting with
/// the untrained epoch 0.
pub fn run_memorisation(learner: &mut dyn Learner, s: &TokenString, cfg: &TrainConfig) -> Result<Vec<EpochTrace>> {
    run_memorisation_with(learner, s, cfg, &mut |_, _| Ok(()))
}

/// As [`run_memorisation`], handing every trace to `observer` as soon as it
/// is computed (after the step, before the next one). If the run fails, the
/// observer has already seen every completed epoch.
pub fn run_memorisation_with(
    learner: &mut dyn Learner,
    s: &TokenString,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochTrace, &dyn Learner) -> Result<()>,
) -> Result<Vec<EpochTrace>> {
    cfg.validate()?;
    let alphabet = s.sampling_alphabet()?;
    if alphabet.vocab_size() != learner.vocab_size() {
        return Err(LabError::invalid(format!(
            "string vocabulary {} differs from model vocabulary {}",
            alphabet.vocab_size(),
            learner.vocab_size()
        )));
    }
    let mut regime = Regime::new(s, cfg, learner)?;
    let mut traces = Vec::new();
    let t0 = evaluate(learner, &regime.eval_views(s), &alphabet, 0, 0.0)?;
    observer(&t0, learner)?;
    traces.push(t0);
    let mut full_streak = 0;
    for epoch in 0..cfg.epochs {
        let lr = lr_at(cfg, epoch)?;
        let batch = regime.next_batch(s)?;
        learner.train_step(&batch, lr)?;
        let done = epoch + 1;
        if done % cfg.eval_every == 0 || done == cfg.epochs {
            let t = evaluate(learner, &regime.eval_views(s), &alphabet, done, lr)?;
            observer(&t, learner)?;
            full_streak = if t.accuracy == 1.0 { full_streak + 1 } else { 0 };
            traces.push(t);
            if cfg.stop_after_full.is_some_and(|k| full_streak >= k) {
                break;
            }
        }
    }
    Ok(traces)
}

/// Accuracy of every string across a sequential run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequentialRun {
    pub epochs_per_string: usize,
    /// `accuracy[j][g]` is string `j`'s accuracy after global epoch `g`
    /// (`g = 0` is the untrained model); `None` before string `j` is reached.
    pub accuracy: Vec<Vec<Option<f64>>>,
}

impl SequentialRun {
    /// Epochs of its own training after which string `j` first reached
    /// `threshold` accuracy.
    pub fn epochs_to(&self, j: usize, threshold: f64) -> Option<usize> {
        let start = j * self.epochs_per_string;
        (1..=self.epochs_per_string).find(|&e| self.accuracy[j][start + e].is_some_and(|a| a >= threshold))
    }

    /// Highest accuracy string `j` ever reached.
    pub fn peak(&self, j: usize) -> f64 {
        self.accuracy[j].iter().flatten().copied().fold(0.0, f64::max)
    }

    pub fn final_accuracy(&self, j: usize) -> Option<f64> {
        *self.accuracy[j].last()?
    }
}

/// Trains on each string for `epochs_per_string` epochs in turn. Each string
/// gets a fresh learning-rate schedule and fresh optimizer moments; after
/// every epoch all strings seen so far are evaluated.
pub fn run_sequential(
    learner: &mut dyn Learner,
    strings: &[TokenString],
    epochs_per_string: usize,
    cfg: &TrainConfig,
) -> Result<SequentialRun> {
    if strings.len() < 2 {
        return Err(LabError::invalid("sequential training needs at least two strings"));
    }
    let first = &strings[0];
    if strings.iter().any(|s| s.len() != first.len() || s.recipe().alphabet != first.recipe().alphabet) {
        return Err(LabError::invalid("sequential strings must share length and alphabet"));
    }
    let cfg = TrainConfig {
        epochs: epochs_per_string,
        eval_every: 1,
        stop_after_full: None,
        ..cfg.clone()
    };
    cfg.validate()?;
    let total = strings.len() * epochs_per_string;
    let mut accuracy = vec![vec![None; total + 1]; strings.len()];
    let score = |lm: &dyn CausalLm, s: &TokenString| -> Result<f64> { metrics::accuracy(&metrics::correctness(lm, s, 0)?) };
    accuracy[0][0] = Some(score(learner, first)?);
    for (j, s) in strings.iter().enumerate() {
        learner.reset_optimizer()?;
        let mut regime = Regime::new(s, &cfg, learner)?;
        for epoch in 0..epochs_per_string {
            let batch = regime.next_batch(s)?;
            learner.train_step(&batch, lr_at(&cfg, epoch)?)?;
            let g = j * epochs_per_string + epoch + 1;
            for (i, seen) in strings[..=j].iter().enumerate() {
                accuracy[i][g] = Some(score(learner, seen)?);
            }
        }
    }
    Ok(SequentialRun {
        epochs_per_string,
        accuracy,
    })
}
