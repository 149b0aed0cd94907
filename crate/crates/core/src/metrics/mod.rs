//! Measurements over model outputs and training traces.
//!
//! Functions taking a [`Distributions`] are pure; the row `i` of the
//! distributions must be the model's prediction for `targets[i]`. The
//! model-facing wrappers evaluate only the random span of a [`TokenString`].

mod order;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::lm::CausalLm;
use crate::micro_lm::{argmax, Distributions};
use crate::string_lab::{Alphabet, TokenId, TokenString};

pub use order::{
    average_ranks, contiguous_recall, discrepancy, discrepancy_against, memorisation_epochs, order_correlation,
    spearman_rank, DiscrepancyConfig, MemorisationEpochs, OrderCorrelation,
};

/// Probability floor used when a renormalised model probability is zero.
pub const KLD_CLAMP: f64 = 1e-12;

/// Per-position greedy correctness at one epoch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectnessBitmap {
    pub epoch: usize,
    pub bits: Vec<bool>,
}

impl CorrectnessBitmap {
    pub fn new(epoch: usize, bits: Vec<bool>) -> Self {
        Self { epoch, bits }
    }

    pub fn from_predictions(epoch: usize, predicted: &[TokenId], targets: &[TokenId]) -> Result<Self> {
        if predicted.len() != targets.len() {
            return Err(LabError::invalid(format!(
                "{} predictions for {} targets",
                predicted.len(),
                targets.len()
            )));
        }
        Ok(Self::new(epoch, predicted.iter().zip(targets).map(|(p, t)| p == t).collect()))
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count_correct(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Compact `0`/`1` rendering used in traces.
    pub fn to_bitstring(&self) -> String {
        self.bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    pub fn from_bitstring(epoch: usize, s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(LabError::invalid(format!("bad bitmap character {other:?}"))),
            })
            .collect::<Result<_>>()?;
        Ok(Self::new(epoch, bits))
    }
}

pub fn accuracy(bitmap: &CorrectnessBitmap) -> Result<f64> {
    if bitmap.is_empty() {
        return Err(LabError::invalid("accuracy of an empty span"));
    }
    Ok(bitmap.count_correct() as f64 / bitmap.len() as f64)
}

/// Mean alphabet entropy with the number of positions that had no mass on the
/// alphabet (those are left out of the mean).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyStat {
    pub mean: f64,
    pub skipped: usize,
}

/// Mean KL divergence with the number of clamped alphabet probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KldStat {
    pub mean: f64,
    pub clamped: usize,
}

fn check_rows(dists: &Distributions, alphabet: &Alphabet) -> Result<()> {
    if dists.is_empty() {
        return Err(LabError::invalid("no positions to evaluate"));
    }
    if dists.vocab() != alphabet.vocab_size() {
        return Err(LabError::invalid(format!(
            "distributions over {} tokens, alphabet vocabulary {}",
            dists.vocab(),
            alphabet.vocab_size()
        )));
    }
    Ok(())
}

fn alphabet_mass(row: &[f32], alphabet: &Alphabet) -> f64 {
    alphabet.tokens().iter().map(|&t| row[t as usize] as f64).sum()
}

pub fn greedy_bitmap(dists: &Distributions, targets: &[TokenId], epoch: usize) -> Result<CorrectnessBitmap> {
    if dists.len() != targets.len() {
        return Err(LabError::invalid(format!("{} rows for {} targets", dists.len(), targets.len())));
    }
    let preds: Vec<TokenId> = (0..dists.len()).map(|i| dists.argmax(i)).collect();
    CorrectnessBitmap::from_predictions(epoch, &preds, targets)
}

/// Mean of `-ln P(target)`; probabilities are floored at the smallest
/// positive `f32` so an underflowed row gives a large but finite loss.
pub fn mean_nll(dists: &Distributions, targets: &[TokenId]) -> Result<f64> {
    if dists.len() != targets.len() || targets.is_empty() {
        return Err(LabError::invalid(format!("{} rows for {} targets", dists.len(), targets.len())));
    }
    let total: f64 = targets
        .iter()
        .enumerate()
        .map(|(i, &t)| -((dists.row(i)[t as usize].max(f32::MIN_POSITIVE)) as f64).ln())
        .sum();
    Ok(total / targets.len() as f64)
}

pub fn aggregate_alphabet_prob_of(dists: &Distributions, alphabet: &Alphabet) -> Result<f64> {
    check_rows(dists, alphabet)?;
    Ok(dists.rows().map(|r| alphabet_mass(r, alphabet)).sum::<f64>() / dists.len() as f64)
}

/// Entropy of each row restricted to the alphabet. With `renormalise` the
/// restricted row is rescaled to sum to one first; without it the raw
/// `-Σ p ln p` over the alphabet tokens is used.
pub fn mean_alphabet_entropy_of(dists: &Distributions, alphabet: &Alphabet, renormalise: bool) -> Result<EntropyStat> {
    check_rows(dists, alphabet)?;
    let mut total = 0.0;
    let mut skipped = 0;
    for row in dists.rows() {
        let mass = alphabet_mass(row, alphabet);
        if mass <= 0.0 {
            skipped += 1;
            continue;
        }
        let scale = if renormalise { mass } else { 1.0 };
        total -= alphabet
            .tokens()
            .iter()
            .map(|&t| {
                let p = row[t as usize] as f64 / scale;
                if p > 0.0 {
                    p * p.ln()
                } else {
                    0.0
                }
            })
            .sum::<f64>();
    }
    let used = dists.len() - skipped;
    if used == 0 {
        return Err(LabError::UndefinedResult("no position has mass on the alphabet".into()));
    }
    Ok(EntropyStat {
        mean: total / used as f64,
        skipped,
    })
}

/// `D_KL(P_A || P̃_M)` averaged over rows, with `P̃_M` the model row restricted
/// to the alphabet and renormalised. `P_A` is the alphabet's sampling
/// distribution.
pub fn kld_from_true_of(dists: &Distributions, alphabet: &Alphabet) -> Result<KldStat> {
    check_rows(dists, alphabet)?;
    let mut total = 0.0;
    let mut clamped = 0;
    for row in dists.rows() {
        let mass = alphabet_mass(row, alphabet);
        for (&t, &pa) in alphabet.tokens().iter().zip(alphabet.probs()) {
            if pa <= 0.0 {
                continue;
            }
            let mut q = if mass > 0.0 { row[t as usize] as f64 / mass } else { 0.0 };
            if q < KLD_CLAMP {
                q = KLD_CLAMP;
                clamped += 1;
            }
            total += pa * (pa / q).ln();
        }
    }
    Ok(KldStat {
        mean: total / dists.len() as f64,
        clamped,
    })
}

/// Trailing moving average (length `window`) of the per-row alphabet mass.
pub fn in_context_profile_of(dists: &Distributions, alphabet: &Alphabet, window: usize) -> Result<Vec<f64>> {
    check_rows(dists, alphabet)?;
    let n = dists.len();
    if window == 0 || n < window {
        return Err(LabError::invalid(format!("window {window} does not fit {n} positions")));
    }
    let mass: Vec<f64> = dists.rows().map(|r| alphabet_mass(r, alphabet)).collect();
    let mut out = Vec::with_capacity(n - window + 1);
    let mut acc: f64 = mass[..window].iter().sum();
    out.push(acc / window as f64);
    for j in window..n {
        acc += mass[j] - mass[j - window];
        out.push(acc / window as f64);
    }
    Ok(out)
}

/// One forward pass over a string, restricted to its random span.
pub struct SpanEval {
    dists: Distributions,
    targets: Vec<TokenId>,
}

impl SpanEval {
    pub fn new(model: &dyn CausalLm, s: &TokenString) -> Result<Self> {
        Self::of_tokens(model, s.tokens(), s.span())
    }

    pub fn of_tokens(model: &dyn CausalLm, tokens: &[TokenId], span: Range<usize>) -> Result<Self> {
        if span.is_empty() || span.end > tokens.len() {
            return Err(LabError::invalid(format!("span {span:?} invalid for length {}", tokens.len())));
        }
        let full = model.forward(&tokens[..span.end])?;
        let dists = if span.start == 0 { full } else { full.slice_rows(span.clone()) };
        Ok(Self {
            dists,
            targets: tokens[span].to_vec(),
        })
    }

    pub fn distributions(&self) -> &Distributions {
        &self.dists
    }

    pub fn targets(&self) -> &[TokenId] {
        &self.targets
    }

    pub fn bitmap(&self, epoch: usize) -> CorrectnessBitmap {
        let preds: Vec<TokenId> = self.dists.rows().map(argmax).collect();
        CorrectnessBitmap::from_predictions(epoch, &preds, &self.targets).expect("rows match targets")
    }

    pub fn loss(&self) -> f64 {
        mean_nll(&self.dists, &self.targets).expect("rows match targets")
    }
}

pub fn correctness(model: &dyn CausalLm, s: &TokenString, epoch: usize) -> Result<CorrectnessBitmap> {
    Ok(SpanEval::new(model, s)?.bitmap(epoch))
}

pub fn aggregate_alphabet_prob(model: &dyn CausalLm, s: &TokenString, alphabet: &Alphabet) -> Result<f64> {
    aggregate_alphabet_prob_of(SpanEval::new(model, s)?.distributions(), alphabet)
}

pub fn mean_alphabet_entropy(model: &dyn CausalLm, s: &TokenString, alphabet: &Alphabet) -> Result<EntropyStat> {
    mean_alphabet_entropy_of(SpanEval::new(model, s)?.distributions(), alphabet, true)
}

pub fn kld_from_true(model: &dyn CausalLm, s: &TokenString, alphabet: &Alphabet) -> Result<KldStat> {
    kld_from_true_of(SpanEval::new(model, s)?.distributions(), alphabet)
}

pub fn in_context_profile(model: &dyn CausalLm, s: &TokenString, alphabet: &Alphabet, window: usize) -> Result<Vec<f64>> {
    in_context_profile_of(SpanEval::new(model, s)?.distributions(), alphabet, window)
}
