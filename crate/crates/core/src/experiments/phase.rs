use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::trainer::EpochTrace;

/// Thresholds for recognising the guessing plateau.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseTolerances {
    /// Accuracy band half-width as a fraction of `1 - 1/ℓ`.
    pub acc_rel: f64,
    /// The accuracy band is at least this many binomial standard errors of
    /// a `1/ℓ` guesser over the evaluated span (0 disables).
    pub acc_noise_z: f64,
    /// Entropy band half-width as a fraction of `ln ℓ`.
    pub entropy_rel: f64,
    pub p_min: f64,
    pub margin: f64,
}

impl Default for PhaseTolerances {
    fn default() -> Self {
        Self {
            acc_rel: 0.05,
            acc_noise_z: 2.0,
            entropy_rel: 0.1,
            p_min: 0.9,
            margin: 0.05,
        }
    }
}

impl PhaseTolerances {
    pub fn acc_band(&self, ell: usize, span_len: usize) -> f64 {
        let p = 1.0 / ell as f64;
        let rel = self.acc_rel * (1.0 - p);
        if span_len == 0 {
            return rel;
        }
        rel.max(self.acc_noise_z * (p * (1.0 - p) / span_len as f64).sqrt())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phases {
    /// Epochs (inclusive) of the longest run of traces at guess level.
    pub guess_plateau: Option<RangeInclusive<usize>>,
    /// First epoch from which accuracy stays above `1/ℓ + margin`.
    pub memorisation_onset: Option<usize>,
}

impl Phases {
    /// Traces inside the plateau.
    pub fn plateau_traces<'a>(&self, trace: &'a [EpochTrace]) -> Vec<&'a EpochTrace> {
        match &self.guess_plateau {
            Some(r) => trace.iter().filter(|t| r.contains(&t.epoch)).collect(),
            None => Vec::new(),
        }
    }
}

pub fn phase_detect(trace: &[EpochTrace], ell: usize, tol: &PhaseTolerances) -> Result<Phases> {
    if trace.is_empty() {
        return Err(LabError::invalid("empty trace"));
    }
    if ell < 2 {
        return Err(LabError::invalid("alphabet size must be at least 2"));
    }
    let base = 1.0 / ell as f64;
    let h_max = (ell as f64).ln();
    let span = trace[0].correct.len();
    let band = tol.acc_band(ell, span);
    let guessing = |t: &EpochTrace| {
        (t.accuracy - base).abs() <= band && (t.entropy - h_max).abs() <= tol.entropy_rel * h_max && t.agg_prob >= tol.p_min
    };
    let mut best: Option<(usize, usize)> = None;
    let mut start = None;
    for (j, t) in trace.iter().enumerate() {
        if guessing(t) {
            let s = *start.get_or_insert(j);
            if best.is_none_or(|(a, b)| j - s > b - a) {
                best = Some((s, j));
            }
        } else {
            start = None;
        }
    }
    let mut onset = None;
    for t in trace.iter().rev() {
        if t.accuracy > base + tol.margin {
            onset = Some(t.epoch);
        } else {
            break;
        }
    }
    Ok(Phases {
        guess_plateau: best.map(|(a, b)| trace[a].epoch..=trace[b].epoch),
        memorisation_onset: onset,
    })
}
