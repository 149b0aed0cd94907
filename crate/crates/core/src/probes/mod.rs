//! Local-prefix versus global-context probes.
//!
//! For a target position `i` (0-based) and prefix length `k`, the model sees
//! `BOS ∘ r ∘ s[i-k..i]` where `r` replaces the global context `s[..i-k]`.
//! A position counts as recollected when `s[i]` is the strict plurality of
//! the greedy predictions over the samples.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::lm::CausalLm;
use crate::micro_lm::argmax;
use crate::rng::LabRng;
use crate::string_lab::{Alphabet, TokenId, TokenString};

pub const GC_SCALES: [f64; 5] = [0.0, 0.5, 1.0, 1.5, 2.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Every replacement token drawn independently from the alphabet distribution.
    Random,
    /// One alphabet token per sample, repeated over the whole replacement.
    Constant,
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Random => "random",
            Policy::Constant => "constant",
        })
    }
}

/// Serialised as a bare integer or the string `"full"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "PrefixLenRepr", try_from = "PrefixLenRepr")]
pub enum PrefixLen {
    Fixed(usize),
    /// The whole true prefix: nothing is replaced.
    Full,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PrefixLenRepr {
    Fixed(usize),
    Named(String),
}

impl From<PrefixLen> for PrefixLenRepr {
    fn from(k: PrefixLen) -> Self {
        match k {
            PrefixLen::Fixed(k) => PrefixLenRepr::Fixed(k),
            PrefixLen::Full => PrefixLenRepr::Named("full".into()),
        }
    }
}

impl TryFrom<PrefixLenRepr> for PrefixLen {
    type Error = String;

    fn try_from(r: PrefixLenRepr) -> std::result::Result<Self, String> {
        match r {
            PrefixLenRepr::Fixed(k) => Ok(PrefixLen::Fixed(k)),
            PrefixLenRepr::Named(s) if s == "full" => Ok(PrefixLen::Full),
            PrefixLenRepr::Named(s) => Err(format!("prefix length {s:?} is neither an integer nor \"full\"")),
        }
    }
}

impl PrefixLen {
    /// Local prefix length at position `i`, or `None` when `i` has too few
    /// preceding tokens.
    pub fn at(self, i: usize) -> Option<usize> {
        match self {
            PrefixLen::Full => Some(i),
            PrefixLen::Fixed(k) if k <= i => Some(k),
            PrefixLen::Fixed(_) => None,
        }
    }
}

impl fmt::Display for PrefixLen {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrefixLen::Fixed(k) => write!(f, "{k}"),
            PrefixLen::Full => f.write_str("full"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Positions {
    All,
    Subsample { count: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub prefix_lengths: Vec<PrefixLen>,
    pub policies: Vec<Policy>,
    pub gc_scales: Vec<f64>,
    pub samples_per_position: usize,
    pub positions: Positions,
    pub seed: u64,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self {
            prefix_lengths: (0..8).map(|e| PrefixLen::Fixed(1 << e)).collect(),
            policies: vec![Policy::Random],
            gc_scales: vec![1.0],
            samples_per_position: 10,
            positions: Positions::Subsample { count: 256, seed: 0 },
            seed: 0,
        }
    }
}

impl ProbeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.prefix_lengths.is_empty() || self.policies.is_empty() || self.gc_scales.is_empty() {
            return Err(LabError::invalid("probe spec needs prefix lengths, policies and gc scales"));
        }
        if self.prefix_lengths.contains(&PrefixLen::Fixed(0)) {
            return Err(LabError::invalid("prefix length must be at least 1"));
        }
        if self.samples_per_position == 0 {
            return Err(LabError::invalid("samples_per_position must be at least 1"));
        }
        if let Some(g) = self.gc_scales.iter().find(|g| !GC_SCALES.contains(g)) {
            return Err(LabError::invalid(format!("gc_scale {g} not one of {GC_SCALES:?}")));
        }
        if let Positions::Subsample { count: 0, .. } = self.positions {
            return Err(LabError::invalid("subsample count must be at least 1"));
        }
        Ok(())
    }

    /// Sorted positions probed within `span` (same set for every cell).
    pub fn select_positions(&self, span: std::ops::Range<usize>) -> Vec<usize> {
        let all: Vec<usize> = span.clone().collect();
        match self.positions {
            Positions::Subsample { count, seed } if count < all.len() => {
                let mut rng = LabRng::derive(seed, "probe-positions");
                let mut picked: Vec<usize> = rng.sample_distinct(all.len(), count).into_iter().map(|j| all[j]).collect();
                picked.sort_unstable();
                picked
            }
            _ => all,
        }
    }
}

/// Votes at one probed position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionTally {
    pub position: usize,
    pub target: TokenId,
    /// `(token, count)` sorted by token id.
    pub votes: Vec<(TokenId, usize)>,
    pub correct: bool,
}

impl PositionTally {
    fn from_votes(position: usize, target: TokenId, votes: BTreeMap<TokenId, usize>) -> Self {
        let hit = votes.get(&target).copied().unwrap_or(0);
        let correct = hit > 0 && votes.iter().all(|(&t, &c)| t == target || c < hit);
        Self {
            position,
            target,
            votes: votes.into_iter().collect(),
            correct,
        }
    }
}

fn replacement_len(global: usize, gc_scale: f64) -> usize {
    (gc_scale * global as f64).floor() as usize
}

fn probe_rng(seed: u64, i: usize, k: usize, policy: Policy, gc_scale: f64) -> LabRng {
    LabRng::derive(seed, &format!("probe/{i}/{k}/{policy}/{gc_scale}"))
}

#[allow(clippy::too_many_arguments)]
fn tally(
    lm: &dyn CausalLm,
    tokens: &[TokenId],
    alphabet: &Alphabet,
    i: usize,
    k: usize,
    policy: Policy,
    gc_scale: f64,
    samples: usize,
    seed: u64,
) -> Result<PositionTally> {
    let local = &tokens[i - k..i];
    let r_len = replacement_len(i - k, gc_scale);
    let mut votes = BTreeMap::new();
    if r_len == 0 {
        // Nothing random left: every sample sees the same input.
        let p = lm.next_token_dist(local)?;
        votes.insert(argmax(&p), samples);
    } else {
        let mut rng = probe_rng(seed, i, k, policy, gc_scale);
        let mut ctx = Vec::with_capacity(r_len + k);
        for _ in 0..samples {
            ctx.clear();
            match policy {
                Policy::Random => ctx.extend((0..r_len).map(|_| alphabet.sample(&mut rng))),
                Policy::Constant => {
                    let t = alphabet.sample(&mut rng);
                    ctx.extend(std::iter::repeat_n(t, r_len));
                }
            }
            ctx.extend_from_slice(local);
            *votes.entry(argmax(&lm.next_token_dist(&ctx)?)).or_insert(0) += 1;
        }
    }
    Ok(PositionTally::from_votes(i, tokens[i], votes))
}

/// Probes one position; `None` when `i` has fewer than `k` preceding tokens.
#[allow(clippy::too_many_arguments)]
pub fn probe_position(
    lm: &dyn CausalLm,
    s: &TokenString,
    i: usize,
    k: PrefixLen,
    policy: Policy,
    gc_scale: f64,
    samples: usize,
    seed: u64,
) -> Result<Option<PositionTally>> {
    if i >= s.len() {
        return Err(LabError::invalid(format!("position {i} outside string of length {}", s.len())));
    }
    if samples == 0 {
        return Err(LabError::invalid("samples must be at least 1"));
    }
    let alphabet = s.sampling_alphabet()?;
    match k.at(i) {
        None => Ok(None),
        Some(k) => tally(lm, s.tokens(), &alphabet, i, k, policy, gc_scale, samples, seed).map(Some),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeCell {
    pub k: PrefixLen,
    pub policy: Policy,
    pub gc_scale: f64,
    /// `None` when every position was skipped.
    pub accuracy: Option<f64>,
    pub positions_counted: usize,
    pub positions_skipped: usize,
    pub tallies: Vec<PositionTally>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub samples_per_position: usize,
    pub seed: u64,
    pub positions: Vec<usize>,
    pub cells: Vec<ProbeCell>,
}

impl ProbeReport {
    pub fn cell(&self, k: PrefixLen, policy: Policy, gc_scale: f64) -> Option<&ProbeCell> {
        self.cells
            .iter()
            .find(|c| c.k == k && c.policy == policy && c.gc_scale == gc_scale)
    }

    pub fn accuracy(&self, k: PrefixLen, policy: Policy, gc_scale: f64) -> Option<f64> {
        self.cell(k, policy, gc_scale)?.accuracy
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["k", "policy", "gc_scale", "accuracy", "positions_counted"])?;
        for c in &self.cells {
            w.write_record([
                c.k.to_string(),
                c.policy.to_string(),
                c.gc_scale.to_string(),
                c.accuracy.map(|a| a.to_string()).unwrap_or_default(),
                c.positions_counted.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Runs every `(k, policy, gc_scale)` combination of `spec` over the same
/// position set inside the random span of `s`.
pub fn probe_sweep(lm: &dyn CausalLm, s: &TokenString, spec: &ProbeSpec) -> Result<ProbeReport> {
    spec.validate()?;
    let alphabet = s.sampling_alphabet()?;
    let positions = spec.select_positions(s.span());
    let mut cells = Vec::new();
    for &k in &spec.prefix_lengths {
        for &policy in &spec.policies {
            for &gc_scale in &spec.gc_scales {
                let mut tallies = Vec::new();
                let mut skipped = 0;
                for &i in &positions {
                    match k.at(i) {
                        None => skipped += 1,
                        Some(kk) => tallies.push(tally(
                            lm,
                            s.tokens(),
                            &alphabet,
                            i,
                            kk,
                            policy,
                            gc_scale,
                            spec.samples_per_position,
                            spec.seed,
                        )?),
                    }
                }
                let counted = tallies.len();
                let hits = tallies.iter().filter(|t| t.correct).count();
                cells.push(ProbeCell {
                    k,
                    policy,
                    gc_scale,
                    accuracy: (counted > 0).then(|| hits as f64 / counted as f64),
                    positions_counted: counted,
                    positions_skipped: skipped,
                    tallies,
                });
            }
        }
    }
    Ok(ProbeReport {
        samples_per_position: spec.samples_per_position,
        seed: spec.seed,
        positions,
        cells,
    })
}
