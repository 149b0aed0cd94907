use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::rng::LabRng;

pub type TokenId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphabetKind {
    /// Token ids `0..ell`, standing in for the first `ell` lowercase letters.
    Latin,
    /// `ell` distinct ids drawn uniformly from the whole vocabulary.
    RandomSubset,
}

/// How an alphabet was built; enough to rebuild it exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlphabetSpec {
    pub ell: usize,
    pub vocab_size: usize,
    pub kind: AlphabetKind,
    pub seed: u64,
}

impl AlphabetSpec {
    pub fn build(&self) -> Result<Alphabet> {
        make_alphabet(self.ell, self.vocab_size, self.kind, self.seed)
    }
}

/// The token subset strings are drawn from, with its sampling distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alphabet {
    tokens: Vec<TokenId>,
    probs: Vec<f64>,
    vocab_size: usize,
    spec: AlphabetSpec,
}

impl Alphabet {
    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn spec(&self) -> &AlphabetSpec {
        &self.spec
    }

    pub fn contains(&self, t: TokenId) -> bool {
        self.tokens.contains(&t)
    }

    pub fn index_of(&self, t: TokenId) -> Option<usize> {
        self.tokens.iter().position(|&x| x == t)
    }

    pub fn is_uniform(&self) -> bool {
        let u = 1.0 / self.len() as f64;
        self.probs.iter().all(|&p| (p - u).abs() < 1e-15)
    }

    /// Same token set with a different sampling distribution.
    pub fn with_probs(&self, probs: Vec<f64>) -> Result<Alphabet> {
        validate_probs(&probs, self.tokens.len())?;
        Ok(Alphabet {
            probs,
            ..self.clone()
        })
    }

    pub fn sample(&self, rng: &mut LabRng) -> TokenId {
        if self.is_uniform() {
            self.tokens[rng.below_usize(self.len())]
        } else {
            self.tokens[rng.categorical(&self.probs)]
        }
    }

    /// Membership mask over the whole vocabulary.
    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.vocab_size];
        for &t in &self.tokens {
            m[t as usize] = true;
        }
        m
    }
}

fn validate_probs(probs: &[f64], n: usize) -> Result<()> {
    if probs.len() != n {
        return Err(LabError::invalid(format!("{} probabilities for {n} tokens", probs.len())));
    }
    if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return Err(LabError::invalid("alphabet probabilities must be finite and nonnegative"));
    }
    let s: f64 = probs.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(LabError::invalid(format!("alphabet probabilities sum to {s}")));
    }
    Ok(())
}

pub fn make_alphabet(ell: usize, vocab_size: usize, kind: AlphabetKind, seed: u64) -> Result<Alphabet> {
    if ell < 2 {
        return Err(LabError::invalid(format!("alphabet size {ell} < 2")));
    }
    if ell > vocab_size {
        return Err(LabError::invalid(format!("alphabet size {ell} exceeds vocabulary {vocab_size}")));
    }
    let tokens: Vec<TokenId> = match kind {
        AlphabetKind::Latin => (0..ell as TokenId).collect(),
        AlphabetKind::RandomSubset => {
            let mut rng = LabRng::derive(seed, "alphabet");
            rng.sample_distinct(vocab_size, ell).into_iter().map(|t| t as TokenId).collect()
        }
    };
    Ok(Alphabet {
        tokens,
        probs: vec![1.0 / ell as f64; ell],
        vocab_size,
        spec: AlphabetSpec {
            ell,
            vocab_size,
            kind,
            seed,
        },
    })
}
