use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::alphabet::{Alphabet, AlphabetSpec, TokenId};
use super::entropy::solve_oversample_prob;
use crate::error::{LabError, Result};
use crate::rng::LabRng;

const MAX_NGRAMS: usize = 1_000_000;

/// Everything needed to regenerate a string byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    #[serde(flatten)]
    pub kind: RecipeKind,
    pub alphabet: AlphabetSpec,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecipeKind {
    Uniform {
        n: usize,
    },
    EntropyMatched {
        n: usize,
        target_entropy: f64,
        /// Probability of the first alphabet token; the rest share `1 - p`.
        /// Solved from `target_entropy` when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        oversample_prob: Option<f64>,
    },
    Conditional {
        n: usize,
        ngram_order: usize,
        rel_prob_k: f64,
        map_seed: u64,
    },
    RepeatedSubstring {
        n: usize,
        unique_len: usize,
    },
    Embedded {
        base: Box<Recipe>,
        total_len: usize,
        span_start: usize,
        /// Filler tokens in order: the ones before the span, then the ones after.
        context_tokens: Vec<TokenId>,
    },
    Piece {
        base: Box<Recipe>,
        pieces: usize,
        index: usize,
    },
}

impl Recipe {
    pub fn len(&self) -> usize {
        match &self.kind {
            RecipeKind::Uniform { n }
            | RecipeKind::EntropyMatched { n, .. }
            | RecipeKind::Conditional { n, .. }
            | RecipeKind::RepeatedSubstring { n, .. } => *n,
            RecipeKind::Embedded { total_len, .. } => *total_len,
            RecipeKind::Piece { base, pieces, .. } => base.len() / pieces,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Span of the random (non-filler) tokens.
    pub fn span(&self) -> Range<usize> {
        match &self.kind {
            RecipeKind::Embedded { base, span_start, .. } => *span_start..span_start + base.len(),
            _ => 0..self.len(),
        }
    }

    /// The distribution the random tokens were drawn from, marginally.
    pub fn sampling_alphabet(&self) -> Result<Alphabet> {
        let base = self.alphabet.build()?;
        match &self.kind {
            RecipeKind::EntropyMatched {
                target_entropy,
                oversample_prob,
                ..
            } => {
                let p = resolve_oversample(base.len(), *target_entropy, *oversample_prob)?;
                base.with_probs(oversampled_probs(base.len(), p))
            }
            RecipeKind::Embedded { base: inner, .. } | RecipeKind::Piece { base: inner, .. } => inner.sampling_alphabet(),
            _ => Ok(base),
        }
    }

    /// Generates the string. The stored recipe has every solved parameter
    /// filled in.
    pub fn realize(&self) -> Result<TokenString> {
        let tokens = self.generate_tokens()?;
        let mut recipe = self.clone();
        if let RecipeKind::EntropyMatched {
            target_entropy,
            oversample_prob,
            ..
        } = &mut recipe.kind
        {
            *oversample_prob = Some(resolve_oversample(self.alphabet.ell, *target_entropy, *oversample_prob)?);
        }
        Ok(TokenString { tokens, recipe })
    }

    fn generate_tokens(&self) -> Result<Vec<TokenId>> {
        let alphabet = self.alphabet.build()?;
        let mut rng = LabRng::derive(self.seed, "string");
        match &self.kind {
            RecipeKind::Uniform { n } => {
                check_len(*n)?;
                Ok((0..*n).map(|_| alphabet.sample(&mut rng)).collect())
            }
            RecipeKind::EntropyMatched {
                n,
                target_entropy,
                oversample_prob,
            } => {
                check_len(*n)?;
                let p = resolve_oversample(alphabet.len(), *target_entropy, *oversample_prob)?;
                let a = alphabet.with_probs(oversampled_probs(alphabet.len(), p))?;
                Ok((0..*n).map(|_| a.sample(&mut rng)).collect())
            }
            RecipeKind::Conditional {
                n,
                ngram_order,
                rel_prob_k,
                map_seed,
            } => {
                let map = balanced_privileged_map(&alphabet, *ngram_order, *map_seed)?;
                conditional_tokens(&alphabet, &map, *rel_prob_k, *n, &mut rng)
            }
            RecipeKind::RepeatedSubstring { n, unique_len } => {
                check_len(*n)?;
                if *unique_len == 0 || n % unique_len != 0 {
                    return Err(LabError::invalid(format!("unique length {unique_len} does not divide {n}")));
                }
                let unit: Vec<TokenId> = (0..*unique_len).map(|_| alphabet.sample(&mut rng)).collect();
                Ok(unit.iter().copied().cycle().take(*n).collect())
            }
            RecipeKind::Embedded {
                base,
                total_len,
                span_start,
                context_tokens,
            } => {
                let inner = base.generate_tokens()?;
                let n = inner.len();
                if *total_len < n || span_start + n > *total_len || context_tokens.len() != total_len - n {
                    return Err(LabError::invalid("embedded recipe offsets are inconsistent"));
                }
                let mut out = Vec::with_capacity(*total_len);
                out.extend_from_slice(&context_tokens[..*span_start]);
                out.extend_from_slice(&inner);
                out.extend_from_slice(&context_tokens[*span_start..]);
                Ok(out)
            }
            RecipeKind::Piece { base, pieces, index } => {
                let full = base.generate_tokens()?;
                let len = check_pieces(full.len(), *pieces)?;
                if *index >= *pieces {
                    return Err(LabError::invalid(format!("piece {index} of {pieces}")));
                }
                Ok(full[index * len..(index + 1) * len].to_vec())
            }
        }
    }
}

fn check_len(n: usize) -> Result<()> {
    if n == 0 {
        Err(LabError::invalid("string length must be positive"))
    } else {
        Ok(())
    }
}

fn check_pieces(n: usize, pieces: usize) -> Result<usize> {
    if pieces == 0 || !n.is_multiple_of(pieces) {
        return Err(LabError::invalid(format!("{pieces} pieces do not divide length {n}")));
    }
    Ok(n / pieces)
}

fn oversampled_probs(ell: usize, p: f64) -> Vec<f64> {
    let other = (1.0 - p) / (ell as f64 - 1.0);
    let mut probs = vec![other; ell];
    probs[0] = p;
    // Push rounding slack onto the head so the vector sums to 1.
    let slack = 1.0 - probs.iter().sum::<f64>();
    probs[0] += slack;
    probs
}

/// A generated token sequence together with the recipe that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenString {
    tokens: Vec<TokenId>,
    recipe: Recipe,
}

impl TokenString {
    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn recipe(&self) -> &Recipe {
        &self.recipe
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn span(&self) -> Range<usize> {
        self.recipe.span()
    }

    pub fn span_tokens(&self) -> &[TokenId] {
        &self.tokens[self.span()]
    }

    pub fn alphabet(&self) -> Result<Alphabet> {
        self.recipe.alphabet.build()
    }

    pub fn sampling_alphabet(&self) -> Result<Alphabet> {
        self.recipe.sampling_alphabet()
    }

    /// Checks that the stored tokens are exactly what the recipe produces.
    pub fn verify(&self) -> Result<()> {
        if self.recipe.realize()?.tokens != self.tokens {
            return Err(LabError::invalid("stored tokens do not match their recipe"));
        }
        Ok(())
    }
}

fn resolve_oversample(ell: usize, target_entropy: f64, given: Option<f64>) -> Result<f64> {
    match given {
        Some(p) if p.is_finite() && (0.0..=1.0).contains(&p) => Ok(p),
        Some(p) => Err(LabError::invalid(format!("oversample probability {p} outside [0, 1]"))),
        None => solve_oversample_prob(ell, target_entropy),
    }
}

pub fn uniform_string(alphabet: &Alphabet, n: usize, seed: u64) -> Result<TokenString> {
    if !alphabet.is_uniform() {
        return Err(LabError::invalid("uniform_string needs a uniform alphabet"));
    }
    Recipe {
        kind: RecipeKind::Uniform { n },
        alphabet: alphabet.spec().clone(),
        seed,
    }
    .realize()
}

/// I.i.d. string over `alphabet` with its first token oversampled so that the
/// sampling distribution has entropy `target_entropy`.
pub fn entropy_matched_string(alphabet: &Alphabet, target_entropy: f64, n: usize, seed: u64) -> Result<TokenString> {
    let p = solve_oversample_prob(alphabet.len(), target_entropy)?;
    Recipe {
        kind: RecipeKind::EntropyMatched {
            n,
            target_entropy,
            oversample_prob: Some(p),
        },
        alphabet: alphabet.spec().clone(),
        seed,
    }
    .realize()
}

/// Privileged continuation token for every n-gram over an alphabet.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrivilegedMap {
    ell: usize,
    ngram_order: usize,
    /// Indexed by the n-gram read as a base-`ell` number of alphabet indices
    /// (oldest token most significant); values are alphabet indices.
    continuation: Vec<u32>,
}

impl PrivilegedMap {
    pub fn ngram_order(&self) -> usize {
        self.ngram_order
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn len(&self) -> usize {
        self.continuation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.continuation.is_empty()
    }

    /// Continuation (alphabet index) for an n-gram given as alphabet indices.
    pub fn continuation_of(&self, gram: &[usize]) -> usize {
        assert_eq!(gram.len(), self.ngram_order);
        self.continuation[self.gram_index(gram)] as usize
    }

    fn gram_index(&self, gram: &[usize]) -> usize {
        gram.iter().fold(0, |acc, &g| acc * self.ell + g)
    }

    /// How often each alphabet index appears as a continuation.
    pub fn continuation_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.ell];
        for &c in &self.continuation {
            counts[c as usize] += 1;
        }
        counts
    }
}

pub fn balanced_privileged_map(alphabet: &Alphabet, ngram_order: usize, seed: u64) -> Result<PrivilegedMap> {
    if ngram_order == 0 {
        return Err(LabError::invalid("n-gram order must be positive"));
    }
    let ell = alphabet.len();
    let total = (0..ngram_order)
        .try_fold(1usize, |acc, _| acc.checked_mul(ell).filter(|&v| v <= MAX_NGRAMS))
        .ok_or_else(|| LabError::Capacity(format!("{ell}^{ngram_order} n-grams exceed {MAX_NGRAMS}")))?;
    let per_token = total / ell;
    let mut continuation: Vec<u32> = (0..ell as u32).flat_map(|t| std::iter::repeat_n(t, per_token)).collect();
    LabRng::derive(seed, "privileged-map").shuffle(&mut continuation);
    Ok(PrivilegedMap {
        ell,
        ngram_order,
        continuation,
    })
}

/// Probability of the privileged continuation: `k / (ell - 1 + k)`.
pub fn privileged_prob(ell: usize, rel_prob_k: f64) -> f64 {
    rel_prob_k / (ell as f64 - 1.0 + rel_prob_k)
}

fn conditional_tokens(alphabet: &Alphabet, map: &PrivilegedMap, k: f64, n: usize, rng: &mut LabRng) -> Result<Vec<TokenId>> {
    if !(k >= 1.0) {
        return Err(LabError::invalid(format!("relative probability {k} < 1")));
    }
    if map.ell != alphabet.len() {
        return Err(LabError::invalid("privileged map built for a different alphabet"));
    }
    let order = map.ngram_order;
    if n <= order {
        return Err(LabError::invalid(format!("length {n} must exceed n-gram order {order}")));
    }
    let ell = alphabet.len();
    let p_k = privileged_prob(ell, k);
    let mut idx: Vec<usize> = (0..order).map(|_| rng.below_usize(ell)).collect();
    while idx.len() < n {
        let privileged = map.continuation_of(&idx[idx.len() - order..]);
        let next = if rng.uniform_f64() < p_k {
            privileged
        } else {
            // Uniform over the other ell - 1 tokens.
            let r = rng.below_usize(ell - 1);
            if r >= privileged {
                r + 1
            } else {
                r
            }
        };
        idx.push(next);
    }
    Ok(idx.into_iter().map(|i| alphabet.tokens()[i]).collect())
}

pub fn conditional_string(alphabet: &Alphabet, ngram_order: usize, map_seed: u64, rel_prob_k: f64, n: usize, seed: u64) -> Result<TokenString> {
    if !alphabet.is_uniform() {
        return Err(LabError::invalid("conditional strings need a uniform alphabet"));
    }
    Recipe {
        kind: RecipeKind::Conditional {
            n,
            ngram_order,
            rel_prob_k,
            map_seed,
        },
        alphabet: alphabet.spec().clone(),
        seed,
    }
    .realize()
}

pub fn repeated_substring_string(alphabet: &Alphabet, unique_len: usize, n: usize, seed: u64) -> Result<TokenString> {
    if !alphabet.is_uniform() {
        return Err(LabError::invalid("repeated substrings need a uniform alphabet"));
    }
    Recipe {
        kind: RecipeKind::RepeatedSubstring { n, unique_len },
        alphabet: alphabet.spec().clone(),
        seed,
    }
    .realize()
}

pub fn partition_string(s: &TokenString, pieces: usize) -> Result<Vec<TokenString>> {
    let len = check_pieces(s.len(), pieces)?;
    Ok((0..pieces)
        .map(|index| TokenString {
            tokens: s.tokens[index * len..(index + 1) * len].to_vec(),
            recipe: Recipe {
                kind: RecipeKind::Piece {
                    base: Box::new(s.recipe.clone()),
                    pieces,
                    index,
                },
                alphabet: s.recipe.alphabet.clone(),
                seed: s.recipe.seed,
            },
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    At(usize),
    Random,
}

/// Places `s` inside `total_len` tokens of filler taken from the front of
/// `context`.
pub fn embed_in_context(s: &TokenString, context: &[TokenId], total_len: usize, placement: Placement, seed: u64) -> Result<TokenString> {
    let n = s.len();
    if total_len < n {
        return Err(LabError::invalid(format!("total length {total_len} shorter than string {n}")));
    }
    let fill = total_len - n;
    if context.len() < fill {
        return Err(LabError::invalid(format!("context has {} tokens, need {fill}", context.len())));
    }
    let span_start = match placement {
        Placement::At(p) if p <= fill => p,
        Placement::At(p) => return Err(LabError::invalid(format!("position {p} leaves no room for the string"))),
        Placement::Random => LabRng::derive(seed, "embed-position").below_usize(fill + 1),
    };
    let context_tokens = context[..fill].to_vec();
    let mut tokens = Vec::with_capacity(total_len);
    tokens.extend_from_slice(&context_tokens[..span_start]);
    tokens.extend_from_slice(&s.tokens);
    tokens.extend_from_slice(&context_tokens[span_start..]);
    Ok(TokenString {
        tokens,
        recipe: Recipe {
            kind: RecipeKind::Embedded {
                base: Box::new(s.recipe.clone()),
                total_len,
                span_start,
                context_tokens,
            },
            alphabet: s.recipe.alphabet.clone(),
            seed,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::string_lab::{make_alphabet, AlphabetKind};

    fn latin(ell: usize) -> Alphabet {
        make_alphabet(ell, 512, AlphabetKind::Latin, 0).unwrap()
    }

    #[test]
    fn uniform_is_deterministic_and_in_alphabet() {
        let a = latin(26);
        let s1 = uniform_string(&a, 500, 3).unwrap();
        let s2 = uniform_string(&a, 500, 3).unwrap();
        assert_eq!(s1, s2);
        assert!(s1.tokens().iter().all(|t| a.contains(*t)));
        assert_ne!(s1.tokens(), uniform_string(&a, 500, 4).unwrap().tokens());
    }

    #[test]
    fn recipe_replays() {
        let a = latin(26);
        let s = conditional_string(&a, 2, 5, 4.0, 300, 9).unwrap();
        assert_eq!(s.recipe().realize().unwrap(), s);
        let json = serde_json::to_string(s.recipe()).unwrap();
        let back: Recipe = serde_json::from_str(&json).unwrap();
        assert_eq!(back.realize().unwrap().tokens(), s.tokens());
    }

    #[test]
    fn recipe_json_shape() {
        let s = uniform_string(&latin(2), 4, 1).unwrap();
        let v = serde_json::to_value(s.recipe()).unwrap();
        assert_eq!(v["kind"], "uniform");
        assert_eq!(v["n"], 4);
        assert_eq!(v["alphabet"]["ell"], 2);
        assert_eq!(v["alphabet"]["vocab_size"], 512);
        assert_eq!(v["alphabet"]["kind"], "latin");
        assert_eq!(v["seed"], 1);
    }

    #[test]
    fn privileged_map_examples() {
        let a2 = latin(2);
        for seed in 0..50 {
            let m = balanced_privileged_map(&a2, 2, seed).unwrap();
            assert_eq!(m.len(), 4);
            assert_eq!(m.continuation_counts(), vec![2, 2]);
        }
        let m = balanced_privileged_map(&latin(26), 1, 3).unwrap();
        let mut c: Vec<usize> = (0..26).map(|g| m.continuation_of(&[g])).collect();
        c.sort_unstable();
        assert_eq!(c, (0..26).collect::<Vec<_>>());
    }

    #[test]
    fn privileged_map_capacity() {
        assert!(matches!(balanced_privileged_map(&latin(26), 5, 0), Err(LabError::Capacity(_))));
        assert!(balanced_privileged_map(&latin(26), 4, 0).is_ok());
    }

    #[test]
    fn privileged_prob_formula() {
        assert!((privileged_prob(2, 4.0) - 0.8).abs() < 1e-15);
        assert!((privileged_prob(26, 1.0) - 1.0 / 26.0).abs() < 1e-15);
        assert!((privileged_prob(26, 16.0) - 16.0 / 41.0).abs() < 1e-15);
    }

    #[test]
    fn conditional_preconditions() {
        let a = latin(4);
        assert!(conditional_string(&a, 3, 0, 2.0, 3, 0).is_err());
        assert!(conditional_string(&a, 1, 0, 0.5, 30, 0).is_err());
    }

    #[test]
    fn repeated_substring_periodicity() {
        let a = latin(26);
        let s = repeated_substring_string(&a, 16, 64, 2).unwrap();
        let t = s.tokens();
        assert!((0..64).all(|i| t[i] == t[i % 16]));
        assert!(repeated_substring_string(&a, 24, 64, 2).is_err());
        let whole = repeated_substring_string(&a, 64, 64, 2).unwrap();
        assert_eq!(whole.len(), 64);
    }

    #[test]
    fn repeated_substring_distinct_ngrams() {
        let a = latin(26);
        let s = repeated_substring_string(&a, 256, 1024, 11).unwrap();
        let t = s.tokens();
        let mut grams: Vec<&[TokenId]> = (0..=t.len() - 8).map(|i| &t[i..i + 8]).collect();
        grams.sort_unstable();
        grams.dedup();
        assert!(grams.len() <= 256);
    }

    #[test]
    fn partition_pieces() {
        let a = latin(26);
        let s = uniform_string(&a, 32, 0).unwrap();
        let p = partition_string(&s, 4).unwrap();
        for (j, piece) in p.iter().enumerate() {
            assert_eq!(piece.tokens(), &s.tokens()[8 * j..8 * j + 8]);
            assert_eq!(piece.recipe().realize().unwrap().tokens(), piece.tokens());
        }
        assert_eq!(partition_string(&s, 1).unwrap()[0].tokens(), s.tokens());
        assert!(partition_string(&s, 5).is_err());
    }

    #[test]
    fn embedding() {
        let a = latin(26);
        let s = uniform_string(&a, 256, 0).unwrap();
        let ctx: Vec<TokenId> = (100..2000).collect();
        let same = embed_in_context(&s, &ctx, 256, Placement::Random, 1).unwrap();
        assert_eq!(same.tokens(), s.tokens());
        assert_eq!(same.span(), 0..256);
        let front = embed_in_context(&s, &ctx, 1024, Placement::At(0), 1).unwrap();
        assert_eq!(&front.tokens()[..256], s.tokens());
        let rand = embed_in_context(&s, &ctx, 2048, Placement::Random, 5).unwrap();
        assert_eq!(rand.span_tokens(), s.tokens());
        assert_eq!(rand.len(), 2048);
        assert_eq!(rand.recipe().realize().unwrap().tokens(), rand.tokens());
        assert!(embed_in_context(&s, &ctx[..10], 1024, Placement::Random, 5).is_err());
    }
}
