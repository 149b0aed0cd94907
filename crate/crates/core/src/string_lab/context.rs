//! "Natural" filler text used around or alongside random strings.
//!
//! The default source is synthetic Zipfian text over the vocabulary minus the
//! excluded ids (alphabet and BOS). A file source maps each byte of a plain
//! text file onto the allowed ids (`allowed[byte % allowed.len()]`) and wraps
//! around at the end of the file.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::alphabet::TokenId;
use crate::error::{LabError, Result};
use crate::rng::LabRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ContextSource {
    Zipf { exponent: f64, seed: u64 },
    File { path: PathBuf },
}

impl Default for ContextSource {
    fn default() -> Self {
        ContextSource::Zipf {
            exponent: 1.1,
            seed: 0,
        }
    }
}

impl ContextSource {
    pub fn stream(&self, vocab_size: usize, excluded: &[TokenId]) -> Result<ContextStream> {
        let mut allowed: Vec<TokenId> = (0..vocab_size as TokenId).filter(|t| !excluded.contains(t)).collect();
        if allowed.is_empty() {
            return Err(LabError::invalid("no vocabulary left for context text"));
        }
        match self {
            ContextSource::Zipf { exponent, seed } => {
                let mut rng = LabRng::derive(*seed, "zipf-context");
                // Rank order is a seeded permutation so frequent ids are not
                // simply the smallest ones.
                rng.shuffle(&mut allowed);
                let weights: Vec<f64> = (1..=allowed.len()).map(|r| (r as f64).powf(-exponent)).collect();
                let total: f64 = weights.iter().sum();
                let mut cdf = Vec::with_capacity(weights.len());
                let mut acc = 0.0;
                for w in weights {
                    acc += w / total;
                    cdf.push(acc);
                }
                Ok(ContextStream::Zipf { allowed, cdf, rng })
            }
            ContextSource::File { path } => {
                let bytes = std::fs::read(path)?;
                if bytes.is_empty() {
                    return Err(LabError::invalid(format!("context file {} is empty", path.display())));
                }
                let tokens = bytes.iter().map(|&b| allowed[b as usize % allowed.len()]).collect();
                Ok(ContextStream::File { tokens, cursor: 0 })
            }
        }
    }
}

pub enum ContextStream {
    Zipf {
        allowed: Vec<TokenId>,
        cdf: Vec<f64>,
        rng: LabRng,
    },
    File {
        tokens: Vec<TokenId>,
        cursor: usize,
    },
}

impl ContextStream {
    pub fn next_token(&mut self) -> TokenId {
        match self {
            ContextStream::Zipf { allowed, cdf, rng } => {
                let u = rng.uniform_f64();
                let idx = cdf.partition_point(|&c| c <= u).min(allowed.len() - 1);
                allowed[idx]
            }
            ContextStream::File { tokens, cursor } => {
                let t = tokens[*cursor];
                *cursor = (*cursor + 1) % tokens.len();
                t
            }
        }
    }

    pub fn take(&mut self, n: usize) -> Vec<TokenId> {
        (0..n).map(|_| self.next_token()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zipf_avoids_excluded_ids() {
        let excluded: Vec<TokenId> = (0..26).chain([511]).collect();
        let mut s = ContextSource::default().stream(512, &excluded).unwrap();
        let toks = s.take(5000);
        assert!(toks.iter().all(|t| !excluded.contains(t)));
    }

    #[test]
    fn zipf_is_skewed() {
        let mut s = ContextSource::default().stream(512, &[]).unwrap();
        let mut counts = vec![0usize; 512];
        for t in s.take(50_000) {
            counts[t as usize] += 1;
        }
        counts.sort_unstable_by(|a, b| b.cmp(a));
        assert!(counts[0] > 10 * counts[100].max(1));
    }

    #[test]
    fn file_source_wraps() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        std::fs::write(&p, b"ab").unwrap();
        let mut s = ContextSource::File { path: p }.stream(10, &[0, 1]).unwrap();
        let t = s.take(4);
        assert_eq!(t[0], t[2]);
        assert_eq!(t[1], t[3]);
        assert!(t.iter().all(|&x| x >= 2));
    }
}
