//! When and where tokens get memorised: epochs, rank correlation,
//! discrepancy and contiguous recall.

use serde::{Deserialize, Serialize};

use super::CorrectnessBitmap;
use crate::error::{LabError, Result};
use crate::rng::LabRng;

/// Per-position memorisation epochs; `None` is the never-memorised sentinel.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemorisationEpochs {
    /// First recorded epoch at which the position is predicted correctly.
    pub initial: Vec<Option<usize>>,
    /// First recorded epoch from which the position stays correct through the
    /// last recorded epoch.
    pub stable: Vec<Option<usize>>,
}

pub fn memorisation_epochs(bitmaps: &[CorrectnessBitmap]) -> Result<MemorisationEpochs> {
    let first = bitmaps.first().ok_or_else(|| LabError::invalid("no bitmaps"))?;
    let n = first.len();
    if bitmaps.iter().any(|b| b.len() != n) {
        return Err(LabError::invalid("bitmaps differ in length"));
    }
    let mut initial = vec![None; n];
    let mut stable = vec![None; n];
    for b in bitmaps {
        for (i, &bit) in b.bits.iter().enumerate() {
            if bit {
                initial[i].get_or_insert(b.epoch);
                stable[i].get_or_insert(b.epoch);
            } else {
                stable[i] = None;
            }
        }
    }
    Ok(MemorisationEpochs { initial, stable })
}

/// Ranks starting at 1, tied values sharing the mean of their ranks.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of the average-rank vectors.
pub fn spearman_rank(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(LabError::invalid(format!("need two equal vectors of length >= 2, got {} and {}", xs.len(), ys.len())));
    }
    if xs.iter().chain(ys).any(|v| v.is_nan()) {
        return Err(LabError::invalid("NaN in rank input"));
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(LabError::UndefinedResult("constant ranks".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderCorrelation {
    pub rho: f64,
    /// Positions left out because they carry the sentinel.
    pub excluded: usize,
}

/// Spearman correlation between position and epoch, skipping sentinels.
pub fn order_correlation(epochs: &[Option<usize>]) -> Result<OrderCorrelation> {
    let (pos, ep): (Vec<f64>, Vec<f64>) = epochs
        .iter()
        .enumerate()
        .filter_map(|(i, e)| e.map(|e| (i as f64, e as f64)))
        .unzip();
    Ok(OrderCorrelation {
        rho: spearman_rank(&pos, &ep)?,
        excluded: epochs.len() - pos.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyConfig {
    pub window_k: usize,
    pub num_positions: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for DiscrepancyConfig {
    fn default() -> Self {
        Self {
            window_k: 20,
            num_positions: 50,
            samples: 100,
            seed: 0,
        }
    }
}

/// Mean over `starts` of `(1/k) Σ_{j<k} (bits[s+j] − reference[s+j])`.
pub fn discrepancy_against(bits: &[bool], reference: &[bool], starts: &[usize], window_k: usize) -> Result<f64> {
    if bits.len() != reference.len() {
        return Err(LabError::invalid("bitmap and reference differ in length"));
    }
    if starts.is_empty() || window_k == 0 {
        return Err(LabError::invalid("need at least one window of positive size"));
    }
    let mut total = 0.0;
    for &s in starts {
        if s + window_k > bits.len() {
            return Err(LabError::invalid(format!("window at {s} overruns length {}", bits.len())));
        }
        let diff: i64 = (s..s + window_k).map(|i| bits[i] as i64 - reference[i] as i64).sum();
        total += diff as f64 / window_k as f64;
    }
    Ok(total / starts.len() as f64)
}

/// Compares the bitmap's windowed correctness with random bitmaps holding
/// the same number of correct positions. Each draw uses a fresh random
/// reference and fresh window starts (uniform over starts that fit); the
/// result is the mean over draws.
pub fn discrepancy(bitmap: &CorrectnessBitmap, cfg: &DiscrepancyConfig) -> Result<f64> {
    let n = bitmap.len();
    if cfg.window_k == 0 || cfg.window_k > n {
        return Err(LabError::invalid(format!("window {} does not fit length {n}", cfg.window_k)));
    }
    if cfg.num_positions == 0 || cfg.samples == 0 {
        return Err(LabError::invalid("num_positions and samples must be positive"));
    }
    let ones = bitmap.count_correct();
    let mut rng = LabRng::derive(cfg.seed, "discrepancy");
    let span = n - cfg.window_k + 1;
    let mut total = 0.0;
    let mut reference = vec![false; n];
    let mut starts = vec![0; cfg.num_positions];
    for _ in 0..cfg.samples {
        reference.iter_mut().for_each(|b| *b = false);
        for i in rng.sample_distinct(n, ones) {
            reference[i] = true;
        }
        starts.iter_mut().for_each(|s| *s = rng.below_usize(span));
        total += discrepancy_against(&bitmap.bits, &reference, &starts, cfg.window_k)?;
    }
    Ok(total / cfg.samples as f64)
}

/// Fraction of start positions whose next `window` tokens are all predicted
/// correctly. Greedy generation from the true prefix reproduces the true
/// tokens exactly while it stays correct, so a window is recalled iff every
/// teacher-forced prediction in it is correct.
pub fn contiguous_recall(bitmap: &CorrectnessBitmap, window: usize) -> Result<f64> {
    let n = bitmap.len();
    if window == 0 || n < window {
        return Err(LabError::invalid(format!("window {window} does not fit length {n}")));
    }
    let mut run = 0usize;
    let mut hits = 0usize;
    // Walk backwards tracking the run of correct positions starting at i.
    for i in (0..n).rev() {
        run = if bitmap.bits[i] { run + 1 } else { 0 };
        if i + window <= n && run >= window {
            hits += 1;
        }
    }
    Ok(hits as f64 / (n - window + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bm(epoch: usize, bits: &[u8]) -> CorrectnessBitmap {
        CorrectnessBitmap::new(epoch, bits.iter().map(|&b| b == 1).collect())
    }

    #[test]
    fn epochs_follow_definitions() {
        let pattern = [0, 1, 0, 1, 1];
        let maps: Vec<_> = pattern.iter().enumerate().map(|(e, &b)| bm(e + 1, &[b, 1, 0])).collect();
        let m = memorisation_epochs(&maps).unwrap();
        assert_eq!(m.initial, vec![Some(2), Some(1), None]);
        assert_eq!(m.stable, vec![Some(4), Some(1), None]);
    }

    #[test]
    fn flickering_at_the_end_is_sentinel() {
        let maps = vec![bm(0, &[1]), bm(1, &[1]), bm(2, &[0])];
        let m = memorisation_epochs(&maps).unwrap();
        assert_eq!(m.initial, vec![Some(0)]);
        assert_eq!(m.stable, vec![None]);
        assert!(memorisation_epochs(&[]).is_err());
        assert!(memorisation_epochs(&[bm(0, &[1]), bm(1, &[1, 0])]).is_err());
    }

    #[test]
    fn spearman_monotone_and_degenerate() {
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let up: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let down: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((spearman_rank(&xs, &up).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman_rank(&xs, &down).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(spearman_rank(&xs, &[1.0; 10]), Err(LabError::UndefinedResult(_))));
        assert!(spearman_rank(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn average_ranks_share_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn order_correlation_skips_sentinels() {
        let c = order_correlation(&[Some(1), None, Some(3), Some(5)]).unwrap();
        assert_eq!(c.excluded, 1);
        assert!((c.rho - 1.0).abs() < 1e-12);
    }

    #[test]
    fn discrepancy_zero_cases() {
        let bits: Vec<bool> = (0..40).map(|i| i % 3 == 0).collect();
        assert_eq!(discrepancy_against(&bits, &bits, &[0, 5, 20], 20).unwrap(), 0.0);
        let all = CorrectnessBitmap::new(0, vec![true; 64]);
        assert_eq!(discrepancy(&all, &DiscrepancyConfig::default()).unwrap(), 0.0);
        let too_short = CorrectnessBitmap::new(0, vec![true; 10]);
        assert!(discrepancy(&too_short, &DiscrepancyConfig::default()).is_err());
    }

    #[test]
    fn discrepancy_is_deterministic_per_seed() {
        let b = CorrectnessBitmap::new(0, (0..200).map(|i| i % 7 < 3).collect());
        let cfg = DiscrepancyConfig::default();
        assert_eq!(discrepancy(&b, &cfg).unwrap(), discrepancy(&b, &cfg).unwrap());
    }

    #[test]
    fn contiguous_recall_examples() {
        let n = 1024;
        let all = CorrectnessBitmap::new(0, vec![true; n]);
        assert_eq!(contiguous_recall(&all, 50).unwrap(), 1.0);
        let every40 = CorrectnessBitmap::new(0, (0..n).map(|i| i % 40 != 39).collect());
        assert_eq!(contiguous_recall(&every40, 50).unwrap(), 0.0);
        let mut first_wrong = vec![true; n];
        first_wrong[0] = false;
        let r = contiguous_recall(&CorrectnessBitmap::new(0, first_wrong), 50).unwrap();
        assert!((r - (n - 50) as f64 / (n - 49) as f64).abs() < 1e-15);
        assert!(contiguous_recall(&CorrectnessBitmap::new(0, vec![true; 10]), 50).is_err());
    }
}
