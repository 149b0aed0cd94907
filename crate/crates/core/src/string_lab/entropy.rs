use crate::error::{LabError, Result};

/// Shannon entropy in nats. `0 * ln 0` counts as 0.
pub fn distribution_entropy(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(LabError::invalid("empty probability vector"));
    }
    if let Some(p) = probs.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
        return Err(LabError::invalid(format!("probability entry {p} is not a finite nonnegative number")));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(LabError::invalid(format!("probabilities sum to {total}, expected 1")));
    }
    Ok(probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum())
}

pub fn nats_to_bits(nats: f64) -> f64 {
    nats / std::f64::consts::LN_2
}

/// Entropy of the distribution putting `p` on one token and spreading
/// `1 - p` evenly over the other `ell - 1`.
pub fn oversampled_entropy(ell: usize, p: f64) -> f64 {
    let rest = 1.0 - p;
    let other = rest / (ell as f64 - 1.0);
    let head = if p > 0.0 { -p * p.ln() } else { 0.0 };
    let tail = if rest > 0.0 { -rest * other.ln() } else { 0.0 };
    head + tail
}

const SOLVER_ITERS: usize = 200;
const SOLVER_UPPER: f64 = 1.0 - 1e-12;

/// Finds `p >= 1/ell` such that `oversampled_entropy(ell, p)` equals the
/// target. The entropy is strictly decreasing on `[1/ell, 1)`, so plain
/// bisection converges to the unique root on that branch.
pub fn solve_oversample_prob(ell: usize, target_entropy: f64) -> Result<f64> {
    if ell < 2 {
        return Err(LabError::invalid(format!("alphabet size {ell} < 2")));
    }
    let max = (ell as f64).ln();
    if !(target_entropy > 0.0) {
        return Err(LabError::invalid(format!("target entropy {target_entropy} must be positive")));
    }
    if target_entropy > max + 1e-15 {
        return Err(LabError::Infeasible(format!(
            "target {target_entropy} nats exceeds ln {ell} = {max}"
        )));
    }
    let mut lo = 1.0 / ell as f64;
    if oversampled_entropy(ell, lo) - target_entropy <= 0.0 {
        return Ok(lo);
    }
    let mut hi = SOLVER_UPPER;
    if oversampled_entropy(ell, hi) > target_entropy {
        return Err(LabError::Infeasible(format!(
            "target {target_entropy} nats is below the solver's reachable range"
        )));
    }
    for _ in 0..SOLVER_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if oversampled_entropy(ell, mid) > target_entropy {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (h_lo, h_hi) = (
        (oversampled_entropy(ell, lo) - target_entropy).abs(),
        (oversampled_entropy(ell, hi) - target_entropy).abs(),
    );
    Ok(if h_lo <= h_hi { lo } else { hi })
}
