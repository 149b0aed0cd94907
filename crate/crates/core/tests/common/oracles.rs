//! Brute-force references the library is checked against.

use memlab::metrics::CorrectnessBitmap;
use memlab::micro_lm::{Distributions, Model, ModelConfig, PosEncoding};
use memlab::rng::LabRng;
use memlab::string_lab::{Alphabet, TokenId, TokenString};
use statrs::distribution::{Categorical, ChiSquared, ContinuousCDF, Discrete};
use statrs::statistics::Statistics;

pub fn random_probs(rng: &mut LabRng, k: usize, zeros: bool) -> Vec<f64> {
    let mut w: Vec<f64> = (0..k)
        .map(|_| if zeros && rng.uniform_f64() < 0.2 { 0.0 } else { rng.uniform_f64() + 1e-3 })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        w[0] = 1.0;
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    w
}

pub fn random_dists(rng: &mut LabRng, rows: usize, vocab: usize) -> Distributions {
    let mut probs = Vec::with_capacity(rows * vocab);
    for _ in 0..rows {
        probs.extend(random_probs(rng, vocab, false).into_iter().map(|p| p as f32));
    }
    Distributions::new(vocab, probs).unwrap()
}

pub fn random_bits(rng: &mut LabRng, n: usize, p: f64) -> Vec<bool> {
    (0..n).map(|_| rng.uniform_f64() < p).collect()
}

/// Shannon entropy through statrs' categorical pmf.
pub fn entropy_oracle(p: &[f64]) -> f64 {
    let cat = Categorical::new(p).unwrap();
    (0..p.len() as u64)
        .map(|i| cat.pmf(i))
        .filter(|&q| q > 0.0)
        .map(|q| -q * q.ln())
        .sum()
}

/// Mean entropy of each row restricted to the alphabet and renormalised.
pub fn alphabet_entropy_oracle(d: &Distributions, a: &Alphabet) -> f64 {
    let mut total = 0.0;
    for i in 0..d.len() {
        let restricted: Vec<f64> = a.tokens().iter().map(|&t| d.row(i)[t as usize] as f64).collect();
        let z: f64 = restricted.iter().sum();
        let normed: Vec<f64> = restricted.iter().map(|p| p / z).collect();
        let cat = Categorical::new(&normed).unwrap();
        total += statrs::statistics::Distribution::entropy(&cat).unwrap();
    }
    total / d.len() as f64
}

/// KL divergence of the alphabet distribution from each restricted,
/// renormalised row, written out directly from the definition.
pub fn kld_oracle(d: &Distributions, a: &Alphabet) -> f64 {
    let mut total = 0.0;
    for i in 0..d.len() {
        let row = d.row(i);
        let z: f64 = a.tokens().iter().map(|&t| row[t as usize] as f64).sum();
        for (j, &t) in a.tokens().iter().enumerate() {
            let p = a.probs()[j];
            let q = row[t as usize] as f64 / z;
            total += p * p.ln() - p * q.ln();
        }
    }
    total / d.len() as f64
}

/// Average ranks by counting: rank = #smaller + (#equal + 1) / 2.
pub fn count_ranks(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|&x| {
            let less = xs.iter().filter(|&&y| y < x).count() as f64;
            let eq = xs.iter().filter(|&&y| y == x).count() as f64;
            less + (eq + 1.0) / 2.0
        })
        .collect()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let cov = a.iter().copied().population_covariance(b.iter().copied());
    cov / (a.iter().copied().population_std_dev() * b.iter().copied().population_std_dev())
}

/// Spearman correlation as the Pearson correlation of counted ranks; `None`
/// when either side is constant.
pub fn spearman_oracle(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let (rx, ry) = (count_ranks(xs), count_ranks(ys));
    if rx.iter().all(|&r| r == rx[0]) || ry.iter().all(|&r| r == ry[0]) {
        return None;
    }
    Some(pearson(&rx, &ry))
}

/// Fraction of starts whose next `w` bits are all set, by direct scan.
pub fn recall_oracle(bits: &[bool], w: usize) -> f64 {
    let starts = bits.len() - w + 1;
    let hits = (0..starts).filter(|&s| bits[s..s + w].iter().all(|&b| b)).count();
    hits as f64 / starts as f64
}

pub fn scattered_error_bitmap(n: usize, every: usize) -> CorrectnessBitmap {
    CorrectnessBitmap::new(0, (0..n).map(|i| i % every != every - 1).collect())
}

pub fn counts(s: &TokenString, a: &Alphabet) -> Vec<usize> {
    let mut c = vec![0usize; a.len()];
    for &t in s.tokens() {
        c[a.index_of(t).expect("token outside the alphabet")] += 1;
    }
    c
}

pub fn chi_square_p(observed: &[usize], expected: &[f64]) -> f64 {
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
        .sum();
    1.0 - ChiSquared::new((observed.len() - 1) as f64).unwrap().cdf(stat)
}

pub fn grad_config(pos: PosEncoding) -> ModelConfig {
    ModelConfig {
        vocab_size: 32,
        d_model: 32,
        n_layers: 2,
        n_heads: 4,
        d_ff: 128,
        max_seq_len: 16,
        pos_encoding: pos,
        bos_token_id: 31,
        init_seed: 11,
        embed_init_std: 0.02,
    }
}

pub const GRAD_TOKENS: [TokenId; 8] = [3, 17, 3, 9, 0, 22, 17, 5];
pub const FD_STEP: f64 = 1e-5;
pub const GRAD_REL_TOL: f64 = 1e-3;
/// Below this magnitude both gradients count as zero.
pub const GRAD_ZERO: f64 = 1e-7;

pub fn finite_difference(m: &Model<f64>, s: &[TokenId]) -> Vec<f64> {
    let mut probe = m.clone();
    (0..m.num_params())
        .map(|i| {
            let orig = probe.params()[i];
            probe.params_mut()[i] = orig + FD_STEP;
            let up = probe.loss(s).unwrap();
            probe.params_mut()[i] = orig - FD_STEP;
            let down = probe.loss(s).unwrap();
            probe.params_mut()[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Fraction of parameters within the relative tolerance, and the count outside it.
pub fn grad_agreement(analytic: &[f64], fd: &[f64]) -> (f64, usize) {
    let mut bad = 0;
    for (&a, &f) in analytic.iter().zip(fd) {
        let scale = a.abs().max(f.abs());
        if scale >= GRAD_ZERO && (a - f).abs() / scale > GRAD_REL_TOL {
            bad += 1;
        }
    }
    (1.0 - bad as f64 / analytic.len() as f64, bad)
}
