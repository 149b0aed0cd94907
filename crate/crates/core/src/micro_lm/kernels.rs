//! Row-wise building blocks of the forward and backward passes.

use super::scalar::Scalar;

pub const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

pub fn layernorm<S: Scalar>(out: &mut [S], mean: &mut [S], rstd: &mut [S], inp: &[S], w: &[S], b: &[S], d: usize) {
    let eps = S::from_f64(LN_EPS);
    let dn = S::from_f64(d as f64);
    for (t, x) in inp.chunks_exact(d).enumerate() {
        let m = x.iter().copied().sum::<S>() / dn;
        let v = x.iter().map(|&xi| (xi - m) * (xi - m)).sum::<S>() / dn;
        let r = S::one() / (v + eps).sqrt();
        let o = &mut out[t * d..(t + 1) * d];
        for i in 0..d {
            o[i] = (x[i] - m) * r * w[i] + b[i];
        }
        mean[t] = m;
        rstd[t] = r;
    }
}

/// Accumulates into `dinp`, `dw` and `db`.
#[allow(clippy::too_many_arguments)]
pub fn layernorm_backward<S: Scalar>(
    dinp: &mut [S],
    dw: &mut [S],
    db: &mut [S],
    dout: &[S],
    inp: &[S],
    w: &[S],
    mean: &[S],
    rstd: &[S],
    d: usize,
) {
    let dn = S::from_f64(d as f64);
    let mut norm = vec![S::zero(); d];
    let mut dnorm = vec![S::zero(); d];
    for t in 0..mean.len() {
        let x = &inp[t * d..(t + 1) * d];
        let g = &dout[t * d..(t + 1) * d];
        let (m, r) = (mean[t], rstd[t]);
        let mut dnorm_mean = S::zero();
        let mut dnorm_norm_mean = S::zero();
        for i in 0..d {
            norm[i] = (x[i] - m) * r;
            dnorm[i] = w[i] * g[i];
            dnorm_mean += dnorm[i];
            dnorm_norm_mean += dnorm[i] * norm[i];
        }
        dnorm_mean = dnorm_mean / dn;
        dnorm_norm_mean = dnorm_norm_mean / dn;
        let di = &mut dinp[t * d..(t + 1) * d];
        for i in 0..d {
            db[i] += g[i];
            dw[i] += norm[i] * g[i];
            di[i] += (dnorm[i] - dnorm_mean - norm[i] * dnorm_norm_mean) * r;
        }
    }
}

pub fn add_bias<S: Scalar>(x: &mut [S], b: &[S]) {
    for row in x.chunks_exact_mut(b.len()) {
        for (xi, bi) in row.iter_mut().zip(b) {
            *xi += *bi;
        }
    }
}

pub fn bias_grad<S: Scalar>(db: &mut [S], dout: &[S]) {
    for row in dout.chunks_exact(db.len()) {
        for (g, d) in db.iter_mut().zip(row) {
            *g += *d;
        }
    }
}

pub fn gelu<S: Scalar>(out: &mut [S], inp: &[S]) {
    let c = S::from_f64(GELU_C);
    let k = S::from_f64(GELU_K);
    let half = S::from_f64(0.5);
    for (o, &x) in out.iter_mut().zip(inp) {
        let u = c * (x + k * x * x * x);
        *o = half * x * (S::one() + u.tanh());
    }
}

/// `dinp = dout * gelu'(inp)` (overwrites).
pub fn gelu_backward<S: Scalar>(dinp: &mut [S], inp: &[S], dout: &[S]) {
    let c = S::from_f64(GELU_C);
    let k = S::from_f64(GELU_K);
    let half = S::from_f64(0.5);
    let three = S::from_f64(3.0);
    for ((di, &x), &g) in dinp.iter_mut().zip(inp).zip(dout) {
        let u = c * (x + k * x * x * x);
        let th = u.tanh();
        let sech2 = S::one() - th * th;
        let local = half * (S::one() + th) + half * x * sech2 * c * (S::one() + three * k * x * x);
        *di = g * local;
    }
}

/// Cos/sin tables `[t, half]` for rotary embeddings.
pub fn rotary_tables<S: Scalar>(t: usize, head_dim: usize) -> (Vec<S>, Vec<S>) {
    let half = head_dim / 2;
    let mut cos = Vec::with_capacity(t * half);
    let mut sin = Vec::with_capacity(t * half);
    for p in 0..t {
        for j in 0..half {
            let freq = 10000f64.powf(-2.0 * j as f64 / head_dim as f64);
            let ang = p as f64 * freq;
            cos.push(S::from_f64(ang.cos()));
            sin.push(S::from_f64(ang.sin()));
        }
    }
    (cos, sin)
}

/// Rotates the `head_dim` block starting at `x[0]` for position `p`.
/// `inverse` applies the transpose rotation (used on gradients).
pub fn rotate<S: Scalar>(x: &mut [S], cos: &[S], sin: &[S], inverse: bool) {
    let half = cos.len();
    for j in 0..half {
        let (a, b) = (x[j], x[j + half]);
        let (c, s) = (cos[j], if inverse { -sin[j] } else { sin[j] });
        x[j] = a * c - b * s;
        x[j + half] = a * s + b * c;
    }
}

/// Numerically stable softmax of one row; returns `ln(sum exp(x - max))` and the max.
pub fn softmax_row<S: Scalar>(out: &mut [S], logits: &[S]) -> (S, S) {
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let mut sum = S::zero();
    for (o, &l) in out.iter_mut().zip(logits) {
        let e = (l - max).exp();
        *o = e;
        sum += e;
    }
    let inv = S::one() / sum;
    for o in out.iter_mut() {
        *o *= inv;
    }
    (sum.ln(), max)
}
