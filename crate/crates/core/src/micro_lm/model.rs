use super::config::{ModelConfig, PosEncoding};
use super::kernels::{self, rotate};
use super::layout::Layout;
use super::scalar::{gemm, Mat, Scalar};
use crate::error::{LabError, Result};
use crate::rng::LabRng;
use crate::string_lab::TokenId;

const INIT_STD: f64 = 0.02;

/// Per-position next-token distributions, row-major `[len, vocab]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Distributions {
    vocab: usize,
    probs: Vec<f32>,
}

impl Distributions {
    pub fn new(vocab: usize, probs: Vec<f32>) -> Result<Self> {
        if vocab == 0 || !probs.len().is_multiple_of(vocab) {
            return Err(LabError::invalid(format!("{} probabilities do not tile rows of {vocab}", probs.len())));
        }
        Ok(Self { vocab, probs })
    }

    pub fn len(&self) -> usize {
        self.probs.len() / self.vocab
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.probs[i * self.vocab..(i + 1) * self.vocab]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.probs.chunks_exact(self.vocab)
    }

    pub fn argmax(&self, i: usize) -> TokenId {
        argmax(self.row(i))
    }

    pub fn probs(&self) -> &[f32] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f32> {
        self.probs
    }

    /// Copy of the rows in `range`.
    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> Distributions {
        Distributions {
            vocab: self.vocab,
            probs: self.probs[range.start * self.vocab..range.end * self.vocab].to_vec(),
        }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<S: PartialOrd + Copy>(row: &[S]) -> TokenId {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best as TokenId
}

/// A decoder-only transformer with hand-written forward and backward passes.
#[derive(Clone, Debug)]
pub struct Model<S: Scalar> {
    config: ModelConfig,
    layout: Layout,
    params: Vec<S>,
    step_count: u64,
}

pub type MicroModel = Model<f32>;

struct LayerCache<S> {
    x_in: Vec<S>,
    ln1: Vec<S>,
    ln1_mean: Vec<S>,
    ln1_rstd: Vec<S>,
    qkv: Vec<S>,
    att: Vec<S>,
    atty: Vec<S>,
    x_mid: Vec<S>,
    ln2: Vec<S>,
    ln2_mean: Vec<S>,
    ln2_rstd: Vec<S>,
    fc_pre: Vec<S>,
    fc_act: Vec<S>,
}

struct Cache<S> {
    layers: Vec<LayerCache<S>>,
    x_final: Vec<S>,
    lnf: Vec<S>,
    lnf_mean: Vec<S>,
    lnf_rstd: Vec<S>,
    cos: Vec<S>,
    sin: Vec<S>,
}

impl MicroModel {
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0f32; layout.total()];
        let mut rng = LabRng::derive(config.init_seed, "model-init");
        let resid_std = INIT_STD / (2.0 * config.n_layers as f64).sqrt();
        for e in layout.entries() {
            let slot = &mut params[e.range()];
            let leaf = e.name.rsplit('.').next().unwrap_or("");
            if e.name.contains(".ln") || e.name.starts_with("lnf") {
                let fill = if leaf == "w" { 1.0 } else { 0.0 };
                slot.iter_mut().for_each(|p| *p = fill);
            } else if leaf == "b" {
                slot.iter_mut().for_each(|p| *p = 0.0);
            } else {
                let std = if e.name.ends_with("attn.proj.w") || e.name.ends_with("mlp.proj.w") {
                    resid_std
                } else if e.name == "wte" {
                    config.embed_init_std
                } else {
                    INIT_STD
                };
                slot.iter_mut().for_each(|p| *p = (rng.normal() * std) as f32);
            }
        }
        Ok(Self {
            config,
            layout,
            params,
            step_count: 0,
        })
    }
}

impl<S: Scalar> Model<S> {
    pub fn from_parts(config: ModelConfig, params: Vec<S>, step_count: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total() {
            return Err(LabError::invalid(format!(
                "{} parameters supplied, architecture needs {}",
                params.len(),
                layout.total()
            )));
        }
        Ok(Self {
            config,
            layout,
            params,
            step_count,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[S] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [S] {
        &mut self.params
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn bump_step(&mut self) {
        self.step_count += 1;
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn tensor(&self, name: &str) -> Option<&[S]> {
        self.layout.entry(name).map(|e| &self.params[e.range()])
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Same weights in another precision.
    pub fn cast<T: Scalar>(&self) -> Model<T> {
        Model {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.iter().map(|p| T::from_f64(p.to_f64().unwrap())).collect(),
            step_count: self.step_count,
        }
    }

    /// `[BOS, s_1, .., s_{n-1}]`: the inputs whose outputs predict `s`.
    pub fn shifted_inputs(&self, s: &[TokenId]) -> Vec<TokenId> {
        if s.is_empty() {
            return Vec::new();
        }
        let mut inputs = Vec::with_capacity(s.len());
        inputs.push(self.config.bos_token_id);
        inputs.extend_from_slice(&s[..s.len().saturating_sub(1)]);
        inputs
    }

    fn check_inputs(&self, inputs: &[TokenId]) -> Result<()> {
        if inputs.is_empty() {
            return Err(LabError::invalid("empty input"));
        }
        if inputs.len() > self.config.max_seq_len {
            return Err(LabError::invalid(format!(
                "input of {} tokens exceeds max_seq_len {}",
                inputs.len(),
                self.config.max_seq_len
            )));
        }
        if let Some(t) = inputs.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(LabError::invalid(format!("token {t} outside vocabulary")));
        }
        Ok(())
    }

    /// Distribution over the vocabulary at every position of `s`, each
    /// conditioned on `BOS` followed by the tokens before it.
    pub fn forward(&self, s: &[TokenId]) -> Result<Distributions> {
        self.forward_inputs(&self.shifted_inputs(s))
    }

    /// Output distributions for raw inputs (no BOS added).
    pub fn forward_inputs(&self, inputs: &[TokenId]) -> Result<Distributions> {
        self.check_inputs(inputs)?;
        let (cache, logits) = self.run(inputs, false);
        drop(cache);
        let v = self.config.vocab_size;
        let mut probs = vec![S::zero(); logits.len()];
        for (p, l) in probs.chunks_exact_mut(v).zip(logits.chunks_exact(v)) {
            kernels::softmax_row(p, l);
        }
        Distributions::new(v, probs.into_iter().map(|p| p.to_f32().unwrap()).collect())
    }

    /// Distribution of the token that follows `BOS ∘ context`.
    pub fn next_token_dist(&self, context: &[TokenId]) -> Result<Vec<f32>> {
        let mut inputs = Vec::with_capacity(context.len() + 1);
        inputs.push(self.config.bos_token_id);
        inputs.extend_from_slice(context);
        self.check_inputs(&inputs)?;
        let (_, logits) = self.run(&inputs, true);
        let mut p = vec![S::zero(); logits.len()];
        kernels::softmax_row(&mut p, &logits);
        Ok(p.into_iter().map(|x| x.to_f32().unwrap()).collect())
    }

    /// Greedy prediction at every position of `s` (lowest id wins ties).
    pub fn predict_greedy(&self, s: &[TokenId]) -> Result<Vec<TokenId>> {
        let inputs = self.shifted_inputs(s);
        self.check_inputs(&inputs)?;
        let (_, logits) = self.run(&inputs, false);
        Ok(logits.chunks_exact(self.config.vocab_size).map(argmax).collect())
    }

    /// Mean next-token cross-entropy of `s` in nats per token.
    pub fn loss(&self, s: &[TokenId]) -> Result<f64> {
        let inputs = self.shifted_inputs(s);
        self.check_inputs(&inputs)?;
        let (_, logits) = self.run(&inputs, false);
        let v = self.config.vocab_size;
        let total: f64 = logits
            .chunks_exact(v)
            .zip(s)
            .map(|(row, &t)| -log_softmax_at(row, t as usize))
            .sum();
        finite_loss(total / s.len() as f64)
    }

    /// Mean cross-entropy of `s` and its gradient with respect to every parameter.
    pub fn loss_and_grads(&self, s: &[TokenId]) -> Result<(f64, Vec<S>)> {
        let mut grads = vec![S::zero(); self.params.len()];
        let inputs = self.shifted_inputs(s);
        let loss = self.accumulate_grads(&inputs, s, 1.0, &mut grads)?;
        Ok((loss, grads))
    }

    /// Adds `weight * d(mean loss)/d(params)` into `grads` and returns the
    /// mean loss of this sequence.
    pub fn accumulate_grads(&self, inputs: &[TokenId], targets: &[TokenId], weight: f64, grads: &mut [S]) -> Result<f64> {
        self.check_inputs(inputs)?;
        if targets.len() != inputs.len() {
            return Err(LabError::invalid("targets and inputs differ in length"));
        }
        if let Some(t) = targets.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(LabError::invalid(format!("target {t} outside vocabulary")));
        }
        assert_eq!(grads.len(), self.params.len());
        let (cache, mut logits) = self.run(inputs, false);
        let v = self.config.vocab_size;
        let t_len = inputs.len();
        let scale = S::from_f64(weight / t_len as f64);
        let mut total = 0.0;
        let mut probs = vec![S::zero(); v];
        for (row, &tgt) in logits.chunks_exact_mut(v).zip(targets) {
            let (lse, max) = kernels::softmax_row(&mut probs, row);
            total -= (row[tgt as usize] - max - lse).to_f64().unwrap();
            for (r, p) in row.iter_mut().zip(&probs) {
                *r = *p * scale;
            }
            row[tgt as usize] -= scale;
        }
        let loss = finite_loss(total / t_len as f64)?;
        self.backward(inputs, &cache, &logits, grads);
        Ok(loss)
    }

    fn p(&self, r: &std::ops::Range<usize>) -> &[S] {
        &self.params[r.clone()]
    }

    /// Runs the network, returning the activation cache and logits (all rows,
    /// or only the last one when `last_only`).
    fn run(&self, inputs: &[TokenId], last_only: bool) -> (Cache<S>, Vec<S>) {
        let cfg = &self.config;
        let (t, d, f, h) = (inputs.len(), cfg.d_model, cfg.d_ff, cfg.n_heads);
        let hd = cfg.head_dim();
        let lay = &self.layout;

        let mut x = vec![S::zero(); t * d];
        let wte = self.p(&lay.wte);
        for (row, &tok) in x.chunks_exact_mut(d).zip(inputs) {
            row.copy_from_slice(&wte[tok as usize * d..(tok as usize + 1) * d]);
        }
        if let Some(wpe) = &lay.wpe {
            let wpe = self.p(wpe);
            for (p, row) in x.chunks_exact_mut(d).enumerate() {
                for (xi, pi) in row.iter_mut().zip(&wpe[p * d..(p + 1) * d]) {
                    *xi += *pi;
                }
            }
        }
        let (cos, sin) = match cfg.pos_encoding {
            PosEncoding::Rotary => kernels::rotary_tables::<S>(t, hd),
            PosEncoding::Absolute => (Vec::new(), Vec::new()),
        };
        let half = hd / 2;
        let scale = S::one() / S::from_f64(hd as f64).sqrt();

        let mut layers = Vec::with_capacity(cfg.n_layers);
        for li in &lay.layers {
            let x_in = x;
            let mut ln1 = vec![S::zero(); t * d];
            let mut ln1_mean = vec![S::zero(); t];
            let mut ln1_rstd = vec![S::zero(); t];
            kernels::layernorm(&mut ln1, &mut ln1_mean, &mut ln1_rstd, &x_in, self.p(&li.ln1_w), self.p(&li.ln1_b), d);

            let mut qkv = vec![S::zero(); t * 3 * d];
            gemm(Mat::new(&ln1, t, d), false, Mat::new(self.p(&li.qkv_w), d, 3 * d), false, S::zero(), &mut qkv, 3 * d);
            kernels::add_bias(&mut qkv, self.p(&li.qkv_b));
            if cfg.pos_encoding == PosEncoding::Rotary {
                for (p, row) in qkv.chunks_exact_mut(3 * d).enumerate() {
                    let (c, s) = (&cos[p * half..(p + 1) * half], &sin[p * half..(p + 1) * half]);
                    for head in 0..h {
                        rotate(&mut row[head * hd..(head + 1) * hd], c, s, false);
                        rotate(&mut row[d + head * hd..d + (head + 1) * hd], c, s, false);
                    }
                }
            }

            let mut att = vec![S::zero(); h * t * t];
            let mut atty = vec![S::zero(); t * d];
            for head in 0..h {
                let a = &mut att[head * t * t..(head + 1) * t * t];
                let q = Mat::strided(&qkv[head * hd..], t, hd, 3 * d);
                let k = Mat::strided(&qkv[d + head * hd..], t, hd, 3 * d);
                gemm(q, false, k, true, S::zero(), a, t);
                for i in 0..t {
                    let row = &mut a[i * t..(i + 1) * t];
                    let max = row[..=i].iter().fold(S::neg_infinity(), |m, &v| m.max(v * scale));
                    let mut sum = S::zero();
                    for v in row[..=i].iter_mut() {
                        *v = (*v * scale - max).exp();
                        sum += *v;
                    }
                    let inv = S::one() / sum;
                    row[..=i].iter_mut().for_each(|v| *v *= inv);
                    row[i + 1..].iter_mut().for_each(|v| *v = S::zero());
                }
                let vmat = Mat::strided(&qkv[2 * d + head * hd..], t, hd, 3 * d);
                gemm(Mat::new(a, t, t), false, vmat, false, S::zero(), &mut atty[head * hd..], d);
            }

            let mut x_mid = x_in.clone();
            gemm(Mat::new(&atty, t, d), false, Mat::new(self.p(&li.proj_w), d, d), false, S::one(), &mut x_mid, d);
            kernels::add_bias(&mut x_mid, self.p(&li.proj_b));

            let mut ln2 = vec![S::zero(); t * d];
            let mut ln2_mean = vec![S::zero(); t];
            let mut ln2_rstd = vec![S::zero(); t];
            kernels::layernorm(&mut ln2, &mut ln2_mean, &mut ln2_rstd, &x_mid, self.p(&li.ln2_w), self.p(&li.ln2_b), d);

            let mut fc_pre = vec![S::zero(); t * f];
            gemm(Mat::new(&ln2, t, d), false, Mat::new(self.p(&li.fc_w), d, f), false, S::zero(), &mut fc_pre, f);
            kernels::add_bias(&mut fc_pre, self.p(&li.fc_b));
            let mut fc_act = vec![S::zero(); t * f];
            kernels::gelu(&mut fc_act, &fc_pre);

            let mut x_out = x_mid.clone();
            gemm(Mat::new(&fc_act, t, f), false, Mat::new(self.p(&li.out_w), f, d), false, S::one(), &mut x_out, d);
            kernels::add_bias(&mut x_out, self.p(&li.out_b));

            layers.push(LayerCache {
                x_in,
                ln1,
                ln1_mean,
                ln1_rstd,
                qkv,
                att,
                atty,
                x_mid,
                ln2,
                ln2_mean,
                ln2_rstd,
                fc_pre,
                fc_act,
            });
            x = x_out;
        }

        let mut lnf = vec![S::zero(); t * d];
        let mut lnf_mean = vec![S::zero(); t];
        let mut lnf_rstd = vec![S::zero(); t];
        kernels::layernorm(&mut lnf, &mut lnf_mean, &mut lnf_rstd, &x, self.p(&lay.lnf_w), self.p(&lay.lnf_b), d);

        let v = cfg.vocab_size;
        let head = Mat::new(self.p(&lay.head), d, v);
        let logits = if last_only {
            let mut out = vec![S::zero(); v];
            gemm(Mat::new(&lnf[(t - 1) * d..], 1, d), false, head, false, S::zero(), &mut out, v);
            out
        } else {
            let mut out = vec![S::zero(); t * v];
            gemm(Mat::new(&lnf, t, d), false, head, false, S::zero(), &mut out, v);
            out
        };
        (
            Cache {
                layers,
                x_final: x,
                lnf,
                lnf_mean,
                lnf_rstd,
                cos,
                sin,
            },
            logits,
        )
    }

    fn backward(&self, inputs: &[TokenId], cache: &Cache<S>, dlogits: &[S], grads: &mut [S]) {
        let cfg = &self.config;
        let (t, d, f, h) = (inputs.len(), cfg.d_model, cfg.d_ff, cfg.n_heads);
        let (v, hd) = (cfg.vocab_size, cfg.head_dim());
        let half = hd / 2;
        let lay = &self.layout;
        let scale = S::one() / S::from_f64(hd as f64).sqrt();

        gemm(Mat::new(&cache.lnf, t, d), true, Mat::new(dlogits, t, v), false, S::one(), &mut grads[lay.head.clone()], v);
        let mut dlnf = vec![S::zero(); t * d];
        gemm(Mat::new(dlogits, t, v), false, Mat::new(self.p(&lay.head), d, v), true, S::zero(), &mut dlnf, d);

        let mut dx = vec![S::zero(); t * d];
        {
            let (dw, db) = two_ranges(grads, &lay.lnf_w, &lay.lnf_b);
            kernels::layernorm_backward(&mut dx, dw, db, &dlnf, &cache.x_final, self.p(&lay.lnf_w), &cache.lnf_mean, &cache.lnf_rstd, d);
        }

        let mut dact = vec![S::zero(); t * f];
        let mut dfc = vec![S::zero(); t * f];
        let mut dln = vec![S::zero(); t * d];
        let mut datty = vec![S::zero(); t * d];
        let mut dqkv = vec![S::zero(); t * 3 * d];
        let mut dp = vec![S::zero(); t * t];

        for (li, lc) in lay.layers.iter().zip(&cache.layers).rev() {
            // feed-forward
            gemm(Mat::new(&lc.fc_act, t, f), true, Mat::new(&dx, t, d), false, S::one(), &mut grads[li.out_w.clone()], d);
            kernels::bias_grad(&mut grads[li.out_b.clone()], &dx);
            gemm(Mat::new(&dx, t, d), false, Mat::new(self.p(&li.out_w), f, d), true, S::zero(), &mut dact, f);
            kernels::gelu_backward(&mut dfc, &lc.fc_pre, &dact);
            gemm(Mat::new(&lc.ln2, t, d), true, Mat::new(&dfc, t, f), false, S::one(), &mut grads[li.fc_w.clone()], f);
            kernels::bias_grad(&mut grads[li.fc_b.clone()], &dfc);
            gemm(Mat::new(&dfc, t, f), false, Mat::new(self.p(&li.fc_w), d, f), true, S::zero(), &mut dln, d);
            {
                let (dw, db) = two_ranges(grads, &li.ln2_w, &li.ln2_b);
                kernels::layernorm_backward(&mut dx, dw, db, &dln, &lc.x_mid, self.p(&li.ln2_w), &lc.ln2_mean, &lc.ln2_rstd, d);
            }

            // attention
            gemm(Mat::new(&lc.atty, t, d), true, Mat::new(&dx, t, d), false, S::one(), &mut grads[li.proj_w.clone()], d);
            kernels::bias_grad(&mut grads[li.proj_b.clone()], &dx);
            gemm(Mat::new(&dx, t, d), false, Mat::new(self.p(&li.proj_w), d, d), true, S::zero(), &mut datty, d);

            for head in 0..h {
                let a = &lc.att[head * t * t..(head + 1) * t * t];
                let dy = Mat::strided(&datty[head * hd..], t, hd, d);
                let vmat = Mat::strided(&lc.qkv[2 * d + head * hd..], t, hd, 3 * d);
                gemm(dy, false, vmat, true, S::zero(), &mut dp, t);
                gemm(Mat::new(a, t, t), true, dy, false, S::zero(), &mut dqkv[2 * d + head * hd..], 3 * d);
                for i in 0..t {
                    let prow = &a[i * t..(i + 1) * t];
                    let drow = &mut dp[i * t..(i + 1) * t];
                    let dot: S = prow[..=i].iter().zip(&drow[..=i]).map(|(&p, &g)| p * g).sum();
                    for j in 0..=i {
                        drow[j] = prow[j] * (drow[j] - dot) * scale;
                    }
                    drow[i + 1..].iter_mut().for_each(|x| *x = S::zero());
                }
                let q = Mat::strided(&lc.qkv[head * hd..], t, hd, 3 * d);
                let k = Mat::strided(&lc.qkv[d + head * hd..], t, hd, 3 * d);
                gemm(Mat::new(&dp, t, t), false, k, false, S::zero(), &mut dqkv[head * hd..], 3 * d);
                gemm(Mat::new(&dp, t, t), true, q, false, S::zero(), &mut dqkv[d + head * hd..], 3 * d);
            }
            if cfg.pos_encoding == PosEncoding::Rotary {
                for (p, row) in dqkv.chunks_exact_mut(3 * d).enumerate() {
                    let (c, s) = (&cache.cos[p * half..(p + 1) * half], &cache.sin[p * half..(p + 1) * half]);
                    for head in 0..h {
                        rotate(&mut row[head * hd..(head + 1) * hd], c, s, true);
                        rotate(&mut row[d + head * hd..d + (head + 1) * hd], c, s, true);
                    }
                }
            }
            gemm(Mat::new(&lc.ln1, t, d), true, Mat::new(&dqkv, t, 3 * d), false, S::one(), &mut grads[li.qkv_w.clone()], 3 * d);
            kernels::bias_grad(&mut grads[li.qkv_b.clone()], &dqkv);
            gemm(Mat::new(&dqkv, t, 3 * d), false, Mat::new(self.p(&li.qkv_w), d, 3 * d), true, S::zero(), &mut dln, d);
            {
                let (dw, db) = two_ranges(grads, &li.ln1_w, &li.ln1_b);
                kernels::layernorm_backward(&mut dx, dw, db, &dln, &lc.x_in, self.p(&li.ln1_w), &lc.ln1_mean, &lc.ln1_rstd, d);
            }
        }

        let wte = lay.wte.start;
        for (row, &tok) in dx.chunks_exact(d).zip(inputs) {
            let g = &mut grads[wte + tok as usize * d..wte + (tok as usize + 1) * d];
            for (gi, di) in g.iter_mut().zip(row) {
                *gi += *di;
            }
        }
        if let Some(wpe) = &lay.wpe {
            let g = &mut grads[wpe.clone()];
            for (gi, di) in g.iter_mut().zip(&dx) {
                *gi += *di;
            }
        }
    }
}

fn two_ranges<'a, S>(buf: &'a mut [S], a: &std::ops::Range<usize>, b: &std::ops::Range<usize>) -> (&'a mut [S], &'a mut [S]) {
    assert!(a.end <= b.start);
    let (lo, hi) = buf.split_at_mut(b.start);
    (&mut lo[a.clone()], &mut hi[..b.len()])
}

fn log_softmax_at<S: Scalar>(row: &[S], idx: usize) -> f64 {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max).to_f64().unwrap();
    let lse = row.iter().map(|&x| (x.to_f64().unwrap() - max).exp()).sum::<f64>().ln();
    row[idx].to_f64().unwrap() - max - lse
}

fn finite_loss(loss: f64) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(LabError::NumericalFailure(format!("loss evaluated to {loss}")))
    }
}
