//! Small self-attention encoder with Gaussian output heads.
//!
//! A window of feature rows is embedded, given sinusoidal positions, passed
//! through one multi-head self-attention block and a ReLU feed-forward block
//! (both residual), mean-pooled, and projected to a mean and a log-scale
//! per horizon. Training minimizes the Gaussian negative log-likelihood;
//! intervals are `mean ± z·sigma` with `z` the standard normal quantile.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::Quarter;
use crate::features::FeatureMatrix;
use crate::nn::{gemm, rng, uniform_init, AdamW, NnError, Result, SavedState, Standardizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttentionConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub d_model: usize,
    pub n_heads: usize,
    /// Feed-forward width; defaults to `2 * d_model`.
    pub d_ff: Option<usize>,
    pub positional_encoding: bool,
    /// Intervals cover `1 - alpha`.
    pub alpha: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            lookback: 32,
            horizon: 10,
            d_model: 32,
            n_heads: 4,
            d_ff: None,
            positional_encoding: true,
            alpha: 0.05,
            epochs: 300,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return Err(NnError::InvalidConfig("d_model must be a positive multiple of n_heads".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(NnError::InvalidConfig("alpha must be in (0, 1)".into()));
        }
        if self.lookback == 0 || self.horizon == 0 || self.d_ff == Some(0) {
            return Err(NnError::InvalidConfig("lookback, horizon and widths must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(NnError::InvalidConfig("learning rate must be positive, decay non-negative".into()));
        }
        Ok(())
    }

    pub fn ff(&self) -> usize {
        self.d_ff.unwrap_or(2 * self.d_model)
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }

    pub fn layout(&self, input: usize) -> AttentionLayout {
        AttentionLayout {
            input,
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_ff: self.ff(),
            horizon: self.horizon,
        }
    }
}

/// Two-sided standard normal quantile `z_{alpha/2}`.
pub fn z_quantile(alpha: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(1.0 - alpha / 2.0)
}

/// Row-wise softmax in place (max-shifted).
pub fn softmax_rows(s: &mut [f64], cols: usize) {
    for row in s.chunks_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// `softmax(Q Kᵀ / sqrt(d_k)) V` for row-major matrices; returns the output
/// (`n_q x d_v`) and the attention weights (`n_q x n_k`).
pub fn attention(q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let dk = k.first().map_or(0, |r| r.len());
    let dv = v.first().map_or(0, |r| r.len());
    if k.is_empty()
        || k.len() != v.len()
        || q.iter().any(|r| r.len() != dk)
        || k.iter().any(|r| r.len() != dk)
        || v.iter().any(|r| r.len() != dv)
    {
        return Err(NnError::ShapeMismatch("attention needs |K| = |V| > 0 and matching key width".into()));
    }
    let (nq, nk) = (q.len(), k.len());
    let qf: Vec<f64> = q.concat();
    let kf: Vec<f64> = k.concat();
    let vf: Vec<f64> = v.concat();
    let (out, a) = attention_flat(&qf, &kf, &vf, nq, nk, dk, dv);
    Ok((out.chunks(dv.max(1)).map(|c| c.to_vec()).take(nq).collect(), a.chunks(nk).map(|c| c.to_vec()).collect()))
}

fn attention_flat(q: &[f64], k: &[f64], v: &[f64], nq: usize, nk: usize, dk: usize, dv: usize) -> (Vec<f64>, Vec<f64>) {
    let mut s = vec![0.0; nq * nk];
    gemm(nq, dk, nk, q, false, k, true, &mut s, false);
    let scale = 1.0 / (dk as f64).sqrt();
    s.iter_mut().for_each(|x| *x *= scale);
    softmax_rows(&mut s, nk);
    let mut out = vec![0.0; nq * dv];
    gemm(nq, nk, dv, &s, false, v, false, &mut out, false);
    (out, s)
}

/// Gradients of `attention_flat` given the output gradient.
#[allow(clippy::too_many_arguments)]
fn attention_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    a: &[f64],
    dout: &[f64],
    nq: usize,
    nk: usize,
    dk: usize,
    dv: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut da = vec![0.0; nq * nk];
    gemm(nq, dv, nk, dout, false, v, true, &mut da, false);
    let mut dvv = vec![0.0; nk * dv];
    gemm(nk, nq, dv, a, true, dout, false, &mut dvv, false);
    let scale = 1.0 / (dk as f64).sqrt();
    for r in 0..nq {
        let row = r * nk..(r + 1) * nk;
        let dot: f64 = a[row.clone()].iter().zip(&da[row.clone()]).map(|(x, y)| x * y).sum();
        for i in row {
            da[i] = a[i] * (da[i] - dot) * scale;
        }
    }
    let mut dq = vec![0.0; nq * dk];
    gemm(nq, nk, dk, &da, false, k, false, &mut dq, false);
    let mut dkk = vec![0.0; nk * dk];
    gemm(nk, nq, dk, &da, true, q, false, &mut dkk, false);
    (dq, dkk, dvv)
}

/// Public gradient of `sum(G ⊙ attention(Q, K, V))` for checking.
pub fn attention_gradient(
    q: &[Vec<f64>],
    k: &[Vec<f64>],
    v: &[Vec<f64>],
    g: &[Vec<f64>],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let (out, _) = attention(q, k, v)?;
    if g.len() != out.len() || g.iter().zip(&out).any(|(a, b)| a.len() != b.len()) {
        return Err(NnError::ShapeMismatch("output gradient shape".into()));
    }
    let (nq, nk, dk, dv) = (q.len(), k.len(), k[0].len(), v[0].len());
    let (qf, kf, vf) = (q.concat(), k.concat(), v.concat());
    let (_, a) = attention_flat(&qf, &kf, &vf, nq, nk, dk, dv);
    Ok(attention_backward(&qf, &kf, &vf, &a, &g.concat(), nq, nk, dk, dv))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionLayout {
    pub input: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub horizon: usize,
}

/// Offsets of each parameter block.
#[derive(Debug, Clone, Copy)]
struct Offsets {
    we: usize,
    be: usize,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    bo: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    wmu: usize,
    bmu: usize,
    ws: usize,
    bs: usize,
    end: usize,
}

impl AttentionLayout {
    fn offsets(&self) -> Offsets {
        let (d, m, f, h) = (self.input, self.d_model, self.d_ff, self.horizon);
        let we = 0;
        let be = we + d * m;
        let wq = be + m;
        let wk = wq + m * m;
        let wv = wk + m * m;
        let wo = wv + m * m;
        let bo = wo + m * m;
        let w1 = bo + m;
        let b1 = w1 + m * f;
        let w2 = b1 + f;
        let b2 = w2 + f * m;
        let wmu = b2 + m;
        let bmu = wmu + m * h;
        let ws = bmu + h;
        let bs = ws + m * h;
        let end = bs + h;
        Offsets { we, be, wq, wk, wv, wo, bo, w1, b1, w2, b2, wmu, bmu, ws, bs, end }
    }

    pub fn n_params(&self) -> usize {
        self.offsets().end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub layout: AttentionLayout,
    pub params: Vec<f64>,
}

impl AttentionWeights {
    pub fn zeros(layout: AttentionLayout) -> Self {
        Self { layout, params: vec![0.0; layout.n_params()] }
    }

    pub fn init(layout: AttentionLayout, seed: u64) -> Self {
        let mut w = Self::zeros(layout);
        let o = layout.offsets();
        let mut r = rng(seed);
        let (d, m, f) = (layout.input as f64, layout.d_model as f64, layout.d_ff as f64);
        let p = &mut w.params;
        uniform_init(&mut r, &mut p[o.we..o.be], 1.0 / d.sqrt());
        uniform_init(&mut r, &mut p[o.wq..o.bo], 1.0 / m.sqrt());
        uniform_init(&mut r, &mut p[o.w1..o.b1], 1.0 / m.sqrt());
        uniform_init(&mut r, &mut p[o.w2..o.b2], 1.0 / f.sqrt());
        uniform_init(&mut r, &mut p[o.wmu..o.bmu], 1.0 / m.sqrt());
        uniform_init(&mut r, &mut p[o.ws..o.bs], 0.1 / m.sqrt());
        w
    }

    pub fn mean_bias(&self) -> &[f64] {
        let o = self.layout.offsets();
        &self.params[o.bmu..o.ws]
    }

    pub fn mean_bias_mut(&mut self) -> &mut [f64] {
        let o = self.layout.offsets();
        &mut self.params[o.bmu..o.ws]
    }

    pub fn log_scale_bias_mut(&mut self) -> &mut [f64] {
        let o = self.layout.offsets();
        &mut self.params[o.bs..o.end]
    }

    /// Bias of the ReLU feed-forward layer.
    pub fn ffn_bias_mut(&mut self) -> &mut [f64] {
        let o = self.layout.offsets();
        &mut self.params[o.b1..o.w2]
    }
}

/// Sinusoidal position code, `len x d_model` row-major.
pub fn positional_encoding(len: usize, d_model: usize) -> Vec<f64> {
    let mut pe = vec![0.0; len * d_model];
    for pos in 0..len {
        for i in 0..d_model {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / d_model as f64);
            let angle = pos as f64 / rate;
            pe[pos * d_model + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

/// Intermediate values of one forward pass.
struct Tape {
    e: Vec<f64>,
    /// Per head: contiguous `q, k, v` slices and attention weights.
    heads: Vec<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)>,
    o: Vec<f64>,
    r1: Vec<f64>,
    z1: Vec<f64>,
    u: Vec<f64>,
    pooled: Vec<f64>,
    mu: Vec<f64>,
    log_sigma: Vec<f64>,
}

fn head_slice(x: &[f64], rows: usize, width: usize, head: usize, dk: usize) -> Vec<f64> {
    (0..rows).flat_map(|r| x[r * width + head * dk..r * width + (head + 1) * dk].iter().copied()).collect()
}

fn add_bias(x: &mut [f64], bias: &[f64]) {
    for row in x.chunks_mut(bias.len()) {
        row.iter_mut().zip(bias).for_each(|(a, b)| *a += b);
    }
}

fn col_sum(x: &[f64], cols: usize, out: &mut [f64]) {
    for row in x.chunks(cols) {
        out.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
}

fn encode(w: &AttentionWeights, x: &[f64], len: usize, pe: Option<&[f64]>) -> Tape {
    let l = w.layout;
    let o = l.offsets();
    let p = &w.params;
    let (d, m, f, h, nh) = (l.input, l.d_model, l.d_ff, l.horizon, l.n_heads);
    let dk = m / nh;
    let mut e = vec![0.0; len * m];
    gemm(len, d, m, x, false, &p[o.we..], false, &mut e, false);
    add_bias(&mut e, &p[o.be..o.wq]);
    if let Some(pe) = pe {
        e.iter_mut().zip(pe).for_each(|(a, b)| *a += b);
    }
    let proj = |off: usize| {
        let mut out = vec![0.0; len * m];
        gemm(len, m, m, &e, false, &p[off..], false, &mut out, false);
        out
    };
    let (q, k, v) = (proj(o.wq), proj(o.wk), proj(o.wv));
    let mut concat = vec![0.0; len * m];
    let mut heads = Vec::with_capacity(nh);
    for hd in 0..nh {
        let qh = head_slice(&q, len, m, hd, dk);
        let kh = head_slice(&k, len, m, hd, dk);
        let vh = head_slice(&v, len, m, hd, dk);
        let (out, a) = attention_flat(&qh, &kh, &vh, len, len, dk, dk);
        for r in 0..len {
            concat[r * m + hd * dk..r * m + (hd + 1) * dk].copy_from_slice(&out[r * dk..(r + 1) * dk]);
        }
        heads.push((qh, kh, vh, a));
    }
    let mut r1 = e.clone();
    gemm(len, m, m, &concat, false, &p[o.wo..], false, &mut r1, true);
    add_bias(&mut r1, &p[o.bo..o.w1]);
    let mut z1 = vec![0.0; len * f];
    gemm(len, m, f, &r1, false, &p[o.w1..], false, &mut z1, false);
    add_bias(&mut z1, &p[o.b1..o.w2]);
    let u: Vec<f64> = z1.iter().map(|v| v.max(0.0)).collect();
    let mut r2 = r1.clone();
    gemm(len, f, m, &u, false, &p[o.w2..], false, &mut r2, true);
    add_bias(&mut r2, &p[o.b2..o.wmu]);
    let mut pooled = vec![0.0; m];
    col_sum(&r2, m, &mut pooled);
    pooled.iter_mut().for_each(|v| *v /= len as f64);
    let mut mu = p[o.bmu..o.ws].to_vec();
    gemm(1, m, h, &pooled, false, &p[o.wmu..], false, &mut mu, true);
    let mut log_sigma = p[o.bs..o.end].to_vec();
    gemm(1, m, h, &pooled, false, &p[o.ws..], false, &mut log_sigma, true);
    Tape { e, heads, o: concat, r1, z1, u, pooled, mu, log_sigma }
}

/// Per-horizon `(mean, log sigma)` for one window given as rows.
pub fn encode_and_project(w: &AttentionWeights, window: &[Vec<f64>], positional: bool) -> Result<Vec<(f64, f64)>> {
    let l = w.layout;
    if window.is_empty() || window.iter().any(|r| r.len() != l.input) {
        return Err(NnError::ShapeMismatch(format!("window rows must have width {}", l.input)));
    }
    let pe = positional.then(|| positional_encoding(window.len(), l.d_model));
    let t = encode(w, &window.concat(), window.len(), pe.as_deref());
    Ok(t.mu.into_iter().zip(t.log_sigma).collect())
}

/// Training examples: flattened windows and per-horizon targets, where a
/// missing target is NaN and ignored by the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Examples {
    pub len: usize,
    pub input: usize,
    pub windows: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Mean Gaussian negative log-likelihood over all observed targets and its
/// gradient.
pub fn nll_and_gradient(w: &AttentionWeights, ex: &Examples, positional: bool) -> Result<(f64, Vec<f64>)> {
    let l = w.layout;
    if ex.input != l.input || ex.windows.iter().any(|x| x.len() != ex.len * l.input) {
        return Err(NnError::ShapeMismatch("examples do not match the model input".into()));
    }
    if ex.targets.len() != ex.windows.len() || ex.targets.iter().any(|t| t.len() != l.horizon) {
        return Err(NnError::ShapeMismatch("one target per horizon required".into()));
    }
    let n_obs = ex.targets.iter().flatten().filter(|v| !v.is_nan()).count();
    if n_obs == 0 {
        return Err(NnError::InsufficientData("no observed targets".into()));
    }
    let o = l.offsets();
    let p = &w.params;
    let (d, m, f, h, nh) = (l.input, l.d_model, l.d_ff, l.horizon, l.n_heads);
    let dk = m / nh;
    let len = ex.len;
    let pe = positional.then(|| positional_encoding(len, m));
    let mut grad = vec![0.0; p.len()];
    let mut loss = 0.0;
    let scale = 1.0 / n_obs as f64;
    for (x, y) in ex.windows.iter().zip(&ex.targets) {
        let t = encode(w, x, len, pe.as_deref());
        let mut dmu = vec![0.0; h];
        let mut dls = vec![0.0; h];
        for j in 0..h {
            if y[j].is_nan() {
                continue;
            }
            let inv = (-t.log_sigma[j]).exp();
            let r = (y[j] - t.mu[j]) * inv;
            loss += (HALF_LN_2PI + t.log_sigma[j] + 0.5 * r * r) * scale;
            dmu[j] = -r * inv * scale;
            dls[j] = (1.0 - r * r) * scale;
        }
        col_sum(&dmu, h, &mut grad[o.bmu..o.ws]);
        col_sum(&dls, h, &mut grad[o.bs..o.end]);
        gemm(m, 1, h, &t.pooled, true, &dmu, false, &mut grad[o.wmu..o.bmu], true);
        gemm(m, 1, h, &t.pooled, true, &dls, false, &mut grad[o.ws..o.bs], true);
        let mut dpool = vec![0.0; m];
        gemm(1, h, m, &dmu, false, &p[o.wmu..o.bmu], true, &mut dpool, false);
        gemm(1, h, m, &dls, false, &p[o.ws..o.bs], true, &mut dpool, true);
        let dr2: Vec<f64> = (0..len).flat_map(|_| dpool.iter().map(|v| v / len as f64)).collect();

        col_sum(&dr2, m, &mut grad[o.b2..o.wmu]);
        gemm(f, len, m, &t.u, true, &dr2, false, &mut grad[o.w2..o.b2], true);
        let mut dz1 = vec![0.0; len * f];
        gemm(len, m, f, &dr2, false, &p[o.w2..o.b2], true, &mut dz1, false);
        dz1.iter_mut().zip(&t.z1).for_each(|(g, z)| {
            if *z <= 0.0 {
                *g = 0.0
            }
        });
        col_sum(&dz1, f, &mut grad[o.b1..o.w2]);
        gemm(m, len, f, &t.r1, true, &dz1, false, &mut grad[o.w1..o.b1], true);
        let mut dr1 = dr2;
        gemm(len, f, m, &dz1, false, &p[o.w1..o.b1], true, &mut dr1, true);

        col_sum(&dr1, m, &mut grad[o.bo..o.w1]);
        gemm(m, len, m, &t.o, true, &dr1, false, &mut grad[o.wo..o.bo], true);
        let mut dcat = vec![0.0; len * m];
        gemm(len, m, m, &dr1, false, &p[o.wo..o.bo], true, &mut dcat, false);

        let mut dq = vec![0.0; len * m];
        let mut dkm = vec![0.0; len * m];
        let mut dv = vec![0.0; len * m];
        for (hd, (qh, kh, vh, a)) in t.heads.iter().enumerate() {
            let dout = head_slice(&dcat, len, m, hd, dk);
            let (gq, gk, gv) = attention_backward(qh, kh, vh, a, &dout, len, len, dk, dk);
            for r in 0..len {
                let dst = r * m + hd * dk..r * m + (hd + 1) * dk;
                dq[dst.clone()].copy_from_slice(&gq[r * dk..(r + 1) * dk]);
                dkm[dst.clone()].copy_from_slice(&gk[r * dk..(r + 1) * dk]);
                dv[dst].copy_from_slice(&gv[r * dk..(r + 1) * dk]);
            }
        }
        let mut de = dr1;
        for (off, end, g) in [(o.wq, o.wk, &dq), (o.wk, o.wv, &dkm), (o.wv, o.wo, &dv)] {
            gemm(m, len, m, &t.e, true, g, false, &mut grad[off..end], true);
            gemm(len, m, m, g, false, &p[off..end], true, &mut de, true);
        }
        col_sum(&de, m, &mut grad[o.be..o.wq]);
        gemm(d, len, m, x, true, &de, false, &mut grad[o.we..o.be], true);
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilisticForecast {
    pub point: Vec<f64>,
    pub sigma: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ProbabilisticForecast {
    /// `point ± z·sigma` per horizon.
    pub fn from_moments(point: Vec<f64>, sigma: Vec<f64>, alpha: f64) -> Self {
        let z = z_quantile(alpha);
        let lower = point.iter().zip(&sigma).map(|(p, s)| p - z * s).collect();
        let upper = point.iter().zip(&sigma).map(|(p, s)| p + z * s).collect();
        Self { point, sigma, lower, upper }
    }
}

/// Trained model plus the scalers needed to map windows in and
/// forecasts out.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionModel {
    pub cfg: AttentionConfig,
    pub train_end: Quarter,
    pub weights: AttentionWeights,
    pub optimizer: AdamW,
    pub feature_scaler: Standardizer,
    pub target_scaler: Standardizer,
    pub loss_curve: Vec<f64>,
}

struct Prepared {
    z: Vec<Vec<f64>>,
    g: Vec<f64>,
}

impl Prepared {
    fn window(&self, m: &FeatureMatrix, origin: usize, lookback: usize) -> Option<Vec<f64>> {
        if origin + 1 < lookback {
            return None;
        }
        let first = origin + 1 - lookback;
        if m.quarters[first].distance_to(m.quarters[origin]) != (lookback - 1) as i64 {
            return None;
        }
        Some(self.z[first..=origin].concat())
    }
}

fn prepare(m: &FeatureMatrix, scaler: &Standardizer) -> Prepared {
    Prepared {
        z: m.data.iter().map(|r| scaler.apply(r)).collect(),
        g: m.target.iter().map(|&v| m.transform.apply(v)).collect(),
    }
}

/// Change of the transformed target from `origin` to `origin + h`, if the
/// target quarter is a row of `m` not later than `limit`.
fn delta(m: &FeatureMatrix, prep: &Prepared, origin: usize, h: usize, limit: Quarter) -> Option<f64> {
    let q = m.quarters[origin].offset(h as i64);
    if q > limit {
        return None;
    }
    m.row_of(q).map(|r| prep.g[r] - prep.g[origin])
}

/// Scalers and standardized training examples for `train_end`.
fn examples(m: &FeatureMatrix, train_end: Quarter, cfg: &AttentionConfig) -> Result<(Standardizer, Standardizer, Examples)> {
    let fit_rows: Vec<Vec<f64>> = m
        .quarters
        .iter()
        .zip(&m.data)
        .filter(|(q, _)| **q <= train_end)
        .map(|(_, r)| r.clone())
        .collect();
    if fit_rows.len() < cfg.lookback + cfg.horizon {
        return Err(NnError::InsufficientData(format!(
            "{} training rows, need lookback + horizon = {}",
            fit_rows.len(),
            cfg.lookback + cfg.horizon
        )));
    }
    let feature_scaler = Standardizer::fit(&fit_rows);
    let prep = prepare(m, &feature_scaler);
    let mut windows = Vec::new();
    let mut raw = Vec::new();
    for origin in 0..m.n_rows() {
        if m.quarters[origin] >= train_end {
            break;
        }
        let Some(win) = prep.window(m, origin, cfg.lookback) else { continue };
        let t: Vec<f64> = (1..=cfg.horizon)
            .map(|h| delta(m, &prep, origin, h, train_end).unwrap_or(f64::NAN))
            .collect();
        if t[0].is_nan() {
            continue;
        }
        windows.push(win);
        raw.push(t);
    }
    if windows.len() < 2 {
        return Err(NnError::InsufficientData(format!("{} training windows", windows.len())));
    }
    let target_scaler = fit_masked(&raw, cfg.horizon);
    let targets: Vec<Vec<f64>> = raw
        .iter()
        .map(|t| t.iter().enumerate().map(|(j, &v)| if v.is_nan() { v } else { target_scaler.apply1(j, v) }).collect())
        .collect();
    Ok((feature_scaler, target_scaler, Examples { len: cfg.lookback, input: m.n_cols(), windows, targets }))
}

/// Fits on windows whose origin and targets are at or before `train_end`.
pub fn train_gaussian_nll(m: &FeatureMatrix, train_end: Quarter, cfg: &AttentionConfig) -> Result<AttentionModel> {
    cfg.validate()?;
    let (feature_scaler, target_scaler, ex) = examples(m, train_end, cfg)?;
    let layout = cfg.layout(m.n_cols());
    let mut weights = AttentionWeights::init(layout, cfg.seed);
    let mut opt = AdamW::new(weights.params.len(), cfg.learning_rate, cfg.weight_decay);
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (loss, grad) = nll_and_gradient(&weights, &ex, cfg.positional_encoding)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(NnError::NonFinite { epoch, loss });
        }
        loss_curve.push(loss);
        opt.update(&mut weights.params, &grad);
    }
    Ok(AttentionModel {
        cfg: cfg.clone(),
        train_end,
        weights,
        optimizer: opt,
        feature_scaler,
        target_scaler,
        loss_curve,
    })
}

/// Per-column mean and population sd ignoring NaN.
fn fit_masked(rows: &[Vec<f64>], cols: usize) -> Standardizer {
    let mut mean = vec![0.0; cols];
    let mut sd = vec![1.0; cols];
    for j in 0..cols {
        let v: Vec<f64> = rows.iter().map(|r| r[j]).filter(|x| !x.is_nan()).collect();
        if v.is_empty() {
            continue;
        }
        let s = Standardizer::fit_column(&v);
        mean[j] = s.mean[0];
        sd[j] = s.sd[0];
    }
    Standardizer { mean, sd }
}

impl AttentionModel {
    pub fn to_saved(&self) -> SavedState {
        SavedState {
            kind: "attention".into(),
            config_hash: self.cfg.hash(),
            params: self.weights.params.clone(),
            optimizer: self.optimizer.clone(),
        }
    }

    /// Rebuilds a model from saved weights; scalers are recomputed from the
    /// training matrix.
    pub fn from_saved(saved: SavedState, m: &FeatureMatrix, train_end: Quarter, cfg: &AttentionConfig) -> Result<Self> {
        if saved.kind != "attention" {
            return Err(NnError::Format(format!("expected attention weights, found {}", saved.kind)));
        }
        saved.check_config(&cfg.hash())?;
        let (feature_scaler, target_scaler, _) = examples(m, train_end, cfg)?;
        let layout = cfg.layout(m.n_cols());
        if saved.params.len() != layout.n_params() {
            return Err(NnError::ShapeMismatch(format!(
                "{} saved parameters, layout needs {}",
                saved.params.len(),
                layout.n_params()
            )));
        }
        Ok(Self {
            cfg: cfg.clone(),
            train_end,
            weights: AttentionWeights { layout, params: saved.params },
            optimizer: saved.optimizer,
            feature_scaler,
            target_scaler,
            loss_curve: Vec::new(),
        })
    }

    /// Forecast from the window ending at `origin` (a quarter with a row in
    /// `m`). Levels are returned on the original scale; `sigma` is on the
    /// transformed scale.
    pub fn predict_with_intervals(&self, m: &FeatureMatrix, origin: Quarter) -> Result<ProbabilisticForecast> {
        let row = m
            .row_of(origin)
            .ok_or_else(|| NnError::InsufficientData(format!("no feature row at {origin}")))?;
        let prep = prepare(m, &self.feature_scaler);
        let win = prep
            .window(m, row, self.cfg.lookback)
            .ok_or_else(|| NnError::InsufficientData(format!("no complete window ending {origin}")))?;
        let rows: Vec<Vec<f64>> = win.chunks(m.n_cols()).map(|c| c.to_vec()).collect();
        let heads = encode_and_project(&self.weights, &rows, self.cfg.positional_encoding)?;
        let base = prep.g[row];
        let point: Vec<f64> = heads.iter().enumerate().map(|(j, (mu, _))| base + self.target_scaler.invert1(j, *mu)).collect();
        let sigma: Vec<f64> = heads.iter().enumerate().map(|(j, (_, ls))| ls.exp() * self.target_scaler.sd[j]).collect();
        let f = ProbabilisticForecast::from_moments(point, sigma, self.cfg.alpha);
        let g = m.transform;
        Ok(ProbabilisticForecast {
            point: f.point.iter().map(|&v| g.invert(v)).collect(),
            lower: f.lower.iter().map(|&v| g.invert(v)).collect(),
            upper: f.upper.iter().map(|&v| g.invert(v)).collect(),
            sigma: f.sigma,
        })
    }
}

#[cfg(test)]
mod tests;
