//! Single-layer LSTM regressor with hand-written backpropagation through
//! time, trained full-batch with AdamW and fine-tuned during walk-forward.
//!
//! Gates act on the concatenation `[h_{t-1}, x_t]`:
//!
//! ```text
//! f = sigmoid(W_f [h, x] + b_f)     i = sigmoid(W_i [h, x] + b_i)
//! o = sigmoid(W_o [h, x] + b_o)     g = tanh(W_c [h, x] + b_c)
//! c_t = f * c_{t-1} + i * g         h_t = o * tanh(c_t)
//! y = W_out relu(W_d dropout(h_T) + b_d) + b_out
//! ```
//!
//! The four gate matrices are stored side by side as one
//! `(hidden + input) x 4*hidden` block in the order f, i, o, c.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Quarter;
use crate::features::FeatureMatrix;
use crate::nn::{
    derive_seed, dropout_mask, gemm, rng, sigmoid, uniform_init, AdamW, NnError, Result, SavedState,
    Standardizer,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LstmConfig {
    pub hidden_size: usize,
    /// Width of the ReLU layer; defaults to `hidden_size`.
    pub dense_size: Option<usize>,
    pub dropout: f64,
    pub lookback: usize,
    pub epochs: usize,
    pub finetune_epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Learn the next-quarter change of the transformed target instead of
    /// its level.
    pub predict_delta: bool,
}

impl Default for LstmConfig {
    fn default() -> Self {
        Self {
            hidden_size: 512,
            dense_size: None,
            dropout: 0.02,
            lookback: 8,
            epochs: 100,
            finetune_epochs: 50,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            seed: 0,
            predict_delta: true,
        }
    }
}

impl LstmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NnError::InvalidConfig("dropout must be in [0, 1)".into()));
        }
        if self.lookback == 0 || self.hidden_size == 0 || self.dense_size == Some(0) {
            return Err(NnError::InvalidConfig("lookback and layer sizes must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(NnError::InvalidConfig("learning rate must be positive, decay non-negative".into()));
        }
        Ok(())
    }

    pub fn dense(&self) -> usize {
        self.dense_size.unwrap_or(self.hidden_size)
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }
}

/// Offsets of each parameter block in the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmLayout {
    pub input: usize,
    pub hidden: usize,
    pub dense: usize,
}

impl LstmLayout {
    fn gates_len(&self) -> usize {
        (self.hidden + self.input) * 4 * self.hidden
    }
    fn o_bg(&self) -> usize {
        self.gates_len()
    }
    fn o_wd(&self) -> usize {
        self.o_bg() + 4 * self.hidden
    }
    fn o_bd(&self) -> usize {
        self.o_wd() + self.hidden * self.dense
    }
    fn o_wo(&self) -> usize {
        self.o_bd() + self.dense
    }
    fn o_bo(&self) -> usize {
        self.o_wo() + self.dense
    }
    pub fn n_params(&self) -> usize {
        self.o_bo() + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    pub layout: LstmLayout,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Forget = 0,
    Input = 1,
    Output = 2,
    Cell = 3,
}

impl LstmWeights {
    pub fn zeros(layout: LstmLayout) -> Self {
        Self {
            layout,
            params: vec![0.0; layout.n_params()],
        }
    }

    /// Uniform `±1/sqrt(fan_in)` initialization with forget bias one.
    pub fn init(layout: LstmLayout, seed: u64) -> Self {
        let mut w = Self::zeros(layout);
        let mut r = rng(seed);
        let l = layout;
        let p = &mut w.params;
        uniform_init(&mut r, &mut p[..l.gates_len()], 1.0 / ((l.hidden + l.input) as f64).sqrt());
        let bound_h = 1.0 / (l.hidden as f64).sqrt();
        uniform_init(&mut r, &mut p[l.o_wd()..l.o_bd()], bound_h);
        uniform_init(&mut r, &mut p[l.o_bd()..l.o_wo()], bound_h);
        let bound_d = 1.0 / (l.dense as f64).sqrt();
        uniform_init(&mut r, &mut p[l.o_wo()..l.o_bo()], bound_d);
        uniform_init(&mut r, &mut p[l.o_bo()..], bound_d);
        for j in 0..l.hidden {
            p[l.o_bg() + j] = 1.0;
        }
        w
    }

    /// Weights of one gate over `[h, x]`, `(hidden + input) x hidden`.
    pub fn gate_matrix(&self, gate: Gate) -> Vec<Vec<f64>> {
        let h = self.layout.hidden;
        let rows = h + self.layout.input;
        (0..rows)
            .map(|r| (0..h).map(|j| self.params[r * 4 * h + gate as usize * h + j]).collect())
            .collect()
    }

    pub fn gate_bias(&self, gate: Gate) -> &[f64] {
        let h = self.layout.hidden;
        let o = self.layout.o_bg() + gate as usize * h;
        &self.params[o..o + h]
    }

    pub fn gate_bias_mut(&mut self, gate: Gate) -> &mut [f64] {
        let h = self.layout.hidden;
        let o = self.layout.o_bg() + gate as usize * h;
        &mut self.params[o..o + h]
    }

    /// Bias of the ReLU dense layer.
    pub fn dense_bias_mut(&mut self) -> &mut [f64] {
        let (o, e) = (self.layout.o_bd(), self.layout.o_wo());
        &mut self.params[o..e]
    }

    pub fn output_bias(&self) -> f64 {
        self.params[self.layout.o_bo()]
    }
}

/// One cell update for a single example.
pub fn cell_step(w: &LstmWeights, h_prev: &[f64], c_prev: &[f64], x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let l = w.layout;
    if h_prev.len() != l.hidden || c_prev.len() != l.hidden || x.len() != l.input {
        return Err(NnError::ShapeMismatch(format!(
            "cell expects hidden {} and input {}",
            l.hidden, l.input
        )));
    }
    let hx: Vec<f64> = h_prev.iter().chain(x).copied().collect();
    let mut z = w.params[l.o_bg()..l.o_wd()].to_vec();
    gemm(1, l.hidden + l.input, 4 * l.hidden, &hx, false, &w.params, false, &mut z, true);
    let h = l.hidden;
    let mut c = vec![0.0; h];
    let mut hn = vec![0.0; h];
    for j in 0..h {
        let f = sigmoid(z[j]);
        let i = sigmoid(z[h + j]);
        let o = sigmoid(z[2 * h + j]);
        let g = z[3 * h + j].tanh();
        c[j] = f * c_prev[j] + i * g;
        hn[j] = o * c[j].tanh();
    }
    Ok((hn, c))
}

/// A batch of equal-length sequences stored step-major: `steps[t]` is a
/// `batch x input` row-major block.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub batch: usize,
    pub input: usize,
    pub steps: Vec<Vec<f64>>,
}

impl Batch {
    /// From `sequences[b][t][j]`.
    pub fn from_sequences(sequences: &[Vec<Vec<f64>>]) -> Result<Batch> {
        let b = sequences.len();
        let len = sequences.first().map_or(0, |s| s.len());
        let input = sequences.first().and_then(|s| s.first()).map_or(0, |r| r.len());
        if sequences.iter().any(|s| s.len() != len || s.iter().any(|r| r.len() != input)) {
            return Err(NnError::ShapeMismatch("ragged sequences".into()));
        }
        let steps = (0..len)
            .map(|t| sequences.iter().flat_map(|s| s[t].iter().copied()).collect())
            .collect();
        Ok(Batch { batch: b, input, steps })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

struct Tape {
    /// `[h_{t-1}, x_t]` per step, `batch x (hidden + input)`.
    hx: Vec<Vec<f64>>,
    /// Activated gates per step, `batch x 4*hidden`.
    gates: Vec<Vec<f64>>,
    /// Cell states `c_0 .. c_T`.
    c: Vec<Vec<f64>>,
    h_drop: Vec<f64>,
    dense_pre: Vec<f64>,
    dense_act: Vec<f64>,
    out: Vec<f64>,
}

fn run(w: &LstmWeights, x: &Batch, mask: Option<&[f64]>) -> Result<Tape> {
    let l = w.layout;
    if x.input != l.input || x.is_empty() {
        return Err(NnError::ShapeMismatch(format!(
            "batch input width {} but model expects {}",
            x.input, l.input
        )));
    }
    let (b, h, hd) = (x.batch, l.hidden, l.hidden + l.input);
    let p = &w.params;
    let bg = &p[l.o_bg()..l.o_wd()];
    let mut hx_all = Vec::with_capacity(x.len());
    let mut gates_all = Vec::with_capacity(x.len());
    let mut c_all = vec![vec![0.0; b * h]];
    let mut hcur = vec![0.0; b * h];
    for xt in &x.steps {
        let mut hx = vec![0.0; b * hd];
        for r in 0..b {
            hx[r * hd..r * hd + h].copy_from_slice(&hcur[r * h..(r + 1) * h]);
            hx[r * hd + h..(r + 1) * hd].copy_from_slice(&xt[r * l.input..(r + 1) * l.input]);
        }
        let mut z = vec![0.0; b * 4 * h];
        for r in 0..b {
            z[r * 4 * h..(r + 1) * 4 * h].copy_from_slice(bg);
        }
        gemm(b, hd, 4 * h, &hx, false, p, false, &mut z, true);
        let cprev = c_all.last().expect("initial state");
        let mut c = vec![0.0; b * h];
        for r in 0..b {
            let zr = &mut z[r * 4 * h..(r + 1) * 4 * h];
            for j in 0..h {
                let f = sigmoid(zr[j]);
                let i = sigmoid(zr[h + j]);
                let o = sigmoid(zr[2 * h + j]);
                let g = zr[3 * h + j].tanh();
                zr[j] = f;
                zr[h + j] = i;
                zr[2 * h + j] = o;
                zr[3 * h + j] = g;
                let cv = f * cprev[r * h + j] + i * g;
                c[r * h + j] = cv;
                hcur[r * h + j] = o * cv.tanh();
            }
        }
        hx_all.push(hx);
        gates_all.push(z);
        c_all.push(c);
    }
    let h_drop: Vec<f64> = match mask {
        Some(m) => hcur.iter().zip(m).map(|(a, b)| a * b).collect(),
        None => hcur.clone(),
    };
    let k = l.dense;
    let mut dense_pre = vec![0.0; b * k];
    for r in 0..b {
        dense_pre[r * k..(r + 1) * k].copy_from_slice(&p[l.o_bd()..l.o_wo()]);
    }
    gemm(b, h, k, &h_drop, false, &p[l.o_wd()..], false, &mut dense_pre, true);
    let dense_act: Vec<f64> = dense_pre.iter().map(|v| v.max(0.0)).collect();
    let mut out = vec![p[l.o_bo()]; b];
    gemm(b, k, 1, &dense_act, false, &p[l.o_wo()..], false, &mut out, true);
    Ok(Tape {
        hx: hx_all,
        gates: gates_all,
        c: c_all,
        h_drop,
        dense_pre,
        dense_act,
        out,
    })
}

/// Inference: predictions for every sequence in the batch.
pub fn forward(w: &LstmWeights, x: &Batch) -> Result<Vec<f64>> {
    Ok(run(w, x, None)?.out)
}

/// Mean squared error and its gradient with respect to every parameter.
/// `mask` (batch x hidden) multiplies the final hidden state.
pub fn loss_and_gradient(w: &LstmWeights, x: &Batch, y: &[f64], mask: Option<&[f64]>) -> Result<(f64, Vec<f64>)> {
    let tape = run(w, x, mask)?;
    let l = w.layout;
    let (b, h, k, hd) = (x.batch, l.hidden, l.dense, l.hidden + l.input);
    if y.len() != b {
        return Err(NnError::ShapeMismatch("one target per sequence required".into()));
    }
    let p = &w.params;
    let mut grad = vec![0.0; p.len()];
    let nb = b as f64;
    let loss = tape.out.iter().zip(y).map(|(o, t)| (o - t).powi(2)).sum::<f64>() / nb;
    let dout: Vec<f64> = tape.out.iter().zip(y).map(|(o, t)| 2.0 * (o - t) / nb).collect();

    grad[l.o_bo()] = dout.iter().sum();
    gemm(k, b, 1, &tape.dense_act, true, &dout, false, &mut grad[l.o_wo()..l.o_bo()], false);
    let mut dpre = vec![0.0; b * k];
    gemm(b, 1, k, &dout, false, &p[l.o_wo()..l.o_bo()], true, &mut dpre, false);
    for (d, a) in dpre.iter_mut().zip(&tape.dense_pre) {
        if *a <= 0.0 {
            *d = 0.0;
        }
    }
    for r in 0..b {
        for j in 0..k {
            grad[l.o_bd() + j] += dpre[r * k + j];
        }
    }
    gemm(h, b, k, &tape.h_drop, true, &dpre, false, &mut grad[l.o_wd()..l.o_bd()], false);
    let mut dh = vec![0.0; b * h];
    gemm(b, k, h, &dpre, false, &p[l.o_wd()..l.o_bd()], true, &mut dh, false);
    if let Some(m) = mask {
        for (d, mv) in dh.iter_mut().zip(m) {
            *d *= mv;
        }
    }

    let mut dc = vec![0.0; b * h];
    let mut dz = vec![0.0; b * 4 * h];
    let mut dhx = vec![0.0; b * hd];
    for t in (0..x.len()).rev() {
        let gates = &tape.gates[t];
        let c = &tape.c[t + 1];
        let cprev = &tape.c[t];
        for r in 0..b {
            for j in 0..h {
                let gi = r * 4 * h;
                let (f, i, o, g) = (gates[gi + j], gates[gi + h + j], gates[gi + 2 * h + j], gates[gi + 3 * h + j]);
                let tc = c[r * h + j].tanh();
                let dhv = dh[r * h + j];
                let dcv = dc[r * h + j] + dhv * o * (1.0 - tc * tc);
                dz[gi + j] = dcv * cprev[r * h + j] * f * (1.0 - f);
                dz[gi + h + j] = dcv * g * i * (1.0 - i);
                dz[gi + 2 * h + j] = dhv * tc * o * (1.0 - o);
                dz[gi + 3 * h + j] = dcv * i * (1.0 - g * g);
                dc[r * h + j] = dcv * f;
            }
        }
        gemm(hd, b, 4 * h, &tape.hx[t], true, &dz, false, &mut grad[..l.gates_len()], true);
        for r in 0..b {
            for j in 0..4 * h {
                grad[l.o_bg() + j] += dz[r * 4 * h + j];
            }
        }
        gemm(b, 4 * h, hd, &dz, false, &p[..l.gates_len()], true, &mut dhx, false);
        for r in 0..b {
            dh[r * h..(r + 1) * h].copy_from_slice(&dhx[r * hd..r * hd + h]);
        }
    }
    Ok((loss, grad))
}

/// Weights plus optimizer state: enough to continue training exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    pub weights: LstmWeights,
    pub optimizer: AdamW,
    pub loss_curve: Vec<f64>,
    pub seed: u64,
}

impl TrainingState {
    pub fn new(layout: LstmLayout, cfg: &LstmConfig) -> Self {
        let weights = LstmWeights::init(layout, cfg.seed);
        let n = weights.params.len();
        Self {
            weights,
            optimizer: AdamW::new(n, cfg.learning_rate, cfg.weight_decay),
            loss_curve: Vec::new(),
            seed: cfg.seed,
        }
    }

    /// `epochs` full-batch steps; dropout masks derive from the seed and
    /// the optimizer step.
    pub fn train(&mut self, x: &Batch, y: &[f64], epochs: usize, dropout: f64) -> Result<()> {
        let h = self.weights.layout.hidden;
        for _ in 0..epochs {
            let step = self.optimizer.step;
            let mask = if dropout > 0.0 {
                Some(dropout_mask(&mut rng(derive_seed(self.seed, step)), x.batch * h, dropout))
            } else {
                None
            };
            let (loss, grad) = loss_and_gradient(&self.weights, x, y, mask.as_deref())?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(NnError::NonFinite { epoch: self.loss_curve.len(), loss });
            }
            self.loss_curve.push(loss);
            self.optimizer.update(&mut self.weights.params, &grad);
        }
        Ok(())
    }

    pub fn to_saved(&self, config_hash: &str) -> SavedState {
        SavedState {
            kind: "lstm".into(),
            config_hash: config_hash.into(),
            params: self.weights.params.clone(),
            optimizer: self.optimizer.clone(),
        }
    }
}

/// Standardized feature rows and transformed targets of a matrix.
#[derive(Debug, Clone)]
struct Samples {
    z: Vec<Vec<f64>>,
    g: Vec<f64>,
}

impl Samples {
    fn new(m: &FeatureMatrix, scaler: &Standardizer) -> Self {
        Self {
            z: m.data.iter().map(|r| scaler.apply(r)).collect(),
            g: m.target.iter().map(|&v| m.transform.apply(v)).collect(),
        }
    }

    /// Window of `lookback` rows ending at `origin`, if contiguous.
    fn window(&self, m: &FeatureMatrix, origin: usize, lookback: usize) -> Option<Vec<Vec<f64>>> {
        if origin + 1 < lookback {
            return None;
        }
        let first = origin + 1 - lookback;
        if m.quarters[first].distance_to(m.quarters[origin]) != (lookback - 1) as i64 {
            return None;
        }
        Some(self.z[first..=origin].to_vec())
    }

    /// Unscaled regression target for the sample ending at `origin`.
    fn target(&self, m: &FeatureMatrix, origin: usize, delta: bool) -> Option<f64> {
        let next = m.row_of(m.quarters[origin].succ())?;
        Some(if delta { self.g[next] - self.g[origin] } else { self.g[next] })
    }
}

fn fit_scaler(m: &FeatureMatrix, train_end: Quarter) -> Result<Standardizer> {
    let rows: Vec<Vec<f64>> = m
        .quarters
        .iter()
        .zip(&m.data)
        .filter(|(q, _)| **q <= train_end)
        .map(|(_, r)| r.clone())
        .collect();
    if rows.is_empty() {
        return Err(NnError::InsufficientData("no feature rows before the training end".into()));
    }
    Ok(Standardizer::fit(&rows))
}

/// A trained network plus the scaling fixed at training time.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    pub cfg: LstmConfig,
    pub train_end: Quarter,
    pub state: TrainingState,
    pub feature_scaler: Standardizer,
    pub target_scaler: Standardizer,
}

/// Origins with a complete window whose next-quarter target is at or
/// before `train_end`.
fn training_origins(m: &FeatureMatrix, samples: &Samples, train_end: Quarter, cfg: &LstmConfig) -> Vec<usize> {
    (0..m.n_rows())
        .filter(|&o| m.quarters[o].succ() <= train_end)
        .filter(|&o| samples.target(m, o, cfg.predict_delta).is_some() && samples.window(m, o, cfg.lookback).is_some())
        .collect()
}

fn scalers(m: &FeatureMatrix, train_end: Quarter, cfg: &LstmConfig) -> Result<(Standardizer, Standardizer, Samples, Vec<usize>)> {
    let fs = fit_scaler(m, train_end)?;
    let samples = Samples::new(m, &fs);
    let origins = training_origins(m, &samples, train_end, cfg);
    if origins.len() < 2 {
        return Err(NnError::InsufficientData(format!(
            "{} training sequences for lookback {}",
            origins.len(),
            cfg.lookback
        )));
    }
    let raw: Vec<f64> = origins.iter().map(|&o| samples.target(m, o, cfg.predict_delta).expect("filtered")).collect();
    Ok((fs, Standardizer::fit_column(&raw), samples, origins))
}

/// Fits on every sample whose target quarter is at or before `train_end`.
pub fn train(m: &FeatureMatrix, train_end: Quarter, cfg: &LstmConfig) -> Result<LstmModel> {
    cfg.validate()?;
    let (feature_scaler, target_scaler, samples, origins) = scalers(m, train_end, cfg)?;
    let layout = LstmLayout { input: m.n_cols(), hidden: cfg.hidden_size, dense: cfg.dense() };
    let mut state = TrainingState::new(layout, cfg);
    let model = LstmModel { cfg: cfg.clone(), train_end, state: state.clone(), feature_scaler, target_scaler };
    let (x, y) = model.batch(m, &samples, &origins)?;
    state.train(&x, &y, cfg.epochs, cfg.dropout)?;
    Ok(LstmModel { state, ..model })
}

impl LstmModel {
    /// Rebuilds a model from saved weights; scalers are recomputed from the
    /// matrix, which must be the one used in training.
    pub fn from_saved(saved: SavedState, m: &FeatureMatrix, train_end: Quarter, cfg: &LstmConfig) -> Result<Self> {
        if saved.kind != "lstm" {
            return Err(NnError::Format(format!("expected lstm weights, found {}", saved.kind)));
        }
        saved.check_config(&cfg.hash())?;
        let (feature_scaler, target_scaler, _, _) = scalers(m, train_end, cfg)?;
        let layout = LstmLayout { input: m.n_cols(), hidden: cfg.hidden_size, dense: cfg.dense() };
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
            state: TrainingState {
                weights: LstmWeights { layout, params: saved.params },
                optimizer: saved.optimizer,
                loss_curve: Vec::new(),
                seed: cfg.seed,
            },
            feature_scaler,
            target_scaler,
        })
    }

    pub fn to_saved(&self) -> SavedState {
        self.state.to_saved(&self.cfg.hash())
    }

    fn batch(&self, m: &FeatureMatrix, samples: &Samples, origins: &[usize]) -> Result<(Batch, Vec<f64>)> {
        let seqs: Vec<Vec<Vec<f64>>> = origins
            .iter()
            .map(|&o| samples.window(m, o, self.cfg.lookback).expect("complete window"))
            .collect();
        let y = origins
            .iter()
            .map(|&o| self.target_scaler.apply1(0, samples.target(m, o, self.cfg.predict_delta).expect("known target")))
            .collect();
        Ok((Batch::from_sequences(&seqs)?, y))
    }

    /// Untransformed next-quarter forecast from the window ending at row `origin`.
    fn predict_row(&self, m: &FeatureMatrix, samples: &Samples, origin: usize) -> Result<f64> {
        let window = samples.window(m, origin, self.cfg.lookback).ok_or_else(|| {
            NnError::InsufficientData(format!("no complete window ending {}", m.quarters[origin]))
        })?;
        let z = forward(&self.state.weights, &Batch::from_sequences(&[window])?)?[0];
        let step = self.target_scaler.invert1(0, z);
        let level = if self.cfg.predict_delta { samples.g[origin] + step } else { step };
        Ok(m.transform.invert(level))
    }

    /// Walks through `targets` (ascending): predict from the trailing
    /// window, and once the quarter's value is known fine-tune on every
    /// sample up to it. A target may lie one quarter past the last row.
    pub fn walk_forward(&mut self, m: &FeatureMatrix, targets: &[Quarter]) -> Result<Vec<f64>> {
        let cfg = self.cfg.clone();
        let samples = Samples::new(m, &self.feature_scaler);
        let mut origins = training_origins(m, &samples, self.train_end, &cfg);
        let mut forecasts = Vec::with_capacity(targets.len());
        for (n, &tau) in targets.iter().enumerate() {
            let origin = m
                .row_of(tau.pred())
                .ok_or_else(|| NnError::InsufficientData(format!("no feature row before {tau}")))?;
            forecasts.push(self.predict_row(m, &samples, origin)?);

            let revealed = samples.target(m, origin, cfg.predict_delta).is_some();
            let last = n + 1 == targets.len();
            if revealed && !last && cfg.finetune_epochs > 0 && !origins.contains(&origin) {
                origins.push(origin);
                let (x, y) = self.batch(m, &samples, &origins)?;
                self.state.train(&x, &y, cfg.finetune_epochs, cfg.dropout)?;
            }
        }
        Ok(forecasts)
    }
}

/// End quarters of the training sequences available for `train_end`.
pub fn training_quarters(m: &FeatureMatrix, train_end: Quarter, cfg: &LstmConfig) -> Result<Vec<Quarter>> {
    let (_, _, _, origins) = scalers(m, train_end, cfg)?;
    Ok(origins.iter().map(|&o| m.quarters[o]).collect())
}

/// Trains on the sequences ending at `fit` and returns untransformed
/// `(actual, predicted)` next-quarter values for the sequences ending at
/// `holdout`. All quarters must come from [`training_quarters`].
pub fn fit_predict_subset(
    m: &FeatureMatrix,
    train_end: Quarter,
    cfg: &LstmConfig,
    fit: &[Quarter],
    holdout: &[Quarter],
) -> Result<(Vec<f64>, Vec<f64>)> {
    cfg.validate()?;
    let (feature_scaler, _, samples, all) = scalers(m, train_end, cfg)?;
    let pick = |qs: &[Quarter]| -> Result<Vec<usize>> {
        qs.iter()
            .map(|q| {
                m.row_of(*q)
                    .filter(|o| all.contains(o))
                    .ok_or_else(|| NnError::InsufficientData(format!("{q} is not a training sequence end")))
            })
            .collect()
    };
    let (fit, holdout) = (pick(fit)?, pick(holdout)?);
    if fit.len() < 2 {
        return Err(NnError::InsufficientData(format!("{} fitting sequences", fit.len())));
    }
    let raw: Vec<f64> = fit.iter().map(|&o| samples.target(m, o, cfg.predict_delta).expect("filtered")).collect();
    let layout = LstmLayout { input: m.n_cols(), hidden: cfg.hidden_size, dense: cfg.dense() };
    let mut model = LstmModel {
        cfg: cfg.clone(),
        train_end,
        state: TrainingState::new(layout, cfg),
        feature_scaler,
        target_scaler: Standardizer::fit_column(&raw),
    };
    let (x, y) = model.batch(m, &samples, &fit)?;
    model.state.train(&x, &y, cfg.epochs, cfg.dropout)?;
    let mut actual = Vec::with_capacity(holdout.len());
    let mut predicted = Vec::with_capacity(holdout.len());
    for &o in &holdout {
        let next = m.row_of(m.quarters[o].succ()).expect("training sequences have a target");
        actual.push(m.target[next]);
        predicted.push(model.predict_row(m, &samples, o)?);
    }
    Ok((actual, predicted))
}

/// Output of a walk-forward run.
#[derive(Debug, Clone)]
pub struct LstmRun {
    /// Untransformed forecasts aligned with the requested targets.
    pub forecasts: Vec<f64>,
    pub model: LstmModel,
}

/// [`train`] followed by [`LstmModel::walk_forward`].
pub fn walk_forward(m: &FeatureMatrix, train_end: Quarter, targets: &[Quarter], cfg: &LstmConfig) -> Result<LstmRun> {
    let mut model = train(m, train_end, cfg)?;
    let forecasts = model.walk_forward(m, targets)?;
    Ok(LstmRun { forecasts, model })
}
