//! Shared pieces for the from-scratch networks: AdamW, z-scoring,
//! initialization, dropout masks, a versioned weight file format and a
//! finite-difference gradient helper.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_pcg::Pcg32;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss at epoch {epoch}: {loss}")]
    NonFinite { epoch: usize, loss: f64 },
    #[error("not enough training data: {0}")]
    InsufficientData(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("weight file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamW {
    pub fn new(n_params: usize, lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * (mh / (vh.sqrt() + self.eps) + self.weight_decay * params[i]);
        }
    }
}

/// Column-wise z-scoring fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    /// Zero-variance columns get unit scale.
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let n = rows.len().max(1) as f64;
        let k = rows.first().map_or(0, |r| r.len());
        let mean: Vec<f64> = (0..k).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let sd = (0..k)
            .map(|j| {
                let v = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if v > 1e-24 {
                    v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, sd }
    }

    pub fn fit_column(values: &[f64]) -> Self {
        let rows: Vec<Vec<f64>> = values.iter().map(|v| vec![*v]).collect();
        Self::fit(&rows)
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn apply1(&self, j: usize, x: f64) -> f64 {
        (x - self.mean[j]) / self.sd[j]
    }

    pub fn invert1(&self, j: usize, z: f64) -> f64 {
        z * self.sd[j] + self.mean[j]
    }
}

pub fn rng(seed: u64) -> Pcg32 {
    Pcg32::seed_from_u64(seed)
}

/// Seed for a derived stream, e.g. dropout at a given optimizer step.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fills `out` with uniform draws in `[-bound, bound]`.
pub fn uniform_init(rng: &mut Pcg32, out: &mut [f64], bound: f64) {
    for v in out {
        *v = rng.gen_range(-bound..=bound);
    }
}

/// Inverted-dropout mask: zero with probability `p`, otherwise `1/(1-p)`.
pub fn dropout_mask(rng: &mut Pcg32, n: usize, p: f64) -> Vec<f64> {
    if p <= 0.0 {
        return vec![1.0; n];
    }
    let keep = 1.0 / (1.0 - p);
    (0..n).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect()
}

/// `c = a * b` (or `c += a * b` with `accumulate`) for row-major `a`
/// (`m x k`, or `k x m` when `ta`) and `b` (`k x n`, or `n x k` when `tb`).
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the slices, and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Central finite-difference gradient of `f` at `x`.
pub fn numeric_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest elementwise relative error `|a - b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

const MAGIC: &[u8; 4] = b"FCWT";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to resume training bit-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedState {
    /// Model family tag, e.g. `lstm`.
    pub kind: String,
    /// Hex SHA-256 of the model config.
    pub config_hash: String,
    pub params: Vec<f64>,
    pub optimizer: AdamW,
}

fn write_f64s<W: Write>(w: &mut W, v: &[f64]) -> std::io::Result<()> {
    w.write_all(&(v.len() as u64).to_le_bytes())?;
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R) -> Result<Vec<f64>> {
    let n = read_u64(r)? as usize;
    if n > 1 << 32 {
        return Err(NnError::Format("implausible array length".into()));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(f64::from_bits(read_u64(r)?));
    }
    Ok(out)
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u64).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let n = read_u64(r)? as usize;
    if n > 1 << 16 {
        return Err(NnError::Format("implausible string length".into()));
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| NnError::Format(e.to_string()))
}

impl SavedState {
    /// Little-endian layout: magic, version, kind, config hash, optimizer
    /// scalars, params, first and second moments.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        write_str(&mut w, &self.kind)?;
        write_str(&mut w, &self.config_hash)?;
        let o = &self.optimizer;
        for x in [o.lr, o.beta1, o.beta2, o.eps, o.weight_decay] {
            w.write_all(&x.to_le_bytes())?;
        }
        w.write_all(&o.step.to_le_bytes())?;
        write_f64s(&mut w, &self.params)?;
        write_f64s(&mut w, &o.m)?;
        write_f64s(&mut w, &o.v)?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::Format("bad magic".into()));
        }
        let mut v = [0u8; 4];
        r.read_exact(&mut v)?;
        let version = u32::from_le_bytes(v);
        if version != FORMAT_VERSION {
            return Err(NnError::Format(format!("unsupported version {version}")));
        }
        let kind = read_str(&mut r)?;
        let config_hash = read_str(&mut r)?;
        let mut scalars = [0.0; 5];
        for s in &mut scalars {
            *s = f64::from_bits(read_u64(&mut r)?);
        }
        let step = read_u64(&mut r)?;
        let params = read_f64s(&mut r)?;
        let m = read_f64s(&mut r)?;
        let v = read_f64s(&mut r)?;
        if m.len() != params.len() || v.len() != params.len() {
            return Err(NnError::Format("moment lengths differ from parameters".into()));
        }
        Ok(Self {
            kind,
            config_hash,
            params,
            optimizer: AdamW {
                lr: scalars[0],
                beta1: scalars[1],
                beta2: scalars[2],
                eps: scalars[3],
                weight_decay: scalars[4],
                m,
                v,
                step,
            },
        })
    }

    /// Fails unless the file was written for `config_hash`.
    pub fn check_config(&self, config_hash: &str) -> Result<()> {
        if self.config_hash != config_hash {
            return Err(NnError::Format(format!(
                "weights were trained with config {} but {} was requested",
                self.config_hash, config_hash
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.5, -1.0, 2.0, 0.0, 1.0]; // 3x2
        let mut c = [0.0; 4];
        gemm(2, 3, 2, &a, false, &b, false, &mut c, false);
        assert_eq!(c, [1.0 - 2.0, 0.5 + 4.0 + 3.0, 4.0 - 5.0, 2.0 + 10.0 + 6.0]);
        // a' (3x2) times a (2x3) gives the Gram matrix
        let mut g = [0.0; 9];
        gemm(3, 2, 3, &a, true, &a, false, &mut g, false);
        assert_eq!(g[0], 1.0 + 16.0);
        assert_eq!(g[5], 2.0 * 3.0 + 5.0 * 6.0);
        // a (2x3) times a' (3x2), accumulated twice
        let mut h = [0.0; 4];
        gemm(2, 3, 2, &a, false, &a, true, &mut h, false);
        gemm(2, 3, 2, &a, false, &a, true, &mut h, true);
        assert_eq!(h, [28.0, 64.0, 64.0, 154.0]);
    }

    #[test]
    fn adamw_minimizes_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut opt = AdamW::new(2, 0.05, 0.0);
        for _ in 0..2000 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            opt.update(&mut x, &g);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-3));
    }

    #[test]
    fn decay_is_decoupled() {
        // With zero gradient only the decay term moves the parameter.
        let mut x = vec![1.0];
        let mut opt = AdamW::new(1, 0.1, 0.5);
        opt.update(&mut x, &[0.0]);
        assert!((x[0] - (1.0 - 0.1 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn standardizer_round_trip() {
        let s = Standardizer::fit_column(&[5.0, 5.0, 5.0]);
        assert_eq!(s.sd[0], 1.0);
        assert!((s.invert1(0, s.apply1(0, 5.0)) - 5.0).abs() < 1e-12);
        let s = Standardizer::fit(&[vec![1.0, 2.0], vec![3.0, 6.0]]);
        let z = s.apply(&[3.0, 6.0]);
        assert!((z[0] - 1.0).abs() < 1e-12 && (z[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn numeric_gradient_of_cubic() {
        let g = numeric_gradient(|x| x[0].powi(3) + x[0] * x[1], &[2.0, 3.0], 1e-5);
        assert!((g[0] - 15.0).abs() < 1e-8);
        assert!((g[1] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn saved_state_round_trip() {
        let mut opt = AdamW::new(3, 1e-3, 1e-4);
        let mut p = vec![0.1, -0.2, f64::MIN_POSITIVE];
        opt.update(&mut p, &[1.0, 2.0, 3.0]);
        let s = SavedState { kind: "lstm".into(), config_hash: "abc".into(), params: p, optimizer: opt };
        let mut buf = Vec::new();
        s.write(&mut buf).unwrap();
        let back = SavedState::read(&buf[..]).unwrap();
        assert_eq!(back, s);
        assert!(back.check_config("abc").is_ok());
        assert!(back.check_config("xyz").is_err());
        buf[0] = b'X';
        assert!(SavedState::read(&buf[..]).is_err());
    }

    #[test]
    fn dropout_mask_scales_kept_units() {
        let mut r = rng(1);
        let m = dropout_mask(&mut r, 10_000, 0.2);
        let kept = m.iter().filter(|v| **v > 0.0).count() as f64 / 10_000.0;
        assert!((kept - 0.8).abs() < 0.02);
        assert!(m.iter().all(|v| *v == 0.0 || (*v - 1.25).abs() < 1e-15));
        assert!(dropout_mask(&mut r, 5, 0.0).iter().all(|v| *v == 1.0));
    }
}
