//! Isotropic unit-covariance Gaussian mixtures and their diffused marginals.
//!
//! The same type represents both the target mixture and the law of the
//! forward process at step t: diffusing Σ π_k N(μ_k, I) by a signal level
//! ᾱ yields Σ π_k N(√ᾱ μ_k, I), so `diffused_marginal` scales the means once
//! and every downstream evaluation (density, posterior, score, Jacobian
//! trace) works off the stored, pre-scaled means.

use crate::batch::{BatchLabel, SampleBatch};
use crate::rng::{self, tags};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

pub const LOG_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error, PartialEq)]
pub enum GmmError {
    #[error("empty weights or means")]
    Empty,
    #[error("weight {value} at index {index} is not strictly positive")]
    NonPositiveWeight { index: usize, value: f64 },
    #[error("weights sum to {sum}, more than 1e-9 away from 1")]
    WeightsNotNormalized { sum: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("alpha_bar {value} outside (0, 1]")]
    OutOfRangeAlphaBar { value: f64 },
    #[error("sample count must be at least 1")]
    ZeroCount,
}

/// Posterior component probabilities π_k^{(t)}(x) at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorWeights {
    values: Vec<f64>,
}

impl PosteriorWeights {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    /// K×d row-major; already scaled by √ᾱ for diffused marginals.
    means: Vec<f64>,
    d: usize,
    max_mean_norm: f64,
}

#[inline]
fn sq_dist(x: &[f64], m: &[f64]) -> f64 {
    x.iter().zip(m).map(|(&a, &b)| (a - b) * (a - b)).sum()
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>) -> Result<Self, GmmError> {
        if weights.is_empty() || means.is_empty() {
            return Err(GmmError::Empty);
        }
        if weights.len() != means.len() {
            return Err(GmmError::DimensionMismatch { expected: weights.len(), got: means.len() });
        }
        let d = means[0].len();
        if d == 0 {
            return Err(GmmError::Empty);
        }
        for m in &means {
            if m.len() != d {
                return Err(GmmError::DimensionMismatch { expected: d, got: m.len() });
            }
        }
        for (index, &w) in weights.iter().enumerate() {
            if !(w.is_finite() && w > 0.0) {
                return Err(GmmError::NonPositiveWeight { index, value: w });
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(GmmError::WeightsNotNormalized { sum });
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        let max_mean_norm = means
            .iter()
            .map(|m| m.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        let flat = means.into_iter().flatten().collect();
        Ok(Self { weights, log_weights, means: flat, d, max_mean_norm })
    }

    /// Standard normal N(0, I_d).
    pub fn standard(d: usize) -> Self {
        Self::new(vec![1.0], vec![vec![0.0; d]]).expect("standard normal is valid")
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k * self.d..(k + 1) * self.d]
    }

    /// max_k ‖μ_k‖₂, recorded at construction for norm-cap checks.
    pub fn max_mean_norm(&self) -> f64 {
        self.max_mean_norm
    }

    /// Mixture mean Σ π_k μ_k.
    pub fn mixture_mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        for k in 0..self.k() {
            let w = self.weights[k];
            for (o, &mi) in out.iter_mut().zip(self.mean(k)) {
                *o += w * mi;
            }
        }
        out
    }

    /// Mixture covariance I + Σ π_k μ_k μ_kᵀ − μ̄ μ̄ᵀ, row-major d×d.
    pub fn mixture_covariance(&self) -> Vec<f64> {
        let d = self.d;
        let mb = self.mixture_mean();
        let mut c = vec![0.0; d * d];
        for k in 0..self.k() {
            let w = self.weights[k];
            let m = self.mean(k);
            for i in 0..d {
                for j in 0..d {
                    c[i * d + j] += w * (m[i] - mb[i]) * (m[j] - mb[j]);
                }
            }
        }
        for i in 0..d {
            c[i * d + i] += 1.0;
        }
        c
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), GmmError> {
        if x.len() != self.d {
            return Err(GmmError::DimensionMismatch { expected: self.d, got: x.len() });
        }
        Ok(())
    }

    /// Law of X_t when this mixture is diffused to signal level ᾱ = `alpha_bar`:
    /// the same weights around √ᾱ-scaled means, unit covariance.
    pub fn diffused_marginal(&self, alpha_bar: f64) -> Result<Self, GmmError> {
        if !(alpha_bar > 0.0 && alpha_bar <= 1.0) {
            return Err(GmmError::OutOfRangeAlphaBar { value: alpha_bar });
        }
        let s = alpha_bar.sqrt();
        let mut out = self.clone();
        out.means.iter_mut().for_each(|m| *m *= s);
        out.max_mean_norm *= s;
        Ok(out)
    }

    /// log p(x) via max-subtracted log-sum-exp over components.
    pub fn log_density(&self, x: &[f64]) -> Result<f64, GmmError> {
        self.check_dim(x)?;
        let mut running_max = f64::NEG_INFINITY;
        let mut denom = 0.0;
        for k in 0..self.k() {
            let e = self.log_weights[k] - 0.5 * sq_dist(x, self.mean(k));
            if e > running_max {
                denom = denom * (running_max - e).exp() + 1.0;
                running_max = e;
            } else {
                denom += (e - running_max).exp();
            }
        }
        Ok(running_max + denom.ln() - 0.5 * self.d as f64 * LOG_2PI)
    }

    /// Posterior component probabilities at x, computed with max subtraction;
    /// entries below 1e-300 are flushed to zero after normalization.
    pub fn posterior_weights(&self, x: &[f64]) -> Result<PosteriorWeights, GmmError> {
        self.check_dim(x)?;
        let mut exps: Vec<f64> = (0..self.k())
            .map(|k| self.log_weights[k] - 0.5 * sq_dist(x, self.mean(k)))
            .collect();
        let max = exps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for e in exps.iter_mut() {
            *e = (*e - max).exp();
            denom += *e;
        }
        for e in exps.iter_mut() {
            *e /= denom;
            if *e < 1e-300 {
                *e = 0.0;
            }
        }
        Ok(PosteriorWeights { values: exps })
    }

    /// Score ∇ log p(x) = −x + Σ_k π_k^{(t)}(x) m_k, written into `out`.
    ///
    /// Single pass, online max-subtracted softmax; no allocation.
    pub fn score_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), GmmError> {
        self.check_dim(x)?;
        if out.len() != self.d {
            return Err(GmmError::DimensionMismatch { expected: self.d, got: out.len() });
        }
        out.fill(0.0);
        let mut running_max = f64::NEG_INFINITY;
        let mut denom = 0.0;
        for k in 0..self.k() {
            let m = self.mean(k);
            let e = self.log_weights[k] - 0.5 * sq_dist(x, m);
            let w = if e > running_max {
                let scale = if denom > 0.0 { (running_max - e).exp() } else { 0.0 };
                denom *= scale;
                out.iter_mut().for_each(|o| *o *= scale);
                running_max = e;
                1.0
            } else {
                (e - running_max).exp()
            };
            denom += w;
            for (o, &mi) in out.iter_mut().zip(m) {
                *o += w * mi;
            }
        }
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = *o / denom - xi;
        }
        Ok(())
    }

    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>, GmmError> {
        let mut out = vec![0.0; self.d];
        self.score_into(x, &mut out)?;
        Ok(out)
    }

    /// tr(I_d + J_t(x)): the posterior variance Σ_k π_k^{(t)} ‖m_k − m̄‖² of
    /// the scaled means. The centered form keeps it nonnegative in floating
    /// point; it vanishes identically for K = 1.
    pub fn jacobian_trace(&self, x: &[f64]) -> Result<f64, GmmError> {
        let post = self.posterior_weights(x)?;
        let pw = post.values();
        let mut mbar = vec![0.0; self.d];
        for (k, &w) in pw.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (o, &mi) in mbar.iter_mut().zip(self.mean(k)) {
                *o += w * mi;
            }
        }
        let mut tr = 0.0;
        for (k, &w) in pw.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            tr += w * sq_dist(self.mean(k), &mbar);
        }
        Ok(tr)
    }

    /// n i.i.d. draws: component index by weight, then unit Gaussian around
    /// the chosen mean. Deterministic in `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<SampleBatch, GmmError> {
        if n == 0 {
            return Err(GmmError::ZeroCount);
        }
        let mut rng = rng::derive_rng(seed, &[tags::GMM_SAMPLE]);
        let mut points = vec![0.0; n * self.d];
        self.sample_into(&mut points, &mut rng);
        Ok(SampleBatch::new(points, self.d, seed, BatchLabel::Target))
    }

    /// Fills `out` (length multiple of d) with i.i.d. mixture draws.
    pub(crate) fn sample_into<R: Rng>(&self, out: &mut [f64], rng: &mut R) {
        debug_assert_eq!(out.len() % self.d, 0);
        for p in out.chunks_exact_mut(self.d) {
            let k = self.sample_component(rng);
            let m = self.mean(k);
            for (pi, &mi) in p.iter_mut().zip(m) {
                let z: f64 = rng.sample(StandardNormal);
                *pi = mi + z;
            }
        }
    }

    pub(crate) fn sample_component<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return k;
            }
        }
        self.k() - 1
    }

    /// Parses the plain-text mixture spec format:
    ///
    /// ```text
    /// # two symmetric components in d = 2
    /// weights = 0.5 0.5
    /// means = -1 0 ; 1 0
    /// ```
    pub fn from_spec_str(text: &str) -> Result<Self, GmmFileError> {
        let mut weights: Option<Vec<f64>> = None;
        let mut means: Option<Vec<Vec<f64>>> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(GmmFileError::Parse {
                line: line_no,
                msg: "expected `key = value`".into(),
            })?;
            match key.trim() {
                "weights" => {
                    weights = Some(parse_floats(value).map_err(|msg| GmmFileError::Parse {
                        line: line_no,
                        msg,
                    })?);
                }
                "means" => {
                    let rows: Result<Vec<Vec<f64>>, String> =
                        value.split(';').map(parse_floats).collect();
                    means = Some(rows.map_err(|msg| GmmFileError::Parse { line: line_no, msg })?);
                }
                other => {
                    return Err(GmmFileError::Parse {
                        line: line_no,
                        msg: format!("unknown key `{other}`"),
                    });
                }
            }
        }
        let weights = weights.ok_or(GmmFileError::MissingField("weights"))?;
        let means = means.ok_or(GmmFileError::MissingField("means"))?;
        Ok(Self::new(weights, means)?)
    }
}

fn parse_floats(s: &str) -> Result<Vec<f64>, String> {
    let toks: Vec<&str> = s
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .collect();
    if toks.is_empty() {
        return Err("empty number list".into());
    }
    toks.iter()
        .map(|t| t.parse::<f64>().map_err(|_| format!("bad number `{t}`")))
        .collect()
}

#[derive(Debug, Error, PartialEq)]
pub enum GmmFileError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error(transparent)]
    Invalid(#[from] GmmError),
}
