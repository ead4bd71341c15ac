//! Score oracles: exact mixture scores, the clip-to-zero truncation, and two
//! deliberately corrupted variants realizing a controlled average score
//! error, plus measurement of that error.

use crate::gmm::GaussianMixture;
use crate::rng::{self, tags};
use crate::schedule::NoiseSchedule;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("amplitude must be nonnegative, got {0}")]
    NegativeAmplitude(f64),
    #[error("clip constant must be positive, got {0}")]
    BadClipConstant(f64),
    #[error("need at least 100 samples per step, got {0}")]
    TooFewSamples(usize),
    #[error("oracle dimension {oracle} does not match mixture dimension {gmm}")]
    DimensionMismatch { oracle: usize, gmm: usize },
}

type EvalFn = dyn Fn(usize, &[f64], &mut [f64]) + Send + Sync;

/// A pure map (t, x) ↦ score estimate in R^d, defined for t ∈ 1..=T.
#[derive(Clone)]
pub struct ScoreOracle {
    descriptor: String,
    dim: usize,
    t_count: usize,
    eval: Arc<EvalFn>,
}

impl std::fmt::Debug for ScoreOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScoreOracle")
            .field("descriptor", &self.descriptor)
            .field("dim", &self.dim)
            .field("t_count", &self.t_count)
            .finish()
    }
}

impl ScoreOracle {
    pub fn descriptor(&self) -> &str {
        &self.descriptor
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn t_count(&self) -> usize {
        self.t_count
    }

    /// Evaluates into a caller buffer; panics on dimension misuse (callers
    /// validate dimensions once at the boundary).
    pub fn eval_into(&self, t: usize, x: &[f64], out: &mut [f64]) {
        debug_assert!(t >= 1 && t <= self.t_count);
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.dim);
        (self.eval)(t, x, out);
    }

    pub fn eval(&self, t: usize, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, x, &mut out);
        out
    }
}

/// Diffused marginals for every step; shared by the oracle constructors.
fn marginals(gmm: &GaussianMixture, sched: &NoiseSchedule) -> Vec<GaussianMixture> {
    (1..=sched.t_count())
        .map(|t| gmm.diffused_marginal(sched.alpha_bar(t)).expect("alpha_bar in (0,1]"))
        .collect()
}

/// The exact score of the diffused mixture at every step.
pub fn exact_oracle(gmm: &GaussianMixture, sched: &NoiseSchedule) -> ScoreOracle {
    let per_t = marginals(gmm, sched);
    ScoreOracle {
        descriptor: format!("exact(K={}, d={})", gmm.k(), gmm.dim()),
        dim: gmm.dim(),
        t_count: sched.t_count(),
        eval: Arc::new(move |t, x, out| {
            per_t[t - 1].score_into(x, out).expect("dimensions fixed at construction");
        }),
    }
}

/// The clip threshold C·√(d·log(dT)/(1−ᾱ_t)).
pub fn clip_threshold(c_clip: f64, d: usize, t_count: usize, one_minus_alpha_bar: f64) -> f64 {
    c_clip * (d as f64 * (d as f64 * t_count as f64).ln() / one_minus_alpha_bar).sqrt()
}

/// Clip-to-zero truncation: passes the inner estimate through unchanged when
/// its norm is within the threshold, otherwise returns the zero vector.
pub fn clip_oracle(
    inner: &ScoreOracle,
    sched: &NoiseSchedule,
    c_clip: f64,
) -> Result<ScoreOracle, OracleError> {
    let clip_ok = c_clip.is_finite() && c_clip > 0.0;
    if !clip_ok {
        return Err(OracleError::BadClipConstant(c_clip));
    }
    let d = inner.dim;
    let thresholds: Vec<f64> = (1..=sched.t_count())
        .map(|t| clip_threshold(c_clip, d, sched.t_count(), sched.one_minus_alpha_bar(t)))
        .collect();
    let inner_eval = inner.eval.clone();
    Ok(ScoreOracle {
        descriptor: format!("clip(C={c_clip}) . {}", inner.descriptor),
        dim: d,
        t_count: inner.t_count,
        eval: Arc::new(move |t, x, out| {
            inner_eval(t, x, out);
            let norm_sq: f64 = out.iter().map(|v| v * v).sum();
            let thr = thresholds[t - 1];
            if norm_sq > thr * thr {
                out.fill(0.0);
            }
        }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbModel {
    /// Adds a fixed smooth random vector field (random Fourier features,
    /// RMS-calibrated to 1 under the forward marginals) scaled by amplitude.
    GaussianField,
    /// The exact score of a mixture whose means received i.i.d. Gaussian
    /// offsets of the given scale.
    MeanJitter,
}

const FIELD_FEATURES: usize = 64;

/// A corrupted oracle with a controlled, seed-reproducible score error.
pub fn perturb_oracle(
    inner: &ScoreOracle,
    gmm: &GaussianMixture,
    sched: &NoiseSchedule,
    model: PerturbModel,
    amplitude: f64,
    seed: u64,
) -> Result<ScoreOracle, OracleError> {
    if amplitude < 0.0 {
        return Err(OracleError::NegativeAmplitude(amplitude));
    }
    if inner.dim != gmm.dim() {
        return Err(OracleError::DimensionMismatch { oracle: inner.dim, gmm: gmm.dim() });
    }
    if amplitude == 0.0 {
        let mut out = inner.clone();
        out.descriptor = format!("{model:?}(a=0) . {}", inner.descriptor);
        return Ok(out);
    }
    match model {
        PerturbModel::GaussianField => Ok(gaussian_field(inner, gmm, sched, amplitude, seed)),
        PerturbModel::MeanJitter => {
            let d = gmm.dim();
            let mut rng = rng::derive_rng(seed, &[tags::MEAN_JITTER]);
            let means: Vec<Vec<f64>> = (0..gmm.k())
                .map(|k| {
                    gmm.mean(k)
                        .iter()
                        .map(|&m| m + amplitude * rng.sample::<f64, _>(StandardNormal))
                        .collect()
                })
                .collect();
            let jittered = GaussianMixture::new(gmm.weights().to_vec(), means)
                .expect("jittered mixture keeps valid weights");
            let per_t = marginals(&jittered, sched);
            Ok(ScoreOracle {
                descriptor: format!("mean-jitter(a={amplitude}, seed={seed})"),
                dim: d,
                t_count: sched.t_count(),
                eval: Arc::new(move |t, x, out| {
                    per_t[t - 1].score_into(x, out).expect("dimensions fixed");
                }),
            })
        }
    }
}

struct FourierField {
    /// FIELD_FEATURES × d frequencies, row-major.
    freqs: Vec<f64>,
    phases: Vec<f64>,
    /// FIELD_FEATURES × d output coefficients, row-major.
    coefs: Vec<f64>,
    dim: usize,
    scale: f64,
}

impl FourierField {
    fn add_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for j in 0..FIELD_FEATURES {
            let phase: f64 = self.freqs[j * d..(j + 1) * d]
                .iter()
                .zip(x)
                .map(|(w, xi)| w * xi)
                .sum::<f64>()
                + self.phases[j];
            let c = self.scale * phase.cos();
            for (o, a) in out.iter_mut().zip(&self.coefs[j * d..(j + 1) * d]) {
                *o += c * a;
            }
        }
    }
}

fn gaussian_field(
    inner: &ScoreOracle,
    gmm: &GaussianMixture,
    sched: &NoiseSchedule,
    amplitude: f64,
    seed: u64,
) -> ScoreOracle {
    let d = gmm.dim();
    let mut rng = rng::derive_rng(seed, &[tags::FIELD_FREQ]);
    let freqs: Vec<f64> =
        (0..FIELD_FEATURES * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let phases: Vec<f64> =
        (0..FIELD_FEATURES).map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect();
    let coefs: Vec<f64> =
        (0..FIELD_FEATURES * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let mut field = FourierField { freqs, phases, coefs, dim: d, scale: 1.0 };

    // calibrate the raw field to unit RMS under the forward marginals,
    // t drawn uniformly; the same fixed field then serves every step
    let mut cal_rng = rng::derive_rng(seed, &[tags::FIELD_CALIBRATE]);
    let n_cal = 4096;
    let mut x = vec![0.0; d];
    let mut v = vec![0.0; d];
    let mut mean_sq = 0.0;
    for _ in 0..n_cal {
        let t = 1 + (cal_rng.random::<u64>() % sched.t_count() as u64) as usize;
        let marginal = gmm.diffused_marginal(sched.alpha_bar(t)).expect("valid alpha_bar");
        marginal.sample_into(&mut x, &mut cal_rng);
        v.fill(0.0);
        field.add_into(&x, &mut v);
        mean_sq += v.iter().map(|a| a * a).sum::<f64>();
    }
    mean_sq /= n_cal as f64;
    field.scale = amplitude / mean_sq.sqrt();

    let inner_eval = inner.eval.clone();
    let descriptor =
        format!("gaussian-field(a={amplitude}, m={FIELD_FEATURES}, seed={seed}) + {}",
            inner.descriptor);
    ScoreOracle {
        descriptor,
        dim: d,
        t_count: inner.t_count,
        eval: Arc::new(move |t, x, out| {
            inner_eval(t, x, out);
            field.add_into(x, out);
        }),
    }
}

/// Per-step squared score error with its Monte Carlo standard error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerStepError {
    pub t: usize,
    /// Estimate of ε²_{score,t} = E‖candidate − s*‖² under the diffused marginal.
    pub mse: f64,
    pub se: f64,
}

/// Measured score-error aggregates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreErrorReport {
    pub oracle: String,
    pub n: usize,
    pub seed: u64,
    pub per_t: Vec<PerStepError>,
    /// √(mean over t = 1..T of per-step squared errors).
    pub epsilon_score: f64,
    /// √((1/T)·Σ_{t=2..T} (1−ᾱ_t)·ε²_{score,t}): the (1−ᾱ)-weighted variant.
    pub epsilon_score_gmm: f64,
}

/// Draws n points from each diffused marginal and averages the squared
/// deviation between the candidate and the exact score.
pub fn measure_score_error(
    candidate: &ScoreOracle,
    gmm: &GaussianMixture,
    sched: &NoiseSchedule,
    n: usize,
    seed: u64,
) -> Result<ScoreErrorReport, OracleError> {
    if n < 100 {
        return Err(OracleError::TooFewSamples(n));
    }
    if candidate.dim() != gmm.dim() {
        return Err(OracleError::DimensionMismatch { oracle: candidate.dim(), gmm: gmm.dim() });
    }
    let t_count = sched.t_count();
    let per_t: Vec<PerStepError> = (1..=t_count)
        .into_par_iter()
        .map(|t| {
            let marginal = gmm.diffused_marginal(sched.alpha_bar(t)).expect("valid alpha_bar");
            let mut rng = rng::derive_rng(seed, &[tags::MEASURE_T, t as u64]);
            let d = gmm.dim();
            let mut x = vec![0.0; d];
            let mut cand = vec![0.0; d];
            let mut exact = vec![0.0; d];
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..n {
                marginal.sample_into(&mut x, &mut rng);
                candidate.eval_into(t, &x, &mut cand);
                marginal.score_into(&x, &mut exact).expect("dimension fixed");
                let err: f64 =
                    cand.iter().zip(&exact).map(|(a, b)| (a - b) * (a - b)).sum();
                sum += err;
                sum_sq += err * err;
            }
            let mse = sum / n as f64;
            let var = (sum_sq / n as f64 - mse * mse).max(0.0);
            PerStepError { t, mse, se: (var / n as f64).sqrt() }
        })
        .collect();

    let mean_mse = per_t.iter().map(|p| p.mse).sum::<f64>() / t_count as f64;
    let weighted: f64 = per_t
        .iter()
        .filter(|p| p.t >= 2)
        .map(|p| sched.one_minus_alpha_bar(p.t) * p.mse)
        .sum::<f64>()
        / t_count as f64;
    Ok(ScoreErrorReport {
        oracle: candidate.descriptor().to_string(),
        n,
        seed,
        per_t,
        epsilon_score: mean_mse.sqrt(),
        epsilon_score_gmm: weighted.sqrt(),
    })
}
