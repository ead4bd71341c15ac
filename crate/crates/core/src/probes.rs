//! Numerical probes of the analysis quantities: the per-component ζ values,
//! membership in the typical event E_t, the score-Jacobian trace, and the
//! Tweedie-type score-norm bound behind the clip threshold.
//!
//! All probes evaluate the exact mixture score, never a perturbed estimate:
//! the event is a property of the mixture, not of any estimator.

use crate::gmm::GaussianMixture;
use crate::oracle::clip_threshold;
use crate::rng::{self, tags};
use crate::schedule::NoiseSchedule;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ProbeError {
    #[error("step {t} outside 1..={t_count}")]
    StepOutOfRange { t: usize, t_count: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("thresholds must be positive")]
    BadThreshold,
}

fn check_step(sched: &NoiseSchedule, t: usize) -> Result<(), ProbeError> {
    if t < 1 || t > sched.t_count() {
        return Err(ProbeError::StepOutOfRange { t, t_count: sched.t_count() });
    }
    Ok(())
}

/// ζ_k^{(t)}(x) for every component, using the diffused marginal at step t.
pub fn zeta(
    gmm: &GaussianMixture,
    sched: &NoiseSchedule,
    t: usize,
    x: &[f64],
) -> Result<Vec<f64>, ProbeError> {
    check_step(sched, t)?;
    let marginal = gmm
        .diffused_marginal(sched.alpha_bar(t))
        .map_err(|_| ProbeError::StepOutOfRange { t, t_count: sched.t_count() })?;
    zeta_at(&marginal, sched, t, x)
}

/// ζ on a precomputed diffused marginal (means already √ᾱ-scaled):
/// the (1−α²)/(2α²)-weighted centered quadratic plus the (1−α)/α² score term.
pub(crate) fn zeta_at(
    marginal: &GaussianMixture,
    sched: &NoiseSchedule,
    t: usize,
    x: &[f64],
) -> Result<Vec<f64>, ProbeError> {
    let oma = sched.one_minus_alpha(t);
    Ok(zeta_unit_rate(marginal, sched.alpha(t), x)?
        .into_iter()
        .map(|psi| oma * psi)
        .collect())
}

/// ζ_k/(1−α_t): both ζ terms carry a factor 1−α_t, which is pulled out so
/// the saturated regime (1−α_t near 1e-20) keeps full relative precision.
fn zeta_unit_rate(
    marginal: &GaussianMixture,
    alpha: f64,
    x: &[f64],
) -> Result<Vec<f64>, ProbeError> {
    let d = marginal.dim();
    if x.len() != d {
        return Err(ProbeError::DimensionMismatch { expected: d, got: x.len() });
    }
    let post = marginal
        .posterior_weights(x)
        .map_err(|_| ProbeError::DimensionMismatch { expected: d, got: x.len() })?;
    let pw = post.values();
    let k_count = marginal.k();

    let sq = |k: usize| -> f64 {
        x.iter().zip(marginal.mean(k)).map(|(a, b)| (a - b) * (a - b)).sum()
    };
    let sq_dists: Vec<f64> = (0..k_count).map(sq).collect();
    let avg_sq: f64 = pw.iter().zip(&sq_dists).map(|(w, s)| w * s).sum();

    let mut post_mean = vec![0.0; d];
    for (k, &w) in pw.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (o, &mi) in post_mean.iter_mut().zip(marginal.mean(k)) {
            *o += w * mi;
        }
    }
    // exact score s* = −x + m̄
    let score: Vec<f64> = post_mean.iter().zip(x).map(|(m, xi)| m - xi).collect();

    let quad_coef = (1.0 + alpha) / (2.0 * alpha * alpha);
    let score_coef = 1.0 / (alpha * alpha);

    Ok((0..k_count)
        .map(|k| {
            // Σ_i π_i(m_i − m_k) = m̄ − m_k
            let inner: f64 = score
                .iter()
                .zip(post_mean.iter().zip(marginal.mean(k)))
                .map(|(s, (mb, mk))| s * (mb - mk))
                .sum();
            quad_coef * (sq_dists[k] - avg_sq) + score_coef * inner
        })
        .collect())
}

/// Everything the event test looks at, for one point.
#[derive(Debug, Clone, Serialize)]
pub struct EventDiagnostics {
    pub t: usize,
    pub trace_value: f64,
    pub zeta_values: Vec<f64>,
    /// Σ_k π_k^{(t)} exp(−ζ_k); may overflow to +inf, the log form below is exact.
    pub jensen_sum: f64,
    pub log_jensen_sum: f64,
    pub in_event: bool,
    pub c1: f64,
    pub c2: f64,
}

/// Tests x ∈ E_t: trace within C1·log(KT) and the ζ-based Jensen sum within
/// exp(C2·(1−α_t)²·log²(KT)).
pub fn event_membership(
    gmm: &GaussianMixture,
    sched: &NoiseSchedule,
    t: usize,
    x: &[f64],
    c1: f64,
    c2: f64,
) -> Result<EventDiagnostics, ProbeError> {
    check_step(sched, t)?;
    if !(c1 > 0.0 && c2 > 0.0) {
        return Err(ProbeError::BadThreshold);
    }
    let marginal = gmm.diffused_marginal(sched.alpha_bar(t)).expect("valid alpha_bar");
    event_membership_at(gmm, &marginal, sched, t, x, c1, c2)
}

fn event_membership_at(
    gmm: &GaussianMixture,
    marginal: &GaussianMixture,
    sched: &NoiseSchedule,
    t: usize,
    x: &[f64],
    c1: f64,
    c2: f64,
) -> Result<EventDiagnostics, ProbeError> {
    let trace_value = marginal
        .jacobian_trace(x)
        .map_err(|_| ProbeError::DimensionMismatch { expected: gmm.dim(), got: x.len() })?;
    let psi = zeta_unit_rate(marginal, sched.alpha(t), x)?;
    let oma = sched.one_minus_alpha(t);
    let post = marginal.posterior_weights(x).expect("dimension checked");
    let pw = post.values();

    // log Σ π_k e^{−ζ_k} with ζ_k = (1−α_t)·ψ_k. The threshold scales as
    // (1−α_t)², so for saturated steps the sum must be expanded around the
    // exact identity Σ π_k ζ_k = 0 rather than evaluated by exp/ln, whose
    // absolute rounding (~1e-16) would swamp it. The quadratic form is
    // accurate to relative O((1−α)ψ); past the cutoff the direct
    // log-sum-exp has plenty of absolute resolution.
    let psi_max = psi.iter().fold(0.0f64, |m, p| m.max(p.abs()));
    let log_jensen_sum = if oma * psi_max < 1e-3 {
        let mean: f64 = pw.iter().zip(&psi).map(|(w, p)| w * p).sum();
        let var: f64 =
            pw.iter().zip(&psi).map(|(w, p)| w * (p - mean) * (p - mean)).sum();
        0.5 * oma * oma * var
    } else {
        let terms: Vec<f64> = pw
            .iter()
            .zip(&psi)
            .filter(|(&w, _)| w > 0.0)
            .map(|(&w, &p)| w.ln() - oma * p)
            .collect();
        let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        max + terms.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
    };

    let log_kt = (gmm.k() as f64 * sched.t_count() as f64).ln();
    let in_event =
        trace_value <= c1 * log_kt && log_jensen_sum <= c2 * oma * oma * log_kt * log_kt;
    Ok(EventDiagnostics {
        t,
        trace_value,
        zeta_values: psi.into_iter().map(|p| oma * p).collect(),
        jensen_sum: log_jensen_sum.exp(),
        log_jensen_sum,
        in_event,
        c1,
        c2,
    })
}

/// A Monte Carlo estimate with a 95% Wilson interval.
#[derive(Debug, Clone, Serialize)]
pub struct ProbeEstimate {
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

pub(crate) fn wilson_interval(successes: usize, n: usize) -> ProbeEstimate {
    let z = 1.959_963_984_540_054; // 97.5% normal quantile
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ProbeEstimate {
        estimate: p,
        ci_low: (center - half).max(0.0),
        ci_high: (center + half).min(1.0),
        n,
    }
}

/// P{X_t^GMM ∉ E_t} by forward sampling the diffused marginal.
pub fn typical_set_probability(
    gmm: &GaussianMixture,
    sched: &NoiseSchedule,
    t: usize,
    n: usize,
    c1: f64,
    c2: f64,
    seed: u64,
) -> Result<ProbeEstimate, ProbeError> {
    check_step(sched, t)?;
    if n < 1000 {
        return Err(ProbeError::TooFewSamples { need: 1000, got: n });
    }
    if !(c1 > 0.0 && c2 > 0.0) {
        return Err(ProbeError::BadThreshold);
    }
    let marginal = gmm.diffused_marginal(sched.alpha_bar(t)).expect("valid alpha_bar");
    let mut rng = rng::derive_rng(seed, &[tags::PROBE_T, t as u64]);
    let mut x = vec![0.0; gmm.dim()];
    let mut violations = 0usize;
    for _ in 0..n {
        marginal.sample_into(&mut x, &mut rng);
        let diag = event_membership_at(gmm, &marginal, sched, t, &x, c1, c2)?;
        if !diag.in_event {
            violations += 1;
        }
    }
    Ok(wilson_interval(violations, n))
}

/// Empirical quantiles of tr(I + J_t(X_t^GMM)).
#[derive(Debug, Clone, Serialize)]
pub struct TraceQuantiles {
    pub q50: f64,
    pub q90: f64,
    pub q99: f64,
    pub q999: f64,
    /// 0.999-quantile divided by log(KT), the dimension-free ratio.
    pub ratio_q999_to_log_kt: f64,
    pub n: usize,
}

pub fn trace_quantiles(
    gmm: &GaussianMixture,
    sched: &NoiseSchedule,
    t: usize,
    n: usize,
    seed: u64,
) -> Result<TraceQuantiles, ProbeError> {
    check_step(sched, t)?;
    if n < 1000 {
        return Err(ProbeError::TooFewSamples { need: 1000, got: n });
    }
    let marginal = gmm.diffused_marginal(sched.alpha_bar(t)).expect("valid alpha_bar");
    let mut rng = rng::derive_rng(seed, &[tags::PROBE_T, t as u64, 2]);
    let mut x = vec![0.0; gmm.dim()];
    let mut traces: Vec<f64> = Vec::with_capacity(n);
    for _ in 0..n {
        marginal.sample_into(&mut x, &mut rng);
        traces.push(marginal.jacobian_trace(&x).expect("dimension fixed"));
    }
    traces.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| -> f64 {
        let idx = ((p * n as f64).ceil() as usize).clamp(1, n) - 1;
        traces[idx]
    };
    let log_kt = (gmm.k() as f64 * sched.t_count() as f64).ln();
    let q999 = q(0.999);
    Ok(TraceQuantiles {
        q50: q(0.5),
        q90: q(0.9),
        q99: q(0.99),
        q999,
        ratio_q999_to_log_kt: q999 / log_kt,
        n,
    })
}

/// Fraction of forward samples whose exact score norm exceeds the clip
/// threshold at step t.
pub fn tweedie_bound_check(
    gmm: &GaussianMixture,
    sched: &NoiseSchedule,
    t: usize,
    n: usize,
    c_clip: f64,
    seed: u64,
) -> Result<ProbeEstimate, ProbeError> {
    check_step(sched, t)?;
    if n < 1000 {
        return Err(ProbeError::TooFewSamples { need: 1000, got: n });
    }
    let clip_ok = c_clip.is_finite() && c_clip > 0.0;
    if !clip_ok {
        return Err(ProbeError::BadThreshold);
    }
    let marginal = gmm.diffused_marginal(sched.alpha_bar(t)).expect("valid alpha_bar");
    let threshold =
        clip_threshold(c_clip, gmm.dim(), sched.t_count(), sched.one_minus_alpha_bar(t));
    let thr_sq = threshold * threshold;
    let mut rng = rng::derive_rng(seed, &[tags::PROBE_T, t as u64, 3]);
    let mut x = vec![0.0; gmm.dim()];
    let mut s = vec![0.0; gmm.dim()];
    let mut violations = 0usize;
    for _ in 0..n {
        marginal.sample_into(&mut x, &mut rng);
        marginal.score_into(&x, &mut s).expect("dimension fixed");
        if s.iter().map(|v| v * v).sum::<f64>() > thr_sq {
            violations += 1;
        }
    }
    Ok(wilson_interval(violations, n))
}

/// One probe result, serialized as a JSON row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeRow {
    pub probe: String,
    pub t: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub d: usize,
    #[serde(rename = "T")]
    pub t_count: usize,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub thresholds: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn sched(t: usize) -> NoiseSchedule {
        NoiseSchedule::build(t, 2.0, 10.0).unwrap()
    }

    fn mixture3() -> GaussianMixture {
        GaussianMixture::new(
            vec![0.2, 0.5, 0.3],
            vec![vec![-3.0, 1.0], vec![0.5, -2.0], vec![2.5, 2.0]],
        )
        .unwrap()
    }

    /// Independent transcription of the ζ definition against raw (unscaled)
    /// means and explicit √ᾱ factors.
    #[allow(clippy::needless_range_loop)]
    fn zeta_oracle(
        gmm: &GaussianMixture,
        sched: &NoiseSchedule,
        t: usize,
        x: &[f64],
    ) -> Vec<f64> {
        let abar = sched.alpha_bar(t);
        let alpha = sched.alpha(t);
        let root = abar.sqrt();
        let k_count = gmm.k();
        let d = gmm.dim();
        // posterior weights from first principles
        let exps: Vec<f64> = (0..k_count)
            .map(|k| {
                let sq: f64 = x
                    .iter()
                    .zip(gmm.mean(k))
                    .map(|(xi, mu)| (xi - root * mu) * (xi - root * mu))
                    .sum();
                gmm.weights()[k].ln() - 0.5 * sq
            })
            .collect();
        let max = exps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut pis: Vec<f64> = exps.iter().map(|e| (e - max).exp()).collect();
        let z: f64 = pis.iter().sum();
        pis.iter_mut().for_each(|p| *p /= z);
        // s*(x) = −Σ_k π_k (x − √ᾱ μ_k)
        let mut score = vec![0.0; d];
        for k in 0..k_count {
            for j in 0..d {
                score[j] -= pis[k] * (x[j] - root * gmm.mean(k)[j]);
            }
        }
        let sq_k: Vec<f64> = (0..k_count)
            .map(|k| {
                x.iter()
                    .zip(gmm.mean(k))
                    .map(|(xi, mu)| (xi - root * mu) * (xi - root * mu))
                    .sum()
            })
            .collect();
        let avg: f64 = pis.iter().zip(&sq_k).map(|(p, s)| p * s).sum();
        (0..k_count)
            .map(|k| {
                let mut inner = 0.0;
                for i in 0..k_count {
                    for j in 0..d {
                        inner += score[j] * pis[i] * root * (gmm.mean(i)[j] - gmm.mean(k)[j]);
                    }
                }
                (1.0 - alpha * alpha) / (2.0 * alpha * alpha) * (sq_k[k] - avg)
                    + (1.0 - alpha) / (alpha * alpha) * inner
            })
            .collect()
    }

    #[test]
    fn zeta_single_component_is_zero() {
        let gmm = GaussianMixture::standard(3);
        let s = sched(16);
        for t in [1, 8, 16] {
            let z = zeta(&gmm, &s, t, &[0.5, -1.0, 2.0]).unwrap();
            assert_eq!(z, vec![0.0]);
        }
    }

    #[test]
    fn zeta_matches_independent_transcription() {
        let gmm = mixture3();
        let s = sched(32);
        let mut rng = rng::derive_rng(3, &[50]);
        // relative comparison where α_t is far from 1 (the transcription
        // computes 1−α_t by subtraction, which loses all precision once the
        // schedule saturates)
        for _ in 0..200 {
            let t = 24 + (rng.random::<u64>() % 9) as usize;
            let x: Vec<f64> = (0..2).map(|_| (rng.random::<f64>() - 0.5) * 8.0).collect();
            let got = zeta(&gmm, &s, t, &x).unwrap();
            let want = zeta_oracle(&gmm, &s, t, &x);
            for (g, w) in got.iter().zip(&want) {
                let tol = 1e-10 * w.abs().max(1e-12);
                assert!((g - w).abs() <= tol, "t={t}: {g} vs {w}");
            }
        }
        // absolute agreement across the whole range, including saturation
        for _ in 0..200 {
            let t = 1 + (rng.random::<u64>() % 32) as usize;
            let x: Vec<f64> = (0..2).map(|_| (rng.random::<f64>() - 0.5) * 8.0).collect();
            let got = zeta(&gmm, &s, t, &x).unwrap();
            let want = zeta_oracle(&gmm, &s, t, &x);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() <= 1e-9, "t={t}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn zeta_weighted_sum_vanishes() {
        let gmm = mixture3();
        let s = sched(32);
        let mut rng = rng::derive_rng(4, &[51]);
        for _ in 0..500 {
            let t = 1 + (rng.random::<u64>() % 32) as usize;
            let x: Vec<f64> = (0..2).map(|_| (rng.random::<f64>() - 0.5) * 10.0).collect();
            let marginal = gmm.diffused_marginal(s.alpha_bar(t)).unwrap();
            let z = zeta(&gmm, &s, t, &x).unwrap();
            let post = marginal.posterior_weights(&x).unwrap();
            let weighted: f64 = post.values().iter().zip(&z).map(|(w, zk)| w * zk).sum();
            assert!(weighted.abs() < 1e-9, "weighted zeta sum {weighted}");
        }
    }

    #[test]
    fn jensen_sum_is_at_least_one() {
        let gmm = mixture3();
        let s = sched(32);
        let mut rng = rng::derive_rng(5, &[52]);
        for _ in 0..10_000 {
            let t = 1 + (rng.random::<u64>() % 32) as usize;
            let x: Vec<f64> = (0..2).map(|_| (rng.random::<f64>() - 0.5) * 12.0).collect();
            let diag = event_membership(&gmm, &s, t, &x, 8.0, 8.0).unwrap();
            assert!(diag.log_jensen_sum >= -1e-9, "log jensen {}", diag.log_jensen_sum);
        }
    }

    #[test]
    fn single_component_is_always_in_event() {
        let gmm = GaussianMixture::standard(2);
        let s = sched(16);
        let mut rng = rng::derive_rng(6, &[53]);
        for _ in 0..100 {
            let t = 1 + (rng.random::<u64>() % 16) as usize;
            let x: Vec<f64> = (0..2).map(|_| (rng.random::<f64>() - 0.5) * 20.0).collect();
            let diag = event_membership(&gmm, &s, t, &x, 0.01, 0.01).unwrap();
            assert_eq!(diag.trace_value, 0.0);
            assert!(diag.in_event);
            assert_abs_diff_eq!(diag.jensen_sum, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn tiny_trace_threshold_excludes_confused_points() {
        // two far components, x midway: posterior spread ≈ ᾱ·a², far over 0.01·log(KT)
        let gmm =
            GaussianMixture::new(vec![0.5, 0.5], vec![vec![-4.0], vec![4.0]]).unwrap();
        let s = sched(16);
        let t = 2; // ᾱ close to 1
        let diag = event_membership(&gmm, &s, t, &[0.0], 0.01, 8.0).unwrap();
        assert!(diag.trace_value > 0.01 * (2.0f64 * 16.0).ln());
        assert!(!diag.in_event);
    }

    #[test]
    fn typical_set_probability_zero_for_single_component() {
        let gmm = GaussianMixture::standard(4);
        let s = sched(16);
        let est = typical_set_probability(&gmm, &s, 8, 2000, 8.0, 8.0, 7).unwrap();
        assert_eq!(est.estimate, 0.0);
        assert!(est.ci_high < 0.01);
        assert!(matches!(
            typical_set_probability(&gmm, &s, 8, 10, 8.0, 8.0, 7),
            Err(ProbeError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn typical_set_violations_shrink_as_thresholds_grow() {
        let gmm =
            GaussianMixture::new(vec![0.5, 0.5], vec![vec![-2.0, 0.0], vec![2.0, 0.0]]).unwrap();
        let s = sched(32);
        let t = 24;
        let mut last = f64::INFINITY;
        for c in [0.1, 1.0, 8.0] {
            let est = typical_set_probability(&gmm, &s, t, 5000, c, c, 9).unwrap();
            assert!(est.estimate <= last, "c1={c}: {} > {last}", est.estimate);
            last = est.estimate;
        }
    }

    #[test]
    fn trace_quantiles_ordered_and_zero_for_k1() {
        let single = GaussianMixture::standard(3);
        let s = sched(16);
        let q = trace_quantiles(&single, &s, 8, 2000, 10).unwrap();
        assert_eq!(q.q999, 0.0);
        assert_eq!(q.ratio_q999_to_log_kt, 0.0);

        let gmm = mixture3();
        let q2 = trace_quantiles(&gmm, &s, 8, 5000, 11).unwrap();
        assert!(q2.q50 <= q2.q90 && q2.q90 <= q2.q99 && q2.q99 <= q2.q999);
        assert!(q2.q50 >= 0.0);
    }

    #[test]
    fn tweedie_violations_rare_and_monotone_in_clip_constant() {
        let gmm = GaussianMixture::new(vec![1.0], vec![vec![0.0, 0.0]]).unwrap();
        let s = sched(64);
        let est = tweedie_bound_check(&gmm, &s, 32, 5000, 8.0, 12).unwrap();
        assert_eq!(est.estimate, 0.0);

        let gmm4 = mixture3();
        let mut last = f64::INFINITY;
        for c in [0.5, 1.0, 4.0] {
            let est = tweedie_bound_check(&gmm4, &s, 48, 5000, c, 13).unwrap();
            assert!(est.estimate <= last);
            last = est.estimate;
        }
    }

    #[test]
    fn wilson_interval_brackets_the_estimate() {
        let est = wilson_interval(3, 1000);
        assert!(est.ci_low < est.estimate && est.estimate < est.ci_high);
        assert!(est.ci_low >= 0.0 && est.ci_high <= 1.0);
        let zero = wilson_interval(0, 1000);
        assert_eq!(zero.estimate, 0.0);
        assert!(zero.ci_high > 0.0 && zero.ci_high < 0.005);
    }
}

