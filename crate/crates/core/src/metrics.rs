//! Distribution-distance estimation and convergence-rate fitting.
//!
//! High-dimensional TV is statistically out of reach, so the estimators here
//! are the 1-D histogram-vs-integrated-density TV and its sliced extension
//! (max over random projections plus the mean-pair directions). Both are
//! lower bounds on the joint TV by data processing; the sliced maximum is a
//! valid lower bound and is flat in the ambient dimension, which is exactly
//! what the dimension-freeness experiments need.

use crate::batch::SampleBatch;
use crate::rng::{self, tags};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("expected 1-D samples, got dimension {0}")]
    WrongDimension(usize),
    #[error("degenerate range or resolution: {0}")]
    DegenerateRange(String),
    #[error("dimension mismatch: {a} vs {b}")]
    DimensionMismatch { a: usize, b: usize },
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("nonpositive estimate {0} cannot enter a log-log fit")]
    NonPositiveEstimate(f64),
    #[error("bandwidth must be positive, got {0}")]
    BadBandwidth(f64),
}

/// A 1-D Gaussian mixture with per-component standard deviations: the
/// projection of every target this crate handles onto a unit direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture1d {
    /// (weight, mean, sd)
    comps: Vec<(f64, f64, f64)>,
}

impl Mixture1d {
    pub fn new(comps: Vec<(f64, f64, f64)>) -> Self {
        debug_assert!(!comps.is_empty());
        debug_assert!(comps.iter().all(|&(w, _, s)| w > 0.0 && s > 0.0));
        Self { comps }
    }

    pub fn density(&self, x: f64) -> f64 {
        let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        self.comps
            .iter()
            .map(|&(w, m, s)| {
                let z = (x - m) / s;
                w * norm / s * (-0.5 * z * z).exp()
            })
            .sum()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.comps
            .iter()
            .map(|&(w, m, s)| {
                let z = (x - m) / (s * std::f64::consts::SQRT_2);
                w * 0.5 * (1.0 + libm::erf(z))
            })
            .sum()
    }

    pub fn mass(&self, lo: f64, hi: f64) -> f64 {
        self.cdf(hi) - self.cdf(lo)
    }

    pub fn mean(&self) -> f64 {
        self.comps.iter().map(|&(w, m, _)| w * m).sum()
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.comps
            .iter()
            .map(|&(w, m, s)| w * (s * s + (m - mean) * (m - mean)))
            .sum()
    }

    /// mean ± 6 standard deviations: the default histogram range.
    pub fn six_sigma_range(&self) -> (f64, f64) {
        let m = self.mean();
        let s = self.variance().sqrt();
        (m - 6.0 * s, m + 6.0 * s)
    }
}

/// Anything with exact 1-D marginals along unit directions.
pub trait Project1d {
    fn dim(&self) -> usize;
    fn project(&self, direction: &[f64]) -> Mixture1d;
    /// Normalized directions through each pair of component means: the
    /// discriminating directions for a mixture. May be empty.
    fn mean_pair_directions(&self) -> Vec<Vec<f64>>;
}

impl Project1d for crate::gmm::GaussianMixture {
    fn dim(&self) -> usize {
        self.dim()
    }

    fn project(&self, direction: &[f64]) -> Mixture1d {
        let comps = (0..self.k())
            .map(|k| {
                let m = self.mean(k).iter().zip(direction).map(|(a, b)| a * b).sum();
                (self.weights()[k], m, 1.0)
            })
            .collect();
        Mixture1d::new(comps)
    }

    fn mean_pair_directions(&self) -> Vec<Vec<f64>> {
        let mut dirs = Vec::new();
        for i in 0..self.k() {
            for j in (i + 1)..self.k() {
                let diff: Vec<f64> =
                    self.mean(i).iter().zip(self.mean(j)).map(|(a, b)| a - b).collect();
                let norm = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    dirs.push(diff.iter().map(|x| x / norm).collect());
                }
            }
        }
        dirs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TvMethod {
    Grid1d,
    Sliced,
    /// Reserved in the report schema; no estimator emits it.
    Kde2d,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TvEstimate {
    pub value: f64,
    pub method: TvMethod,
    pub bins: usize,
    pub projections: usize,
    /// Delta-method standard error (for sliced: of the maximizing direction).
    pub mc_error: f64,
    /// Mean over projections; equals `value` for grid-1d.
    pub mean_over_projections: f64,
}

/// Histogram-vs-integrated-density TV on a fixed grid, plus tail terms.
pub fn tv_1d_grid(
    target: &Mixture1d,
    samples: &SampleBatch,
    bins: usize,
    range: (f64, f64),
) -> Result<TvEstimate, MetricsError> {
    if samples.dim() != 1 {
        return Err(MetricsError::WrongDimension(samples.dim()));
    }
    tv_1d_grid_values(target, samples.as_flat(), bins, range)
}

pub(crate) fn tv_1d_grid_values(
    target: &Mixture1d,
    values: &[f64],
    bins: usize,
    range: (f64, f64),
) -> Result<TvEstimate, MetricsError> {
    let (lo, hi) = range;
    if bins < 50 {
        return Err(MetricsError::DegenerateRange(format!("need at least 50 bins, got {bins}")));
    }
    let range_ok = hi > lo;
    if !range_ok {
        return Err(MetricsError::DegenerateRange(format!("empty interval [{lo}, {hi}]")));
    }
    if target.mass(lo, hi) < 0.999 {
        return Err(MetricsError::DegenerateRange(format!(
            "range [{lo}, {hi}] covers only {:.4} of the target mass",
            target.mass(lo, hi)
        )));
    }
    let n = values.len() as f64;
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins + 2]; // [0] left tail, [bins+1] right tail
    for &x in values {
        let idx = if x < lo {
            0
        } else if x >= hi {
            bins + 1
        } else {
            1 + (((x - lo) / width) as usize).min(bins - 1)
        };
        counts[idx] += 1;
    }
    let mut acc = 0.0;
    let mut signed_emp = 0.0;
    for (i, &c) in counts.iter().enumerate() {
        let emp = c as f64 / n;
        let mass = if i == 0 {
            target.cdf(lo)
        } else if i == bins + 1 {
            1.0 - target.cdf(hi)
        } else {
            target.mass(lo + (i - 1) as f64 * width, lo + i as f64 * width)
        };
        acc += (emp - mass).abs();
        signed_emp += if emp >= mass { emp } else { -emp };
    }
    let value = (0.5 * acc).clamp(0.0, 1.0);
    let mc_error = ((1.0 - signed_emp * signed_emp).max(0.0) / (4.0 * n)).sqrt();
    Ok(TvEstimate {
        value,
        method: TvMethod::Grid1d,
        bins,
        projections: 1,
        mc_error,
        mean_over_projections: value,
    })
}

/// Deterministic TV between two 1-D mixtures on the same grid (no samples);
/// used as an oracle for discretization convergence and contamination bounds.
pub fn binned_tv_exact(p: &Mixture1d, q: &Mixture1d, bins: usize, range: (f64, f64)) -> f64 {
    let (lo, hi) = range;
    let width = (hi - lo) / bins as f64;
    let mut acc = (p.cdf(lo) - q.cdf(lo)).abs();
    for i in 0..bins {
        let a = lo + i as f64 * width;
        let b = lo + (i + 1) as f64 * width;
        acc += (p.mass(a, b) - q.mass(a, b)).abs();
    }
    acc += ((1.0 - p.cdf(hi)) - (1.0 - q.cdf(hi))).abs();
    0.5 * acc
}

/// Max (and mean) of projected TV over `projections` uniform random unit
/// directions, the target's mean-pair directions, and any `pinned` extras.
pub fn sliced_tv<T: Project1d + Sync>(
    target: &T,
    samples: &SampleBatch,
    projections: usize,
    bins: usize,
    seed: u64,
    pinned: &[Vec<f64>],
) -> Result<TvEstimate, MetricsError> {
    let d = target.dim();
    if samples.dim() != d {
        return Err(MetricsError::DimensionMismatch { a: samples.dim(), b: d });
    }
    if projections < 1 {
        return Err(MetricsError::DegenerateRange("need at least one projection".into()));
    }
    let mut directions: Vec<Vec<f64>> = Vec::with_capacity(projections);
    for j in 0..projections {
        let mut rng = rng::derive_rng(seed, &[tags::PROJECTION, j as u64]);
        loop {
            let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-9 {
                directions.push(v.iter().map(|x| x / norm).collect());
                break;
            }
        }
    }
    directions.extend(target.mean_pair_directions());
    for p in pinned {
        let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        directions.push(p.iter().map(|x| x / norm).collect());
    }

    let per_direction: Vec<Result<TvEstimate, MetricsError>> = directions
        .par_iter()
        .map(|u| {
            let projected: Vec<f64> = samples
                .iter_points()
                .map(|p| p.iter().zip(u).map(|(a, b)| a * b).sum())
                .collect();
            let marginal = target.project(u);
            let range = marginal.six_sigma_range();
            tv_1d_grid_values(&marginal, &projected, bins, range)
        })
        .collect();

    let mut best: Option<TvEstimate> = None;
    let mut sum = 0.0;
    let total = per_direction.len();
    for est in per_direction {
        let est = est?;
        sum += est.value;
        if best.as_ref().is_none_or(|b| est.value > b.value) {
            best = Some(est);
        }
    }
    let best = best.expect("at least one direction");
    Ok(TvEstimate {
        value: best.value,
        method: TvMethod::Sliced,
        bins,
        projections: total,
        mc_error: best.mc_error,
        mean_over_projections: sum / total as f64,
    })
}

/// Unbiased Gaussian-kernel MMD² estimate; `bandwidth` defaults to the
/// median pairwise distance over a deterministic subsample.
pub fn mmd(
    a: &SampleBatch,
    b: &SampleBatch,
    bandwidth: Option<f64>,
) -> Result<f64, MetricsError> {
    if a.dim() != b.dim() {
        return Err(MetricsError::DimensionMismatch { a: a.dim(), b: b.dim() });
    }
    if a.n() < 2 || b.n() < 2 {
        return Err(MetricsError::TooFewPoints { need: 2, got: a.n().min(b.n()) });
    }
    let h = match bandwidth {
        Some(h) if h > 0.0 => h,
        Some(h) => return Err(MetricsError::BadBandwidth(h)),
        None => median_heuristic(a, b),
    };
    let gamma = 1.0 / (2.0 * h * h);
    let m = a.n() as f64;
    let n = b.n() as f64;

    let row_sums = |xs: &SampleBatch| -> f64 {
        let per_row: Vec<f64> = (0..xs.n())
            .into_par_iter()
            .map(|i| {
                let xi = xs.point(i);
                let mut s = 0.0;
                for j in 0..xs.n() {
                    if i != j {
                        s += (-gamma * sq_dist(xi, xs.point(j))).exp();
                    }
                }
                s
            })
            .collect();
        per_row.iter().sum()
    };
    let cross: f64 = {
        let per_row: Vec<f64> = (0..a.n())
            .into_par_iter()
            .map(|i| {
                let xi = a.point(i);
                let mut s = 0.0;
                for j in 0..b.n() {
                    s += (-gamma * sq_dist(xi, b.point(j))).exp();
                }
                s
            })
            .collect();
        per_row.iter().sum()
    };
    Ok(row_sums(a) / (m * (m - 1.0)) + row_sums(b) / (n * (n - 1.0)) - 2.0 * cross / (m * n))
}

fn median_heuristic(a: &SampleBatch, b: &SampleBatch) -> f64 {
    let cap = 256usize;
    let stride = |n: usize| (n / cap.min(n)).max(1);
    let mut pts: Vec<&[f64]> = Vec::new();
    for i in (0..a.n()).step_by(stride(a.n())).take(cap / 2) {
        pts.push(a.point(i));
    }
    for i in (0..b.n()).step_by(stride(b.n())).take(cap / 2) {
        pts.push(b.point(i));
    }
    let mut dists: Vec<f64> = Vec::with_capacity(pts.len() * (pts.len() - 1) / 2);
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            dists.push(sq_dist(pts[i], pts[j]).sqrt());
        }
    }
    dists.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let med = dists[dists.len() / 2];
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

#[inline]
fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(&a, &b)| (a - b) * (a - b)).sum()
}

/// Moment- and occupancy-level diagnostics of a batch against a mixture.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentReport {
    pub mean_gap: Vec<f64>,
    pub mean_se: Vec<f64>,
    pub mean_gap_norm: f64,
    pub cov_gap_fro: f64,
    /// Soft posterior occupancy per component.
    pub occupancy: Vec<f64>,
    pub expected_occupancy: Vec<f64>,
}

pub fn moment_diagnostics(
    samples: &SampleBatch,
    target: &crate::gmm::GaussianMixture,
) -> Result<MomentReport, MetricsError> {
    if samples.dim() != target.dim() {
        return Err(MetricsError::DimensionMismatch { a: samples.dim(), b: target.dim() });
    }
    let d = samples.dim();
    let n = samples.n() as f64;
    let mean = samples.mean();
    let cov = samples.covariance();
    let tmean = target.mixture_mean();
    let tcov = target.mixture_covariance();

    let mean_gap: Vec<f64> = mean.iter().zip(&tmean).map(|(a, b)| a - b).collect();
    let mean_se: Vec<f64> =
        (0..d).map(|i| (cov[i * d + i].max(0.0) / n).sqrt()).collect();
    let mean_gap_norm = mean_gap.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cov_gap_fro = cov
        .iter()
        .zip(&tcov)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();

    let mut occupancy = vec![0.0; target.k()];
    for p in samples.iter_points() {
        let post = target.posterior_weights(p).expect("dimension checked");
        for (o, &w) in occupancy.iter_mut().zip(post.values()) {
            *o += w;
        }
    }
    occupancy.iter_mut().for_each(|o| *o /= n);

    Ok(MomentReport {
        mean_gap,
        mean_se,
        mean_gap_norm,
        cov_gap_fro,
        occupancy,
        expected_occupancy: target.weights().to_vec(),
    })
}

/// Power-law fit TV ≈ a·T^(−b) by least squares on (log T, log TV).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateFit {
    pub a: f64,
    pub b: f64,
    pub r2: f64,
    pub points: usize,
}

pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit, MetricsError> {
    let mut pts = points.to_vec();
    pts.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    pts.dedup_by(|a, b| a.0 == b.0);
    if pts.len() < 4 {
        return Err(MetricsError::TooFewPoints { need: 4, got: pts.len() });
    }
    for &(_, tv) in &pts {
        let positive = tv.is_finite() && tv > 0.0;
        if !positive {
            return Err(MetricsError::NonPositiveEstimate(tv));
        }
    }
    let logs: Vec<(f64, f64)> = pts.iter().map(|&(t, tv)| (t.ln(), tv.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = logs.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    let ss_res: f64 = logs
        .iter()
        .map(|p| {
            let r = p.1 - (intercept + slope * p.0);
            r * r
        })
        .sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(RateFit { a: intercept.exp(), b: -slope, r2, points: pts.len() })
}

/// Spearman rank correlation with an exact one-sided permutation p-value for
/// a positive trend. Usable for n ≤ 8 (enumerates all rank permutations).
pub fn spearman_positive_p(pairs: &[(f64, f64)]) -> (f64, f64) {
    let n = pairs.len();
    assert!((2..=8).contains(&n), "exact test limited to 2..=8 points");
    let xr = ranks(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let yr = ranks(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
    let rho_of = |perm: &[usize]| {
        let mut num = 0.0;
        let mean = (n as f64 - 1.0) / 2.0;
        let mut sx = 0.0;
        let mut sy = 0.0;
        for i in 0..n {
            let a = xr[i] - mean;
            let b = yr[perm[i]] - mean;
            num += a * b;
            sx += a * a;
            sy += b * b;
        }
        num / (sx * sy).sqrt()
    };
    let identity: Vec<usize> = (0..n).collect();
    let observed = rho_of(&identity);
    let mut perm = identity.clone();
    let mut at_least = 0usize;
    let mut total = 0usize;
    permute(&mut perm, 0, &mut |p| {
        total += 1;
        if rho_of(p) >= observed - 1e-12 {
            at_least += 1;
        }
    });
    (observed, at_least as f64 / total as f64)
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut r = vec![0.0; xs.len()];
    for (rank, &i) in idx.iter().enumerate() {
        r[i] = rank as f64;
    }
    r
}

fn permute(perm: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == perm.len() {
        visit(perm);
        return;
    }
    for i in k..perm.len() {
        perm.swap(k, i);
        permute(perm, k + 1, visit);
        perm.swap(k, i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batch::BatchLabel;
    use crate::gmm::GaussianMixture;
    use approx::assert_abs_diff_eq;

    fn n01() -> Mixture1d {
        Mixture1d::new(vec![(1.0, 0.0, 1.0)])
    }

    fn gaussian_batch(mean: f64, n: usize, seed: u64) -> SampleBatch {
        let gmm = GaussianMixture::new(vec![1.0], vec![vec![mean]]).unwrap();
        let mut b = gmm.sample(n, seed).unwrap();
        b.label = BatchLabel::Target;
        b
    }

    // ½∫|φ(x) − φ(x−1)|dx by high-resolution numerical integration
    fn gaussian_shift_tv_oracle() -> f64 {
        let (lo, hi, n) = (-9.0, 10.0, 1_000_000);
        let h = (hi - lo) / n as f64;
        let phi = |x: f64| (-(x * x) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut acc = 0.0;
        for i in 0..=n {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            acc += w * (phi(x) - phi(x - 1.0)).abs();
        }
        0.5 * acc * h
    }

    #[test]
    fn grid_tv_self_distance_is_small() {
        let est = tv_1d_grid(&n01(), &gaussian_batch(0.0, 1_000_000, 3), 200, (-6.0, 6.0))
            .unwrap();
        assert!(est.value <= 0.02, "self-distance {}", est.value);
    }

    #[test]
    fn grid_tv_disjoint_supports() {
        let est = tv_1d_grid(&n01(), &gaussian_batch(10.0, 20_000, 4), 200, (-6.0, 6.0)).unwrap();
        assert!(est.value > 0.99, "{}", est.value);
    }

    #[test]
    fn grid_tv_unit_shift_matches_integration_oracle() {
        let oracle = gaussian_shift_tv_oracle();
        assert_abs_diff_eq!(oracle, 0.3829, epsilon = 1e-4);
        let est =
            tv_1d_grid(&n01(), &gaussian_batch(1.0, 400_000, 5), 300, (-7.0, 8.0)).unwrap();
        assert!((est.value - oracle).abs() < 0.01, "{} vs {oracle}", est.value);
    }

    #[test]
    fn grid_tv_rejects_bad_inputs() {
        let b = gaussian_batch(0.0, 100, 6);
        assert!(matches!(
            tv_1d_grid(&n01(), &b, 10, (-6.0, 6.0)),
            Err(MetricsError::DegenerateRange(_))
        ));
        assert!(matches!(
            tv_1d_grid(&n01(), &b, 200, (-0.5, 0.5)),
            Err(MetricsError::DegenerateRange(_))
        ));
        let gmm2 = GaussianMixture::new(vec![1.0], vec![vec![0.0, 0.0]]).unwrap();
        let b2 = gmm2.sample(100, 7).unwrap();
        assert!(matches!(
            tv_1d_grid(&n01(), &b2, 200, (-6.0, 6.0)),
            Err(MetricsError::WrongDimension(2))
        ));
    }

    #[test]
    fn binned_tv_discretization_error_shrinks_with_bins() {
        let p = n01();
        let q = Mixture1d::new(vec![(1.0, 1.0, 1.0)]);
        let truth = gaussian_shift_tv_oracle();
        // range chosen so no bin edge hits the density crossing at x = 0.5
        let range = (-8.1, 9.0);
        let errs: Vec<f64> = [50usize, 200, 800]
            .iter()
            .map(|&b| (binned_tv_exact(&p, &q, b, range) - truth).abs())
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
        assert!(errs[2] < 1e-4);
    }

    #[test]
    fn sliced_matches_grid_in_one_dimension() {
        let target = GaussianMixture::new(vec![1.0], vec![vec![0.4]]).unwrap();
        let samples = gaussian_batch(0.0, 50_000, 8);
        let sliced = sliced_tv(&target, &samples, 1, 200, 9, &[]).unwrap();
        let marginal = target.project(&[1.0]);
        let range = marginal.six_sigma_range();
        let grid = tv_1d_grid(&marginal, &samples, 200, range).unwrap();
        // the single random direction in d=1 is ±1; TV is mirror-invariant
        assert_abs_diff_eq!(sliced.value, grid.value, epsilon = 1e-9);
    }

    #[test]
    fn sliced_null_calibration_stays_below_floor() {
        let target = GaussianMixture::new(
            vec![0.5, 0.5],
            vec![vec![-1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]],
        )
        .unwrap();
        let samples = target.sample(100_000, 10).unwrap();
        let est = sliced_tv(&target, &samples, 32, 200, 11, &[]).unwrap();
        assert!(est.value <= 0.03, "null sliced TV {}", est.value);
        assert!(est.mean_over_projections <= est.value);
    }

    #[test]
    fn sliced_detects_shift_along_pinned_direction() {
        let d = 4;
        let target = GaussianMixture::new(vec![1.0], vec![vec![0.0; d]]).unwrap();
        let mut mean = vec![0.0; d];
        mean[0] = 1.0;
        let shifted = GaussianMixture::new(vec![1.0], vec![mean.clone()]).unwrap();
        let samples = shifted.sample(200_000, 12).unwrap();
        let est = sliced_tv(&target, &samples, 8, 300, 13, &[mean]).unwrap();
        assert_abs_diff_eq!(est.value, 0.3829, epsilon = 0.012);
    }

    #[test]
    fn mmd_null_and_separated() {
        let gmm = GaussianMixture::new(vec![1.0], vec![vec![0.0, 0.0]]).unwrap();
        // null: repeated estimates straddle zero within 3 empirical sd
        let reps: Vec<f64> = (0..8)
            .map(|i| {
                let a = gmm.sample(600, 100 + i).unwrap();
                let b = gmm.sample(600, 200 + i).unwrap();
                mmd(&a, &b, Some(1.0)).unwrap()
            })
            .collect();
        let mean = reps.iter().sum::<f64>() / reps.len() as f64;
        let sd = (reps.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
            / (reps.len() as f64 - 1.0))
            .sqrt();
        assert!(mean.abs() < 3.0 * sd / (reps.len() as f64).sqrt() + 1e-4, "{mean} vs sd {sd}");

        let far = GaussianMixture::new(vec![1.0], vec![vec![3.0, 0.0]]).unwrap();
        let a = gmm.sample(10_000, 14).unwrap();
        let b = far.sample(10_000, 15).unwrap();
        assert!(mmd(&a, &b, None).unwrap() > 0.1);
    }

    #[test]
    fn mmd_is_permutation_invariant() {
        let gmm = GaussianMixture::new(vec![1.0], vec![vec![0.0]]).unwrap();
        let a = gmm.sample(400, 16).unwrap();
        let b = gmm.sample(400, 17).unwrap();
        let v1 = mmd(&a, &b, Some(0.7)).unwrap();
        // reverse both point orders
        let rev = |s: &SampleBatch| {
            let mut pts: Vec<f64> = Vec::with_capacity(s.n());
            for i in (0..s.n()).rev() {
                pts.extend_from_slice(s.point(i));
            }
            SampleBatch::new(pts, s.dim(), s.seed, s.label)
        };
        let v2 = mmd(&rev(&a), &rev(&b), Some(0.7)).unwrap();
        assert_abs_diff_eq!(v1, v2, epsilon = 1e-12);
    }

    #[test]
    fn moment_diagnostics_from_target_and_from_one_component() {
        let target =
            GaussianMixture::new(vec![0.5, 0.5], vec![vec![-4.0, 0.0], vec![4.0, 0.0]]).unwrap();
        let own = target.sample(100_000, 18).unwrap();
        let rep = moment_diagnostics(&own, &target).unwrap();
        for (gap, se) in rep.mean_gap.iter().zip(&rep.mean_se) {
            assert!(gap.abs() < 5.0 * se, "gap {gap} se {se}");
        }
        for (o, e) in rep.occupancy.iter().zip(&rep.expected_occupancy) {
            assert!((o - e).abs() < 0.01);
        }

        let single = GaussianMixture::new(vec![1.0], vec![vec![-4.0, 0.0]]).unwrap();
        let one_sided = single.sample(20_000, 19).unwrap();
        let rep1 = moment_diagnostics(&one_sided, &target).unwrap();
        assert!(rep1.occupancy[0] > 0.99 && rep1.occupancy[1] < 0.01);
    }

    #[test]
    fn fit_rate_recovers_power_laws_exactly() {
        let pts: Vec<(f64, f64)> =
            [8.0, 16.0, 32.0, 64.0].iter().map(|&t| (t, 2.0 / t)).collect();
        let fit = fit_rate(&pts).unwrap();
        assert_abs_diff_eq!(fit.a, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.b, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.r2, 1.0, epsilon = 1e-12);

        let sqrt_pts: Vec<(f64, f64)> =
            [8.0f64, 16.0, 32.0, 64.0, 128.0].iter().map(|&t| (t, 3.0 / t.sqrt())).collect();
        let fit2 = fit_rate(&sqrt_pts).unwrap();
        assert_abs_diff_eq!(fit2.b, 0.5, epsilon = 1e-12);

        assert!(matches!(
            fit_rate(&pts[..3]),
            Err(MetricsError::TooFewPoints { need: 4, got: 3 })
        ));
        let mut bad = pts.clone();
        bad[1].1 = 0.0;
        assert!(matches!(fit_rate(&bad), Err(MetricsError::NonPositiveEstimate(_))));
    }

    #[test]
    fn spearman_exact_permutation_p_values() {
        let inc: Vec<(f64, f64)> = vec![(1.0, 0.1), (2.0, 0.2), (3.0, 0.3), (4.0, 0.4)];
        let (rho, p) = spearman_positive_p(&inc);
        assert_abs_diff_eq!(rho, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p, 1.0 / 24.0, epsilon = 1e-12);

        let flat: Vec<(f64, f64)> = vec![(1.0, 0.2), (2.0, 0.4), (3.0, 0.1), (4.0, 0.3)];
        let (_, p_flat) = spearman_positive_p(&flat);
        assert!(p_flat > 0.05);
    }
}
