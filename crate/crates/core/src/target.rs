//! Samplable targets: a pure mixture, or a mixture contaminated by a small
//! amount of an auxiliary distribution. Only the mixture part exposes
//! densities and scores; the contaminated variant is sample-only apart from
//! its exact 1-D projections (its contaminant is an isotropic Gaussian, so
//! every projection stays a closed-form 1-D mixture).

use crate::batch::{BatchLabel, SampleBatch};
use crate::gmm::GaussianMixture;
use crate::metrics::{Mixture1d, Project1d};
use crate::rng::{self, tags};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TargetError {
    #[error("contamination level {0} outside [0, 1)")]
    BadDelta(f64),
    #[error("contaminant dimension {got} does not match target dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Contaminating distribution; samplable, with closed-form 1-D projections.
#[derive(Debug, Clone, PartialEq)]
pub enum Contaminant {
    IsotropicGaussian { mean: Vec<f64>, variance: f64 },
}

impl Contaminant {
    pub fn dim(&self) -> usize {
        match self {
            Contaminant::IsotropicGaussian { mean, .. } => mean.len(),
        }
    }

    fn sample_point<R: Rng>(&self, out: &mut [f64], rng: &mut R) {
        match self {
            Contaminant::IsotropicGaussian { mean, variance } => {
                let sd = variance.sqrt();
                for (o, &m) in out.iter_mut().zip(mean) {
                    let z: f64 = rng.sample(StandardNormal);
                    *o = m + sd * z;
                }
            }
        }
    }

    fn project(&self, direction: &[f64]) -> (f64, f64) {
        match self {
            Contaminant::IsotropicGaussian { mean, variance } => {
                let m = mean.iter().zip(direction).map(|(a, b)| a * b).sum();
                (m, variance.sqrt())
            }
        }
    }

    pub fn descriptor(&self) -> String {
        match self {
            Contaminant::IsotropicGaussian { variance, .. } => {
                format!("gaussian(var={variance})")
            }
        }
    }
}

/// The distribution the sampler is judged against.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetDistribution {
    Gmm(GaussianMixture),
    Contaminated { gmm: GaussianMixture, delta: f64, contaminant: Contaminant },
}

/// (1−δ)·gmm + δ·contaminant. The mixture coupling bound gives
/// TV(target, gmm) ≤ δ, so the GMM approximation error is at most δ.
pub fn contaminate_target(
    gmm: GaussianMixture,
    delta: f64,
    contaminant: Contaminant,
) -> Result<TargetDistribution, TargetError> {
    if !(0.0..1.0).contains(&delta) {
        return Err(TargetError::BadDelta(delta));
    }
    if contaminant.dim() != gmm.dim() {
        return Err(TargetError::DimensionMismatch {
            expected: gmm.dim(),
            got: contaminant.dim(),
        });
    }
    if delta == 0.0 {
        return Ok(TargetDistribution::Gmm(gmm));
    }
    Ok(TargetDistribution::Contaminated { gmm, delta, contaminant })
}

impl TargetDistribution {
    pub fn dim(&self) -> usize {
        self.gmm().dim()
    }

    /// The clean mixture part (the whole target when δ = 0).
    pub fn gmm(&self) -> &GaussianMixture {
        match self {
            TargetDistribution::Gmm(g) => g,
            TargetDistribution::Contaminated { gmm, .. } => gmm,
        }
    }

    pub fn delta(&self) -> f64 {
        match self {
            TargetDistribution::Gmm(_) => 0.0,
            TargetDistribution::Contaminated { delta, .. } => *delta,
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> SampleBatch {
        let d = self.dim();
        let mut points = vec![0.0; n * d];
        let mut rng = rng::derive_rng(seed, &[tags::GMM_SAMPLE, tags::CONTAMINANT]);
        match self {
            TargetDistribution::Gmm(g) => g.sample_into(&mut points, &mut rng),
            TargetDistribution::Contaminated { gmm, delta, contaminant } => {
                for p in points.chunks_exact_mut(d) {
                    if rng.random::<f64>() < *delta {
                        contaminant.sample_point(p, &mut rng);
                    } else {
                        let k = gmm.sample_component(&mut rng);
                        for (pi, &mi) in p.iter_mut().zip(gmm.mean(k)) {
                            let z: f64 = rng.sample(StandardNormal);
                            *pi = mi + z;
                        }
                    }
                }
            }
        }
        SampleBatch::new(points, d, seed, BatchLabel::Target)
    }

    pub(crate) fn sample_into<R: Rng>(&self, out: &mut [f64], rng: &mut R) {
        let d = self.dim();
        match self {
            TargetDistribution::Gmm(g) => g.sample_into(out, rng),
            TargetDistribution::Contaminated { gmm, delta, contaminant } => {
                for p in out.chunks_exact_mut(d) {
                    if rng.random::<f64>() < *delta {
                        contaminant.sample_point(p, rng);
                    } else {
                        let k = gmm.sample_component(rng);
                        for (pi, &mi) in p.iter_mut().zip(gmm.mean(k)) {
                            let z: f64 = rng.sample(StandardNormal);
                            *pi = mi + z;
                        }
                    }
                }
            }
        }
    }

    pub fn descriptor(&self) -> String {
        match self {
            TargetDistribution::Gmm(g) => format!("gmm(K={}, d={})", g.k(), g.dim()),
            TargetDistribution::Contaminated { gmm, delta, contaminant } => format!(
                "contaminated(K={}, d={}, delta={}, {})",
                gmm.k(),
                gmm.dim(),
                delta,
                contaminant.descriptor()
            ),
        }
    }
}

impl Project1d for TargetDistribution {
    fn dim(&self) -> usize {
        self.gmm().dim()
    }

    fn project(&self, direction: &[f64]) -> Mixture1d {
        match self {
            TargetDistribution::Gmm(g) => g.project(direction),
            TargetDistribution::Contaminated { gmm, delta, contaminant } => {
                let mut comps = Vec::with_capacity(gmm.k() + 1);
                for k in 0..gmm.k() {
                    let m: f64 =
                        gmm.mean(k).iter().zip(direction).map(|(a, b)| a * b).sum();
                    comps.push(((1.0 - delta) * gmm.weights()[k], m, 1.0));
                }
                let (cm, csd) = contaminant.project(direction);
                comps.push((*delta, cm, csd));
                Mixture1d::new(comps)
            }
        }
    }

    fn mean_pair_directions(&self) -> Vec<Vec<f64>> {
        self.gmm().mean_pair_directions()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::binned_tv_exact;

    fn base() -> GaussianMixture {
        GaussianMixture::new(vec![0.5, 0.5], vec![vec![-1.0], vec![1.0]]).unwrap()
    }

    #[test]
    fn delta_zero_collapses_to_gmm() {
        let t = contaminate_target(
            base(),
            0.0,
            Contaminant::IsotropicGaussian { mean: vec![0.0], variance: 2.0 },
        )
        .unwrap();
        assert!(matches!(t, TargetDistribution::Gmm(_)));
        assert_eq!(t.delta(), 0.0);
    }

    #[test]
    fn delta_bounds_are_enforced() {
        let c = Contaminant::IsotropicGaussian { mean: vec![0.0], variance: 2.0 };
        assert!(matches!(
            contaminate_target(base(), 1.0, c.clone()),
            Err(TargetError::BadDelta(_))
        ));
        assert!(matches!(
            contaminate_target(base(), -0.1, c.clone()),
            Err(TargetError::BadDelta(_))
        ));
        let wrong = Contaminant::IsotropicGaussian { mean: vec![0.0, 0.0], variance: 2.0 };
        assert!(matches!(
            contaminate_target(base(), 0.1, wrong),
            Err(TargetError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn contamination_tv_is_bounded_by_delta() {
        // 1-D grid-integration oracle: TV((1−δ)p + δq, p) = δ·TV(q, p) ≤ δ
        let delta = 0.01;
        let t = contaminate_target(
            base(),
            delta,
            Contaminant::IsotropicGaussian { mean: vec![0.0], variance: 2.0 },
        )
        .unwrap();
        let dir = [1.0];
        let contaminated = t.project(&dir);
        let clean = t.gmm().project(&dir);
        let tv = binned_tv_exact(&contaminated, &clean, 4000, (-20.0, 20.0));
        assert!(tv <= delta + 1e-9, "tv = {tv}");
        assert!(tv > 0.0);
    }

    #[test]
    fn contaminated_sampling_hits_the_contaminant_at_the_right_rate() {
        // contaminant far away so membership is readable from the sample
        let t = contaminate_target(
            base(),
            0.2,
            Contaminant::IsotropicGaussian { mean: vec![50.0], variance: 1.0 },
        )
        .unwrap();
        let batch = t.sample(50_000, 3);
        let far = batch.iter_points().filter(|p| p[0] > 25.0).count() as f64 / 5e4;
        assert!((far - 0.2).abs() < 0.01, "contaminant fraction {far}");
    }

    #[test]
    fn sampling_is_deterministic_in_seed() {
        let t = contaminate_target(
            base(),
            0.1,
            Contaminant::IsotropicGaussian { mean: vec![0.0], variance: 2.0 },
        )
        .unwrap();
        assert_eq!(t.sample(1000, 9), t.sample(1000, 9));
    }
}
