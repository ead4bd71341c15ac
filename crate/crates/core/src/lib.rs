//! A numerical laboratory for DDPM sampling of isotropic Gaussian-mixture
//! targets: exact closed-form scores, the iterative noise schedule, clipped
//! and deliberately corrupted score oracles, total-variation metrics, and
//! probes of the quantities that drive the sampler's dimension-free behavior.
//!
//! Module map:
//! - [`gmm`] — mixtures, diffused marginals, densities, posteriors, scores,
//!   score-Jacobian traces, sampling;
//! - [`schedule`] — the iterative learning-rate schedule and its certification;
//! - [`sampler`] — forward noising, the DDPM reverse chain, the exact moment
//!   recursion for single-Gaussian targets, target contamination;
//! - [`oracle`] — exact/clipped/perturbed score oracles and score-error
//!   measurement;
//! - [`probes`] — ζ identities, the typical event, trace quantiles, the
//!   score-norm bound behind clipping;
//! - [`metrics`] — 1-D and sliced TV estimators, MMD, moment diagnostics,
//!   power-law rate fits;
//! - [`experiment`] — reproducible sweep driver, config parsing, reports and
//!   charts.

pub mod batch;
pub mod experiment;
pub mod gmm;
pub mod metrics;
pub mod oracle;
pub mod probes;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod target;

pub use batch::{BatchLabel, SampleBatch};
pub use gmm::{GaussianMixture, GmmError, PosteriorWeights};
pub use metrics::{fit_rate, mmd, moment_diagnostics, sliced_tv, tv_1d_grid, RateFit, TvEstimate};
pub use oracle::{
    clip_oracle, exact_oracle, measure_score_error, perturb_oracle, PerturbModel, ScoreOracle,
    ScoreErrorReport,
};
pub use sampler::{
    contaminate_target, ddpm_sample, forward_sample, gaussian_moment_oracle, Contaminant,
    ReverseTrajectory, SnapshotPolicy,
};
pub use schedule::{NoiseSchedule, ScheduleError, ValidationReport};
pub use target::TargetDistribution;
