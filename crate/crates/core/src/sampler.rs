//! Forward noising and the DDPM reverse sampler.
//!
//! The reverse chain starts at Y_T ~ N(0, I_d) and applies
//! Y_{t−1} = (Y_t + (1−α_t)·ŝ_t(Y_t))/√α_t + √(1−α_t)·Z_t for t = T,…,2,
//! returning Y_1 (there is no t = 1 update). Chains are independent; chain i
//! derives its initialization stream from (seed, i) and the step-t noise from
//! (seed, i, t), so output is bit-identical across any parallel schedule.

use crate::batch::{BatchLabel, SampleBatch};
use crate::oracle::ScoreOracle;
use crate::rng::{self, tags};
use crate::schedule::NoiseSchedule;
use crate::target::TargetDistribution;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

pub use crate::target::{contaminate_target, Contaminant, TargetError};

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("step {t} outside 1..={t_count}")]
    StepOutOfRange { t: usize, t_count: usize },
    #[error("oracle dimension {oracle} does not match requested dimension {requested}")]
    OracleDimensionMismatch { oracle: usize, requested: usize },
    #[error("oracle covers {oracle} steps but the schedule has {schedule}")]
    OracleStepsMismatch { oracle: usize, schedule: usize },
    #[error("chain count must be at least 1")]
    ZeroCount,
}

/// Which reverse-chain states to record besides the output Y_1.
#[derive(Debug, Clone, PartialEq)]
pub enum SnapshotPolicy {
    /// Record nothing but the final batch.
    None,
    /// Record at {T, T/2, T/4, …, 1}.
    Halving,
    /// Record at an explicit set of steps (clamped to 1..=T, deduplicated).
    At(Vec<usize>),
}

impl SnapshotPolicy {
    /// Recorded steps, strictly decreasing.
    pub fn steps(&self, t_count: usize) -> Vec<usize> {
        let mut steps = match self {
            SnapshotPolicy::None => Vec::new(),
            SnapshotPolicy::Halving => {
                let mut v = Vec::new();
                let mut t = t_count;
                while t >= 1 {
                    v.push(t);
                    if t == 1 {
                        break;
                    }
                    t /= 2;
                }
                v
            }
            SnapshotPolicy::At(list) => {
                list.iter().copied().filter(|&t| t >= 1 && t <= t_count).collect()
            }
        };
        steps.sort_unstable_by(|a, b| b.cmp(a));
        steps.dedup();
        steps
    }
}

/// Recorded reverse-chain states plus the output batch Y_1.
#[derive(Debug, Clone)]
pub struct ReverseTrajectory {
    /// (t, batch of Y_t), t strictly decreasing.
    pub snapshots: Vec<(usize, SampleBatch)>,
    pub output: SampleBatch,
}

/// Draws X_t = √ᾱ_t·X_0 + √(1−ᾱ_t)·W for n independent X_0 from the target.
pub fn forward_sample(
    target: &TargetDistribution,
    sched: &NoiseSchedule,
    t: usize,
    n: usize,
    seed: u64,
) -> Result<SampleBatch, SamplerError> {
    if t < 1 || t > sched.t_count() {
        return Err(SamplerError::StepOutOfRange { t, t_count: sched.t_count() });
    }
    let mut batch =
        forward_sample_at(target, sched.alpha_bar(t), sched.one_minus_alpha_bar(t), n, seed)?;
    batch.label = BatchLabel::ForwardT(t);
    Ok(batch)
}

/// Forward draw at an explicit signal level; `one_minus_alpha_bar` is passed
/// separately so saturated schedules keep full precision in the noise scale.
/// The batch label carries step 0 as a sentinel for "explicit level, outside
/// any schedule"; `forward_sample` relabels with the real step.
pub fn forward_sample_at(
    target: &TargetDistribution,
    alpha_bar: f64,
    one_minus_alpha_bar: f64,
    n: usize,
    seed: u64,
) -> Result<SampleBatch, SamplerError> {
    if n == 0 {
        return Err(SamplerError::ZeroCount);
    }
    let d = target.dim();
    let mut points = vec![0.0; n * d];
    let mut x0_rng = rng::derive_rng(seed, &[tags::FORWARD_X0]);
    target.sample_into(&mut points, &mut x0_rng);
    let signal = alpha_bar.sqrt();
    let noise = one_minus_alpha_bar.max(0.0).sqrt();
    let mut w_rng = rng::derive_rng(seed, &[tags::FORWARD_NOISE]);
    for p in points.iter_mut() {
        let z: f64 = w_rng.sample(StandardNormal);
        *p = signal * *p + noise * z;
    }
    Ok(SampleBatch::new(points, d, seed, BatchLabel::ForwardT(0)))
}

/// Runs n independent DDPM chains and returns Y_1 (plus requested snapshots).
pub fn ddpm_sample(
    oracle: &ScoreOracle,
    sched: &NoiseSchedule,
    d: usize,
    n: usize,
    seed: u64,
    policy: &SnapshotPolicy,
) -> Result<ReverseTrajectory, SamplerError> {
    if n == 0 {
        return Err(SamplerError::ZeroCount);
    }
    if oracle.dim() != d {
        return Err(SamplerError::OracleDimensionMismatch { oracle: oracle.dim(), requested: d });
    }
    if oracle.t_count() != sched.t_count() {
        return Err(SamplerError::OracleStepsMismatch {
            oracle: oracle.t_count(),
            schedule: sched.t_count(),
        });
    }
    let t_count = sched.t_count();
    let recorded = policy.steps(t_count);

    // hoisted per-step coefficients
    let inv_sqrt_alpha: Vec<f64> =
        (1..=t_count).map(|t| 1.0 / sched.alpha(t).sqrt()).collect();
    let one_minus_alpha: Vec<f64> = (1..=t_count).map(|t| sched.one_minus_alpha(t)).collect();
    let noise_sd: Vec<f64> = one_minus_alpha.iter().map(|g| g.sqrt()).collect();

    let run_chain = |i: usize, y: &mut [f64], on_state: &mut dyn FnMut(usize, &[f64])| {
        let mut init_rng = rng::derive_rng(seed, &[tags::CHAIN_INIT, i as u64]);
        for v in y.iter_mut() {
            *v = init_rng.sample(StandardNormal);
        }
        on_state(t_count, y);
        let mut score = vec![0.0; d];
        for t in (2..=t_count).rev() {
            oracle.eval_into(t, y, &mut score);
            let isa = inv_sqrt_alpha[t - 1];
            let oma = one_minus_alpha[t - 1];
            let sdv = noise_sd[t - 1];
            let mut step_rng = rng::derive_rng(seed, &[tags::CHAIN_STEP, i as u64, t as u64]);
            for (yj, &sj) in y.iter_mut().zip(score.iter()) {
                let z: f64 = step_rng.sample(StandardNormal);
                *yj = (*yj + oma * sj) * isa + sdv * z;
            }
            on_state(t - 1, y);
        }
    };

    if recorded.is_empty() || (recorded.len() == 1 && recorded[0] == 1) {
        // hot path: write each chain's output row in place
        let mut out = vec![0.0; n * d];
        out.par_chunks_mut(d).enumerate().for_each(|(i, row)| {
            run_chain(i, row, &mut |_, _| {});
        });
        let output = SampleBatch::new(out, d, seed, BatchLabel::ReverseOutput);
        let snapshots = if recorded.is_empty() {
            Vec::new()
        } else {
            vec![(1, output.clone())]
        };
        return Ok(ReverseTrajectory { snapshots, output });
    }

    // snapshot path: one preallocated flat buffer per recorded step (plus the
    // output when step 1 is not recorded), written by chunks of chains so no
    // allocation happens inside the parallel region
    let records_output = recorded.contains(&1);
    let buffer_count = recorded.len() + usize::from(!records_output);
    let mut buffers: Vec<Vec<f64>> = (0..buffer_count).map(|_| vec![0.0; n * d]).collect();

    const CHAIN_CHUNK: usize = 512;
    let mut chunk_iters: Vec<std::slice::ChunksMut<'_, f64>> =
        buffers.iter_mut().map(|b| b.chunks_mut(CHAIN_CHUNK * d)).collect();
    let mut work: Vec<(usize, Vec<&mut [f64]>)> = Vec::new();
    let mut start = 0usize;
    loop {
        let views: Vec<&mut [f64]> =
            chunk_iters.iter_mut().filter_map(|it| it.next()).collect();
        if views.is_empty() {
            break;
        }
        work.push((start, views));
        start += CHAIN_CHUNK;
    }

    work.into_par_iter().for_each(|(chunk_start, mut views)| {
        let mut y = vec![0.0; d];
        let chunk_len = views[0].len() / d;
        for local in 0..chunk_len {
            let i = chunk_start + local;
            let row = local * d..(local + 1) * d;
            run_chain(i, &mut y, &mut |t, state| {
                if let Some(slot) = recorded.iter().position(|&r| r == t) {
                    views[slot][row.clone()].copy_from_slice(state);
                }
            });
            if !records_output {
                let last = views.len() - 1;
                views[last][row].copy_from_slice(&y);
            }
        }
    });

    let mut batches = buffers
        .into_iter()
        .map(|b| SampleBatch::new(b, d, seed, BatchLabel::ReverseOutput));
    let snapshots: Vec<(usize, SampleBatch)> =
        recorded.iter().map(|&t| (t, batches.next().expect("buffer per step"))).collect();
    let output = if records_output {
        snapshots.last().expect("step 1 recorded").1.clone()
    } else {
        batches.next().expect("dedicated output buffer")
    };
    Ok(ReverseTrajectory { snapshots, output })
}

/// Exact per-step moments of the reverse chain for a single-Gaussian target
/// with the exact score: m_T = 0, v_T = 1, m_{t−1} = √α_t·m_t +
/// (1−α_t)·√ᾱ_{t−1}·μ, v_{t−1} = α_t·v_t + (1−α_t). Index t−1 holds step t.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMoments {
    pub t: usize,
    pub mean: Vec<f64>,
    pub variance: f64,
}

pub fn gaussian_moment_oracle(mu: &[f64], sched: &NoiseSchedule) -> Vec<StepMoments> {
    let t_count = sched.t_count();
    let d = mu.len();
    let mut out: Vec<StepMoments> = Vec::with_capacity(t_count);
    let mut mean = vec![0.0; d];
    let mut variance = 1.0;
    out.push(StepMoments { t: t_count, mean: mean.clone(), variance });
    for t in (2..=t_count).rev() {
        let sqrt_alpha = sched.alpha(t).sqrt();
        let oma = sched.one_minus_alpha(t);
        let sqrt_abar_prev = sched.alpha_bar(t - 1).sqrt();
        for (m, &mu_j) in mean.iter_mut().zip(mu) {
            *m = sqrt_alpha * *m + oma * sqrt_abar_prev * mu_j;
        }
        variance = sched.alpha(t) * variance + oma;
        out.push(StepMoments { t: t - 1, mean: mean.clone(), variance });
    }
    out.reverse();
    out
}
