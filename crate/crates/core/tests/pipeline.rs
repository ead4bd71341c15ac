//! Cross-module invariants that need the whole sampling pipeline.

use gmmddpm_core::gmm::GaussianMixture;
use gmmddpm_core::metrics::{moment_diagnostics, sliced_tv};
use gmmddpm_core::oracle::{clip_oracle, exact_oracle};
use gmmddpm_core::sampler::{ddpm_sample, forward_sample, SnapshotPolicy};
use gmmddpm_core::schedule::NoiseSchedule;
use gmmddpm_core::target::TargetDistribution;

// For a standard normal target the sampler output must be statistically
// indistinguishable from N(0, I): sliced TV below the 0.03 noise floor at
// n = 1e5, T = 64.
#[test]
fn standard_normal_round_trip_hits_the_noise_floor() {
    let d = 2;
    let gmm = GaussianMixture::standard(d);
    let sched = NoiseSchedule::build(64, 2.0, 10.0).unwrap();
    let oracle = exact_oracle(&gmm, &sched);
    let traj = ddpm_sample(&oracle, &sched, d, 100_000, 0x51, &SnapshotPolicy::None).unwrap();
    let target = TargetDistribution::Gmm(gmm);
    let est = sliced_tv(&target, &traj.output, 32, 200, 0x52, &[]).unwrap();
    assert!(est.value < 0.03, "sliced TV {} above the noise floor", est.value);
}

// Occupancy of the sampler output on an equal-weight two-component target
// stays balanced (each component near 1/2).
#[test]
fn two_component_occupancy_is_balanced() {
    let gmm =
        GaussianMixture::new(vec![0.5, 0.5], vec![vec![-2.0, 0.0], vec![2.0, 0.0]]).unwrap();
    let sched = NoiseSchedule::build(256, 2.0, 10.0).unwrap();
    let oracle = exact_oracle(&gmm, &sched);
    let traj = ddpm_sample(&oracle, &sched, 2, 30_000, 0x53, &SnapshotPolicy::None).unwrap();
    let report = moment_diagnostics(&traj.output, &gmm).unwrap();
    for occ in &report.occupancy {
        assert!((0.45..=0.55).contains(occ), "occupancy {occ}");
    }
}

// Clipping the exact oracle deviates on forward-sampled points with
// frequency below 1e-3 at the default clip constant.
#[test]
fn clipping_rarely_fires_on_typical_points() {
    let gmm = GaussianMixture::new(
        vec![0.25, 0.25, 0.25, 0.25],
        vec![
            vec![3.0, 0.0, 0.0, 0.0],
            vec![-3.0, 0.0, 0.0, 0.0],
            vec![0.0, 3.0, 0.0, 0.0],
            vec![0.0, -3.0, 0.0, 0.0],
        ],
    )
    .unwrap();
    let sched = NoiseSchedule::build(64, 2.0, 10.0).unwrap();
    let exact = exact_oracle(&gmm, &sched);
    let clipped = clip_oracle(&exact, &sched, 4.0).unwrap();
    let target = TargetDistribution::Gmm(gmm);
    let mut deviations = 0usize;
    let mut total = 0usize;
    for t in [2usize, 16, 32, 48, 64] {
        let batch = forward_sample(&target, &sched, t, 20_000, 0x54 + t as u64).unwrap();
        for p in batch.iter_points() {
            if clipped.eval(t, p) != exact.eval(t, p) {
                deviations += 1;
            }
            total += 1;
        }
    }
    let freq = deviations as f64 / total as f64;
    assert!(freq < 1e-3, "clip deviation frequency {freq}");
}
