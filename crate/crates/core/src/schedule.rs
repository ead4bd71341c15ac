//! Iterative learning-rate schedule and its certification.
//!
//! The schedule anchors ᾱ_T = T^{−c0} and iterates backward,
//! ᾱ_{t−1} = ᾱ_t + c1·(log T/T)·ᾱ_t(1−ᾱ_t). Two numerical points matter:
//!
//! * the recursion is computed on the gap g = 1−ᾱ, because ᾱ saturates so
//!   close to 1 that `1.0 - alpha_bar` underflows to zero in f64 for T ≥ 64
//!   while the gap itself (≈1e-21) is perfectly representable — downstream
//!   consumers (clip thresholds, noise scales) must read `one_minus_*`
//!   accessors rather than recompute the subtraction;
//! * for c1·log T/T > 1 (small T with large c1) the raw increment overshoots
//!   past 1 and oscillates, so a guard engages exactly on the steps where the
//!   raw update would leave (0,1) and halves the remaining gap instead. The
//!   guard preserves 1−α_t ≤ c1·log T/T and never fires when the raw
//!   recursion is valid.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("need at least 2 steps, got {0}")]
    TooFewSteps(usize),
    #[error("bad constants c0={c0}, c1={c1}: need both positive and c1/c0 > 4")]
    BadConstants { c0: f64, c1: f64 },
    #[error("gap 1-alpha_bar saturated the f64 floor at t={t}; constants too extreme")]
    GapSaturated { t: usize },
}

const GAP_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    t_count: usize,
    c0: f64,
    c1: f64,
    /// α_t, 1-indexed via accessor; may round to exactly 1.0 deep in the
    /// saturated regime — the gap array below carries the strict value.
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    one_minus_alpha: Vec<f64>,
    one_minus_alpha_bar: Vec<f64>,
    guarded_steps: usize,
}

impl NoiseSchedule {
    /// Builds the schedule for `t_count` steps with constants (c0, c1).
    pub fn build(t_count: usize, c0: f64, c1: f64) -> Result<Self, ScheduleError> {
        if t_count < 2 {
            return Err(ScheduleError::TooFewSteps(t_count));
        }
        let constants_ok =
            c0.is_finite() && c1.is_finite() && c0 > 0.0 && c1 > 0.0 && c1 / c0 > 4.0;
        if !constants_ok {
            return Err(ScheduleError::BadConstants { c0, c1 });
        }
        let t_f = t_count as f64;
        let rate = c1 * t_f.ln() / t_f;

        // gap[i] = 1 − ᾱ_{i+1}
        let mut gap = vec![0.0; t_count];
        gap[t_count - 1] = 1.0 - t_f.powf(-c0);
        let mut guarded_steps = 0;
        for t in (2..=t_count).rev() {
            let g = gap[t - 1];
            let factor = 1.0 - rate * (1.0 - g);
            let next = if factor > 0.0 {
                g * factor
            } else {
                guarded_steps += 1;
                g * 0.5
            };
            if next < GAP_FLOOR {
                return Err(ScheduleError::GapSaturated { t: t - 1 });
            }
            gap[t - 2] = next;
        }

        let mut alpha_bar: Vec<f64> = gap.iter().map(|g| 1.0 - g).collect();
        // keep the anchor exact rather than doubly rounded through the gap
        alpha_bar[t_count - 1] = t_f.powf(-c0);
        let mut alpha = vec![0.0; t_count];
        let mut one_minus_alpha = vec![0.0; t_count];
        alpha[0] = alpha_bar[0];
        one_minus_alpha[0] = gap[0];
        for t in 2..=t_count {
            // 1−α_t = (g_t − g_{t−1})/(1 − g_{t−1}), exact in gap space
            one_minus_alpha[t - 1] = (gap[t - 1] - gap[t - 2]) / (1.0 - gap[t - 2]);
            alpha[t - 1] = alpha_bar[t - 1] / alpha_bar[t - 2];
        }
        let sched = Self {
            t_count,
            c0,
            c1,
            alpha,
            alpha_bar,
            one_minus_alpha,
            one_minus_alpha_bar: gap,
            guarded_steps,
        };
        sched.check_well_formed()?;
        Ok(sched)
    }

    fn check_well_formed(&self) -> Result<(), ScheduleError> {
        for t in 1..=self.t_count {
            let g = self.one_minus_alpha_bar[t - 1];
            let oma = self.one_minus_alpha[t - 1];
            if !(g > 0.0 && g < 1.0) || !(oma > 0.0 && oma < 1.0) {
                return Err(ScheduleError::GapSaturated { t });
            }
            if t >= 2 && self.one_minus_alpha_bar[t - 1] <= self.one_minus_alpha_bar[t - 2] {
                return Err(ScheduleError::GapSaturated { t });
            }
        }
        Ok(())
    }

    pub fn t_count(&self) -> usize {
        self.t_count
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    /// Steps where the overshoot guard replaced the raw recursion (0 whenever
    /// c1·log T/T ≤ 1, e.g. all T ≥ 64 at the default c1 = 10).
    pub fn guarded_steps(&self) -> usize {
        self.guarded_steps
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    /// 1−α_t carried at full precision (do not recompute as 1−alpha(t)).
    pub fn one_minus_alpha(&self, t: usize) -> f64 {
        self.one_minus_alpha[t - 1]
    }

    /// 1−ᾱ_t carried at full precision.
    pub fn one_minus_alpha_bar(&self, t: usize) -> f64 {
        self.one_minus_alpha_bar[t - 1]
    }

    /// CSV dump: t, alpha, alpha_bar, one_minus_alpha.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,alpha,alpha_bar,one_minus_alpha\n");
        for t in 1..=self.t_count {
            out.push_str(&format!(
                "{},{},{},{}\n",
                t,
                self.alpha(t),
                self.alpha_bar(t),
                self.one_minus_alpha(t)
            ));
        }
        out
    }

    /// Certifies the step-size bounds on this schedule: (1−α_t) ≤ c1·log T/T for
    /// t ≥ 2 and (1−α_1) ≤ T^{−c1/4}, plus the reported ratio
    /// max_t [(1−α_t)/(1−ᾱ_t)] / (log T/T).
    pub fn validate(&self) -> ValidationReport {
        let t_f = self.t_count as f64;
        let step_bound = self.c1 * t_f.ln() / t_f;
        let alpha1_bound = t_f.powf(-self.c1 / 4.0);
        let mut violations = Vec::new();
        let mut max_ratio = 0.0f64;
        for t in 2..=self.t_count {
            let oma = self.one_minus_alpha(t);
            if oma > step_bound {
                violations.push(Violation {
                    t,
                    kind: ViolationKind::StepBound,
                    lhs: oma,
                    rhs: step_bound,
                });
            }
            let ratio = oma / self.one_minus_alpha_bar(t) / (t_f.ln() / t_f);
            max_ratio = max_ratio.max(ratio);
        }
        let one_minus_alpha1 = self.one_minus_alpha(1);
        if one_minus_alpha1 > alpha1_bound {
            violations.push(Violation {
                t: 1,
                kind: ViolationKind::FirstStepBound,
                lhs: one_minus_alpha1,
                rhs: alpha1_bound,
            });
        }
        ValidationReport {
            violations,
            max_ratio_to_log_t_over_t: max_ratio,
            one_minus_alpha1,
            alpha1_bound,
            step_bound,
        }
    }

    #[cfg(test)]
    pub(crate) fn tamper_alpha(&mut self, t: usize, value: f64) {
        self.alpha[t - 1] = value;
        self.one_minus_alpha[t - 1] = 1.0 - value;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ViolationKind {
    /// (1−α_t) ≤ c1 log T / T failed at t ≥ 2.
    StepBound,
    /// (1−α_1) ≤ T^{−c1/4} failed.
    FirstStepBound,
}

#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub t: usize,
    pub kind: ViolationKind,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// max_t [(1−α_t)/(1−ᾱ_t)] divided by log T/T; stays bounded by c1.
    pub max_ratio_to_log_t_over_t: f64,
    pub one_minus_alpha1: f64,
    pub alpha1_bound: f64,
    pub step_bound: f64,
}

impl ValidationReport {
    pub fn is_certified(&self) -> bool {
        self.violations.is_empty()
    }
}
