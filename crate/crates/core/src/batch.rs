//! Sample batches with provenance.

use serde::{Deserialize, Serialize};

/// What process generated a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BatchLabel {
    /// Draws from the target distribution itself.
    Target,
    /// Forward-noised draws at step t.
    ForwardT(usize),
    /// Final output of the reverse sampler.
    ReverseOutput,
}

/// n points in R^d plus the seed that generated them.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    points: Vec<f64>,
    n: usize,
    d: usize,
    pub seed: u64,
    pub label: BatchLabel,
}

impl SampleBatch {
    pub fn new(points: Vec<f64>, d: usize, seed: u64, label: BatchLabel) -> Self {
        assert!(d >= 1 && !points.is_empty() && points.len().is_multiple_of(d));
        let n = points.len() / d;
        Self { points, n, d, seed, label }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn iter_points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.d)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.points
    }

    /// Per-coordinate sample mean.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for p in self.iter_points() {
            for (mi, &xi) in m.iter_mut().zip(p) {
                *mi += xi;
            }
        }
        let inv = 1.0 / self.n as f64;
        m.iter_mut().for_each(|mi| *mi *= inv);
        m
    }

    /// Sample covariance (denominator n−1), row-major d×d.
    pub fn covariance(&self) -> Vec<f64> {
        let m = self.mean();
        let d = self.d;
        let mut c = vec![0.0; d * d];
        for p in self.iter_points() {
            for i in 0..d {
                let di = p[i] - m[i];
                for j in 0..d {
                    c[i * d + j] += di * (p[j] - m[j]);
                }
            }
        }
        let inv = 1.0 / (self.n as f64 - 1.0);
        c.iter_mut().for_each(|x| *x *= inv);
        c
    }
}
