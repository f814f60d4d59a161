//! Nelson–Aalen cumulative hazard and the kernel-smoothed hazard.

use serde::{Deserialize, Serialize};

use crate::data::SurvivalSample;
use crate::kernels::Kernel;

/// Right-continuous step function `Â(t) = Σ_{x_i <= t} δ_i / Y(x_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeHazardPath {
    pub jump_times: Vec<f64>,
    pub jump_sizes: Vec<f64>,
    cumulative: Vec<f64>,
}

impl CumulativeHazardPath {
    pub fn evaluate(&self, t: f64) -> f64 {
        let k = self.jump_times.partition_point(|&x| x <= t);
        if k == 0 {
            0.0
        } else {
            self.cumulative[k - 1]
        }
    }

    /// Total number of failures represented (ties contribute one jump each).
    pub fn n_jumps(&self) -> usize {
        self.jump_times.len()
    }
}

/// Nelson–Aalen estimator; tied failures each contribute `1 / Y(x)`.
pub fn nelson_aalen(sample: &SurvivalSample) -> CumulativeHazardPath {
    let mut jump_times = Vec::with_capacity(sample.n_failures());
    let mut jump_sizes = Vec::with_capacity(sample.n_failures());
    let mut cumulative = Vec::with_capacity(sample.n_failures());
    let mut acc = 0.0;
    for x in sample.failure_times() {
        let dj = 1.0 / sample.at_risk(x) as f64;
        acc += dj;
        jump_times.push(x);
        jump_sizes.push(dj);
        cumulative.push(acc);
    }
    CumulativeHazardPath {
        jump_times,
        jump_sizes,
        cumulative,
    }
}

/// `α̃(s) = Σ h⁻¹ K((x_i - s)/h) δ_i / Y(x_i)` over failures in `(s - h/2, s + h/2]`.
pub fn smoothed_hazard(sample: &SurvivalSample, kernel: &Kernel, h: f64, s: f64) -> f64 {
    assert!(h > 0.0, "bandwidth must be positive");
    let obs = sample.observations();
    let mut acc = 0.0;
    for i in sample.index_range(s - 0.5 * h, s + 0.5 * h) {
        let o = obs[i];
        if o.is_failure() {
            let u = ((o.time - s) / h).clamp(-0.5, 0.5);
            acc += kernel.evaluate(u) / sample.at_risk(o.time) as f64;
        }
    }
    acc / h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d3() -> SurvivalSample {
        SurvivalSample::from_pairs(&[(1.0, 1), (2.0, 1), (3.0, 1)], None).unwrap()
    }

    #[test]
    fn nelson_aalen_hand_sums() {
        let a = nelson_aalen(&d3());
        assert_eq!(a.evaluate(0.0), 0.0);
        assert_eq!(a.evaluate(1.0), 1.0 / 3.0);
        assert_eq!(a.evaluate(2.0), 1.0 / 3.0 + 0.5);
        assert_eq!(a.evaluate(3.0), 1.0 / 3.0 + 0.5 + 1.0);
        let d4 = SurvivalSample::from_pairs(&[(1.0, 1), (2.0, 0), (3.0, 1), (4.0, 0)], None)
            .unwrap();
        assert_eq!(nelson_aalen(&d4).evaluate(3.0), 0.75);
    }

    #[test]
    fn ties_jump_once_per_failure() {
        let s = SurvivalSample::from_pairs(&[(1.0, 1), (1.0, 1), (2.0, 0)], None).unwrap();
        let a = nelson_aalen(&s);
        assert_eq!(a.n_jumps(), 2);
        assert!((a.evaluate(1.0) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn smoothed_examples() {
        let s = d3();
        assert_eq!(smoothed_hazard(&s, &Kernel::uniform(), 2.0, 2.0), 0.75);
        assert_eq!(smoothed_hazard(&s, &Kernel::uniform(), 2.0, 10.0), 0.0);
        assert_eq!(smoothed_hazard(&s, &Kernel::epanechnikov(), 2.0, 2.0), 0.375);
        let a = nelson_aalen(&s);
        assert_eq!(
            smoothed_hazard(&s, &Kernel::uniform(), 2.0, 2.0),
            (a.evaluate(3.0) - a.evaluate(1.0)) / 2.0
        );
    }
}
