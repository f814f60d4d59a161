//! Monte Carlo experiments comparing estimators against known truths.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandwidth::{adaptive_h, PluginWeight};
use crate::data::{HazardFn, SimulationLaw, SurvivalSample};
use crate::dynamic::{
    bias_factor, estimate_curve, BandwidthRule, BiasInputs, BiasTag, BoundaryPolicy, LocalFitSpec,
};
use crate::kernels::Kernel;
use crate::nonparam::smoothed_hazard;
use crate::parametric::HazardFamily;
use crate::quad;
use crate::{Error, Result};

/// One estimator in an experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub name: String,
    /// `"smoother"` for the kernel-smoothed Nelson–Aalen increments, else a family name.
    pub method: String,
    pub kernel: Kernel,
    pub bandwidth: BandwidthRule,
    #[serde(default = "one")]
    pub min_events: usize,
    #[serde(default = "truncate")]
    pub boundary: BoundaryPolicy,
}

fn one() -> usize {
    1
}

fn truncate() -> BoundaryPolicy {
    BoundaryPolicy::Truncate
}

impl EstimatorConfig {
    pub fn smoother(name: &str, kernel: Kernel, h: f64) -> Self {
        Self {
            name: name.into(),
            method: "smoother".into(),
            kernel,
            bandwidth: BandwidthRule::Fixed { h },
            min_events: 1,
            boundary: BoundaryPolicy::Truncate,
        }
    }

    pub fn dynamic(name: &str, family: &str, kernel: Kernel, h: f64) -> Self {
        Self {
            method: family.into(),
            ..Self::smoother(name, kernel, h)
        }
    }

    fn is_smoother(&self) -> bool {
        self.method == "smoother"
    }

    fn validate(&self) -> Result<()> {
        if self.is_smoother() {
            if matches!(self.bandwidth, BandwidthRule::Gof { .. }) {
                return Err(Error::InvalidArgument(
                    "the smoother takes fixed or adaptive bandwidths".into(),
                ));
            }
        } else {
            HazardFamily::from_name(&self.method)?;
        }
        Ok(())
    }

    /// Estimates on `grid`; `None` marks a failed point.
    pub fn estimate(&self, sample: &SurvivalSample, grid: &[f64]) -> Result<Vec<Option<f64>>> {
        if self.is_smoother() {
            return Ok(grid
                .iter()
                .map(|&s| {
                    let h = match self.bandwidth {
                        BandwidthRule::Fixed { h } => h,
                        BandwidthRule::Adaptive { c } => adaptive_h(sample, c, s),
                        BandwidthRule::Gof { .. } => unreachable!("rejected by validate"),
                    };
                    Some(smoothed_hazard(sample, &self.kernel, h, s))
                })
                .collect());
        }
        let spec = LocalFitSpec {
            min_events: self.min_events,
            boundary: self.boundary.clone(),
            ..LocalFitSpec::new(
                HazardFamily::from_name(&self.method)?,
                self.kernel.clone(),
                self.bandwidth.clone(),
                grid.to_vec(),
            )
        };
        Ok(estimate_curve(sample, &spec)?
            .points
            .into_iter()
            .map(|p| p.alpha_hat)
            .collect())
    }

    fn bias_tag(&self) -> Option<BiasTag> {
        if self.is_smoother() {
            Some(BiasTag::Traditional)
        } else {
            HazardFamily::from_name(&self.method)
                .ok()
                .and_then(|f| BiasTag::from_family(f.tag()))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Experiment {
    pub law: SimulationLaw,
    pub n: usize,
    pub replications: usize,
    pub estimators: Vec<EstimatorConfig>,
    pub grid: Vec<f64>,
    #[serde(default)]
    pub weight: PluginWeight,
    pub seed: u64,
}

impl Experiment {
    pub fn validate(&self) -> Result<()> {
        self.law.validate()?;
        if self.replications == 0 {
            return Err(Error::InvalidArgument("replications must be at least 1".into()));
        }
        if self.n == 0 {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidArgument("no estimators".into()));
        }
        if self.grid.is_empty() {
            return Err(Error::InvalidArgument("grid is empty".into()));
        }
        for e in &self.estimators {
            e.validate()?;
        }
        Ok(())
    }

    /// Sample of replication `index`.
    pub fn sample(&self, index: usize) -> Result<SurvivalSample> {
        let law = SimulationLaw {
            seed: self.seed,
            ..self.law.clone()
        };
        law.replicate(index as u64).simulate(self.n)
    }

    fn weight_at(&self, s: f64) -> f64 {
        match self.weight {
            PluginWeight::Unit => 1.0,
            PluginWeight::AtRisk => self.law.at_risk_probability(s).powf(0.8),
        }
    }
}

/// Per estimator and grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub estimator: String,
    pub s: f64,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    /// Population variance over successful replications.
    pub variance: f64,
    pub mse: f64,
    pub theory_bias: Option<f64>,
    pub theory_variance: Option<f64>,
    pub successes: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub cells: Vec<CellStats>,
    /// `estimates[e][r][k]`: estimator `e`, replication `r`, grid point `k`.
    pub estimates: Vec<Vec<Vec<Option<f64>>>>,
    /// Weighted integrated squared error per estimator and replication.
    pub ise: Vec<Vec<Option<f64>>>,
    pub estimator_names: Vec<String>,
    pub grid: Vec<f64>,
}

fn variance_and_mean(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / m;
    (mean, var)
}

/// Runs all replications in parallel; results do not depend on scheduling.
pub fn run_experiment(exp: &Experiment) -> Result<McReport> {
    exp.validate()?;
    let grid = &exp.grid;
    let per_rep: Vec<Result<Vec<Vec<Option<f64>>>>> = (0..exp.replications)
        .into_par_iter()
        .map(|r| {
            let sample = exp.sample(r)?;
            Ok(exp
                .estimators
                .iter()
                .map(|e| e.estimate(&sample, grid).unwrap_or_else(|_| vec![None; grid.len()]))
                .collect())
        })
        .collect();
    let per_rep: Vec<Vec<Vec<Option<f64>>>> = per_rep.into_iter().collect::<Result<_>>()?;
    let n_est = exp.estimators.len();
    let estimates: Vec<Vec<Vec<Option<f64>>>> = (0..n_est)
        .map(|e| per_rep.iter().map(|rep| rep[e].clone()).collect())
        .collect();

    let truth: Vec<f64> = grid.iter().map(|&s| exp.law.true_hazard.value(s)).collect();
    let weights: Vec<f64> = grid.iter().map(|&s| exp.weight_at(s)).collect();
    let mut cells = Vec::with_capacity(n_est * grid.len());
    for (e, est) in exp.estimators.iter().enumerate() {
        for (k, &s) in grid.iter().enumerate() {
            let values: Vec<f64> = estimates[e].iter().filter_map(|rep| rep[k]).collect();
            let failures = exp.replications - values.len();
            let (mean, variance) = if values.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                variance_and_mean(&values)
            };
            let bias = mean - truth[k];
            let (theory_bias, theory_variance) = theory(exp, est, s);
            cells.push(CellStats {
                estimator: est.name.clone(),
                s,
                truth: truth[k],
                mean,
                bias,
                variance,
                mse: bias * bias + variance,
                theory_bias,
                theory_variance,
                successes: values.len(),
                failures,
            });
        }
    }
    let ise = estimates
        .iter()
        .map(|reps| {
            reps.iter()
                .map(|rep| {
                    let sq: Option<Vec<f64>> = rep
                        .iter()
                        .zip(&truth)
                        .zip(&weights)
                        .map(|((v, t), w)| v.map(|v| w * (v - t) * (v - t)))
                        .collect();
                    sq.map(|sq| {
                        if sq.len() == 1 {
                            sq[0]
                        } else {
                            quad::trapezoid(grid, &sq)
                        }
                    })
                })
                .collect()
        })
        .collect();
    Ok(McReport {
        cells,
        estimates,
        ise,
        estimator_names: exp.estimators.iter().map(|e| e.name.clone()).collect(),
        grid: grid.clone(),
    })
}

/// `½ β_K h² b(s)` and `γ_K α / (n h y)` from the true law.
fn theory(exp: &Experiment, est: &EstimatorConfig, s: f64) -> (Option<f64>, Option<f64>) {
    let y = exp.law.at_risk_probability(s);
    let n = exp.n as f64;
    let h = match est.bandwidth {
        BandwidthRule::Fixed { h } => h,
        BandwidthRule::Adaptive { c } => (c * (n * y).powf(-0.2)).min(exp.law.horizon),
        BandwidthRule::Gof { .. } => return (None, None),
    };
    let truth = &exp.law.true_hazard;
    let alpha = truth.value(s);
    let k = est.kernel.constants();
    let variance = (y > 0.0).then(|| k.gamma_k * alpha / (n * h * y));
    let bias = est.bias_tag().and_then(|tag| {
        let inputs = BiasInputs {
            alpha,
            alpha_d1: truth.d1(s),
            alpha_d2: truth.d2(s),
            y_log_d1: exp.law.at_risk_log_derivative(s),
            model: None,
        };
        bias_factor(tag, s, &inputs)
            .ok()
            .map(|b| 0.5 * k.beta_k * h * h * b.value)
    });
    (bias, variance)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Win,
    Loss,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub estimator: String,
    pub integrated_mse: f64,
    pub se: f64,
    pub rank: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFlag {
    pub first: String,
    pub second: String,
    /// Mean of paired ISE differences, first minus second.
    pub difference: f64,
    pub se: f64,
    /// From the first estimator's point of view; lower error wins.
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub rows: Vec<RankRow>,
    pub pairs: Vec<PairFlag>,
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Integrated MSE per estimator and paired comparisons at two standard errors.
pub fn compare_estimators(report: &McReport) -> Ranking {
    let mut rows: Vec<RankRow> = report
        .estimator_names
        .iter()
        .zip(&report.ise)
        .map(|(name, ise)| {
            let ok: Vec<f64> = ise.iter().flatten().copied().collect();
            let (m, se) = mean_se(&ok);
            RankRow {
                estimator: name.clone(),
                integrated_mse: m,
                se,
                rank: 0,
                failures: ise.len() - ok.len(),
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| rows[a].integrated_mse.total_cmp(&rows[b].integrated_mse));
    for (rank, &i) in order.iter().enumerate() {
        rows[i].rank = rank + 1;
    }
    let mut pairs = Vec::new();
    for a in 0..rows.len() {
        for b in a + 1..rows.len() {
            let d: Vec<f64> = report.ise[a]
                .iter()
                .zip(&report.ise[b])
                .filter_map(|(x, y)| Some((*x)? - (*y)?))
                .collect();
            let (m, se) = mean_se(&d);
            let outcome = if m < -2.0 * se && m < 0.0 {
                Outcome::Win
            } else if m > 2.0 * se && m > 0.0 {
                Outcome::Loss
            } else {
                Outcome::Tie
            };
            pairs.push(PairFlag {
                first: rows[a].estimator.clone(),
                second: rows[b].estimator.clone(),
                difference: m,
                se,
                outcome,
            });
        }
    }
    Ranking { rows, pairs }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Better,
    Worse,
    Indeterminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionPoint {
    pub s: f64,
    /// `α₀''(s) / α''(s)`; the local fit beats the smoother when it lies in `[0, 2]`.
    pub ratio: Option<f64>,
    pub region: Region,
}

/// Where a family's local fit has smaller leading bias than the smoother.
/// `y_log_d1` gives `y'/y`; without it, no censoring (`y'/y = -α`) is assumed.
pub fn improvement_region(
    truth: &HazardFn,
    tag: BiasTag,
    grid: &[f64],
    y_log_d1: Option<&dyn Fn(f64) -> f64>,
) -> Vec<RegionPoint> {
    grid.iter()
        .map(|&s| {
            let (a, a1, a2) = (truth.value(s), truth.d1(s), truth.d2(s));
            let alpha0_d2 = match tag {
                BiasTag::Gompertz => Some(a1 * a1 / a),
                BiasTag::Weibull if s > 0.0 => Some(a1 * a1 / a - a1 / s),
                BiasTag::Frailty => Some(2.0 * a1 * a1 / a),
                BiasTag::Constant => {
                    let yl = y_log_d1.map_or(-a, |f| f(s));
                    Some(-2.0 * a1 * yl)
                }
                _ => None,
            };
            let degenerate = a2.abs() <= 1e-12 * a.abs().max(1.0) || !(a > 0.0);
            match alpha0_d2 {
                Some(n) if !degenerate => {
                    let ratio = n / a2;
                    let region = if (0.0..=2.0).contains(&ratio) {
                        Region::Better
                    } else {
                        Region::Worse
                    };
                    RegionPoint {
                        s,
                        ratio: Some(ratio),
                        region,
                    }
                }
                _ => RegionPoint {
                    s,
                    ratio: None,
                    region: Region::Indeterminate,
                },
            }
        })
        .collect()
}
