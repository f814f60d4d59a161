//! Bandwidth rules: the pointwise MSE optimum, a plug-in constant for
//! `h(s) = c Y(s)^{-1/5}`, pilot curves and post-smoothing.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SurvivalSample;
use crate::dynamic::{bias_factor, BiasInputs, BiasTag};
use crate::kernels::{Kernel, KernelConstants, HALF};
use crate::quad;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalBandwidth {
    pub h: f64,
    /// Minimal asymptotic MSE at `h`.
    pub mse: f64,
}

/// `h₀ = {γ/β² · α/b²}^{1/5} (n y)^{-1/5}` and the MSE it attains.
pub fn optimal_h_local(
    alpha: f64,
    b: f64,
    y: f64,
    n: usize,
    constants: &KernelConstants,
) -> Result<OptimalBandwidth> {
    if !(alpha > 0.0 && y > 0.0 && n > 0) {
        return Err(Error::InvalidArgument(
            "alpha, y and n must be positive".into(),
        ));
    }
    if b == 0.0 {
        return Err(Error::UnboundedBandwidth);
    }
    let KernelConstants { beta_k, gamma_k, .. } = *constants;
    let ny = n as f64 * y;
    let h = (gamma_k / (beta_k * beta_k) * alpha / (b * b)).powf(0.2) * ny.powf(-0.2);
    let mse = 1.25
        * (beta_k * gamma_k * gamma_k).powf(0.4)
        * alpha.powf(0.8)
        * (b * b).powf(0.2)
        * ny.powf(-0.8);
    Ok(OptimalBandwidth { h, mse })
}

/// Pilot smoother settings: a kernel vanishing with its derivative at `±1/2`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PilotConfig {
    pub kernel: Kernel,
    /// `None` means `2 R / n^{1/5}` with `R` the largest observed time.
    pub h2: Option<f64>,
}

impl Default for PilotConfig {
    fn default() -> Self {
        Self {
            kernel: Kernel::triweight(),
            h2: None,
        }
    }
}

/// Kernel-smoothed hazard and its analytic derivatives from a pilot kernel.
#[derive(Debug, Clone)]
pub struct Pilot<'a> {
    sample: &'a SurvivalSample,
    kernel: Kernel,
    pub h2: f64,
    range: f64,
}

pub fn pilot_estimate<'a>(sample: &'a SurvivalSample, config: &PilotConfig) -> Result<Pilot<'a>> {
    let k = &config.kernel;
    let smooth_ends = [-HALF, HALF]
        .iter()
        .all(|&u| k.evaluate(u).abs() < 1e-12 && k.derivative(u).abs() < 1e-12);
    if !smooth_ends {
        return Err(Error::Pilot(format!(
            "pilot kernel `{}` must vanish with its derivative at ±1/2",
            k.name()
        )));
    }
    if sample.n_failures() == 0 {
        return Err(Error::Pilot("no failures in the sample".into()));
    }
    let range = sample.max_time();
    let h2 = config
        .h2
        .unwrap_or(2.0 * range / (sample.len() as f64).powf(0.2));
    if !(h2 > 0.0 && h2.is_finite()) {
        return Err(Error::Pilot("pilot bandwidth must be positive".into()));
    }
    Ok(Pilot {
        sample,
        kernel: k.clone(),
        h2,
        range,
    })
}

/// Pilot values at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PilotPoint {
    pub alpha: f64,
    pub alpha_d1: f64,
    pub alpha_d2: f64,
    /// `ŷ'(s)/ŷ(s)`.
    pub y_log_d1: f64,
    /// Estimated variance of `alpha_d2`.
    pub alpha_d2_variance: f64,
}

impl Pilot<'_> {
    /// `None` where the window sticks out of `[0, R]`.
    pub fn at(&self, s: f64) -> Option<PilotPoint> {
        let h = self.h2;
        if s - 0.5 * h < 0.0 || s + 0.5 * h > self.range {
            return None;
        }
        let y_s = self.sample.at_risk(s);
        if y_s == 0 {
            return None;
        }
        let obs = self.sample.observations();
        let (mut a0, mut a1, mut a2, mut v2, mut dens) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in self.sample.index_range(s - 0.5 * h, s + 0.5 * h) {
            let o = obs[i];
            let u = ((o.time - s) / h).clamp(-HALF, HALF);
            dens += self.kernel.evaluate(u);
            if o.is_failure() {
                let y = self.sample.at_risk(o.time) as f64;
                a0 += self.kernel.evaluate(u) / y;
                a1 -= self.kernel.derivative(u) / y;
                let k2 = self.kernel.second_derivative(u);
                a2 += k2 / y;
                v2 += k2 * k2 / (y * y);
            }
        }
        Some(PilotPoint {
            alpha: a0 / h,
            alpha_d1: a1 / (h * h),
            alpha_d2: a2 / h.powi(3),
            y_log_d1: -dens / (h * y_s as f64),
            alpha_d2_variance: v2 / h.powi(6),
        })
    }
}

/// Weight `w(s)` in the integrated criterion for the plug-in constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PluginWeight {
    /// `w = y^{4/5}`.
    #[default]
    AtRisk,
    Unit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PluginDiagnostics {
    pub h2: f64,
    pub interval: (f64, f64),
    pub numerator: f64,
    pub denominator_raw: f64,
    pub variance_term: f64,
    pub denominator: f64,
    /// Names the roughness correction applied to `∫ b̂²`.
    pub adjustment: String,
    pub c_uncapped: f64,
    pub c_max: f64,
    pub capped: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BandwidthPlan {
    Fixed { h: f64 },
    Adaptive { c: f64 },
    Plugin {
        c: f64,
        pilot_h2: f64,
        pilot_kernel: String,
        diagnostics: PluginDiagnostics,
    },
}

impl BandwidthPlan {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            BandwidthPlan::Fixed { h } => *h > 0.0 && h.is_finite(),
            BandwidthPlan::Adaptive { c } | BandwidthPlan::Plugin { c, .. } => {
                *c > 0.0 && c.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("bandwidth must be positive".into()))
        }
    }

    /// Bandwidth at `s`; the adaptive forms are capped at the horizon.
    pub fn bandwidth_at(&self, sample: &SurvivalSample, s: f64) -> f64 {
        match self {
            BandwidthPlan::Fixed { h } => *h,
            BandwidthPlan::Adaptive { c } | BandwidthPlan::Plugin { c, .. } => {
                adaptive_h(sample, *c, s)
            }
        }
    }
}

/// `min(c Y(s)^{-1/5}, T)`, and `T` where nobody is at risk.
pub fn adaptive_h(sample: &SurvivalSample, c: f64, s: f64) -> f64 {
    let t = sample.horizon();
    let y = sample.at_risk(s);
    if y == 0 {
        t
    } else {
        (c * (y as f64).powf(-0.2)).min(t)
    }
}

const PLUGIN_GRID: usize = 400;
const MIN_PILOT_FAILURES: usize = 30;

/// Estimates `c` in `h(s) = c Y(s)^{-1/5}` by plugging pilot curves into
/// `c⁵ = γ/β² ∫ w y^{-4/5} α / ∫ w y^{-4/5} b²` over the pilot's interior.
///
/// With `variance_adjust` the pilot noise `∫ w y^{-4/5} Var(α̂'')` is taken
/// off `∫ w y^{-4/5} b̂²`. A raw value no larger than twice that noise is
/// read as `b ≡ 0` and `c` is capped.
pub fn plugin_global_c(
    sample: &SurvivalSample,
    kernel: &Kernel,
    tag: BiasTag,
    pilot: &PilotConfig,
    weight: PluginWeight,
    variance_adjust: bool,
) -> Result<BandwidthPlan> {
    if matches!(tag, BiasTag::GenericOneParameter | BiasTag::GenericProduct) {
        return Err(Error::InvalidArgument(
            "plug-in needs a closed-form bias factor".into(),
        ));
    }
    if sample.n_failures() < MIN_PILOT_FAILURES {
        return Err(Error::Pilot(format!(
            "plug-in needs at least {MIN_PILOT_FAILURES} failures, found {}; use a fixed bandwidth",
            sample.n_failures()
        )));
    }
    let p = pilot_estimate(sample, pilot)?;
    let (lo, hi) = (0.5 * p.h2, p.range - 0.5 * p.h2);
    if !(hi > lo) {
        return Err(Error::Pilot(format!(
            "pilot bandwidth {} leaves no interior",
            p.h2
        )));
    }
    let n = sample.len() as f64;
    let grid: Vec<f64> = (0..=PLUGIN_GRID)
        .map(|i| lo + (hi - lo) * i as f64 / PLUGIN_GRID as f64)
        .collect();
    let rows: Vec<(f64, f64)> = grid
        .par_iter()
        .map(|&s| {
            let Some(pt) = p.at(s) else {
                return (0.0, 0.0);
            };
            let w = match weight {
                PluginWeight::AtRisk => 1.0,
                PluginWeight::Unit => (sample.at_risk(s) as f64 / n).powf(-0.8),
            };
            let b = if pt.alpha > 0.0 {
                bias_factor(
                    tag,
                    s,
                    &BiasInputs {
                        alpha: pt.alpha,
                        alpha_d1: pt.alpha_d1,
                        alpha_d2: pt.alpha_d2,
                        y_log_d1: pt.y_log_d1,
                        model: None,
                    },
                )
                .map(|f| f.value)
                .unwrap_or(0.0)
            } else {
                0.0
            };
            (w * b * b, w * pt.alpha_d2_variance)
        })
        .collect();
    let (b2, var): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
    let denominator_raw = quad::trapezoid(&grid, &b2);
    let variance_term = quad::trapezoid(&grid, &var);
    let obs = sample.observations();
    let numerator: f64 = sample
        .index_range(lo, hi)
        .filter(|&i| obs[i].is_failure())
        .map(|i| {
            let y = sample.at_risk(obs[i].time) as f64;
            match weight {
                PluginWeight::AtRisk => 1.0 / y,
                PluginWeight::Unit => (y / n).powf(-0.8) / y,
            }
        })
        .sum();
    let mut warnings = Vec::new();
    let denominator = if variance_adjust {
        if denominator_raw <= 2.0 * variance_term {
            warnings.push("bias estimate below pilot noise; treated as zero".to_string());
            0.0
        } else {
            denominator_raw - variance_term
        }
    } else {
        denominator_raw
    };
    let c_max = p.range * n.powf(0.2);
    let constants = kernel.constants();
    let c_uncapped = if denominator > 0.0 {
        (constants.gamma_k / (constants.beta_k * constants.beta_k) * numerator / denominator)
            .powf(0.2)
    } else {
        if !variance_adjust {
            warnings.push("nonpositive bias estimate floored".to_string());
        }
        f64::INFINITY
    };
    let capped = c_uncapped > c_max;
    if capped {
        warnings.push(format!("c capped at {c_max}"));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let c = c_uncapped.min(c_max);
    Ok(BandwidthPlan::Plugin {
        c,
        pilot_h2: p.h2,
        pilot_kernel: pilot.kernel.name().to_string(),
        diagnostics: PluginDiagnostics {
            h2: p.h2,
            interval: (lo, hi),
            numerator,
            denominator_raw,
            variance_term,
            denominator,
            adjustment: if variance_adjust {
                "variance subtraction (stand-in)".into()
            } else {
                "none".into()
            },
            c_uncapped,
            c_max,
            capped,
            warnings,
        },
    })
}

/// Local average over `|s_j - s_i| <= span/2`, the window shrinking
/// symmetrically near the ends.
pub fn post_smooth(values: &[(f64, f64)], span: f64) -> Vec<(f64, f64)> {
    if values.len() < 3 || !(span > 0.0) {
        return values.to_vec();
    }
    let first = values[0].0;
    let last = values[values.len() - 1].0;
    values
        .iter()
        .map(|&(s, _)| {
            let half = (0.5 * span).min(s - first).min(last - s);
            let (sum, count) = values
                .iter()
                .filter(|(t, _)| (t - s).abs() <= half * (1.0 + 1e-12))
                .fold((0.0, 0usize), |(a, c), (_, v)| (a + v, c + 1));
            (s, sum / count as f64)
        })
        .collect()
}
