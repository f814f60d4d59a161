//! Local (kernel-weighted) likelihood hazard estimation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bandwidth::{adaptive_h, pilot_estimate, post_smooth, PilotConfig};
use crate::data::{SurvivalSample, Weight};
use crate::gof::{closing_interval, expand_window, startup_interval, EdgeInterval, SearchConfig};
use crate::kernels::Kernel;
use crate::parametric::{fit_weighted_mle, sandwich, FamilyTag, FitOptions, FitResult, HazardFamily};
use crate::quad;
use crate::{Error, Result};

/// How `h(s)` is chosen along the grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BandwidthRule {
    Fixed { h: f64 },
    /// `h(s) = min(c Y(s)^{-1/5}, T)`.
    Adaptive { c: f64 },
    /// Largest window accepted by a goodness-of-fit test.
    Gof {
        search: SearchConfig,
        /// Span for smoothing `ĥ(s)`; `None` disables it.
        smooth_span: Option<f64>,
    },
}

/// What happens where the window sticks out of `[0, T]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryPolicy {
    /// Fit on the truncated window.
    Truncate,
    /// Use the fit centred at `h/2` (or `T - h/2`) and evaluate it at `s`.
    HalfWidth,
    /// Fit on the startup (closing) interval found by goodness-of-fit scans.
    Gof { search: SearchConfig },
}

impl Default for BoundaryPolicy {
    fn default() -> Self {
        BoundaryPolicy::Gof {
            search: SearchConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BandOptions {
    pub level: f64,
    /// Subtract `½ β_K h² b̂(s)` with `b̂` from pilot curves.
    pub bias_correction: bool,
    pub pilot: PilotConfig,
}

impl Default for BandOptions {
    fn default() -> Self {
        Self {
            level: 0.95,
            bias_correction: false,
            pilot: PilotConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LocalFitSpec {
    pub family: HazardFamily,
    pub kernel: Kernel,
    pub bandwidth: BandwidthRule,
    pub grid: Vec<f64>,
    pub min_events: usize,
    pub boundary: BoundaryPolicy,
    pub band: BandOptions,
    /// Span for smoothing the local slopes before re-fitting the level.
    pub slope_smoothing: Option<f64>,
    pub fit: FitOptions,
}

impl LocalFitSpec {
    pub fn new(family: HazardFamily, kernel: Kernel, bandwidth: BandwidthRule, grid: Vec<f64>) -> Self {
        Self {
            family,
            kernel,
            bandwidth,
            grid,
            min_events: 10,
            boundary: BoundaryPolicy::default(),
            band: BandOptions::default(),
            slope_smoothing: None,
            fit: FitOptions::default(),
        }
    }

    pub fn validate(&self, horizon: f64) -> Result<()> {
        if self.min_events == 0 {
            return Err(Error::InvalidArgument("min_events must be at least 1".into()));
        }
        if self.grid.is_empty() {
            return Err(Error::InvalidArgument("grid is empty".into()));
        }
        if self.grid.iter().any(|&s| !(0.0..=horizon).contains(&s)) {
            return Err(Error::InvalidArgument(format!(
                "grid points must lie in [0, {horizon}]"
            )));
        }
        if self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("grid must be strictly increasing".into()));
        }
        match &self.bandwidth {
            BandwidthRule::Fixed { h: x } | BandwidthRule::Adaptive { c: x } if !(*x > 0.0 && x.is_finite()) => {
                return Err(Error::InvalidArgument("bandwidth must be positive".into()));
            }
            _ => {}
        }
        if !(self.band.level > 0.0 && self.band.level < 1.0) {
            return Err(Error::InvalidArgument("band level must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// One local fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalFit {
    /// Parameters of the family localized at `s`; the first is `α̂(s)`.
    pub theta: Vec<f64>,
    pub alpha_hat: f64,
    pub se: f64,
    pub fit: FitResult,
}

fn window_events(sample: &SurvivalSample, s: f64, h: f64) -> usize {
    sample.events_in(s - 0.5 * h, (s + 0.5 * h).min(sample.horizon()))
}

/// Maximizes the kernel-weighted likelihood around `s` and evaluates the
/// fitted family there.
pub fn fit_local_at(sample: &SurvivalSample, spec: &LocalFitSpec, s: f64, h: f64) -> Result<LocalFit> {
    fit_local_with(sample, &spec.family, &spec.kernel, spec.min_events, &spec.fit, s, h)
}

fn fit_local_with(
    sample: &SurvivalSample,
    family: &HazardFamily,
    kernel: &Kernel,
    min_events: usize,
    options: &FitOptions,
    s: f64,
    h: f64,
) -> Result<LocalFit> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument("bandwidth must be positive".into()));
    }
    let events = window_events(sample, s, h);
    if events < min_events {
        return Err(Error::InsufficientWindow {
            events,
            required: min_events,
        });
    }
    let local = family.localize(s);
    let weight = Weight::kernel(kernel, s, h);
    let fit = fit_weighted_mle(sample, &local, &weight, (0.0, sample.horizon()), options)?;
    if !fit.converged {
        return Err(Error::NonConvergence {
            iterations: fit.iterations,
            residual: fit.score_residual,
        });
    }
    let alpha_hat = local.hazard(s, &fit.theta_hat);
    let se = local_se(sample, kernel, s, h, alpha_hat);
    Ok(LocalFit {
        theta: fit.theta_hat.clone(),
        alpha_hat,
        se,
        fit,
    })
}

/// `sqrt(γ_K α̂ / (h Y(s)))`.
fn local_se(sample: &SurvivalSample, kernel: &Kernel, s: f64, h: f64, alpha_hat: f64) -> f64 {
    let y = sample.at_risk(s);
    if y == 0 {
        return f64::INFINITY;
    }
    (kernel.constants().gamma_k * alpha_hat / (h * y as f64)).sqrt()
}

/// Locally weighted occurrence over locally weighted exposure.
pub fn local_constant(sample: &SurvivalSample, kernel: &Kernel, s: f64, h: f64) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument("bandwidth must be positive".into()));
    }
    let lo = (s - 0.5 * h).max(0.0);
    let hi = (s + 0.5 * h).min(sample.horizon());
    if !(hi > lo) {
        return Err(Error::InsufficientWindow { events: 0, required: 1 });
    }
    let obs = sample.observations();
    let occurrence: f64 = sample
        .index_range(lo, hi)
        .filter(|&i| obs[i].is_failure())
        .map(|i| kernel.evaluate((obs[i].time - s) / h))
        .sum();
    let c_lo = kernel.cdf((lo - s) / h);
    let first = sample.times().partition_point(|&x| x <= lo);
    let exposure: f64 = sample.times()[first..]
        .iter()
        .map(|&x| h * (kernel.cdf((x.min(hi) - s) / h) - c_lo))
        .sum();
    if !(occurrence > 0.0 && exposure > 0.0) {
        return Err(Error::InsufficientWindow {
            events: window_events(sample, s, h),
            required: 1,
        });
    }
    Ok(occurrence / exposure)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub s: f64,
    pub alpha_hat: Option<f64>,
    /// Realized bandwidth; infinite for full-range parametric fits.
    pub h_used: f64,
    /// Parameters localized at `s`.
    pub theta: Vec<f64>,
    pub se: Option<f64>,
    pub band_lo: Option<f64>,
    pub band_hi: Option<f64>,
    /// Empty for ordinary local fits; otherwise how the point was obtained
    /// or why it is missing.
    pub flag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardCurve {
    pub family: String,
    pub kernel: String,
    pub points: Vec<CurvePoint>,
}

impl HazardCurve {
    pub fn n_gaps(&self) -> usize {
        self.points.iter().filter(|p| p.alpha_hat.is_none()).count()
    }
}

enum Plan {
    Local(f64),
    FullRange,
    Gap(String),
}

/// Delta-method standard error of `α(s, θ̂)` for a unit-weight fit on `interval`.
fn parametric_se(
    sample: &SurvivalSample,
    family: &HazardFamily,
    interval: (f64, f64),
    global: &[f64],
    s: f64,
) -> Option<f64> {
    let g = family.global();
    let m = sandwich(sample, &g, &Weight::Unit, interval, global).ok()?;
    let alpha = g.hazard(s, global);
    let grad: Vec<f64> = g.score(s, global).iter().map(|v| alpha * v).collect();
    let p = grad.len();
    let mut var = 0.0;
    for i in 0..p {
        for j in 0..p {
            var += grad[i] * m.covariance[(i, j)] * grad[j];
        }
    }
    (var >= 0.0).then(|| var.sqrt())
}

fn parametric_point(
    sample: &SurvivalSample,
    family: &HazardFamily,
    edge: &EdgeInterval,
    s: f64,
    h_used: f64,
    flag: &str,
) -> CurvePoint {
    let local = family.localize(s);
    let theta = local.from_global(&edge.theta);
    let alpha = local.hazard(s, &theta);
    let se = parametric_se(sample, family, edge.interval, &edge.theta, s);
    CurvePoint {
        s,
        alpha_hat: Some(alpha),
        h_used,
        theta,
        se,
        band_lo: None,
        band_hi: None,
        flag: flag.to_string(),
    }
}

fn gap(s: f64, h_used: f64, e: &Error) -> CurvePoint {
    gap_with(s, h_used, &e.to_string())
}

fn gap_with(s: f64, h_used: f64, msg: &str) -> CurvePoint {
    CurvePoint {
        s,
        alpha_hat: None,
        h_used,
        theta: Vec::new(),
        se: None,
        band_lo: None,
        band_hi: None,
        flag: format!("gap: {msg}"),
    }
}

fn local_point(fit: LocalFit, s: f64, h: f64, flag: &str) -> CurvePoint {
    CurvePoint {
        s,
        alpha_hat: Some(fit.alpha_hat),
        h_used: h,
        theta: fit.theta,
        se: Some(fit.se),
        band_lo: None,
        band_hi: None,
        flag: flag.to_string(),
    }
}

/// Evaluates `α̂(s)` over the grid. Failed points become flagged gaps.
pub fn estimate_curve(sample: &SurvivalSample, spec: &LocalFitSpec) -> Result<HazardCurve> {
    let t_max = sample.horizon();
    spec.validate(t_max)?;
    let plans = bandwidth_plans(sample, spec);
    let needs_edge = |left: bool| {
        spec.grid.iter().zip(&plans).any(|(&s, p)| match p {
            Plan::Local(h) => {
                if left {
                    s < 0.5 * h
                } else {
                    s > t_max - 0.5 * h
                }
            }
            _ => false,
        })
    };
    let (startup, closing) = match &spec.boundary {
        BoundaryPolicy::Gof { search } => {
            let st = needs_edge(true).then(|| startup_interval(sample, &spec.family, search));
            let cl = needs_edge(false).then(|| closing_interval(sample, &spec.family, search));
            (st, cl)
        }
        _ => (None, None),
    };
    let full = plans
        .iter()
        .any(|p| matches!(p, Plan::FullRange))
        .then(|| full_range_fit(sample, &spec.family));

    let mut points: Vec<CurvePoint> = spec
        .grid
        .par_iter()
        .zip(plans.par_iter())
        .map(|(&s, plan)| match plan {
            Plan::Gap(msg) => gap_with(s, f64::NAN, msg),
            Plan::FullRange => match full.as_ref().expect("computed above") {
                Ok(edge) => parametric_point(sample, &spec.family, edge, s, f64::INFINITY, "full_range"),
                Err(e) => gap(s, f64::INFINITY, e),
            },
            Plan::Local(h) => point_at(sample, spec, s, *h, startup.as_ref(), closing.as_ref()),
        })
        .collect();

    if let Some(span) = spec.slope_smoothing {
        if spec.family.dim() > 1 {
            points = resmooth_slopes(sample, spec, points, span);
        }
    }

    let corrections = if spec.band.bias_correction {
        Some(bias_corrections(sample, spec, &points))
    } else {
        None
    };
    for (k, p) in points.iter_mut().enumerate() {
        let (Some(alpha), Some(se)) = (p.alpha_hat, p.se) else {
            continue;
        };
        let local = p.flag.is_empty() || p.flag.starts_with("truncated");
        let b = corrections
            .as_ref()
            .and_then(|c| c[k])
            .filter(|_| local);
        let (lo, hi) = pointwise_band(alpha, se, p.h_used, &spec.kernel, spec.band.level, b);
        p.band_lo = Some(lo);
        p.band_hi = Some(hi);
    }

    Ok(HazardCurve {
        family: spec.family.name().to_string(),
        kernel: spec.kernel.name().to_string(),
        points,
    })
}

fn bandwidth_plans(sample: &SurvivalSample, spec: &LocalFitSpec) -> Vec<Plan> {
    match &spec.bandwidth {
        BandwidthRule::Fixed { h } => spec.grid.iter().map(|_| Plan::Local(*h)).collect(),
        BandwidthRule::Adaptive { c } => spec
            .grid
            .iter()
            .map(|&s| Plan::Local(adaptive_h(sample, *c, s)))
            .collect(),
        BandwidthRule::Gof { search, smooth_span } => {
            let choices: Vec<_> = spec
                .grid
                .par_iter()
                .map(|&s| expand_window(sample, &spec.family, s, search))
                .collect();
            let accepted: Vec<(f64, f64)> = spec
                .grid
                .iter()
                .zip(&choices)
                .filter_map(|(&s, c)| match c {
                    Ok(c) if !c.full_range => Some((s, c.h)),
                    _ => None,
                })
                .collect();
            let smoothed = match smooth_span {
                Some(span) => post_smooth(&accepted, *span),
                None => accepted,
            };
            let mut it = smoothed.into_iter();
            choices
                .into_iter()
                .map(|c| match c {
                    Ok(c) if c.full_range => Plan::FullRange,
                    Ok(_) => Plan::Local(it.next().expect("one value per accepted point").1),
                    Err(e) => Plan::Gap(e.to_string()),
                })
                .collect()
        }
    }
}

fn full_range_fit(sample: &SurvivalSample, family: &HazardFamily) -> Result<EdgeInterval> {
    let interval = (0.0, sample.horizon());
    let fit = fit_weighted_mle(sample, &family.global(), &Weight::Unit, interval, &FitOptions::default())?;
    Ok(EdgeInterval {
        interval,
        rejected_at: None,
        theta: fit.theta_hat,
    })
}

fn point_at(
    sample: &SurvivalSample,
    spec: &LocalFitSpec,
    s: f64,
    h: f64,
    startup: Option<&Result<EdgeInterval>>,
    closing: Option<&Result<EdgeInterval>>,
) -> CurvePoint {
    let t_max = sample.horizon();
    let at_left = s < 0.5 * h;
    let at_right = s > t_max - 0.5 * h;
    let fit_here = |flag: &str| match fit_local_at(sample, spec, s, h) {
        Ok(fit) => local_point(fit, s, h, flag),
        Err(e) => gap(s, h, &e),
    };
    if !(at_left || at_right) {
        return fit_here("");
    }
    match &spec.boundary {
        BoundaryPolicy::Truncate => fit_here("truncated"),
        BoundaryPolicy::HalfWidth => {
            // A window reaching both ends gives no interior anchor.
            let anchor = if at_left { 0.5 * h } else { t_max - 0.5 * h };
            if at_left && at_right || anchor < 0.0 || anchor > t_max {
                return fit_here("truncated");
            }
            match fit_local_at(sample, spec, anchor, h) {
                Ok(fit) => {
                    let from = spec.family.localize(anchor);
                    let global = from.to_global(&fit.theta);
                    let here = spec.family.localize(s);
                    let theta = here.from_global(&global);
                    let alpha = here.hazard(s, &theta);
                    CurvePoint {
                        s,
                        alpha_hat: Some(alpha),
                        h_used: h,
                        theta,
                        se: Some(local_se(sample, &spec.kernel, anchor, h, fit.alpha_hat) * alpha / fit.alpha_hat),
                        band_lo: None,
                        band_hi: None,
                        flag: "half_width".into(),
                    }
                }
                Err(e) => gap(s, h, &e),
            }
        }
        BoundaryPolicy::Gof { .. } => {
            let (edge, flag) = if at_left { (startup, "startup") } else { (closing, "closing") };
            match edge {
                Some(Ok(edge)) => {
                    let (a, b) = edge.interval;
                    let inside = if at_left { s <= b } else { s >= a };
                    if inside {
                        parametric_point(sample, &spec.family, edge, s, h, flag)
                    } else {
                        fit_here("truncated")
                    }
                }
                _ => fit_here("truncated"),
            }
        }
    }
}

/// Smooths the local slopes over the grid and re-profiles the level with them held fixed.
fn resmooth_slopes(
    sample: &SurvivalSample,
    spec: &LocalFitSpec,
    points: Vec<CurvePoint>,
    span: f64,
) -> Vec<CurvePoint> {
    let q = spec.family.dim() - 1;
    let usable: Vec<usize> = (0..points.len())
        .filter(|&k| points[k].alpha_hat.is_some() && points[k].h_used.is_finite() && points[k].flag.is_empty())
        .collect();
    let mut smoothed = vec![Vec::new(); points.len()];
    for j in 0..q {
        let series: Vec<(f64, f64)> = usable
            .iter()
            .map(|&k| (points[k].s, points[k].theta[1 + j]))
            .collect();
        for (&k, (_, v)) in usable.iter().zip(post_smooth(&series, span)) {
            smoothed[k].push(v);
        }
    }
    points
        .into_par_iter()
        .zip(smoothed.into_par_iter())
        .map(|(p, beta)| {
            if beta.is_empty() {
                return p;
            }
            let pinned = spec.family.pinned(beta.clone());
            match fit_local_with(sample, &pinned, &spec.kernel, spec.min_events, &spec.fit, p.s, p.h_used) {
                Ok(fit) => {
                    let mut theta = fit.theta.clone();
                    theta.extend(beta);
                    CurvePoint {
                        theta,
                        ..local_point(fit, p.s, p.h_used, "")
                    }
                }
                Err(e) => gap(p.s, p.h_used, &e),
            }
        })
        .collect()
}

fn bias_corrections(sample: &SurvivalSample, spec: &LocalFitSpec, points: &[CurvePoint]) -> Vec<Option<f64>> {
    let Some(tag) = BiasTag::from_family(spec.family.tag()) else {
        return vec![None; points.len()];
    };
    let Ok(pilot) = pilot_estimate(sample, &spec.band.pilot) else {
        return vec![None; points.len()];
    };
    points
        .iter()
        .map(|p| {
            let pt = pilot.at(p.s)?;
            let inputs = BiasInputs {
                alpha: pt.alpha,
                alpha_d1: pt.alpha_d1,
                alpha_d2: pt.alpha_d2,
                y_log_d1: pt.y_log_d1,
                model: None,
            };
            bias_factor(tag, p.s, &inputs).ok().map(|b| b.value)
        })
        .collect()
}

/// `α̂ - ½ β_K h² b̂ ± z se`; no correction when `bias` is `None`.
pub fn pointwise_band(
    alpha_hat: f64,
    se: f64,
    h: f64,
    kernel: &Kernel,
    level: f64,
    bias: Option<f64>,
) -> (f64, f64) {
    let z = Normal::standard().inverse_cdf(0.5 + 0.5 * level);
    let center = match bias {
        Some(b) if h.is_finite() => alpha_hat - 0.5 * kernel.constants().beta_k * h * h * b,
        _ => alpha_hat,
    };
    (center - z * se, center + z * se)
}

/// Which bias-factor formula to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasTag {
    /// The kernel smoother of the Nelson–Aalen increments.
    Traditional,
    Constant,
    Gompertz,
    Weibull,
    Frailty,
    GenericOneParameter,
    GenericProduct,
}

impl BiasTag {
    pub fn from_family(tag: FamilyTag) -> Option<Self> {
        match tag {
            FamilyTag::Constant => Some(BiasTag::Constant),
            FamilyTag::Gompertz => Some(BiasTag::Gompertz),
            FamilyTag::Weibull => Some(BiasTag::Weibull),
            FamilyTag::Frailty => Some(BiasTag::Frailty),
            FamilyTag::GenericProduct => None,
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "traditional" | "smoother" => Ok(BiasTag::Traditional),
            "constant" => Ok(BiasTag::Constant),
            "gompertz" => Ok(BiasTag::Gompertz),
            "weibull" => Ok(BiasTag::Weibull),
            "frailty" => Ok(BiasTag::Frailty),
            other => Err(Error::InvalidArgument(format!("unknown family `{other}`"))),
        }
    }
}

/// Derivatives of the best local approximation `α₀ = α(·, θ₀(s))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelTerms {
    pub alpha0_d1: f64,
    pub alpha0_d2: f64,
    /// `ψ₀'(s) / ψ₀(s)`.
    pub psi0_log_d1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasInputs {
    pub alpha: f64,
    pub alpha_d1: f64,
    pub alpha_d2: f64,
    /// `y'(s) / y(s)`.
    pub y_log_d1: f64,
    pub model: Option<ModelTerms>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasFactor {
    pub s: f64,
    pub value: f64,
    pub tag: BiasTag,
}

/// Leading bias coefficient `b(s)` of `½ β_K h² b(s)`.
pub fn bias_factor(tag: BiasTag, s: f64, x: &BiasInputs) -> Result<BiasFactor> {
    if !(x.alpha > 0.0) {
        return Err(Error::InvalidArgument("hazard must be positive".into()));
    }
    let (a, a1, a2) = (x.alpha, x.alpha_d1, x.alpha_d2);
    let model = || {
        x.model
            .ok_or_else(|| Error::InvalidArgument("generic bias factor needs the model terms".into()))
    };
    let value = match tag {
        BiasTag::Traditional => a2,
        BiasTag::Constant => a2 + 2.0 * a1 * x.y_log_d1,
        BiasTag::Gompertz => a2 - a1 * a1 / a,
        BiasTag::Weibull => {
            if s == 0.0 {
                return Err(Error::InvalidArgument(
                    "Weibull bias factor is undefined at s = 0".into(),
                ));
            }
            a2 - a1 * a1 / a + a1 / s
        }
        BiasTag::Frailty => a2 - 2.0 * a1 * a1 / a,
        BiasTag::GenericOneParameter => {
            let m = model()?;
            a2 - m.alpha0_d2 + 2.0 * (a1 - m.alpha0_d1) * (x.y_log_d1 + m.psi0_log_d1)
        }
        BiasTag::GenericProduct => a2 - model()?.alpha0_d2,
    };
    Ok(BiasFactor { s, value, tag })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityMode {
    /// `α(t, θ̂(t)) exp{-A(t, θ̂(t))}`.
    PlugIn,
    /// `exp{-∫_0^t α̂} α̂(t)`, trapezoid over the grid.
    ProductIntegral,
}

/// Density estimates on the curve's grid.
pub fn density_estimates(
    curve: &HazardCurve,
    family: &HazardFamily,
    mode: DensityMode,
) -> Result<Vec<(f64, f64)>> {
    match mode {
        DensityMode::PlugIn => curve
            .points
            .iter()
            .map(|p| {
                if p.alpha_hat.is_none() {
                    return Err(Error::InvalidArgument(format!("curve has a gap at s = {}", p.s)));
                }
                let local = family.localize(p.s);
                let alpha = local.hazard(p.s, &p.theta);
                let cum = local.cumulative(p.s, &p.theta)?;
                Ok((p.s, alpha * (-cum).exp()))
            })
            .collect(),
        DensityMode::ProductIntegral => {
            let pts = &curve.points;
            let (Some(first), Some(last)) = (pts.first(), pts.last()) else {
                return Err(Error::InvalidArgument("empty curve".into()));
            };
            let span = last.s - first.s;
            if first.s > 0.01 * span.max(f64::MIN_POSITIVE) && first.s > 0.0 {
                return Err(Error::InvalidArgument(
                    "product-integral density needs a grid starting at 0".into(),
                ));
            }
            let mut xs = Vec::with_capacity(pts.len());
            let mut ys = Vec::with_capacity(pts.len());
            for p in pts {
                let a = p
                    .alpha_hat
                    .ok_or_else(|| Error::InvalidArgument(format!("curve has a gap at s = {}", p.s)))?;
                xs.push(p.s);
                ys.push(a);
            }
            let cum = quad::cumulative_trapezoid(&xs, &ys);
            Ok(xs
                .iter()
                .zip(&ys)
                .zip(cum)
                .map(|((&s, &a), c)| (s, (-(c + first.s * ys[0])).exp() * a))
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d3() -> SurvivalSample {
        SurvivalSample::from_pairs(&[(1.0, 1), (2.0, 1), (3.0, 1)], None).unwrap()
    }

    fn spec(family: HazardFamily, kernel: Kernel, h: f64, grid: Vec<f64>) -> LocalFitSpec {
        LocalFitSpec {
            min_events: 1,
            ..LocalFitSpec::new(family, kernel, BandwidthRule::Fixed { h }, grid)
        }
    }

    #[test]
    fn d3_local_constant() {
        let s = d3();
        let sp = spec(HazardFamily::constant(), Kernel::uniform(), 2.0, vec![2.0]);
        let fit = fit_local_at(&s, &sp, 2.0, 2.0).unwrap();
        assert!((fit.alpha_hat - 2.0 / 3.0).abs() < 1e-12);
        assert!((local_constant(&s, &Kernel::uniform(), 2.0, 2.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let pinned = HazardFamily::gompertz().pinned(vec![0.0]);
        let sp = spec(pinned, Kernel::uniform(), 2.0, vec![2.0]);
        assert!((fit_local_at(&s, &sp, 2.0, 2.0).unwrap().alpha_hat - 2.0 / 3.0).abs() < 1e-12);
        let sp = spec(HazardFamily::constant(), Kernel::uniform(), 3.0, vec![1.5]);
        assert!((fit_local_at(&s, &sp, 1.5, 3.0).unwrap().alpha_hat - 0.5).abs() < 1e-12);
    }

    #[test]
    fn epanechnikov_matches_closed_form() {
        let s = d3();
        let k = Kernel::epanechnikov();
        let sp = spec(HazardFamily::constant(), k.clone(), 2.0, vec![2.0]);
        let a = fit_local_at(&s, &sp, 2.0, 2.0).unwrap().alpha_hat;
        let b = local_constant(&s, &k, 2.0, 2.0).unwrap();
        assert!((a - b).abs() < 1e-10);
        assert!(matches!(
            local_constant(&s, &k, 50.0, 1.0),
            Err(Error::InsufficientWindow { .. })
        ));
    }

    #[test]
    fn insufficient_window() {
        let s = d3();
        let sp = LocalFitSpec::new(HazardFamily::constant(), Kernel::uniform(), BandwidthRule::Fixed { h: 2.0 }, vec![2.0]);
        assert!(matches!(
            fit_local_at(&s, &sp, 2.0, 2.0),
            Err(Error::InsufficientWindow { events: 2, required: 10 })
        ));
    }

    #[test]
    fn single_point_curve() {
        let s = d3();
        let sp = spec(HazardFamily::constant(), Kernel::uniform(), 2.0, vec![2.0]);
        let c = estimate_curve(&s, &sp).unwrap();
        let fit = fit_local_at(&s, &sp, 2.0, 2.0).unwrap();
        assert_eq!(c.points[0].alpha_hat, Some(fit.alpha_hat));
        assert_eq!(c.points[0].flag, "");
    }

    #[test]
    fn bias_factor_examples() {
        let x = BiasInputs {
            alpha: 1.25,
            alpha_d1: 1.0,
            alpha_d2: 2.0,
            y_log_d1: -1.25,
            model: None,
        };
        let g = bias_factor(BiasTag::Gompertz, 0.5, &x).unwrap().value;
        assert!((g - 1.2).abs() < 1e-12);
        let c = bias_factor(BiasTag::Constant, 0.5, &x).unwrap().value;
        assert!((c + 0.5).abs() < 1e-12);
        assert!(bias_factor(BiasTag::Weibull, 0.0, &x).is_err());
        let (a, beta, s): (f64, f64, f64) = (0.3, 0.7, 1.1);
        let al = a * (beta * s).exp();
        let exact = BiasInputs {
            alpha: al,
            alpha_d1: beta * al,
            alpha_d2: beta * beta * al,
            y_log_d1: -al,
            model: None,
        };
        assert!(bias_factor(BiasTag::Gompertz, s, &exact).unwrap().value.abs() < 1e-12);
        assert!(bias_factor(BiasTag::GenericProduct, s, &exact).is_err());
    }

    #[test]
    fn band_half_width() {
        let (lo, hi) = pointwise_band(1.0, 0.1, 0.5, &Kernel::uniform(), 0.95, None);
        assert!(((hi - lo) / 2.0 - 0.1959964).abs() < 1e-6);
        let (lo, hi) = pointwise_band(1.0, 0.0, 0.5, &Kernel::uniform(), 0.95, Some(2.0));
        assert_eq!(lo, hi);
        assert!((lo - (1.0 - 0.5 / 12.0 * 0.25 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn constant_density_modes_agree() {
        let theta: f64 = 0.8;
        let points = (0..=300)
            .map(|i| {
                let s = i as f64 * 0.01;
                CurvePoint {
                    s,
                    alpha_hat: Some(theta),
                    h_used: 1.0,
                    theta: vec![theta],
                    se: Some(0.0),
                    band_lo: None,
                    band_hi: None,
                    flag: String::new(),
                }
            })
            .collect();
        let curve = HazardCurve {
            family: "constant".into(),
            kernel: "uniform".into(),
            points,
        };
        let fam = HazardFamily::constant();
        let f1 = density_estimates(&curve, &fam, DensityMode::PlugIn).unwrap();
        let f2 = density_estimates(&curve, &fam, DensityMode::ProductIntegral).unwrap();
        assert_eq!(f2[0].1, theta);
        for ((s, a), (_, b)) in f1.iter().zip(&f2) {
            assert!((a - theta * (-theta * s).exp()).abs() < 1e-12);
            assert!((a - b).abs() < 1e-12);
        }
    }
}
