//! Parametric hazard families, weighted maximum likelihood and sandwich matrices.
//!
//! Every family has the product form `α(t) = a exp{C(t, β)}`. A family may be
//! anchored at a time `s`, in which case it is written in local form
//! `α(t) = θ exp{C(t, β) - C(s, β)}` so that `θ = α(s)` is the local level.
//! Parameter vectors are `(level, β_1, ..., β_q)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Node, SurvivalSample, Weight};
use crate::quad;
use crate::{Error, Result};

/// Which closed-form bias factor applies to a family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyTag {
    Constant,
    Gompertz,
    Weibull,
    Frailty,
    GenericProduct,
}

/// Lower limit of a shape parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    Free,
    Open(f64),
    Closed(f64),
}

impl Bound {
    fn admits(&self, x: f64) -> bool {
        match *self {
            Bound::Free => x.is_finite(),
            Bound::Open(l) => x > l,
            Bound::Closed(l) => x >= l,
        }
    }

    fn limit(&self) -> Option<f64> {
        match *self {
            Bound::Free => None,
            Bound::Open(l) | Bound::Closed(l) => Some(l),
        }
    }
}

/// The log-shape `C(t, β)` of a product family.
pub trait LogShape: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &str;
    /// Number of shape parameters `q`.
    fn n_shape(&self) -> usize;
    fn log_shape(&self, t: f64, beta: &[f64]) -> f64;
    /// `C*(t, β) = ∂C/∂β` written into `out` (length `q`).
    fn shape_grad(&self, t: f64, beta: &[f64], out: &mut [f64]);
    /// `∂²C/∂β∂β'`, row-major `q × q`.
    fn shape_hess(&self, t: f64, beta: &[f64], out: &mut [f64]);
    /// `c(t, β) = ∂C/∂t`.
    fn dt(&self, t: f64, beta: &[f64]) -> f64;
    /// `c'(t, β) = ∂²C/∂t²`.
    fn dt2(&self, t: f64, beta: &[f64]) -> f64;
    /// `∫_0^t exp{C(u, β)} du` when available in closed form.
    fn shape_integral(&self, _t: f64, _beta: &[f64]) -> Option<f64> {
        None
    }
    /// `∫_{t0}^{t1} exp{C(u, β) - C(r, β)} du` when available in closed form.
    fn shape_integral_between(&self, _t0: f64, _t1: f64, _r: f64, _beta: &[f64]) -> Option<f64> {
        None
    }
    /// Shape parameters at which the family reduces to a constant hazard.
    fn neutral(&self) -> Vec<f64>;
    fn lower_bounds(&self) -> Vec<Bound> {
        vec![Bound::Free; self.n_shape()]
    }
    /// True when `C(t, β)` may diverge as `t -> 0`.
    fn singular_at_origin(&self) -> bool {
        false
    }
    fn tag(&self) -> FamilyTag {
        FamilyTag::GenericProduct
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantShape;

impl LogShape for ConstantShape {
    fn name(&self) -> &str {
        "constant"
    }
    fn n_shape(&self) -> usize {
        0
    }
    fn log_shape(&self, _t: f64, _beta: &[f64]) -> f64 {
        0.0
    }
    fn shape_grad(&self, _t: f64, _beta: &[f64], _out: &mut [f64]) {}
    fn shape_hess(&self, _t: f64, _beta: &[f64], _out: &mut [f64]) {}
    fn dt(&self, _t: f64, _beta: &[f64]) -> f64 {
        0.0
    }
    fn dt2(&self, _t: f64, _beta: &[f64]) -> f64 {
        0.0
    }
    fn shape_integral(&self, t: f64, _beta: &[f64]) -> Option<f64> {
        Some(t)
    }
    fn shape_integral_between(&self, t0: f64, t1: f64, _r: f64, _beta: &[f64]) -> Option<f64> {
        Some(t1 - t0)
    }
    fn neutral(&self) -> Vec<f64> {
        Vec::new()
    }
    fn tag(&self) -> FamilyTag {
        FamilyTag::Constant
    }
}

/// `C(t, β) = β t`.
#[derive(Debug, Clone, Copy)]
pub struct GompertzShape;

impl LogShape for GompertzShape {
    fn name(&self) -> &str {
        "gompertz"
    }
    fn n_shape(&self) -> usize {
        1
    }
    fn log_shape(&self, t: f64, beta: &[f64]) -> f64 {
        beta[0] * t
    }
    fn shape_grad(&self, t: f64, _beta: &[f64], out: &mut [f64]) {
        out[0] = t;
    }
    fn shape_hess(&self, _t: f64, _beta: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn dt(&self, _t: f64, beta: &[f64]) -> f64 {
        beta[0]
    }
    fn dt2(&self, _t: f64, _beta: &[f64]) -> f64 {
        0.0
    }
    fn shape_integral(&self, t: f64, beta: &[f64]) -> Option<f64> {
        let b = beta[0];
        Some(if b == 0.0 { t } else { (b * t).exp_m1() / b })
    }
    fn shape_integral_between(&self, t0: f64, t1: f64, r: f64, beta: &[f64]) -> Option<f64> {
        let b = beta[0];
        let d = t1 - t0;
        Some((b * (t0 - r)).exp() * if b == 0.0 { d } else { (b * d).exp_m1() / b })
    }
    fn neutral(&self) -> Vec<f64> {
        vec![0.0]
    }
    fn tag(&self) -> FamilyTag {
        FamilyTag::Gompertz
    }
}

/// `C(t, b) = log b + (b - 1) log t`, i.e. `α = a b t^{b-1}`.
#[derive(Debug, Clone, Copy)]
pub struct WeibullShape;

impl LogShape for WeibullShape {
    fn name(&self) -> &str {
        "weibull"
    }
    fn n_shape(&self) -> usize {
        1
    }
    fn log_shape(&self, t: f64, beta: &[f64]) -> f64 {
        beta[0].ln() + (beta[0] - 1.0) * t.ln()
    }
    fn shape_grad(&self, t: f64, beta: &[f64], out: &mut [f64]) {
        out[0] = 1.0 / beta[0] + t.ln();
    }
    fn shape_hess(&self, _t: f64, beta: &[f64], out: &mut [f64]) {
        out[0] = -1.0 / (beta[0] * beta[0]);
    }
    fn dt(&self, t: f64, beta: &[f64]) -> f64 {
        (beta[0] - 1.0) / t
    }
    fn dt2(&self, t: f64, beta: &[f64]) -> f64 {
        -(beta[0] - 1.0) / (t * t)
    }
    fn shape_integral(&self, t: f64, beta: &[f64]) -> Option<f64> {
        Some(t.powf(beta[0]))
    }
    fn shape_integral_between(&self, t0: f64, t1: f64, r: f64, beta: &[f64]) -> Option<f64> {
        if r <= 0.0 {
            return None;
        }
        let b = beta[0];
        Some(r * ((t1 / r).powf(b) - (t0 / r).powf(b)) / b)
    }
    fn neutral(&self) -> Vec<f64> {
        vec![1.0]
    }
    fn lower_bounds(&self) -> Vec<Bound> {
        vec![Bound::Open(0.0)]
    }
    fn singular_at_origin(&self) -> bool {
        true
    }
    fn tag(&self) -> FamilyTag {
        FamilyTag::Weibull
    }
}

/// `C(t, β) = -log(1 + β t)` with `β >= 0`.
#[derive(Debug, Clone, Copy)]
pub struct FrailtyShape;

impl LogShape for FrailtyShape {
    fn name(&self) -> &str {
        "frailty"
    }
    fn n_shape(&self) -> usize {
        1
    }
    fn log_shape(&self, t: f64, beta: &[f64]) -> f64 {
        -(beta[0] * t).ln_1p()
    }
    fn shape_grad(&self, t: f64, beta: &[f64], out: &mut [f64]) {
        out[0] = -t / (1.0 + beta[0] * t);
    }
    fn shape_hess(&self, t: f64, beta: &[f64], out: &mut [f64]) {
        let d = 1.0 + beta[0] * t;
        out[0] = t * t / (d * d);
    }
    fn dt(&self, t: f64, beta: &[f64]) -> f64 {
        -beta[0] / (1.0 + beta[0] * t)
    }
    fn dt2(&self, t: f64, beta: &[f64]) -> f64 {
        let d = 1.0 + beta[0] * t;
        beta[0] * beta[0] / (d * d)
    }
    fn shape_integral(&self, t: f64, beta: &[f64]) -> Option<f64> {
        let b = beta[0];
        Some(if b == 0.0 { t } else { (b * t).ln_1p() / b })
    }
    fn shape_integral_between(&self, t0: f64, t1: f64, r: f64, beta: &[f64]) -> Option<f64> {
        let b = beta[0];
        let d = t1 - t0;
        Some(if b == 0.0 {
            d
        } else {
            (1.0 + b * r) * (b * d / (1.0 + b * t0)).ln_1p() / b
        })
    }
    fn neutral(&self) -> Vec<f64> {
        vec![0.0]
    }
    fn lower_bounds(&self) -> Vec<Bound> {
        vec![Bound::Closed(0.0)]
    }
    fn tag(&self) -> FamilyTag {
        FamilyTag::Frailty
    }
}

/// A shape with all of its parameters held fixed, leaving only the level free.
#[derive(Debug, Clone)]
pub struct PinnedShape {
    pub inner: Arc<dyn LogShape>,
    pub beta: Vec<f64>,
}

impl LogShape for PinnedShape {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn n_shape(&self) -> usize {
        0
    }
    fn log_shape(&self, t: f64, _beta: &[f64]) -> f64 {
        self.inner.log_shape(t, &self.beta)
    }
    fn shape_grad(&self, _t: f64, _beta: &[f64], _out: &mut [f64]) {}
    fn shape_hess(&self, _t: f64, _beta: &[f64], _out: &mut [f64]) {}
    fn dt(&self, t: f64, _beta: &[f64]) -> f64 {
        self.inner.dt(t, &self.beta)
    }
    fn dt2(&self, t: f64, _beta: &[f64]) -> f64 {
        self.inner.dt2(t, &self.beta)
    }
    fn shape_integral(&self, t: f64, _beta: &[f64]) -> Option<f64> {
        self.inner.shape_integral(t, &self.beta)
    }
    fn shape_integral_between(&self, t0: f64, t1: f64, r: f64, _beta: &[f64]) -> Option<f64> {
        self.inner.shape_integral_between(t0, t1, r, &self.beta)
    }
    fn neutral(&self) -> Vec<f64> {
        Vec::new()
    }
    fn singular_at_origin(&self) -> bool {
        self.inner.singular_at_origin()
    }
}

/// A product hazard family, optionally anchored at a local reference time.
#[derive(Debug, Clone)]
pub struct HazardFamily {
    shape: Arc<dyn LogShape>,
    anchor: Option<f64>,
}

impl HazardFamily {
    pub fn new(shape: Arc<dyn LogShape>) -> Self {
        Self {
            shape,
            anchor: None,
        }
    }

    pub fn constant() -> Self {
        Self::new(Arc::new(ConstantShape))
    }

    pub fn gompertz() -> Self {
        Self::new(Arc::new(GompertzShape))
    }

    pub fn weibull() -> Self {
        Self::new(Arc::new(WeibullShape))
    }

    pub fn frailty() -> Self {
        Self::new(Arc::new(FrailtyShape))
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "constant" | "exponential" => Ok(Self::constant()),
            "gompertz" => Ok(Self::gompertz()),
            "weibull" => Ok(Self::weibull()),
            "frailty" => Ok(Self::frailty()),
            other => Err(Error::InvalidArgument(format!("unknown family `{other}`"))),
        }
    }

    /// Holds the shape parameters at `beta`; only the level is estimated.
    pub fn pinned(&self, beta: Vec<f64>) -> Self {
        Self {
            shape: Arc::new(PinnedShape {
                inner: self.shape.clone(),
                beta,
            }),
            anchor: self.anchor,
        }
    }

    /// The local form `θ exp{C(t, β) - C(s, β)}`.
    pub fn localize(&self, s: f64) -> Self {
        Self {
            shape: self.shape.clone(),
            anchor: Some(s),
        }
    }

    pub fn global(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            anchor: None,
        }
    }

    pub fn anchor(&self) -> Option<f64> {
        self.anchor
    }

    pub fn shape(&self) -> &Arc<dyn LogShape> {
        &self.shape
    }

    pub fn name(&self) -> &str {
        self.shape.name()
    }

    pub fn tag(&self) -> FamilyTag {
        self.shape.tag()
    }

    /// Number of parameters `p = 1 + q`.
    pub fn dim(&self) -> usize {
        1 + self.shape.n_shape()
    }

    pub fn singular_at_origin(&self) -> bool {
        self.shape.singular_at_origin()
    }

    fn offset(&self, beta: &[f64]) -> f64 {
        self.anchor.map_or(0.0, |s| self.shape.log_shape(s, beta))
    }

    pub fn hazard(&self, t: f64, theta: &[f64]) -> f64 {
        let beta = &theta[1..];
        theta[0] * (self.shape.log_shape(t, beta) - self.offset(beta)).exp()
    }

    pub fn log_hazard(&self, t: f64, theta: &[f64]) -> f64 {
        let beta = &theta[1..];
        theta[0].ln() + self.shape.log_shape(t, beta) - self.offset(beta)
    }

    /// `ψ(t, θ) = ∂ log α / ∂θ`.
    pub fn score(&self, t: f64, theta: &[f64]) -> Vec<f64> {
        let q = self.shape.n_shape();
        let beta = &theta[1..];
        let mut out = vec![0.0; 1 + q];
        out[0] = 1.0 / theta[0];
        self.shape.shape_grad(t, beta, &mut out[1..]);
        if let Some(s) = self.anchor {
            let mut r = vec![0.0; q];
            self.shape.shape_grad(s, beta, &mut r);
            for j in 0..q {
                out[1 + j] -= r[j];
            }
        }
        out
    }

    /// `ψ*(t, θ) = ∂² log α / ∂θ∂θ'`.
    pub fn hessian(&self, t: f64, theta: &[f64]) -> DMatrix<f64> {
        let q = self.shape.n_shape();
        let beta = &theta[1..];
        let mut m = DMatrix::zeros(1 + q, 1 + q);
        m[(0, 0)] = -1.0 / (theta[0] * theta[0]);
        let mut h = vec![0.0; q * q];
        self.shape.shape_hess(t, beta, &mut h);
        if let Some(s) = self.anchor {
            let mut r = vec![0.0; q * q];
            self.shape.shape_hess(s, beta, &mut r);
            for (a, b) in h.iter_mut().zip(r) {
                *a -= b;
            }
        }
        for i in 0..q {
            for j in 0..q {
                m[(1 + i, 1 + j)] = h[i * q + j];
            }
        }
        m
    }

    /// `d α / dt` and `d² α / dt²`.
    pub fn hazard_derivatives(&self, t: f64, theta: &[f64]) -> (f64, f64) {
        let beta = &theta[1..];
        let a = self.hazard(t, theta);
        let c = self.shape.dt(t, beta);
        (a * c, a * (c * c + self.shape.dt2(t, beta)))
    }

    /// `∫_0^t α(u, θ) du`.
    pub fn cumulative(&self, t: f64, theta: &[f64]) -> Result<f64> {
        let beta = &theta[1..];
        let scale = theta[0] * (-self.offset(beta)).exp();
        match self.shape.shape_integral(t, beta) {
            Some(g) => Ok(scale * g),
            None => {
                let f = |u: f64| self.shape.log_shape(u, beta).exp();
                Ok(scale * quad::adaptive(f, 0.0, t, 1e-12 * (1.0 + t))?)
            }
        }
    }

    /// `∫_{t0}^{t1} α(u, θ) du`, computed relative to the anchor when there is one.
    pub fn integral(&self, t0: f64, t1: f64, theta: &[f64]) -> Result<f64> {
        let Some(r) = self.anchor else {
            return Ok(self.cumulative(t1, theta)? - self.cumulative(t0, theta)?);
        };
        let beta = &theta[1..];
        let g = match self.shape.shape_integral_between(t0, t1, r, beta) {
            Some(g) => g,
            None => {
                let c_r = self.shape.log_shape(r, beta);
                let f = |u: f64| (self.shape.log_shape(u, beta) - c_r).exp();
                quad::adaptive(f, t0, t1, 1e-12 * (1.0 + (t1 - t0).abs()))?
            }
        };
        Ok(theta[0] * g)
    }

    /// Converts parameters of this family to the global form `(a, β)`.
    pub fn to_global(&self, theta: &[f64]) -> Vec<f64> {
        let mut out = theta.to_vec();
        out[0] = theta[0] * (-self.offset(&theta[1..])).exp();
        out
    }

    /// Converts global `(a, β)` to this family's parametrization.
    pub fn from_global(&self, global: &[f64]) -> Vec<f64> {
        let mut out = global.to_vec();
        out[0] = global[0] * self.offset(&global[1..]).exp();
        out
    }

    /// Checks `θ` against the parameter domain.
    pub fn admits(&self, theta: &[f64]) -> bool {
        theta[0] > 0.0
            && theta[0].is_finite()
            && self
                .shape
                .lower_bounds()
                .iter()
                .zip(&theta[1..])
                .all(|(b, &x)| b.admits(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    /// Level profiled out in closed form; shape parameters by safeguarded Newton.
    #[default]
    Profile,
    /// Damped Newton with step halving on the full score.
    Newton,
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub method: FitMethod,
    /// Bound on `max_j |U_j| / sqrt(|H_jj|)` at the returned estimate.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Starting value in the family's parametrization; `None` means automatic.
    pub init: Option<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            method: FitMethod::Profile,
            tolerance: 1e-8,
            max_iterations: 200,
            init: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: Vec<f64>,
    pub weight_descr: String,
    pub converged: bool,
    pub iterations: usize,
    pub score_residual: f64,
    pub warnings: Vec<String>,
    /// Weighted failure count `Σ g(x_i) δ_i` on the interval.
    pub weighted_events: f64,
    pub interval: (f64, f64),
}

/// Data of one weighted fit in an internal local parametrization around `reference`.
struct Problem<'a> {
    family: &'a HazardFamily,
    reference: f64,
    /// `(x_i, g(x_i))` for failures with positive weight.
    events: Vec<(f64, f64)>,
    nodes: Vec<Node>,
    n_g: f64,
    q: usize,
}

struct Profile {
    value: f64,
    level: f64,
    grad: Vec<f64>,
    hess: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(
        sample: &SurvivalSample,
        family: &'a HazardFamily,
        weight: &Weight,
        a: f64,
        b: f64,
    ) -> Result<Self> {
        let (lo, hi) = weight.clip(a, b);
        let mut events = Vec::new();
        if hi > lo {
            let obs = sample.observations();
            for i in sample.index_range(lo, hi) {
                if obs[i].is_failure() {
                    let g = weight.value(obs[i].time);
                    if g > 0.0 {
                        events.push((obs[i].time, g));
                    }
                }
            }
        }
        let n_g: f64 = events.iter().map(|e| e.1).sum();
        if events.is_empty() || !(n_g > 0.0) {
            return Err(Error::EmptyWindow { a, b });
        }
        let graded = family.singular_at_origin() && lo <= 0.0;
        let nodes: Vec<Node> = sample
            .nodes(weight, lo, hi, graded)
            .into_iter()
            .filter(|n| n.weight > 0.0)
            .collect();
        if nodes.is_empty() {
            return Err(Error::EmptyWindow { a, b });
        }
        let reference = family.anchor.unwrap_or(0.5 * (lo + hi));
        Ok(Self {
            family,
            reference,
            events,
            nodes,
            n_g,
            q: family.shape.n_shape(),
        })
    }

    fn shape(&self) -> &dyn LogShape {
        self.family.shape.as_ref()
    }

    /// Reference values `C(r)`, `C*(r)`, `C**(r)`.
    fn reference_terms(&self, beta: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let q = self.q;
        let mut g = vec![0.0; q];
        let mut h = vec![0.0; q * q];
        let c = self.shape().log_shape(self.reference, beta);
        self.shape().shape_grad(self.reference, beta, &mut g);
        self.shape().shape_hess(self.reference, beta, &mut h);
        (c, g, h)
    }

    /// Profile log-likelihood in `β` with `θ̂(β) = N_g / Z(β)`.
    fn profile(&self, beta: &[f64]) -> Profile {
        let q = self.q;
        let parts = self.profile_parts(beta);
        let (n, z) = (self.n_g, parts.z);
        let level = n / z;
        let value = parts.data_value + n * level.ln() - n;
        let grad = (0..q).map(|j| parts.data_grad[j] - n * parts.z1[j] / z).collect();
        let mut hess = vec![0.0; q * q];
        for i in 0..q {
            for j in 0..q {
                hess[i * q + j] = parts.data_hess[i * q + j]
                    - n * (parts.z2[i * q + j] / z - parts.z1[i] * parts.z1[j] / (z * z));
            }
        }
        Profile {
            value,
            level,
            grad,
            hess,
        }
    }

    /// Full log-likelihood, score and Hessian at internal `(θ_r, β)`.
    fn full(&self, theta: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let q = self.q;
        let p = q + 1;
        let level = theta[0];
        let beta = &theta[1..];
        let prof = self.profile_parts(beta);
        let value = prof.data_value + self.n_g * level.ln() - level * prof.z;
        let mut grad = vec![0.0; p];
        grad[0] = self.n_g / level - prof.z;
        for j in 0..q {
            grad[1 + j] = prof.data_grad[j] - level * prof.z1[j];
        }
        let mut hess = vec![0.0; p * p];
        hess[0] = -self.n_g / (level * level);
        for j in 0..q {
            hess[1 + j] = -prof.z1[j];
            hess[(1 + j) * p] = -prof.z1[j];
            for k in 0..q {
                hess[(1 + j) * p + 1 + k] = prof.data_hess[j * q + k] - level * prof.z2[j * q + k];
            }
        }
        (value, grad, hess)
    }

    fn profile_parts(&self, beta: &[f64]) -> Parts {
        let q = self.q;
        let (cr, gr, hr) = self.reference_terms(beta);
        let mut gbuf = vec![0.0; q];
        let mut hbuf = vec![0.0; q * q];
        let mut parts = Parts {
            data_value: 0.0,
            data_grad: vec![0.0; q],
            data_hess: vec![0.0; q * q],
            z: 0.0,
            z1: vec![0.0; q],
            z2: vec![0.0; q * q],
        };
        for &(x, g) in &self.events {
            parts.data_value += g * (self.shape().log_shape(x, beta) - cr);
            self.shape().shape_grad(x, beta, &mut gbuf);
            self.shape().shape_hess(x, beta, &mut hbuf);
            for j in 0..q {
                parts.data_grad[j] += g * (gbuf[j] - gr[j]);
            }
            for k in 0..q * q {
                parts.data_hess[k] += g * (hbuf[k] - hr[k]);
            }
        }
        for node in &self.nodes {
            let e = node.weight * (self.shape().log_shape(node.t, beta) - cr).exp();
            parts.z += e;
            self.shape().shape_grad(node.t, beta, &mut gbuf);
            self.shape().shape_hess(node.t, beta, &mut hbuf);
            for j in 0..q {
                gbuf[j] -= gr[j];
                parts.z1[j] += e * gbuf[j];
            }
            for i in 0..q {
                for j in 0..q {
                    parts.z2[i * q + j] += e * (gbuf[i] * gbuf[j] + hbuf[i * q + j] - hr[i * q + j]);
                }
            }
        }
        parts
    }

    /// `max_j |U_j| / sqrt(|H_jj|)`, ignoring coordinates held at a closed bound.
    fn residual(&self, theta: &[f64], at_bound: &[bool]) -> f64 {
        let p = theta.len();
        let (_, grad, hess) = self.full(theta);
        (0..p)
            .filter(|&j| j == 0 || !at_bound[j - 1])
            .map(|j| grad[j].abs() / hess[j * p + j].abs().sqrt().max(1e-300))
            .fold(0.0, f64::max)
    }
}

struct Parts {
    data_value: f64,
    data_grad: Vec<f64>,
    data_hess: Vec<f64>,
    z: f64,
    z1: Vec<f64>,
    z2: Vec<f64>,
}

/// Maximizes `∫_a^b g {log α dN - Y α dt}` over the family's parameters.
pub fn fit_weighted_mle(
    sample: &SurvivalSample,
    family: &HazardFamily,
    weight: &Weight,
    interval: (f64, f64),
    options: &FitOptions,
) -> Result<FitResult> {
    let (a, b) = interval;
    if a > b || a < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "invalid fit interval [{a}, {b}]"
        )));
    }
    let problem = Problem::new(sample, family, weight, a, b)?;
    let q = problem.q;
    let bounds = family.shape.lower_bounds();
    let init_beta: Vec<f64> = match &options.init {
        Some(init) => {
            if init.len() != family.dim() {
                return Err(Error::InvalidArgument(format!(
                    "initial value has {} entries, family has {}",
                    init.len(),
                    family.dim()
                )));
            }
            init[1..].to_vec()
        }
        None => family.shape.neutral(),
    };
    let mut warnings = Vec::new();
    let mut at_bound = vec![false; q];
    let (beta, iterations, mut converged) = match (options.method, q) {
        (_, 0) => (Vec::new(), 0, true),
        (FitMethod::Profile, 1) => {
            solve_profile_1d(&problem, init_beta[0], bounds[0], options, &mut at_bound[0])
        }
        (FitMethod::Profile, _) => solve_profile_nd(&problem, init_beta, &bounds, options, &mut at_bound),
        (FitMethod::Newton, _) => {
            let level0 = problem.profile(&init_beta).level;
            let mut start = vec![level0];
            start.extend(&init_beta);
            if let Some(init) = &options.init {
                // Translate the supplied level to the internal reference.
                let global = family.to_global(init);
                let internal = family.localize(problem.reference);
                start[0] = internal.from_global(&global)[0];
            }
            solve_newton(&problem, start, &bounds, options, &mut at_bound)
        }
    };
    for (j, flag) in at_bound.iter().enumerate() {
        if *flag {
            let msg = format!(
                "shape parameter {} held at its lower bound {}",
                j + 1,
                bounds[j].limit().unwrap_or(f64::NEG_INFINITY)
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    let level = problem.profile(&beta).level;
    let mut internal = vec![level];
    internal.extend(&beta);
    let residual = problem.residual(&internal, &at_bound);
    if residual > options.tolerance {
        converged = false;
    }
    if !converged {
        let msg = format!("fit did not converge: normalized score residual {residual:.3e} after {iterations} iterations");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let global = family.localize(problem.reference).to_global(&internal);
    let theta_hat = family.from_global(&global);
    Ok(FitResult {
        theta_hat,
        weight_descr: weight.describe(),
        converged,
        iterations,
        score_residual: residual,
        warnings,
        weighted_events: problem.n_g,
        interval,
    })
}

fn normalized(grad: f64, hess: f64) -> f64 {
    grad.abs() / hess.abs().sqrt().max(1e-300)
}

/// Safeguarded Newton with bracketing on the derivative of the 1-d profile.
fn solve_profile_1d(
    problem: &Problem,
    init: f64,
    bound: Bound,
    options: &FitOptions,
    at_bound: &mut bool,
) -> (Vec<f64>, usize, bool) {
    let tol = options.tolerance;
    let mut beta = if bound.admits(init) {
        init
    } else {
        match bound {
            Bound::Closed(l) => l,
            Bound::Open(l) => l + 1.0,
            Bound::Free => 0.0,
        }
    };
    let lower = bound.limit();
    // Bracket: derivative positive at `lo`, negative at `hi`.
    let mut lo: Option<f64> = None;
    let mut hi: Option<f64> = None;
    let width = problem
        .nodes
        .last()
        .zip(problem.nodes.first())
        .map(|(l, f)| l.t - f.t)
        .unwrap_or(1.0)
        .max(1e-12);
    let mut step = 1.0 / width;
    let eval = |b: f64| {
        let p = problem.profile(&[b]);
        (p.grad[0], p.hess[0])
    };
    let (mut d, mut h) = eval(beta);
    for it in 1..=options.max_iterations {
        if !d.is_finite() {
            return (vec![beta], it, false);
        }
        if normalized(d, h) <= tol * 0.5 {
            return (vec![beta], it, true);
        }
        if d > 0.0 {
            lo = Some(beta);
        } else {
            hi = Some(beta);
        }
        if let (Bound::Closed(l), true) = (bound, d < 0.0 && beta == bound.limit().unwrap_or(f64::NAN)) {
            let _ = l;
            *at_bound = true;
            return (vec![beta], it, true);
        }
        let newton = if h < 0.0 { Some(beta - d / h) } else { None };
        let next = match (lo, hi) {
            (Some(l), Some(u)) => match newton {
                Some(x) if x > l && x < u => x,
                _ => 0.5 * (l + u),
            },
            (Some(l), None) => match newton {
                Some(x) if x > l => x,
                _ => {
                    step *= 2.0;
                    l + step
                }
            },
            (None, Some(u)) => {
                let cand = match newton {
                    Some(x) if x < u => x,
                    _ => {
                        step *= 2.0;
                        u - step
                    }
                };
                match (bound, lower) {
                    (Bound::Closed(l), _) if cand <= l => l,
                    (Bound::Open(l), _) if cand <= l => l + 0.5 * (u - l),
                    _ => cand,
                }
            }
            (None, None) => unreachable!(),
        };
        if let (Some(l), Some(u)) = (lo, hi) {
            if (u - l).abs() <= 1e-15 * (1.0 + l.abs().max(u.abs())) {
                return (vec![beta], it, normalized(d, h) <= tol);
            }
        }
        if step > 1e12 / width {
            return (vec![beta], it, false);
        }
        beta = next;
        (d, h) = eval(beta);
    }
    (vec![beta], options.max_iterations, false)
}

/// Damped Newton on the profile for `q >= 2`, with projection onto bounds.
fn solve_profile_nd(
    problem: &Problem,
    init: Vec<f64>,
    bounds: &[Bound],
    options: &FitOptions,
    at_bound: &mut [bool],
) -> (Vec<f64>, usize, bool) {
    let q = init.len();
    let mut beta = project(&init, bounds, at_bound);
    let mut current = problem.profile(&beta);
    for it in 1..=options.max_iterations {
        let free: Vec<usize> = (0..q)
            .filter(|&j| !(at_bound[j] && current.grad[j] < 0.0))
            .collect();
        let res = free
            .iter()
            .map(|&j| normalized(current.grad[j], current.hess[j * q + j]))
            .fold(0.0, f64::max);
        if res <= 0.5 * options.tolerance {
            return (beta, it, true);
        }
        let dir = newton_direction(&current.grad, &current.hess, &free, q);
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..60 {
            let cand: Vec<f64> = (0..q).map(|j| beta[j] + t * dir[j]).collect();
            let mut flags = vec![false; q];
            let cand = project(&cand, bounds, &mut flags);
            let trial = problem.profile(&cand);
            if trial.value.is_finite() && trial.value >= current.value - 1e-14 * current.value.abs() {
                beta = cand;
                current = trial;
                at_bound.copy_from_slice(&flags);
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            return (beta, it, false);
        }
    }
    (beta, options.max_iterations, false)
}

/// Damped Newton on the full score in the internal parametrization.
fn solve_newton(
    problem: &Problem,
    start: Vec<f64>,
    bounds: &[Bound],
    options: &FitOptions,
    at_bound: &mut [bool],
) -> (Vec<f64>, usize, bool) {
    let p = start.len();
    let q = p - 1;
    let mut theta = start;
    let mut flags = vec![false; q];
    let projected = project(&theta[1..], bounds, &mut flags);
    theta[1..].copy_from_slice(&projected);
    let (mut value, mut grad, mut hess) = problem.full(&theta);
    for it in 1..=options.max_iterations {
        let free: Vec<usize> = (0..p)
            .filter(|&j| j == 0 || !(flags[j - 1] && grad[j] < 0.0))
            .collect();
        let res = free
            .iter()
            .map(|&j| normalized(grad[j], hess[j * p + j]))
            .fold(0.0, f64::max);
        if res <= 0.5 * options.tolerance {
            at_bound.copy_from_slice(&flags);
            return (theta[1..].to_vec(), it, true);
        }
        let dir = newton_direction(&grad, &hess, &free, p);
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..60 {
            let mut cand: Vec<f64> = (0..p).map(|j| theta[j] + t * dir[j]).collect();
            if cand[0] <= 0.0 {
                t *= 0.5;
                continue;
            }
            let mut trial_flags = vec![false; q];
            let shape = project(&cand[1..], bounds, &mut trial_flags);
            cand[1..].copy_from_slice(&shape);
            let (v, g, h) = problem.full(&cand);
            if v.is_finite() && v >= value - 1e-14 * value.abs() {
                theta = cand;
                value = v;
                grad = g;
                hess = h;
                flags = trial_flags;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            at_bound.copy_from_slice(&flags);
            return (theta[1..].to_vec(), it, false);
        }
    }
    at_bound.copy_from_slice(&flags);
    (theta[1..].to_vec(), options.max_iterations, false)
}

/// Newton ascent direction on the free coordinates; falls back to a scaled
/// gradient when the Hessian block is not negative definite.
fn newton_direction(grad: &[f64], hess: &[f64], free: &[usize], p: usize) -> Vec<f64> {
    let m = free.len();
    let h = DMatrix::from_fn(m, m, |i, j| -hess[free[i] * p + free[j]]);
    let g = DVector::from_fn(m, |i, _| grad[free[i]]);
    let step = match h.clone().cholesky() {
        Some(ch) => ch.solve(&g),
        None => DVector::from_fn(m, |i, _| g[i] / h[(i, i)].abs().max(1e-8)),
    };
    let mut out = vec![0.0; p];
    for (k, &j) in free.iter().enumerate() {
        out[j] = step[k];
    }
    out
}

fn project(beta: &[f64], bounds: &[Bound], flags: &mut [bool]) -> Vec<f64> {
    beta.iter()
        .zip(bounds)
        .enumerate()
        .map(|(j, (&x, b))| match *b {
            Bound::Closed(l) if x <= l => {
                flags[j] = true;
                l
            }
            Bound::Open(l) if x <= l => {
                flags[j] = false;
                l + 1e-6 * (1.0 + l.abs())
            }
            _ => {
                flags[j] = false;
                x
            }
        })
        .collect()
}

/// Empirical `E_g(t)`, piecewise linear between knots with jumps at failures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EPath {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl EPath {
    pub fn evaluate(&self, t: f64) -> Vec<f64> {
        let p = self.values.first().map_or(0, |v| v.len());
        if self.times.is_empty() || t < self.times[0] {
            return vec![0.0; p];
        }
        let j = self.times.partition_point(|&x| x <= t);
        if j == self.times.len() {
            return self.values[j - 1].clone();
        }
        let (t0, t1) = (self.times[j - 1], self.times[j]);
        if t == t0 || t1 == t0 {
            return self.values[j - 1].clone();
        }
        let w = (t - t0) / (t1 - t0);
        self.values[j - 1]
            .iter()
            .zip(&self.values[j])
            .map(|(a, b)| a + w * (b - a))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SandwichMatrices {
    pub j_hat: DMatrix<f64>,
    pub m_hat: DMatrix<f64>,
    /// `Ĵ⁻¹ M̂ Ĵ⁻¹ / n`.
    pub covariance: DMatrix<f64>,
    pub e_path: EPath,
}

/// Empirical sandwich matrices at `theta_hat`.
///
/// `Ĵ = -H/n` with `H` the Hessian of the weighted log-likelihood. `M̂` uses
/// `(1/n) Σ g² ψψ'` over failures for the first term, and the cross terms
/// `∫ g (ψ Ê' + Ê ψ') α̂ dt` with `Ê(t) = n⁻¹ ∫_0^t g ψ (dN - Y α̂ dt)`.
pub fn sandwich(
    sample: &SurvivalSample,
    family: &HazardFamily,
    weight: &Weight,
    interval: (f64, f64),
    theta_hat: &[f64],
) -> Result<SandwichMatrices> {
    let p = family.dim();
    if theta_hat.len() != p || !family.admits(theta_hat) {
        return Err(Error::InvalidArgument(
            "theta_hat is outside the parameter domain".into(),
        ));
    }
    let n = sample.len() as f64;
    let (lo, hi) = weight.clip(interval.0, interval.1);
    if !(hi > lo) {
        return Err(Error::EmptyWindow {
            a: interval.0,
            b: interval.1,
        });
    }
    let obs = sample.observations();
    let events: Vec<(f64, f64)> = sample
        .index_range(lo, hi)
        .filter(|&i| obs[i].is_failure())
        .map(|i| (obs[i].time, weight.value(obs[i].time)))
        .collect();
    let graded = family.singular_at_origin() && lo <= 0.0;
    let nodes = sample.nodes(weight, lo, hi, graded);

    let mut hess = DMatrix::<f64>::zeros(p, p);
    let mut m1 = DMatrix::<f64>::zeros(p, p);
    for &(x, g) in &events {
        let psi = DVector::from_vec(family.score(x, theta_hat));
        hess += family.hessian(x, theta_hat) * g;
        m1 += &psi * psi.transpose() * (g * g / n);
    }

    // Walk the cells in time order, accumulating Ê and the cross terms.
    let mut e = DVector::<f64>::zeros(p);
    let mut times = vec![lo];
    let mut values = vec![vec![0.0; p]];
    let mut cross = DMatrix::<f64>::zeros(p, p);
    let mut next_event = 0;
    let jump_to = |upto: f64, inclusive: bool, e: &mut DVector<f64>, times: &mut Vec<f64>, values: &mut Vec<Vec<f64>>, next_event: &mut usize| {
        while *next_event < events.len() {
            let (x, g) = events[*next_event];
            if x < upto || (inclusive && x <= upto) {
                times.push(x);
                values.push(e.as_slice().to_vec());
                let psi = DVector::from_vec(family.score(x, theta_hat));
                *e += psi * (g / n);
                times.push(x);
                values.push(e.as_slice().to_vec());
                *next_event += 1;
            } else {
                break;
            }
        }
    };
    for cell in nodes.chunks(crate::quad::GL8_LEN) {
        let (u, v) = (cell[0].cell_lo, cell[0].cell_hi);
        jump_to(u, true, &mut e, &mut times, &mut values, &mut next_event);
        let mut comp = DVector::<f64>::zeros(p);
        let mut contributions = Vec::with_capacity(cell.len());
        for node in cell {
            let psi = DVector::from_vec(family.score(node.t, theta_hat));
            let alpha = family.hazard(node.t, theta_hat);
            let psi_star = family.hessian(node.t, theta_hat);
            hess -= (&psi * psi.transpose() + psi_star) * (node.weight * alpha);
            comp += &psi * (node.weight * alpha);
            contributions.push((node, psi, alpha));
        }
        let e_start = e.clone();
        for (node, psi, alpha) in contributions {
            let frac = (node.t - u) / (v - u);
            let e_t = &e_start - &comp * (frac / n);
            let g_over_y = node.weight / node.at_risk;
            cross += (&psi * e_t.transpose() + &e_t * psi.transpose()) * (g_over_y * alpha);
        }
        e -= comp / n;
        times.push(v);
        values.push(e.as_slice().to_vec());
    }
    jump_to(hi, true, &mut e, &mut times, &mut values, &mut next_event);

    let j_hat = -hess / n;
    let m_hat = m1 + cross;
    let j_hat = symmetrize(&j_hat);
    let m_hat = symmetrize(&m_hat);
    let eig = j_hat.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition < 1e12) {
        return Err(Error::SingularMatrix { condition });
    }
    let j_inv = j_hat
        .clone()
        .try_inverse()
        .ok_or(Error::SingularMatrix { condition })?;
    let covariance = symmetrize(&(&j_inv * &m_hat * &j_inv / n));
    Ok(SandwichMatrices {
        j_hat,
        m_hat,
        covariance,
        e_path: EPath { times, values },
    })
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{HazardFn, SimulationLaw};
    use crate::kernels::Kernel;

    fn d3() -> SurvivalSample {
        SurvivalSample::from_pairs(&[(1.0, 1), (2.0, 1), (3.0, 1)], None).unwrap()
    }

    #[test]
    fn constant_fit_is_occurrence_over_exposure() {
        let fit = fit_weighted_mle(
            &d3(),
            &HazardFamily::constant(),
            &Weight::Unit,
            (0.0, 3.0),
            &FitOptions::default(),
        )
        .unwrap();
        assert!(fit.converged);
        assert!((fit.theta_hat[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn zero_weight_is_an_empty_window() {
        let w = Weight::Custom(Arc::new(|_| 0.0));
        let err = fit_weighted_mle(
            &d3(),
            &HazardFamily::constant(),
            &w,
            (0.0, 3.0),
            &FitOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::EmptyWindow { .. }));
    }

    #[test]
    fn constant_sandwich_on_d3() {
        let fam = HazardFamily::constant();
        let s = sandwich(&d3(), &fam, &Weight::Unit, (0.0, 3.0), &[0.5]).unwrap();
        assert!((s.j_hat[(0, 0)] - 4.0).abs() < 1e-12);
        let end = s.e_path.evaluate(3.0);
        assert!(end[0].abs() < 1e-12);
        assert_eq!(s.e_path.evaluate(0.0), vec![0.0]);
    }

    #[test]
    fn profile_and_newton_agree() {
        let law = SimulationLaw {
            true_hazard: HazardFn::Gompertz { a: 0.5, beta: 0.6 },
            censoring: Some(HazardFn::Constant { rate: 0.2 }),
            horizon: 3.0,
            seed: 3,
        };
        let sample = law.simulate(800).unwrap();
        for fam in [HazardFamily::gompertz(), HazardFamily::weibull(), HazardFamily::frailty()] {
            let w = Weight::kernel(&Kernel::epanechnikov(), 1.5, 1.2);
            let local = fam.localize(1.5);
            let a = fit_weighted_mle(&sample, &local, &w, (0.0, 3.0), &FitOptions::default()).unwrap();
            let opts = FitOptions {
                method: FitMethod::Newton,
                ..FitOptions::default()
            };
            let b = fit_weighted_mle(&sample, &local, &w, (0.0, 3.0), &opts).unwrap();
            assert!(a.converged && b.converged, "{} {a:?} {b:?}", fam.name());
            for (x, y) in a.theta_hat.iter().zip(&b.theta_hat) {
                assert!((x - y).abs() < 1e-6 * (1.0 + x.abs()), "{}: {a:?} vs {b:?}", fam.name());
            }
        }
    }

    #[test]
    fn gompertz_reparametrization_consistent() {
        let fam = HazardFamily::gompertz();
        let local = fam.localize(1.3);
        let global = [0.7, 0.4];
        let theta = local.from_global(&global);
        assert!((theta[0] - 0.7 * (0.4f64 * 1.3).exp()).abs() < 1e-14);
        for t in [0.0, 0.5, 2.0] {
            assert!((fam.hazard(t, &global) - local.hazard(t, &theta)).abs() < 1e-14);
        }
    }

    #[test]
    fn frailty_holds_at_zero_when_hazard_increases() {
        let law = SimulationLaw {
            true_hazard: HazardFn::Gompertz { a: 0.5, beta: 1.0 },
            censoring: None,
            horizon: 2.0,
            seed: 9,
        };
        let sample = law.simulate(2000).unwrap();
        let fit = fit_weighted_mle(
            &sample,
            &HazardFamily::frailty(),
            &Weight::Unit,
            (0.0, 2.0),
            &FitOptions::default(),
        )
        .unwrap();
        assert_eq!(fit.theta_hat[1], 0.0);
        assert!(fit.converged);
        assert_eq!(fit.warnings.len(), 1);
        let expected = sample.event_count(0.0, 2.0).unwrap() as f64
            / sample.exposure(&Weight::Unit, 0.0, 2.0).unwrap();
        assert!((fit.theta_hat[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn cumulative_matches_quadrature() {
        for fam in [HazardFamily::gompertz(), HazardFamily::weibull(), HazardFamily::frailty()] {
            let local = fam.localize(0.8);
            let theta = [1.3, 0.7];
            let q = quad::adaptive(|u| local.hazard(u, &theta), 0.0, 2.0, 1e-12).unwrap();
            assert!((local.cumulative(2.0, &theta).unwrap() - q).abs() < 1e-9, "{}", fam.name());
        }
    }
}
