//! Censored samples, counting and at-risk processes, ingestion and simulation.

use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::kernels::Kernel;
use crate::quad;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub time: f64,
    /// 1 for an observed failure, 0 for a censored time.
    pub status: u8,
}

impl Observation {
    pub fn new(time: f64, failed: bool) -> Self {
        Self {
            time,
            status: failed as u8,
        }
    }

    #[inline]
    pub fn is_failure(&self) -> bool {
        self.status == 1
    }
}

/// A sorted sample `(x_i, delta_i)` observed on `[0, T]`.
///
/// `Y(t) = #{x_i >= t}` is left-continuous; `N` counts failures over
/// half-open intervals `(a, b]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SampleRecord", into = "SampleRecord")]
pub struct SurvivalSample {
    observations: Vec<Observation>,
    times: Vec<f64>,
    /// `failures_before[i]` = failures among the first `i` observations.
    failures_before: Vec<usize>,
    horizon: f64,
}

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    horizon: f64,
    observations: Vec<Observation>,
}

impl TryFrom<SampleRecord> for SurvivalSample {
    type Error = Error;
    fn try_from(r: SampleRecord) -> Result<Self> {
        SurvivalSample::new(r.observations, Some(r.horizon))
    }
}

impl From<SurvivalSample> for SampleRecord {
    fn from(s: SurvivalSample) -> Self {
        SampleRecord {
            horizon: s.horizon,
            observations: s.observations,
        }
    }
}

/// A piece `(lo, hi]` of the time axis on which `Y` is constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskPiece {
    pub lo: f64,
    pub hi: f64,
    pub at_risk: usize,
}

/// A quadrature node for `∫ g(t) Y(t) f(t) dt`: `weight` already contains
/// the rule weight, `g(t)` and `Y(t)`. Nodes come in cells of
/// [`quad::GL8_LEN`] sharing `cell_lo` and `cell_hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub t: f64,
    pub weight: f64,
    pub at_risk: f64,
    pub cell_lo: f64,
    pub cell_hi: f64,
}

impl SurvivalSample {
    /// Builds a sample, sorting by time. The horizon defaults to the largest time.
    pub fn new(mut observations: Vec<Observation>, horizon: Option<f64>) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::EmptyInput("sample has no observations".into()));
        }
        for (i, o) in observations.iter().enumerate() {
            if !o.time.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "observation {i} has non-finite time"
                )));
            }
            if o.time < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "observation {i} has negative time {}",
                    o.time
                )));
            }
            if o.status > 1 {
                return Err(Error::InvalidArgument(format!(
                    "observation {i} has status {}, expected 0 or 1",
                    o.status
                )));
            }
        }
        observations.sort_by(|a, b| a.time.total_cmp(&b.time));
        let max_time = observations.last().map(|o| o.time).unwrap_or(0.0);
        let horizon = horizon.unwrap_or(max_time);
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if max_time > horizon {
            return Err(Error::InvalidArgument(format!(
                "time {max_time} exceeds horizon {horizon}"
            )));
        }
        let times = observations.iter().map(|o| o.time).collect();
        let mut failures_before = Vec::with_capacity(observations.len() + 1);
        failures_before.push(0);
        let mut acc = 0;
        for o in &observations {
            acc += o.status as usize;
            failures_before.push(acc);
        }
        Ok(Self {
            observations,
            times,
            failures_before,
            horizon,
        })
    }

    /// Convenience constructor from `(time, status)` pairs.
    pub fn from_pairs(pairs: &[(f64, u8)], horizon: Option<f64>) -> Result<Self> {
        let obs = pairs
            .iter()
            .map(|&(time, status)| Observation { time, status })
            .collect();
        Self::new(obs, horizon)
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn max_time(&self) -> f64 {
        *self.times.last().expect("sample is nonempty")
    }

    pub fn n_failures(&self) -> usize {
        *self.failures_before.last().unwrap()
    }

    /// Failure times in ascending order, repeated for ties.
    pub fn failure_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.observations
            .iter()
            .filter(|o| o.is_failure())
            .map(|o| o.time)
    }

    /// `Y(t)`, the number of observations with time `>= t`.
    pub fn at_risk(&self, t: f64) -> usize {
        self.len() - self.times.partition_point(|&x| x < t)
    }

    /// `N(b) - N(a)`: failures with time in `(a, b]`.
    pub fn event_count(&self, a: f64, b: f64) -> Result<usize> {
        if a > b {
            return Err(Error::InvalidArgument(format!(
                "interval start {a} exceeds end {b}"
            )));
        }
        Ok(self.events_in(a, b))
    }

    pub(crate) fn events_in(&self, a: f64, b: f64) -> usize {
        let lo = self.times.partition_point(|&x| x <= a);
        let hi = self.times.partition_point(|&x| x <= b);
        self.failures_before[hi.max(lo)] - self.failures_before[lo]
    }

    /// Indices of observations with time in `(a, b]`.
    pub(crate) fn index_range(&self, a: f64, b: f64) -> std::ops::Range<usize> {
        let lo = self.times.partition_point(|&x| x <= a);
        let hi = self.times.partition_point(|&x| x <= b);
        lo..hi.max(lo)
    }

    /// Maximal pieces of `[lo, hi]` with constant, positive `Y`.
    pub fn risk_pieces(&self, lo: f64, hi: f64) -> Vec<RiskPiece> {
        let mut pieces = Vec::new();
        if !(hi > lo) {
            return pieces;
        }
        let mut idx = self.times.partition_point(|&x| x <= lo);
        let mut left = lo;
        while left < hi && idx < self.len() {
            let right = self.times[idx].min(hi);
            if right > left {
                pieces.push(RiskPiece {
                    lo: left,
                    hi: right,
                    at_risk: self.len() - idx,
                });
            }
            left = right;
            while idx < self.len() && self.times[idx] <= left {
                idx += 1;
            }
        }
        pieces
    }

    /// Quadrature nodes for integrals `∫_a^b w(t) Y(t) f(t) dt` with smooth `f`.
    ///
    /// Each constant-`Y` piece, clipped to the weight's support, gets an
    /// 8-point Gauss–Legendre rule; long pieces are split so no cell exceeds
    /// 1/64 of the interval. With `graded_origin`, a piece starting at zero
    /// is refined geometrically to handle integrable singularities at `t = 0`.
    pub fn nodes(&self, weight: &Weight, a: f64, b: f64, graded_origin: bool) -> Vec<Node> {
        let (lo, hi) = weight.clip(a, b);
        let mut out = Vec::new();
        if !(hi > lo) {
            return out;
        }
        let max_cell = (hi - lo) / 64.0;
        let mut push_cell = |u: f64, v: f64, y: f64| {
            for (t, w) in quad::gl8_nodes(u, v) {
                out.push(Node {
                    t,
                    weight: w * weight.value(t) * y,
                    at_risk: y,
                    cell_lo: u,
                    cell_hi: v,
                });
            }
        };
        for p in self.risk_pieces(lo, hi) {
            let y = p.at_risk as f64;
            let mut start = p.lo;
            if graded_origin && p.lo == 0.0 {
                let first = (p.hi - p.lo).min(max_cell);
                let edges: Vec<f64> = (0..=40).map(|k| first * 0.5f64.powi(40 - k)).collect();
                push_cell(0.0, edges[0], y);
                for e in edges.windows(2) {
                    push_cell(e[0], e[1], y);
                }
                start = first;
            }
            let len = p.hi - start;
            if len <= 0.0 {
                continue;
            }
            let cells = (len / max_cell).ceil().max(1.0) as usize;
            let step = len / cells as f64;
            for k in 0..cells {
                let u = start + k as f64 * step;
                let v = if k + 1 == cells { p.hi } else { u + step };
                push_cell(u, v, y);
            }
        }
        out
    }

    /// `∫_a^b w(t) Y(t) dt`: exact for polynomial weights, adaptive otherwise.
    pub fn exposure(&self, weight: &Weight, a: f64, b: f64) -> Result<f64> {
        if a > b {
            return Err(Error::InvalidArgument(format!(
                "interval start {a} exceeds end {b}"
            )));
        }
        let (lo, hi) = weight.clip(a, b);
        let mut total = 0.0;
        for p in self.risk_pieces(lo, hi) {
            let piece = if weight.is_polynomial() {
                quad::gauss_legendre(|t| weight.value(t), p.lo, p.hi)
            } else {
                quad::adaptive(|t| weight.value(t), p.lo, p.hi, 1e-12)?
            };
            total += p.at_risk as f64 * piece;
        }
        Ok(total)
    }

    /// Returns a copy with all times (and the horizon) multiplied by `c > 0`.
    pub fn rescaled(&self, c: f64) -> Result<Self> {
        let obs = self
            .observations
            .iter()
            .map(|o| Observation {
                time: o.time * c,
                status: o.status,
            })
            .collect();
        Self::new(obs, Some(self.horizon * c))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Weight function `g(t)` used in weighted likelihoods and exposures.
#[derive(Clone)]
pub enum Weight {
    Unit,
    /// `K((t - center) / bandwidth)`, supported on `center ± bandwidth / 2`.
    Kernel {
        kernel: Kernel,
        center: f64,
        bandwidth: f64,
    },
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for Weight {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.describe())
    }
}

impl Weight {
    pub fn kernel(kernel: &Kernel, center: f64, bandwidth: f64) -> Self {
        Weight::Kernel {
            kernel: kernel.clone(),
            center,
            bandwidth,
        }
    }

    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        match self {
            Weight::Unit => 1.0,
            Weight::Kernel {
                kernel,
                center,
                bandwidth,
            } => kernel.evaluate((t - center) / bandwidth),
            Weight::Custom(f) => f(t),
        }
    }

    /// `[a, b]` intersected with the support of the weight.
    pub fn clip(&self, a: f64, b: f64) -> (f64, f64) {
        match self {
            Weight::Kernel {
                center, bandwidth, ..
            } => (
                a.max(center - 0.5 * bandwidth),
                b.min(center + 0.5 * bandwidth),
            ),
            _ => (a, b),
        }
    }

    pub fn is_polynomial(&self) -> bool {
        match self {
            Weight::Unit => true,
            Weight::Kernel { kernel, .. } => kernel.degree() <= 15,
            Weight::Custom(_) => false,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Weight::Unit => "unit".into(),
            Weight::Kernel {
                kernel,
                center,
                bandwidth,
            } => format!("{} kernel at s={center}, h={bandwidth}", kernel.name()),
            Weight::Custom(_) => "custom".into(),
        }
    }
}

/// Column names and horizon override for [`ingest_csv`].
#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub time_column: String,
    pub status_column: String,
    pub horizon: Option<f64>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            time_column: "time".into(),
            status_column: "status".into(),
            horizon: None,
        }
    }
}

/// Reads a headed CSV file; lines starting with `#` are skipped.
pub fn ingest_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<SurvivalSample> {
    let file = std::fs::File::open(path.as_ref())?;
    ingest_reader(file, options)
}

pub fn ingest_reader<R: std::io::Read>(reader: R, options: &CsvOptions) -> Result<SurvivalSample> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let ti = column(&options.time_column)?;
    let si = column(&options.status_column)?;
    let mut obs = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |i: usize| {
            record.get(i).ok_or_else(|| Error::MalformedRow {
                line,
                reason: format!("missing field {}", i + 1),
            })
        };
        let raw_time = field(ti)?;
        let time: f64 = raw_time.parse().map_err(|_| Error::MalformedRow {
            line,
            reason: format!("cannot parse time `{raw_time}`"),
        })?;
        if !time.is_finite() {
            return Err(Error::MalformedRow {
                line,
                reason: format!("non-finite time `{raw_time}`"),
            });
        }
        if time < 0.0 {
            return Err(Error::NegativeTime { line });
        }
        let status = match field(si)? {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::MalformedRow {
                    line,
                    reason: format!("status must be 0 or 1, got `{other}`"),
                })
            }
        };
        obs.push(Observation { time, status });
    }
    if obs.is_empty() {
        return Err(Error::EmptyInput("no data rows".into()));
    }
    SurvivalSample::new(obs, options.horizon)
}

/// Known hazard functions used as simulation truths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HazardFn {
    Constant { rate: f64 },
    /// `Σ c_k t^k`.
    Polynomial { coefficients: Vec<f64> },
    /// `a e^{beta t}`.
    Gompertz { a: f64, beta: f64 },
    /// `a + b e^{c t}`.
    GompertzMakeham { a: f64, b: f64, c: f64 },
    /// `a b t^{b-1}`, cumulative `a t^b`.
    Weibull { a: f64, b: f64 },
    /// `a / (1 + beta t)`.
    Frailty { a: f64, beta: f64 },
    /// `rates[j]` on `[breaks[j-1], breaks[j])`.
    Piecewise { breaks: Vec<f64>, rates: Vec<f64> },
}

fn poly(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * t + a)
}

impl HazardFn {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            HazardFn::Constant { rate } => *rate,
            HazardFn::Polynomial { coefficients } => poly(coefficients, t),
            HazardFn::Gompertz { a, beta } => a * (beta * t).exp(),
            HazardFn::GompertzMakeham { a, b, c } => a + b * (c * t).exp(),
            HazardFn::Weibull { a, b } => a * b * t.powf(b - 1.0),
            HazardFn::Frailty { a, beta } => a / (1.0 + beta * t),
            HazardFn::Piecewise { breaks, rates } => rates[breaks.partition_point(|&b| b <= t)],
        }
    }

    pub fn d1(&self, t: f64) -> f64 {
        match self {
            HazardFn::Constant { .. } | HazardFn::Piecewise { .. } => 0.0,
            HazardFn::Polynomial { coefficients } => {
                let d: Vec<f64> = coefficients
                    .iter()
                    .enumerate()
                    .skip(1)
                    .map(|(k, c)| k as f64 * c)
                    .collect();
                poly(&d, t)
            }
            HazardFn::Gompertz { a, beta } => a * beta * (beta * t).exp(),
            HazardFn::GompertzMakeham { b, c, .. } => b * c * (c * t).exp(),
            HazardFn::Weibull { a, b } => a * b * (b - 1.0) * t.powf(b - 2.0),
            HazardFn::Frailty { a, beta } => -a * beta / (1.0 + beta * t).powi(2),
        }
    }

    pub fn d2(&self, t: f64) -> f64 {
        match self {
            HazardFn::Constant { .. } | HazardFn::Piecewise { .. } => 0.0,
            HazardFn::Polynomial { coefficients } => {
                let d: Vec<f64> = coefficients
                    .iter()
                    .enumerate()
                    .skip(2)
                    .map(|(k, c)| (k * (k - 1)) as f64 * c)
                    .collect();
                poly(&d, t)
            }
            HazardFn::Gompertz { a, beta } => a * beta * beta * (beta * t).exp(),
            HazardFn::GompertzMakeham { b, c, .. } => b * c * c * (c * t).exp(),
            HazardFn::Weibull { a, b } => a * b * (b - 1.0) * (b - 2.0) * t.powf(b - 3.0),
            HazardFn::Frailty { a, beta } => 2.0 * a * beta * beta / (1.0 + beta * t).powi(3),
        }
    }

    /// `A(t) = ∫_0^t α`.
    pub fn cumulative(&self, t: f64) -> f64 {
        match self {
            HazardFn::Constant { rate } => rate * t,
            HazardFn::Polynomial { coefficients } => coefficients
                .iter()
                .enumerate()
                .map(|(k, c)| c * t.powi(k as i32 + 1) / (k as f64 + 1.0))
                .sum(),
            HazardFn::Gompertz { a, beta } => {
                if *beta == 0.0 {
                    a * t
                } else {
                    a * (beta * t).exp_m1() / beta
                }
            }
            HazardFn::GompertzMakeham { a, b, c } => {
                let tail = if *c == 0.0 { b * t } else { b * (c * t).exp_m1() / c };
                a * t + tail
            }
            HazardFn::Weibull { a, b } => a * t.powf(*b),
            HazardFn::Frailty { a, beta } => {
                if *beta == 0.0 {
                    a * t
                } else {
                    a * (beta * t).ln_1p() / beta
                }
            }
            HazardFn::Piecewise { breaks, rates } => {
                let mut acc = 0.0;
                let mut left = 0.0;
                for (j, &b) in breaks.iter().enumerate() {
                    if t <= b {
                        return acc + rates[j] * (t - left);
                    }
                    acc += rates[j] * (b - left);
                    left = b;
                }
                acc + rates[breaks.len()] * (t - left)
            }
        }
    }

    /// Checks positivity on `(0, horizon]` and integrability on `[0, horizon]`.
    pub fn validate(&self, horizon: f64) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        match self {
            HazardFn::Weibull { a, b } if !(*a > 0.0 && *b > 0.0) => {
                return Err(Error::NonIntegrableHazard { horizon })
            }
            HazardFn::Frailty { beta, .. } if *beta < 0.0 && beta * horizon <= -1.0 => {
                return Err(Error::NonIntegrableHazard { horizon })
            }
            HazardFn::Piecewise { breaks, rates } => {
                if rates.len() != breaks.len() + 1 {
                    return bad("piecewise hazard needs one more rate than breaks".into());
                }
                if breaks.windows(2).any(|w| w[0] >= w[1]) {
                    return bad("piecewise breaks must be increasing".into());
                }
            }
            _ => {}
        }
        for i in 1..=1000 {
            let t = horizon * i as f64 / 1000.0;
            let v = self.value(t);
            if !v.is_finite() || v <= 0.0 {
                return bad(format!("hazard is not positive at t = {t}"));
            }
        }
        let total = self.cumulative(horizon);
        if !total.is_finite() {
            return Err(Error::NonIntegrableHazard { horizon });
        }
        Ok(())
    }

    /// Smallest `t` in `[0, horizon]` with `A(t) = target`, or `None` when
    /// `A(horizon) < target`. Safeguarded Newton on the cumulative hazard.
    pub fn invert_cumulative(&self, target: f64, horizon: f64) -> Option<f64> {
        if self.cumulative(horizon) < target {
            return None;
        }
        let (mut lo, mut hi) = (0.0, horizon);
        let mut t = 0.5 * (lo + hi);
        for _ in 0..200 {
            let g = self.cumulative(t) - target;
            if g.abs() <= 1e-10 {
                return Some(t);
            }
            if g > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let slope = self.value(t);
            let newton = t - g / slope;
            t = if slope > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo < 1e-15 * horizon.max(1.0) {
                break;
            }
        }
        Some(t)
    }
}

/// Truth and censoring mechanism for simulated samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationLaw {
    pub true_hazard: HazardFn,
    /// Hazard of the censoring distribution; `None` means no censoring.
    pub censoring: Option<HazardFn>,
    pub horizon: f64,
    pub seed: u64,
}

impl SimulationLaw {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::InvalidArgument("horizon must be positive".into()));
        }
        self.true_hazard.validate(self.horizon)?;
        if let Some(c) = &self.censoring {
            c.validate(self.horizon)?;
        }
        Ok(())
    }

    /// Draws `n` observations. Failure wins when failure and censoring coincide;
    /// individuals surviving both past the horizon are recorded as `(T, 0)`.
    pub fn simulate(&self, n: usize) -> Result<SurvivalSample> {
        if n == 0 {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let t_max = self.horizon;
        let mut obs = Vec::with_capacity(n);
        for _ in 0..n {
            let e: f64 = Exp1.sample(&mut rng);
            let x0 = self.true_hazard.invert_cumulative(e, t_max);
            let c = match &self.censoring {
                Some(h) => {
                    let e: f64 = Exp1.sample(&mut rng);
                    h.invert_cumulative(e, t_max)
                }
                None => None,
            };
            let o = match (x0, c) {
                (Some(x), Some(c)) if x <= c => Observation::new(x, true),
                (Some(_), Some(c)) => Observation::new(c, false),
                (Some(x), None) => Observation::new(x, true),
                (None, Some(c)) => Observation::new(c, false),
                (None, None) => Observation::new(t_max, false),
            };
            obs.push(o);
        }
        SurvivalSample::new(obs, Some(t_max))
    }

    /// The same law with seed replaced by the `index`-th replicate seed.
    pub fn replicate(&self, index: u64) -> Self {
        Self {
            seed: replicate_seed(self.seed, index),
            ..self.clone()
        }
    }

    /// `y(s) = P(X >= s) = exp{-A(s) - A_C(s)}` for `s < T`.
    pub fn at_risk_probability(&self, s: f64) -> f64 {
        let ac = self.censoring.as_ref().map_or(0.0, |c| c.cumulative(s));
        (-self.true_hazard.cumulative(s) - ac).exp()
    }

    /// `y'(s) / y(s) = -α(s) - α_C(s)`.
    pub fn at_risk_log_derivative(&self, s: f64) -> f64 {
        let ac = self.censoring.as_ref().map_or(0.0, |c| c.value(s));
        -self.true_hazard.value(s) - ac
    }
}

/// SplitMix64 finaliser.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replicate `index` derived from `base`: `splitmix64(base + index)`.
pub fn replicate_seed(base: u64, index: u64) -> u64 {
    splitmix64(base.wrapping_add(index))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d3() -> SurvivalSample {
        SurvivalSample::from_pairs(&[(1.0, 1), (2.0, 1), (3.0, 1)], None).unwrap()
    }

    fn d4() -> SurvivalSample {
        SurvivalSample::from_pairs(&[(1.0, 1), (2.0, 0), (3.0, 1), (4.0, 0)], None).unwrap()
    }

    #[test]
    fn at_risk_examples() {
        let s = d3();
        assert_eq!(s.at_risk(1.0), 3);
        assert_eq!(s.at_risk(2.5), 1);
        assert_eq!(s.at_risk(0.0), 3);
        assert_eq!(s.at_risk(3.5), 0);
    }

    #[test]
    fn event_count_examples() {
        assert_eq!(d3().event_count(0.0, 3.0).unwrap(), 3);
        assert_eq!(d3().event_count(1.0, 3.0).unwrap(), 2);
        assert_eq!(d4().event_count(0.0, 4.0).unwrap(), 2);
        assert!(d3().event_count(2.0, 1.0).is_err());
    }

    #[test]
    fn exposure_examples() {
        let s = d3();
        assert_eq!(s.exposure(&Weight::Unit, 0.0, 3.0).unwrap(), 6.0);
        assert_eq!(s.exposure(&Weight::Unit, 1.0, 3.0).unwrap(), 3.0);
        assert_eq!(s.exposure(&Weight::Unit, 3.0, 4.0).unwrap(), 0.0);
    }

    #[test]
    fn exposure_with_custom_weight_uses_adaptive_quadrature() {
        let w = Weight::Custom(Arc::new(|t: f64| t.sqrt()));
        // ∫_0^3 sqrt(t) Y(t) dt with Y = 3, 2, 1 on the unit pieces.
        let expected =
            2.0 / 3.0 * (3.0 + 2.0 * (2f64.powf(1.5) - 1.0) + (3f64.powf(1.5) - 2f64.powf(1.5)));
        let got = d3().exposure(&w, 0.0, 3.0).unwrap();
        assert!((got - expected).abs() < 1e-10);
    }

    #[test]
    fn nodes_integrate_exposure() {
        let s = d4();
        let k = Kernel::epanechnikov();
        let w = Weight::kernel(&k, 2.2, 2.0);
        let via_nodes: f64 = s.nodes(&w, 0.0, 4.0, false).iter().map(|n| n.weight).sum();
        assert!((via_nodes - s.exposure(&w, 0.0, 4.0).unwrap()).abs() < 1e-13);
        let graded: f64 = s.nodes(&Weight::Unit, 0.0, 4.0, true).iter().map(|n| n.weight).sum();
        assert!((graded - 10.0).abs() < 1e-12);
    }

    #[test]
    fn csv_sorting_and_errors() {
        let s = ingest_reader("time,status\n1,1\n3,1\n2,0\n".as_bytes(), &CsvOptions::default())
            .unwrap();
        assert_eq!(s.times(), &[1.0, 2.0, 3.0]);
        assert_eq!(s.observations()[1].status, 0);
        assert_eq!(s.horizon(), 3.0);

        let err = ingest_reader("time,status\n1,1\n-1,1\n".as_bytes(), &CsvOptions::default())
            .unwrap_err();
        assert_eq!(err.to_string(), "negative time at line 3");
        assert!(matches!(
            ingest_reader("time,status\n".as_bytes(), &CsvOptions::default()),
            Err(Error::EmptyInput(_))
        ));
        assert!(matches!(
            ingest_reader("time,status\n1,x\n".as_bytes(), &CsvOptions::default()),
            Err(Error::MalformedRow { line: 2, .. })
        ));
        assert!(matches!(
            ingest_reader("t,d\n1,1\n".as_bytes(), &CsvOptions::default()),
            Err(Error::MissingColumn(_))
        ));
    }

    #[test]
    fn csv_custom_columns_and_comments() {
        let opts = CsvOptions {
            time_column: "t".into(),
            status_column: "d".into(),
            horizon: Some(10.0),
        };
        let s = ingest_reader("# provenance\nd,t\n1,1.5\n0,4\n".as_bytes(), &opts).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.horizon(), 10.0);
        assert_eq!(s.n_failures(), 1);
    }

    #[test]
    fn json_round_trip() {
        let s = d4();
        let back = SurvivalSample::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
        assert!(SurvivalSample::from_json(r#"{"horizon":1.0,"observations":[]}"#).is_err());
    }

    #[test]
    fn simulation_is_deterministic_and_uncensored() {
        let law = SimulationLaw {
            true_hazard: HazardFn::Constant { rate: 1.0 },
            censoring: None,
            horizon: 3.0,
            seed: 7,
        };
        let a = law.simulate(500).unwrap();
        let b = law.simulate(500).unwrap();
        assert_eq!(a, b);
        // Only individuals reaching the horizon are censored.
        assert!(a
            .observations()
            .iter()
            .all(|o| o.is_failure() || o.time == 3.0));
        assert_ne!(law.replicate(1).simulate(500).unwrap(), a);
    }

    #[test]
    fn truncated_exponential_mean() {
        let law = SimulationLaw {
            true_hazard: HazardFn::Constant { rate: 1.0 },
            censoring: None,
            horizon: 10.0,
            seed: 11,
        };
        let s = law.simulate(100_000).unwrap();
        let mean = s.times().iter().sum::<f64>() / s.len() as f64;
        let expected = 1.0 - (-10f64).exp();
        assert!((mean - expected).abs() < 0.02, "{mean}");
    }

    #[test]
    fn non_integrable_hazard_rejected() {
        let law = SimulationLaw {
            true_hazard: HazardFn::Weibull { a: 1.0, b: -0.5 },
            censoring: None,
            horizon: 1.0,
            seed: 0,
        };
        assert!(matches!(
            law.simulate(10),
            Err(Error::NonIntegrableHazard { .. })
        ));
    }

    #[test]
    fn cumulative_matches_quadrature() {
        let cases = [
            HazardFn::Polynomial {
                coefficients: vec![1.0, 0.0, 1.0],
            },
            HazardFn::Gompertz { a: 0.5, beta: 0.7 },
            HazardFn::GompertzMakeham {
                a: 0.3,
                b: 0.2,
                c: 1.1,
            },
            HazardFn::Weibull { a: 1.3, b: 1.7 },
            HazardFn::Frailty { a: 2.0, beta: 0.8 },
            HazardFn::Piecewise {
                breaks: vec![0.5, 1.2],
                rates: vec![1.0, 3.0, 0.5],
            },
        ];
        for h in cases {
            let q = [0.0, 0.5, 1.2, 2.0]
                .windows(2)
                .map(|w| quad::adaptive(|t| h.value(t), w[0], w[1], 1e-12).unwrap())
                .sum::<f64>();
            assert!((q - h.cumulative(2.0)).abs() < 1e-9, "{h:?}");
            let t = h.invert_cumulative(0.9, 2.0).unwrap();
            assert!((h.cumulative(t) - 0.9).abs() <= 1e-10);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let cases = [
            HazardFn::Polynomial {
                coefficients: vec![1.0, 0.5, 1.0],
            },
            HazardFn::Gompertz { a: 0.5, beta: 0.7 },
            HazardFn::Weibull { a: 1.3, b: 2.7 },
            HazardFn::Frailty { a: 2.0, beta: 0.8 },
        ];
        let e = 1e-5;
        for h in cases {
            let t = 0.9;
            let d1 = (h.value(t + e) - h.value(t - e)) / (2.0 * e);
            let d2 = (h.d1(t + e) - h.d1(t - e)) / (2.0 * e);
            assert!((d1 - h.d1(t)).abs() < 1e-6, "{h:?}");
            assert!((d2 - h.d2(t)).abs() < 1e-6, "{h:?}");
        }
    }

    #[test]
    fn replicate_seeds_differ() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| replicate_seed(42, i)).collect();
        assert_eq!(seeds.len(), 1000);
    }
}
