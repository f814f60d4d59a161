//! Interval goodness-of-fit tests and the window selectors built on them.

use serde::{Deserialize, Serialize};

use crate::data::{SurvivalSample, Weight};
use crate::parametric::{fit_weighted_mle, FitOptions, FitResult, HazardFamily};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GofKind {
    /// Score-weighted sup statistic for one-parameter families.
    Ks1p,
    /// Sup statistic for local constants.
    KsConst,
    /// Sup statistic for product families, conservative.
    #[default]
    KsMulti,
    /// Cramér–von Mises type.
    Cvm,
    /// Mean absolute deviation type.
    L1,
}

impl GofKind {
    pub fn name(&self) -> &'static str {
        match self {
            GofKind::Ks1p => "ks_1p",
            GofKind::KsConst => "ks_const",
            GofKind::KsMulti => "ks_multi",
            GofKind::Cvm => "cvm",
            GofKind::L1 => "l1",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "ks_1p" => Ok(GofKind::Ks1p),
            "ks_const" => Ok(GofKind::KsConst),
            "ks_multi" | "ks" => Ok(GofKind::KsMulti),
            "cvm" => Ok(GofKind::Cvm),
            "l1" => Ok(GofKind::L1),
            other => Err(Error::InvalidArgument(format!("unknown statistic `{other}`"))),
        }
    }

    /// Upper quantile of the limiting Brownian-bridge functional.
    pub fn threshold(&self, level: Level) -> f64 {
        match (self, level) {
            (GofKind::Cvm, Level::Ten) => 0.347,
            (GofKind::Cvm, Level::Five) => 0.461,
            (GofKind::L1, Level::Ten) => 0.499,
            (GofKind::L1, Level::Five) => 0.582,
            (_, Level::Ten) => 1.225,
            (_, Level::Five) => 1.359,
        }
    }
}

/// The two tabulated significance levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Level {
    #[default]
    #[serde(rename = "0.10")]
    Ten,
    #[serde(rename = "0.05")]
    Five,
}

impl Level {
    pub fn from_f64(x: f64) -> Result<Self> {
        if (x - 0.10).abs() < 1e-12 {
            Ok(Level::Ten)
        } else if (x - 0.05).abs() < 1e-12 {
            Ok(Level::Five)
        } else {
            Err(Error::InvalidArgument(
                "level must be 0.10 or 0.05".into(),
            ))
        }
    }

    pub fn value(&self) -> f64 {
        match self {
            Level::Ten => 0.10,
            Level::Five => 0.05,
        }
    }
}

/// The process `N(a, t] - ∫_a^t Y α̂` on `[a, b]`, at `a`, every failure
/// time `x` and its left limit `x-`, and at `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnPath {
    pub interval: (f64, f64),
    pub eval_points: Vec<f64>,
    /// Unnormalized values `N(a, t] - ∫_a^t Y α̂`.
    pub counting: Vec<f64>,
    /// Number of failures at each point that is a failure time (0 at left limits).
    pub failures_at: Vec<usize>,
    /// `τ̂²(b)`.
    pub tau2_hat: f64,
    pub n_ab: usize,
    pub n: usize,
    pub dim: usize,
    /// Fitted parameters on `[a, b]` in global form.
    pub theta_hat: Vec<f64>,
    /// Fitted level at the midpoint of `[a, b]`.
    pub level: f64,
}

impl DnPath {
    /// `D_n(t) = n^{-1/2} {N(a, t] - ∫_a^t Y α̂}`.
    pub fn values(&self) -> Vec<f64> {
        let scale = (self.n as f64).sqrt();
        self.counting.iter().map(|v| v / scale).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.counting.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Fits `family` on `[a, b]` and evaluates the goodness-of-fit path.
pub fn dn_path(sample: &SurvivalSample, family: &HazardFamily, interval: (f64, f64)) -> Result<DnPath> {
    let (a, b) = interval;
    if sample.events_in(a, b) == 0 {
        return Err(Error::NoEvents { a, b });
    }
    // Anchoring inside the interval keeps the compensator well conditioned
    // when the fitted shape is extreme.
    let local = family.localize(0.5 * (a + b));
    let fit = fit_weighted_mle(sample, &local, &Weight::Unit, (a, b), &FitOptions::default())?;
    if !fit.converged {
        return Err(Error::NonConvergence {
            iterations: fit.iterations,
            residual: fit.score_residual,
        });
    }
    path_from_fit(sample, &local, &fit)
}

fn path_from_fit(sample: &SurvivalSample, local: &HazardFamily, fit: &FitResult) -> Result<DnPath> {
    let (a, b) = fit.interval;
    let theta = &fit.theta_hat;
    let from_a = |t: f64| local.integral(a, t, theta);
    let times = sample.times();
    let obs = sample.observations();
    let first = times.partition_point(|&x| x <= a);
    // Compensator ∫_a^t Y α̂ = Σ_{x_j > a} ∫_a^{x_j ∧ t} α̂.
    let mut j = first;
    let mut settled = 0.0;
    let mut compensator = |t: f64| -> Result<f64> {
        while j < times.len() && times[j] < t {
            settled += from_a(times[j])?;
            j += 1;
        }
        Ok(settled + (times.len() - j) as f64 * from_a(t)?)
    };
    let mut eval_points = vec![a];
    let mut counting = vec![0.0];
    let mut failures_at = vec![0];
    let mut n_so_far = 0usize;
    let range = sample.index_range(a, b);
    let mut i = range.start;
    while i < range.end {
        let x = times[i];
        let mut d = 0;
        while i < range.end && times[i] == x {
            d += obs[i].status as usize;
            i += 1;
        }
        if d == 0 {
            continue;
        }
        let c = compensator(x)?;
        eval_points.push(x);
        counting.push(n_so_far as f64 - c);
        failures_at.push(0);
        n_so_far += d;
        eval_points.push(x);
        counting.push(n_so_far as f64 - c);
        failures_at.push(d);
    }
    if *eval_points.last().unwrap() < b {
        let c = compensator(b)?;
        eval_points.push(b);
        counting.push(n_so_far as f64 - c);
        failures_at.push(0);
    }
    let n = sample.len();
    let total = n_so_far as f64 - counting.last().unwrap();
    let dim = local.dim();
    let global = local.to_global(theta);
    // For product families ψ_1 = 1/θ, so ∫ Y ψ_1² α̂ = compensator / θ².
    let level = theta[0];
    let tau2_hat = if dim == 1 {
        total / (n as f64 * level * level)
    } else {
        total / n as f64
    };
    Ok(DnPath {
        interval: (a, b),
        eval_points,
        counting,
        failures_at,
        tau2_hat,
        n_ab: n_so_far,
        n,
        dim,
        theta_hat: global,
        level,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofDecision {
    pub statistic: f64,
    pub kind: GofKind,
    pub threshold: f64,
    pub level: Level,
    pub reject: bool,
}

/// Test statistic and decision; `threshold` overrides the tabulated value.
pub fn gof_statistic(path: &DnPath, kind: GofKind, level: Level, threshold: Option<f64>) -> Result<GofDecision> {
    if path.n_ab == 0 {
        let (a, b) = path.interval;
        return Err(Error::NoEvents { a, b });
    }
    let incompatible = || Error::IncompatibleStatistic {
        kind: kind.name().into(),
        dim: path.dim,
    };
    let n_ab = path.n_ab as f64;
    let statistic = match kind {
        GofKind::Ks1p => {
            if path.dim != 1 {
                return Err(incompatible());
            }
            let theta = path.level;
            let n = path.n as f64;
            (path.max_abs() / (theta * n.sqrt())) / path.tau2_hat.sqrt()
        }
        GofKind::KsConst => {
            if path.dim != 1 {
                return Err(incompatible());
            }
            path.max_abs() / n_ab.sqrt()
        }
        GofKind::KsMulti => path.max_abs() / n_ab.sqrt(),
        GofKind::Cvm => {
            let s: f64 = path
                .counting
                .iter()
                .zip(&path.failures_at)
                .map(|(v, &d)| d as f64 * v * v)
                .sum();
            s / (n_ab * n_ab)
        }
        GofKind::L1 => {
            let s: f64 = path
                .counting
                .iter()
                .zip(&path.failures_at)
                .map(|(v, &d)| d as f64 * v.abs())
                .sum();
            s / n_ab.powf(1.5)
        }
    };
    let threshold = threshold.unwrap_or_else(|| kind.threshold(level));
    Ok(GofDecision {
        statistic,
        kind,
        threshold,
        level,
        reject: statistic >= threshold,
    })
}

/// Settings shared by the window and startup searches.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchConfig {
    pub kind: GofKind,
    pub level: Level,
    pub threshold: Option<f64>,
    pub min_events: usize,
    /// Ratio of the geometric grid of window sizes.
    pub ratio: f64,
    /// `b0 = shrink * b_reject` for the startup interval.
    pub shrink: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            kind: GofKind::KsMulti,
            level: Level::Ten,
            threshold: None,
            min_events: 10,
            ratio: 1.15,
            shrink: 0.9,
        }
    }
}

fn test_interval(
    sample: &SurvivalSample,
    family: &HazardFamily,
    interval: (f64, f64),
    config: &SearchConfig,
) -> Result<GofDecision> {
    let path = dn_path(sample, family, interval)?;
    gof_statistic(&path, config.kind, config.level, config.threshold)
}

/// Outcome of [`expand_window`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowChoice {
    pub s: f64,
    pub h: f64,
    /// True when no window on the grid was rejected.
    pub full_range: bool,
    /// Statistic of the last accepted window, or of the rejecting one when
    /// even the smallest window is rejected.
    pub statistic_at_stop: f64,
    pub windows_tested: usize,
}

/// Smallest `h` such that `(s - h/2, s + h/2]` holds `min_events` failures.
pub fn min_bandwidth(sample: &SurvivalSample, s: f64, min_events: usize) -> Result<f64> {
    let t_max = sample.horizon();
    let mut d: Vec<f64> = sample
        .failure_times()
        .filter(|&x| x > 0.0 && x <= t_max)
        .map(|x| (x - s).abs())
        .collect();
    if d.len() < min_events.max(1) {
        return Err(Error::MinEventsUnreachable { min_events });
    }
    let k = min_events.max(1) - 1;
    d.select_nth_unstable_by(k, f64::total_cmp);
    let mut h = 2.0 * d[k];
    // Left endpoints are excluded; nudge until the count is reached.
    let mut bump = 1e-12 * (1.0 + h);
    while sample.events_in(s - 0.5 * h, s + 0.5 * h) < min_events {
        h += bump;
        bump *= 2.0;
    }
    Ok(h)
}

fn geometric_grid(start: f64, end: f64, ratio: f64) -> Vec<f64> {
    let mut grid = Vec::new();
    let mut h = start;
    while h < end {
        grid.push(h);
        h *= ratio;
    }
    grid.push(end);
    grid
}

/// Stretches `s ± h/2` until the model is rejected; returns the last accepted `h`.
pub fn expand_window(
    sample: &SurvivalSample,
    family: &HazardFamily,
    s: f64,
    config: &SearchConfig,
) -> Result<WindowChoice> {
    let t_max = sample.horizon();
    let h_min = min_bandwidth(sample, s, config.min_events)?;
    let h_full = 2.0 * s.max(t_max - s);
    let grid = geometric_grid(h_min, h_full.max(h_min), config.ratio);
    let mut last: Option<(f64, f64)> = None;
    for (k, &h) in grid.iter().enumerate() {
        let interval = ((s - 0.5 * h).max(0.0), (s + 0.5 * h).min(t_max));
        let decision = test_interval(sample, family, interval, config);
        let (reject, statistic) = match &decision {
            Ok(d) => (d.reject, d.statistic),
            Err(_) => (true, f64::NAN),
        };
        if reject {
            let (h, statistic) = last.unwrap_or((h, statistic));
            return Ok(WindowChoice {
                s,
                h,
                full_range: false,
                statistic_at_stop: statistic,
                windows_tested: k + 1,
            });
        }
        last = Some((h, statistic));
    }
    let (h, statistic) = last.expect("grid is nonempty");
    Ok(WindowChoice {
        s,
        h,
        full_range: true,
        statistic_at_stop: statistic,
        windows_tested: grid.len(),
    })
}

/// An interval at one end of `[0, T]` on which the model is accepted, and
/// the global-form fit on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeInterval {
    pub interval: (f64, f64),
    /// Where the model was first rejected, if anywhere.
    pub rejected_at: Option<f64>,
    pub theta: Vec<f64>,
}

/// Finds the smallest `b` with the model rejected on `[0, b]` and fits on
/// `[0, shrink * b]`; the whole range when nothing is rejected.
pub fn startup_interval(
    sample: &SurvivalSample,
    family: &HazardFamily,
    config: &SearchConfig,
) -> Result<EdgeInterval> {
    let t_max = sample.horizon();
    let failures: Vec<f64> = sample.failure_times().filter(|&x| x > 0.0).collect();
    if failures.len() < config.min_events.max(1) {
        return Err(Error::MinEventsUnreachable {
            min_events: config.min_events,
        });
    }
    let b_min = failures[config.min_events.max(1) - 1];
    edge_search(sample, family, config, b_min, t_max, |len| (0.0, len))
}

/// The mirror image of [`startup_interval`] at the right end: intervals `[a, T]`.
pub fn closing_interval(
    sample: &SurvivalSample,
    family: &HazardFamily,
    config: &SearchConfig,
) -> Result<EdgeInterval> {
    let t_max = sample.horizon();
    let failures: Vec<f64> = sample.failure_times().filter(|&x| x > 0.0).collect();
    let k = config.min_events.max(1);
    if failures.len() < k {
        return Err(Error::MinEventsUnreachable {
            min_events: config.min_events,
        });
    }
    // (a, T] must contain the k-th largest failure, so a lies strictly below it.
    let kth = failures[failures.len() - k];
    let len_min = (t_max - kth) * (1.0 + 1e-9) + 1e-12 * t_max;
    edge_search(sample, family, config, len_min, t_max, |len| {
        ((t_max - len).max(0.0), t_max)
    })
}

fn edge_search(
    sample: &SurvivalSample,
    family: &HazardFamily,
    config: &SearchConfig,
    len_min: f64,
    len_max: f64,
    interval_of: impl Fn(f64) -> (f64, f64),
) -> Result<EdgeInterval> {
    let grid = geometric_grid(len_min.min(len_max), len_max, config.ratio);
    let mut rejected_at = None;
    let mut chosen = len_max;
    for &len in &grid {
        let rejected = test_interval(sample, family, interval_of(len), config)
            .map(|d| d.reject)
            .unwrap_or(true);
        if rejected {
            rejected_at = Some(len);
            chosen = (config.shrink * len).max(len_min.min(len_max));
            break;
        }
    }
    let interval = interval_of(chosen);
    let fit = fit_weighted_mle(
        sample,
        &family.global(),
        &Weight::Unit,
        interval,
        &FitOptions::default(),
    )?;
    let rejected_at = rejected_at.map(|len| {
        let (a, b) = interval_of(len);
        if a == 0.0 {
            b
        } else {
            a
        }
    });
    Ok(EdgeInterval {
        interval,
        rejected_at,
        theta: fit.theta_hat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d3() -> SurvivalSample {
        SurvivalSample::from_pairs(&[(1.0, 1), (2.0, 1), (3.0, 1)], None).unwrap()
    }

    #[test]
    fn d3_path_by_hand() {
        let path = dn_path(&d3(), &HazardFamily::constant(), (0.0, 3.0)).unwrap();
        assert_eq!(path.eval_points, vec![0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let expected = [0.0, -1.5, -0.5, -1.5, -0.5, -1.0, 0.0];
        for (v, e) in path.counting.iter().zip(expected) {
            assert!((v - e).abs() < 1e-12, "{:?}", path.counting);
        }
        assert!((path.max_abs() - 1.5).abs() < 1e-12);
        let d = gof_statistic(&path, GofKind::KsConst, Level::Ten, None).unwrap();
        assert!((d.statistic - 1.5 / 3f64.sqrt()).abs() < 1e-12);
        assert!(!d.reject);
        let d5 = gof_statistic(&path, GofKind::KsConst, Level::Five, None).unwrap();
        assert_eq!(d5.threshold, 1.359);
        let p1 = gof_statistic(&path, GofKind::Ks1p, Level::Ten, None).unwrap();
        assert!((p1.statistic - d.statistic).abs() < 1e-12);
    }

    #[test]
    fn zero_path_gives_zero_cvm() {
        let mut path = dn_path(&d3(), &HazardFamily::constant(), (0.0, 3.0)).unwrap();
        path.counting.iter_mut().for_each(|v| *v = 0.0);
        let d = gof_statistic(&path, GofKind::Cvm, Level::Ten, None).unwrap();
        assert_eq!(d.statistic, 0.0);
        assert!(!d.reject);
    }

    #[test]
    fn incompatible_kinds() {
        let s = SurvivalSample::from_pairs(
            &[(0.5, 1), (1.0, 1), (1.5, 1), (2.0, 1), (2.6, 1), (3.0, 0)],
            None,
        )
        .unwrap();
        let path = dn_path(&s, &HazardFamily::gompertz(), (0.0, 3.0)).unwrap();
        assert!(gof_statistic(&path, GofKind::KsConst, Level::Ten, None).is_err());
        assert!(gof_statistic(&path, GofKind::Ks1p, Level::Ten, None).is_err());
        assert!(gof_statistic(&path, GofKind::KsMulti, Level::Ten, None).is_ok());
    }

    #[test]
    fn degenerate_interval_has_no_events() {
        assert!(matches!(
            dn_path(&d3(), &HazardFamily::constant(), (1.5, 1.5)),
            Err(Error::NoEvents { .. })
        ));
    }

    #[test]
    fn min_events_unreachable() {
        let s = SurvivalSample::from_pairs(&[(0.5, 1), (1.0, 1), (1.5, 1), (2.0, 1), (2.5, 1)], None)
            .unwrap();
        let cfg = SearchConfig::default();
        assert!(matches!(
            expand_window(&s, &HazardFamily::constant(), 1.0, &cfg),
            Err(Error::MinEventsUnreachable { min_events: 10 })
        ));
        assert!(startup_interval(&s, &HazardFamily::constant(), &cfg).is_err());
    }

    #[test]
    fn min_bandwidth_respects_half_open_windows() {
        let s = d3();
        let h = min_bandwidth(&s, 2.0, 3).unwrap();
        assert!(h > 2.0 && h < 2.0 + 1e-9);
        assert_eq!(s.events_in(2.0 - h / 2.0, 2.0 + h / 2.0), 3);
    }
}
