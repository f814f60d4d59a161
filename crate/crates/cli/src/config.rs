use std::path::PathBuf;

use dynhaz::bench::Experiment;
use dynhaz::data::SimulationLaw;
use dynhaz::gof::{GofKind, Level};
use dynhaz::kernels::Kernel;
use dynhaz::parametric::HazardFamily;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Estimate,
    GofScan,
    Simulate,
    Compare,
    Bandwidth,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Estimate => "estimate",
            Command::GofScan => "gof-scan",
            Command::Simulate => "simulate",
            Command::Compare => "compare",
            Command::Bandwidth => "bandwidth",
        }
    }

    fn needs_sample(self) -> bool {
        matches!(self, Command::Estimate | Command::GofScan | Command::Bandwidth)
    }
}

/// Everything a run needs. Every field is optional so that a config file and
/// the command-line flags can be merged field by field.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    /// Simulated input, used when `input` is absent.
    pub law: Option<SimulationLaw>,
    pub n: Option<usize>,
    pub horizon: Option<f64>,
    pub family: Option<String>,
    pub kernel: Option<String>,
    pub bandwidth: Option<String>,
    pub grid: Option<Vec<f64>>,
    pub grid_points: Option<usize>,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub level: Option<f64>,
    pub statistic: Option<String>,
    pub min_events: Option<usize>,
    pub boundary: Option<String>,
    pub experiment: Option<Experiment>,
    pub threads: Option<usize>,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($f:ident),*) => {
        RunConfig { $($f: $top.$f.clone().or_else(|| $base.$f.clone()),)* }
    };
}

impl RunConfig {
    /// Fields set in `flags` win.
    pub fn merged(file: &RunConfig, flags: &RunConfig) -> RunConfig {
        overlay!(file, flags; input, law, n, horizon, family, kernel, bandwidth, grid,
            grid_points, output, seed, level, statistic, min_events, boundary, experiment, threads)
    }

    pub fn family_name(&self) -> &str {
        self.family.as_deref().unwrap_or("constant")
    }

    pub fn kernel_name(&self) -> &str {
        self.kernel.as_deref().unwrap_or("epanechnikov")
    }

    pub fn level_value(&self) -> f64 {
        self.level.unwrap_or(0.10)
    }

    pub fn statistic_name(&self) -> &str {
        self.statistic.as_deref().unwrap_or("ks_multi")
    }

    /// Every violated field, in a fixed order.
    pub fn validate(&self, command: Command) -> Vec<String> {
        let mut v = Vec::new();
        if HazardFamily::from_name(self.family_name()).is_err() {
            v.push(format!("unknown family `{}`", self.family_name()));
        }
        if Kernel::from_name(self.kernel_name()).is_err() {
            v.push(format!("unknown kernel `{}`", self.kernel_name()));
        }
        if Level::from_f64(self.level_value()).is_err() {
            v.push("level must be 0.10 or 0.05".into());
        }
        if GofKind::from_name(self.statistic_name()).is_err() {
            v.push(format!("unknown statistic `{}`", self.statistic_name()));
        }
        match (command, self.bandwidth.as_deref()) {
            (Command::Estimate, None) => v.push("bandwidth is required".into()),
            (_, Some(spec)) => match BandwidthSpec::parse(spec) {
                Err(e) => v.push(e),
                Ok(BandwidthSpec::Gof) if command == Command::Bandwidth => {
                    v.push("the bandwidth command takes fixed, adaptive or plugin".into())
                }
                Ok(_) => {}
            },
            _ => {}
        }
        if let Some(b) = &self.boundary {
            if !matches!(b.as_str(), "truncate" | "half-width" | "gof") {
                v.push(format!("unknown boundary policy `{b}`"));
            }
        }
        if self.min_events == Some(0) {
            v.push("min_events must be at least 1".into());
        }
        if self.threads == Some(0) {
            v.push("threads must be at least 1".into());
        }
        if let Some(g) = &self.grid {
            if g.is_empty() {
                v.push("grid is empty".into());
            } else if g.iter().any(|s| !s.is_finite() || *s < 0.0) {
                v.push("grid points must be finite and nonnegative".into());
            } else if g.windows(2).any(|w| w[0] >= w[1]) {
                v.push("grid must be strictly increasing".into());
            }
        }
        if self.grid_points == Some(0) {
            v.push("grid_points must be at least 1".into());
        }
        if let Some(h) = self.horizon {
            if !(h > 0.0 && h.is_finite()) {
                v.push("horizon must be positive".into());
            }
        }
        if command.needs_sample() {
            match (&self.input, &self.law) {
                (Some(p), _) if !p.is_file() => v.push(format!("input `{}` does not exist", p.display())),
                (None, None) => v.push("input or law is required".into()),
                (None, Some(law)) => {
                    if let Err(e) = law.validate() {
                        v.push(format!("law: {e}"));
                    }
                    if self.n.unwrap_or(0) == 0 {
                        v.push("n is required with a simulated law".into());
                    }
                }
                _ => {}
            }
        } else {
            match &self.experiment {
                None => v.push("experiment is required".into()),
                Some(exp) => {
                    if let Err(e) = exp.validate() {
                        v.push(format!("experiment: {e}"));
                    }
                }
            }
        }
        if let (Some(i), Some(o)) = (&self.input, &self.output) {
            if i == o {
                v.push("output must differ from input".into());
            }
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthSpec {
    Fixed(f64),
    Adaptive(f64),
    Plugin,
    Gof,
}

impl BandwidthSpec {
    pub fn parse(spec: &str) -> Result<Self, String> {
        let positive = |x: &str| match x.trim().parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
            Ok(_) => Err("bandwidth must be positive".to_string()),
            Err(_) => Err(format!("cannot parse bandwidth `{spec}`")),
        };
        match spec.split_once(':') {
            Some(("fixed", x)) => positive(x).map(BandwidthSpec::Fixed),
            Some(("adaptive", x)) => positive(x).map(BandwidthSpec::Adaptive),
            None if spec == "plugin" => Ok(BandwidthSpec::Plugin),
            None if spec == "gof" => Ok(BandwidthSpec::Gof),
            _ => Err(format!(
                "bandwidth `{spec}` is not fixed:<h>, adaptive:<c>, plugin or gof"
            )),
        }
    }
}
