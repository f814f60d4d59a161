use std::path::PathBuf;

use dynhaz::bandwidth::{plugin_global_c, BandwidthPlan, PilotConfig, PluginWeight};
use dynhaz::bench::{compare_estimators, run_experiment, McReport, Ranking};
use dynhaz::data::{ingest_csv, CsvOptions, SurvivalSample};
use dynhaz::dynamic::{estimate_curve, BandwidthRule, BiasTag, BoundaryPolicy, LocalFitSpec};
use dynhaz::gof::{expand_window, GofKind, Level, SearchConfig};
use dynhaz::kernels::Kernel;
use dynhaz::parametric::HazardFamily;
use rayon::prelude::*;
use serde_json::json;

use crate::config::{BandwidthSpec, Command, RunConfig};
use crate::output::{csv_text, fmt_f64, fmt_opt, DataSummary, Provenance};

#[derive(Debug)]
pub enum Failure {
    Validation(Vec<String>),
    Runtime(String),
}

impl From<dynhaz::Error> for Failure {
    fn from(e: dynhaz::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

/// A file to write; `None` means stdout.
pub struct Artifact {
    pub path: Option<PathBuf>,
    pub bytes: Vec<u8>,
}

pub struct Run<'a> {
    pub command: Command,
    pub config: &'a RunConfig,
    pub flags: &'a RunConfig,
    pub file: Option<&'a RunConfig>,
}

impl Run<'_> {
    pub fn execute(&self) -> Result<Vec<Artifact>, Failure> {
        match self.command {
            Command::Estimate => self.estimate(),
            Command::GofScan => self.gof_scan(),
            Command::Bandwidth => self.bandwidth(),
            Command::Simulate => self.simulate(),
            Command::Compare => self.compare(),
        }
    }

    fn provenance(&self) -> Provenance<'_> {
        Provenance::new(self.command, self.config, self.flags, self.file)
    }

    fn sample(&self) -> Result<SurvivalSample, Failure> {
        let c = self.config;
        match (&c.input, &c.law) {
            (Some(path), _) => Ok(ingest_csv(
                path,
                &CsvOptions {
                    horizon: c.horizon,
                    ..CsvOptions::default()
                },
            )?),
            (None, Some(law)) => {
                let mut law = law.clone();
                if let Some(seed) = c.seed {
                    law.seed = seed;
                }
                Ok(law.simulate(c.n.unwrap_or(0))?)
            }
            (None, None) => Err(Failure::Validation(vec!["input or law is required".into()])),
        }
    }

    fn grid(&self, horizon: f64) -> Result<Vec<f64>, Failure> {
        let grid = match &self.config.grid {
            Some(g) => g.clone(),
            None => match self.config.grid_points.unwrap_or(41) {
                1 => vec![horizon / 2.0],
                m => (0..m).map(|i| horizon * i as f64 / (m - 1) as f64).collect(),
            },
        };
        if grid.iter().any(|&s| s > horizon) {
            return Err(Failure::Validation(vec![format!(
                "grid points must lie in [0, {horizon}]"
            )]));
        }
        Ok(grid)
    }

    fn family(&self) -> Result<HazardFamily, Failure> {
        Ok(HazardFamily::from_name(self.config.family_name())?)
    }

    fn kernel(&self) -> Result<Kernel, Failure> {
        Ok(Kernel::from_name(self.config.kernel_name())?)
    }

    fn search(&self) -> Result<SearchConfig, Failure> {
        Ok(SearchConfig {
            kind: GofKind::from_name(self.config.statistic_name())?,
            level: Level::from_f64(self.config.level_value())?,
            min_events: self.config.min_events.unwrap_or(10),
            ..SearchConfig::default()
        })
    }

    fn bandwidth_spec(&self, default: &str) -> Result<BandwidthSpec, Failure> {
        BandwidthSpec::parse(self.config.bandwidth.as_deref().unwrap_or(default))
            .map_err(|e| Failure::Validation(vec![e]))
    }

    fn plugin(&self, sample: &SurvivalSample, family: &HazardFamily, kernel: &Kernel) -> Result<BandwidthPlan, Failure> {
        let tag = BiasTag::from_family(family.tag()).ok_or_else(|| {
            Failure::Runtime(format!("no plug-in bias factor for family `{}`", family.name()))
        })?;
        Ok(plugin_global_c(
            sample,
            kernel,
            tag,
            &PilotConfig::default(),
            PluginWeight::AtRisk,
            true,
        )?)
    }

    fn data_summary(sample: &SurvivalSample) -> DataSummary {
        DataSummary {
            n: sample.len(),
            failures: sample.n_failures(),
            horizon: sample.horizon(),
        }
    }

    fn estimate(&self) -> Result<Vec<Artifact>, Failure> {
        let sample = self.sample()?;
        let grid = self.grid(sample.horizon())?;
        let family = self.family()?;
        let kernel = self.kernel()?;
        let spec = self.bandwidth_spec("")?;
        let mut plan = serde_json::Value::Null;
        let rule = match spec {
            BandwidthSpec::Fixed(h) => BandwidthRule::Fixed { h },
            BandwidthSpec::Adaptive(c) => BandwidthRule::Adaptive { c },
            BandwidthSpec::Plugin => {
                let p = self.plugin(&sample, &family, &kernel)?;
                plan = serde_json::to_value(&p)?;
                match p {
                    BandwidthPlan::Plugin { c, .. } => BandwidthRule::Adaptive { c },
                    _ => unreachable!("plug-in selection returns a plug-in plan"),
                }
            }
            BandwidthSpec::Gof => BandwidthRule::Gof {
                search: self.search()?,
                smooth_span: None,
            },
        };
        let is_gof = spec == BandwidthSpec::Gof;
        let boundary = match self.config.boundary.as_deref() {
            Some("half-width") => BoundaryPolicy::HalfWidth,
            Some("gof") => BoundaryPolicy::Gof {
                search: self.search()?,
            },
            Some(_) => BoundaryPolicy::Truncate,
            None if is_gof => BoundaryPolicy::Gof {
                search: self.search()?,
            },
            None => BoundaryPolicy::Truncate,
        };
        let dim = family.dim();
        let fit_spec = LocalFitSpec {
            min_events: self.config.min_events.unwrap_or(if is_gof { 10 } else { 1 }),
            boundary,
            ..LocalFitSpec::new(family, kernel, rule, grid)
        };
        fit_spec
            .validate(sample.horizon())
            .map_err(|e| Failure::Validation(vec![e.to_string()]))?;
        let curve = estimate_curve(&sample, &fit_spec)?;

        let mut header: Vec<String> = ["s", "alpha_hat", "h_used", "se", "band_lo", "band_hi"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((1..=dim).map(|j| format!("theta_{j}")));
        header.push("flag".into());
        let rows: Vec<Vec<String>> = curve
            .points
            .iter()
            .map(|p| {
                let mut r = vec![
                    fmt_f64(p.s),
                    fmt_opt(p.alpha_hat),
                    fmt_f64(p.h_used),
                    fmt_opt(p.se),
                    fmt_opt(p.band_lo),
                    fmt_opt(p.band_hi),
                ];
                r.extend((0..dim).map(|j| fmt_opt(p.theta.get(j).copied())));
                r.push(p.flag.clone());
                r
            })
            .collect();
        let mut prov = self.provenance();
        prov.data = Some(Self::data_summary(&sample));
        prov.extra = json!({ "bandwidth_plan": plan, "gaps": curve.n_gaps() });
        Ok(vec![Artifact {
            path: self.config.output.clone(),
            bytes: csv_text(&prov.line()?, &header, &rows)?,
        }])
    }

    fn gof_scan(&self) -> Result<Vec<Artifact>, Failure> {
        let sample = self.sample()?;
        let grid = self.grid(sample.horizon())?;
        let family = self.family()?;
        let search = self.search()?;
        let level = format!("{:.2}", search.level.value());
        let rows: Vec<Vec<String>> = grid
            .par_iter()
            .map(|&s| match expand_window(&sample, &family, s, &search) {
                Ok(w) => vec![
                    fmt_f64(s),
                    fmt_f64(w.h),
                    fmt_f64(w.statistic_at_stop),
                    search.kind.name().to_string(),
                    level.clone(),
                    if w.full_range { "full_range".into() } else { String::new() },
                ],
                Err(e) => vec![
                    fmt_f64(s),
                    String::new(),
                    String::new(),
                    search.kind.name().to_string(),
                    level.clone(),
                    format!("failed: {e}"),
                ],
            })
            .collect();
        let header: Vec<String> = ["s", "h_hat", "statistic_at_stop", "kind", "level", "sentinel_flag"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut prov = self.provenance();
        prov.data = Some(Self::data_summary(&sample));
        prov.extra = json!({ "search": search });
        Ok(vec![Artifact {
            path: self.config.output.clone(),
            bytes: csv_text(&prov.line()?, &header, &rows)?,
        }])
    }

    fn bandwidth(&self) -> Result<Vec<Artifact>, Failure> {
        let sample = self.sample()?;
        let grid = self.grid(sample.horizon())?;
        let family = self.family()?;
        let kernel = self.kernel()?;
        let plan = match self.bandwidth_spec("plugin")? {
            BandwidthSpec::Fixed(h) => BandwidthPlan::Fixed { h },
            BandwidthSpec::Adaptive(c) => BandwidthPlan::Adaptive { c },
            BandwidthSpec::Plugin => self.plugin(&sample, &family, &kernel)?,
            BandwidthSpec::Gof => {
                return Err(Failure::Validation(vec![
                    "the bandwidth command takes fixed, adaptive or plugin".into(),
                ]))
            }
        };
        let header: Vec<String> = ["s", "h", "at_risk"].iter().map(|s| s.to_string()).collect();
        let rows: Vec<Vec<String>> = grid
            .iter()
            .map(|&s| {
                vec![
                    fmt_f64(s),
                    fmt_f64(plan.bandwidth_at(&sample, s)),
                    sample.at_risk(s).to_string(),
                ]
            })
            .collect();
        let mut prov = self.provenance();
        prov.data = Some(Self::data_summary(&sample));
        prov.extra = json!({ "bandwidth_plan": plan });
        Ok(vec![Artifact {
            path: self.config.output.clone(),
            bytes: csv_text(&prov.line()?, &header, &rows)?,
        }])
    }

    fn experiment_report(&self) -> Result<(McReport, Ranking), Failure> {
        let mut exp = self
            .config
            .experiment
            .clone()
            .ok_or_else(|| Failure::Validation(vec!["experiment is required".into()]))?;
        if let Some(seed) = self.config.seed {
            exp.seed = seed;
        }
        let report = run_experiment(&exp)?;
        let ranking = compare_estimators(&report);
        Ok((report, ranking))
    }

    /// Long CSV plus a JSON summary next to it.
    fn report_artifacts(&self, rows: Vec<Vec<String>>, report: &McReport, ranking: &Ranking) -> Result<Vec<Artifact>, Failure> {
        let header: Vec<String> = ["estimator", "s", "metric", "value"].iter().map(|s| s.to_string()).collect();
        let prov = self.provenance();
        let mut out = vec![Artifact {
            path: self.config.output.clone(),
            bytes: csv_text(&prov.line()?, &header, &rows)?,
        }];
        if let Some(path) = &self.config.output {
            let mut summary = path.with_extension("json");
            if &summary == path {
                summary = path.with_extension("summary.json");
            }
            let body = json!({
                "provenance": prov,
                "estimators": report.estimator_names,
                "grid": report.grid,
                "cells": report.cells,
                "ranking": ranking,
            });
            let mut bytes = serde_json::to_vec_pretty(&body)?;
            bytes.push(b'\n');
            out.push(Artifact {
                path: Some(summary),
                bytes,
            });
        }
        Ok(out)
    }

    fn simulate(&self) -> Result<Vec<Artifact>, Failure> {
        let (report, ranking) = self.experiment_report()?;
        let mut rows = Vec::new();
        for c in &report.cells {
            let metrics = [
                ("truth", fmt_f64(c.truth)),
                ("mean", fmt_f64(c.mean)),
                ("bias", fmt_f64(c.bias)),
                ("variance", fmt_f64(c.variance)),
                ("mse", fmt_f64(c.mse)),
                ("theory_bias", fmt_opt(c.theory_bias)),
                ("theory_variance", fmt_opt(c.theory_variance)),
                ("successes", c.successes.to_string()),
                ("failures", c.failures.to_string()),
            ];
            for (m, v) in metrics {
                rows.push(vec![c.estimator.clone(), fmt_f64(c.s), m.into(), v]);
            }
        }
        self.report_artifacts(rows, &report, &ranking)
    }

    fn compare(&self) -> Result<Vec<Artifact>, Failure> {
        let (report, ranking) = self.experiment_report()?;
        let mut rows = Vec::new();
        for r in &ranking.rows {
            for (m, v) in [
                ("integrated_mse", fmt_f64(r.integrated_mse)),
                ("integrated_mse_se", fmt_f64(r.se)),
                ("rank", r.rank.to_string()),
                ("failures", r.failures.to_string()),
            ] {
                rows.push(vec![r.estimator.clone(), String::new(), m.into(), v]);
            }
        }
        for p in &ranking.pairs {
            let name = format!("{} vs {}", p.first, p.second);
            let outcome = serde_json::to_value(p.outcome)?
                .as_str()
                .unwrap_or_default()
                .to_string();
            for (m, v) in [
                ("difference", fmt_f64(p.difference)),
                ("difference_se", fmt_f64(p.se)),
                ("outcome", outcome),
            ] {
                rows.push(vec![name.clone(), String::new(), m.into(), v]);
            }
        }
        self.report_artifacts(rows, &report, &ranking)
    }
}
