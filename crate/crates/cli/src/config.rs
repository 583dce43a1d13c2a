//! Settings from `--config` files layered under command-line flags, and
//! validation of the result.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use threshold_factor::screening::{ClassifyConfig, SearchConfig};
use threshold_factor::threshold::FitConfig;

use crate::args::{CommonArgs, ReplicateArgs, ScreenArgs, TuningArgs};
use crate::error::{CliError, CliResult};

/// Every setting a command can take; unset fields fall back to defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub h0: Option<usize>,
    pub eta: Option<(f64, f64)>,
    pub k: Option<usize>,
    #[serde(alias = "R")]
    pub r_max: Option<usize>,
    pub min_tail: Option<usize>,
    pub seed: Option<u64>,
    pub t0: Option<usize>,
    pub band: Option<(f64, f64)>,
    pub top_m: Option<usize>,
    pub reps: Option<usize>,
    pub quick: Option<bool>,
    pub out: Option<PathBuf>,
}

impl Settings {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Input(format!("invalid config {}: {e}", path.display())))
    }

    /// Fields set in `top` replace those in `self`.
    pub fn overlay(self, top: Settings) -> Settings {
        Settings {
            h0: top.h0.or(self.h0),
            eta: top.eta.or(self.eta),
            k: top.k.or(self.k),
            r_max: top.r_max.or(self.r_max),
            min_tail: top.min_tail.or(self.min_tail),
            seed: top.seed.or(self.seed),
            t0: top.t0.or(self.t0),
            band: top.band.or(self.band),
            top_m: top.top_m.or(self.top_m),
            reps: top.reps.or(self.reps),
            quick: top.quick.or(self.quick),
            out: top.out.or(self.out),
        }
    }

    fn from_common(common: &CommonArgs) -> CliResult<Settings> {
        let base = match &common.config {
            Some(path) => Settings::load(path)?,
            None => Settings::default(),
        };
        Ok(base.overlay(Settings {
            out: common.out.clone(),
            ..Settings::default()
        }))
    }

    fn from_tuning(t: &TuningArgs) -> CliResult<Settings> {
        Ok(Settings::from_common(&t.common)?.overlay(Settings {
            h0: t.h0,
            eta: pair(&t.eta),
            k: t.k,
            r_max: t.r_max,
            min_tail: t.min_tail,
            ..Settings::default()
        }))
    }

    pub fn for_fit(t: &TuningArgs) -> CliResult<Settings> {
        Settings::from_tuning(t)
    }

    pub fn for_screen(a: &ScreenArgs) -> CliResult<Settings> {
        Ok(Settings::from_tuning(&a.tuning)?.overlay(Settings {
            t0: a.t0,
            band: pair(&a.band),
            top_m: a.top_m,
            ..Settings::default()
        }))
    }

    pub fn for_simulate(common: &CommonArgs, seed: Option<u64>) -> CliResult<Settings> {
        Ok(Settings::from_common(common)?.overlay(Settings {
            seed,
            ..Settings::default()
        }))
    }

    pub fn for_replicate(a: &ReplicateArgs) -> CliResult<Settings> {
        Ok(Settings::from_common(&a.common)?.overlay(Settings {
            seed: a.seed,
            reps: a.reps,
            quick: a.quick.then_some(true),
            ..Settings::default()
        }))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("tfm-out"))
    }

    /// Resolved fit settings, or every problem found in one message.
    pub fn fit_config(&self) -> CliResult<FitConfig> {
        let mut problems = Vec::new();
        let fit = self.collect_fit(&mut problems);
        finish(problems, fit)
    }

    pub fn search_config(&self) -> CliResult<SearchConfig> {
        let mut problems = Vec::new();
        let fit = self.collect_fit(&mut problems);
        let defaults = SearchConfig::default();
        let band = self.band.unwrap_or(defaults.band);
        if !(0.0 <= band.0 && band.0 < band.1 && band.1 <= 1.0) {
            problems.push(format!(
                "band must satisfy 0 <= lo < hi <= 1, got ({}, {})",
                band.0, band.1
            ));
        }
        if fit.k.is_none() {
            problems.push("screening needs the number of factors (--k)".to_string());
        }
        if self.top_m == Some(0) {
            problems.push("top_m must be at least 1".to_string());
        }
        if let Some(t0) = self.t0 {
            if t0 < 2 {
                problems.push(format!("t0 = {t0} is too small"));
            }
        }
        let search = SearchConfig {
            classify: ClassifyConfig {
                h0: fit.h0,
                ..ClassifyConfig::default()
            },
            band,
            top_m: self.top_m,
            t0: self.t0,
            fit,
        };
        finish(problems, search)
    }

    pub fn replicate_reps(&self) -> CliResult<Option<usize>> {
        match self.reps {
            Some(0) => Err(CliError::Input("reps must be at least 1".into())),
            r => Ok(r),
        }
    }

    fn collect_fit(&self, problems: &mut Vec<String>) -> FitConfig {
        let defaults = FitConfig::default();
        let fit = FitConfig {
            eta: self.eta.unwrap_or(defaults.eta),
            h0: self.h0.unwrap_or(defaults.h0),
            k: self.k,
            r_max: self.r_max,
            min_tail: self.min_tail.unwrap_or(defaults.min_tail),
        };
        let (lo, hi) = fit.eta;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            problems.push(format!("eta must satisfy 0 < lo < hi < 1, got ({lo}, {hi})"));
        }
        if fit.h0 < 1 {
            problems.push("h0 must be at least 1".to_string());
        }
        if fit.k == Some(0) {
            problems.push("k must be at least 1".to_string());
        }
        if fit.r_max == Some(0) {
            problems.push("R must be at least 1".to_string());
        }
        fit
    }
}

fn pair(v: &Option<Vec<f64>>) -> Option<(f64, f64)> {
    v.as_ref().map(|v| (v[0], v[1]))
}

fn finish<T>(problems: Vec<String>, value: T) -> CliResult<T> {
    if problems.is_empty() {
        Ok(value)
    } else {
        Err(CliError::Input(format!(
            "invalid configuration: {}",
            problems.join("; ")
        )))
    }
}

/// What a run was asked to do, embedded in reports and digested.
#[derive(Debug, Serialize)]
pub struct RunRecord<'a, T: Serialize> {
    pub command: &'a str,
    pub inputs: Vec<String>,
    pub settings: &'a T,
}
