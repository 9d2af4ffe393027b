//! TOML run configuration.
//!
//! ```toml
//! out = "out"
//! eval_date = "2001-06-30"
//! spec = "em_matrix"
//!
//! [simulation]        # or [data] with epoch, events, exposure, holidays, end_date
//! days = 730
//! seed = 7
//!
//! [options]
//! censoring = false
//! w_max = 104
//! level = 0.95
//! group = "reporting_date"
//! simultaneous = true
//! workers = 4
//!
//! [backtest]
//! from = "2001-01-01"
//! to = "2001-06-30"
//! step = 7
//! specs = "all"
//! ```

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::evaluation::{EvalSettings, SpecName};
use crate::inference::Grouping;
use crate::reporting::DEFAULT_W_MAX;

/// A configuration problem, naming the offending key.
#[derive(Debug)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config key '{}': {}", self.key, self.message)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub out: Option<PathBuf>,
    pub eval_date: Option<NaiveDate>,
    pub spec: Option<String>,
    pub data: Option<DataConfig>,
    pub simulation: Option<SimulationBlock>,
    #[serde(default)]
    pub options: Options,
    #[serde(default)]
    pub backtest: BacktestConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub epoch: NaiveDate,
    pub events: PathBuf,
    pub exposure: PathBuf,
    pub holidays: Option<PathBuf>,
    /// Last day of the observation window; defaults to the last report date.
    pub end_date: Option<NaiveDate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationBlock {
    pub days: usize,
    #[serde(default)]
    pub seed: u64,
    pub epoch: Option<NaiveDate>,
    /// JSON scenario replacing the built-in default.
    pub scenario: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Options {
    pub censoring: bool,
    pub w_max: usize,
    pub level: f64,
    pub seed: Option<u64>,
    pub workers: usize,
    pub group: String,
    pub simultaneous: bool,
    pub max_iter: usize,
    pub period_len: usize,
    pub pool_after: usize,
    /// Cells listed by `diagnose`.
    pub top: usize,
}

impl Default for Options {
    fn default() -> Self {
        let e = EvalSettings::default();
        Self {
            censoring: false,
            w_max: DEFAULT_W_MAX,
            level: 0.95,
            seed: None,
            workers: 1,
            group: "occurrence".into(),
            simultaneous: false,
            max_iter: e.max_iter,
            period_len: e.period_len,
            pool_after: e.pool_after,
            top: 20,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
    pub step: Option<usize>,
    pub specs: Option<String>,
    /// Last reporting date counted as realized; defaults to the end of the data.
    pub horizon: Option<NaiveDate>,
}

/// Where the events come from.
pub enum Source<'a> {
    Files(&'a DataConfig),
    Simulation(&'a SimulationBlock),
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let key = offending_key(text, &e).unwrap_or_else(|| key_in_message(&message));
            ConfigError::new(key, message)
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("--config", format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Relative data paths are taken relative to the configuration file.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(d) = &mut self.data {
            fix(&mut d.events);
            fix(&mut d.exposure);
            if let Some(h) = &mut d.holidays {
                fix(h);
            }
        }
        if let Some(s) = &mut self.simulation {
            if let Some(p) = &mut s.scenario {
                fix(p);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.source()?;
        let o = &self.options;
        if !(o.level > 0.0 && o.level < 1.0) {
            return Err(ConfigError::new("options.level", format!("{} is not in (0, 1)", o.level)));
        }
        if o.workers == 0 {
            return Err(ConfigError::new("options.workers", "must be at least 1"));
        }
        if o.period_len == 0 {
            return Err(ConfigError::new("options.period_len", "must be positive"));
        }
        self.grouping()?;
        if let Some(s) = &self.spec {
            self.spec_names(s, "spec")?;
        }
        if let Some(s) = &self.backtest.specs {
            self.spec_names(s, "backtest.specs")?;
        }
        if self.backtest.step == Some(0) {
            return Err(ConfigError::new("backtest.step", "must be positive"));
        }
        Ok(())
    }

    pub fn source(&self) -> Result<Source<'_>, ConfigError> {
        match (&self.data, &self.simulation) {
            (Some(d), None) => Ok(Source::Files(d)),
            (None, Some(s)) => {
                if s.days == 0 {
                    return Err(ConfigError::new("simulation.days", "must be positive"));
                }
                Ok(Source::Simulation(s))
            }
            (Some(_), Some(_)) => Err(ConfigError::new("data", "give either [data] or [simulation], not both")),
            (None, None) => Err(ConfigError::new("data", "one of [data] or [simulation] is required")),
        }
    }

    pub fn grouping(&self) -> Result<Grouping, ConfigError> {
        self.options
            .group
            .parse()
            .map_err(|e: crate::Error| ConfigError::new("options.group", e.to_string()))
    }

    pub fn spec_names(&self, s: &str, key: &str) -> Result<Vec<SpecName>, ConfigError> {
        SpecName::parse_list(s).map_err(|e| ConfigError::new(key, e.to_string()))
    }

    /// The single spec for `fit`, `nowcast` and `diagnose`.
    pub fn single_spec(&self) -> Result<SpecName, ConfigError> {
        let s = self.spec.as_deref().ok_or_else(|| ConfigError::new("spec", "missing"))?;
        match self.spec_names(s, "spec")?.as_slice() {
            [one] => Ok(*one),
            _ => Err(ConfigError::new("spec", "exactly one model spec is required")),
        }
    }

    pub fn settings(&self) -> EvalSettings {
        let o = &self.options;
        EvalSettings {
            include_censoring: o.censoring,
            w_max: o.w_max,
            level: o.level,
            max_iter: o.max_iter,
            period_len: o.period_len,
            pool_after: o.pool_after,
            ..Default::default()
        }
    }

    pub fn seed(&self) -> Option<u64> {
        self.options.seed.or(self.simulation.as_ref().map(|s| s.seed))
    }
}

fn offending_key(text: &str, e: &toml::de::Error) -> Option<String> {
    let span = e.span()?;
    let line_start = text[..span.start.min(text.len())].rfind('\n').map_or(0, |i| i + 1);
    let line = text[line_start..].lines().next()?;
    let (key, _) = line.split_once('=')?;
    let key = key.trim();
    if key.is_empty() {
        return None;
    }
    let table = text[..line_start]
        .lines()
        .rev()
        .find_map(|l| l.trim().strip_prefix('[').and_then(|r| r.strip_suffix(']')))
        .map(|t| t.trim().to_string());
    Some(match table {
        Some(t) => format!("{t}.{key}"),
        None => key.to_string(),
    })
}

fn key_in_message(message: &str) -> String {
    message
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "<config>".to_string())
}
