//! Run configuration: a TOML file with per-section defaults, overridable by
//! command-line flags.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::{Datelike, NaiveDate};
use serde::Deserialize;

use countercast_core::design::{us_federal_holidays, ModelSpec};
use countercast_core::effects::EffectWindow;
use countercast_core::DailyPanel;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub cutoff: Option<NaiveDate>,
    #[serde(default = "default_reps")]
    pub bootstrap_reps: usize,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    #[serde(default = "default_offset")]
    pub offset: f64,
    #[serde(default)]
    pub export_draws: bool,
    #[serde(default)]
    pub paths: Paths,
    pub range: Option<DateRange>,
    #[serde(default)]
    pub windows: Vec<WindowConfig>,
    pub model: Option<ModelConfig>,
    pub select: Option<SelectConfig>,
    pub holdout: Option<HoldoutConfig>,
    #[serde(default)]
    pub describe: DescribeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            cutoff: None,
            bootstrap_reps: default_reps(),
            confidence: default_confidence(),
            offset: default_offset(),
            export_draws: false,
            paths: Paths::default(),
            range: None,
            windows: Vec::new(),
            model: None,
            select: None,
            holdout: None,
            describe: DescribeConfig::default(),
        }
    }
}

fn default_reps() -> usize {
    1000
}

fn default_confidence() -> f64 {
    0.95
}

fn default_offset() -> f64 {
    0.1
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub transactions: Option<PathBuf>,
    pub licenses: Option<PathBuf>,
    pub holidays: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
    /// Annual external comparison series: `year,handguns,long_guns`.
    pub external_annual: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

/// Mirrors [`ModelSpec`] minus the holiday dates, which come from the holiday
/// file (or the built-in federal calendar).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "d28")]
    pub sales_lags: usize,
    #[serde(default = "d10")]
    pub license_lags: usize,
    #[serde(default = "yes")]
    pub day_of_week: bool,
    #[serde(default = "yes")]
    pub holiday: bool,
    #[serde(default = "yes")]
    pub week_of_year: bool,
    #[serde(default)]
    pub day_of_year: bool,
    #[serde(default = "yes")]
    pub linear_trend: bool,
    #[serde(default = "yes")]
    pub quadratic_trend: bool,
}

fn d28() -> usize {
    28
}
fn d10() -> usize {
    10
}
fn yes() -> bool {
    true
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            sales_lags: 28,
            license_lags: 10,
            day_of_week: true,
            holiday: true,
            week_of_year: true,
            day_of_year: false,
            linear_trend: true,
            quadratic_trend: true,
        }
    }
}

impl ModelConfig {
    pub fn to_spec(&self, holiday_dates: BTreeSet<NaiveDate>) -> ModelSpec {
        ModelSpec {
            sales_lags: self.sales_lags,
            license_lags: self.license_lags,
            day_of_week: self.day_of_week,
            holiday: self.holiday,
            week_of_year: self.week_of_year,
            day_of_year: self.day_of_year,
            linear_trend: self.linear_trend,
            quadratic_trend: self.quadratic_trend,
            holiday_dates,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectConfig {
    #[serde(default = "d35")]
    pub max_sales_lag: usize,
    #[serde(default = "d14")]
    pub max_license_lag: usize,
    #[serde(default = "d10")]
    pub folds: usize,
    /// Also score the six-variant time-effect grid at the selected lags.
    #[serde(default = "yes")]
    pub grid: bool,
}

fn d35() -> usize {
    35
}
fn d14() -> usize {
    14
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoldoutConfig {
    #[serde(default = "d10")]
    pub days_before_cutoff: usize,
    #[serde(default = "d10")]
    pub horizon: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescribeConfig {
    #[serde(default = "d2015")]
    pub ratio_base_year: i32,
    #[serde(default = "d2017")]
    pub ratio_comparison_year: i32,
    #[serde(default = "d09")]
    pub coverage: f64,
    /// Concentration window; defaults to the five days from the cutoff.
    pub spike_start: Option<NaiveDate>,
    pub spike_end: Option<NaiveDate>,
}

fn d2015() -> i32 {
    2015
}
fn d2017() -> i32 {
    2017
}
fn d09() -> f64 {
    0.9
}

impl Default for DescribeConfig {
    fn default() -> Self {
        DescribeConfig {
            ratio_base_year: 2015,
            ratio_comparison_year: 2017,
            coverage: 0.9,
            spike_start: None,
            spike_end: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            bail!("confidence must lie in (0, 1)");
        }
        if self.offset <= 0.0 {
            bail!("offset must be > 0");
        }
        if self.bootstrap_reps < 2 {
            bail!("bootstrap_reps must be >= 2");
        }
        for w in &self.windows {
            if w.start > w.end {
                bail!("window {} starts after it ends", w.label);
            }
        }
        Ok(())
    }

    /// Effect windows from config, defaulting to the immediate and short-run
    /// presets.
    pub fn effect_windows(&self) -> Result<Vec<EffectWindow>> {
        if self.windows.is_empty() {
            return Ok(vec![EffectWindow::immediate(), EffectWindow::short_run()]);
        }
        self.windows
            .iter()
            .map(|w| EffectWindow::new(w.label.clone(), w.start, w.end).map_err(Into::into))
            .collect()
    }
}

/// Holiday dates from the configured file, or the built-in observed federal
/// calendar spanning the panel years.
pub fn holidays_for(paths: &Paths, panel: &DailyPanel) -> Result<BTreeSet<NaiveDate>> {
    match &paths.holidays {
        Some(path) => {
            let file = std::fs::File::open(path)
                .with_context(|| format!("opening holidays {}", path.display()))?;
            Ok(countercast_core::design::read_holidays(file)?)
        }
        None => Ok(us_federal_holidays(
            panel.start_date().year(),
            panel.end_date().year() + 1,
        )),
    }
}
