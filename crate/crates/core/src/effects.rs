//! Observed-versus-counterfactual effect estimates over post-cutoff windows,
//! holdout validation of the fitted model, and breakeven arithmetic.

use chrono::NaiveDate;
use serde::Serialize;

use crate::data::DailyPanel;
use crate::design::ModelSpec;
use crate::error::{Error, Result};
use crate::estimator::fit_sur;
use crate::forecast::{forecast_counterfactual, percentile_interval, ForecastResult};

/// A day-offset window relative to the cutoff, both ends inclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EffectWindow {
    pub label: String,
    pub start_offset: usize,
    pub end_offset: usize,
}

impl EffectWindow {
    pub fn new(label: impl Into<String>, start_offset: usize, end_offset: usize) -> Result<Self> {
        if start_offset > end_offset {
            return Err(Error::invalid("window start after end"));
        }
        Ok(EffectWindow {
            label: label.into(),
            start_offset,
            end_offset,
        })
    }

    /// The announcement date and the four days following.
    pub fn immediate() -> Self {
        EffectWindow {
            label: "immediate".into(),
            start_offset: 0,
            end_offset: 4,
        }
    }

    /// Days 5 through 25 after the announcement.
    pub fn short_run() -> Self {
        EffectWindow {
            label: "short-run".into(),
            start_offset: 5,
            end_offset: 25,
        }
    }

    pub fn days(&self) -> usize {
        self.end_offset - self.start_offset + 1
    }
}

/// Cumulative observed-minus-predicted difference for one series and window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectEstimate {
    pub window: EffectWindow,
    pub series: String,
    pub observed_cum: f64,
    pub predicted_cum: f64,
    pub abs_diff: f64,
    /// abs_diff / predicted_cum; missing when the prediction sums to zero.
    pub pct_diff: Option<f64>,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub significant: bool,
}

/// Compares observed post-cutoff sales to the counterfactual forecast over a
/// window. The interval is the bootstrap distribution of
/// (observed - cumulative draw path) at the requested level; an effect is
/// significant when that interval excludes zero.
pub fn estimate_effects(
    observed: &DailyPanel,
    forecast: &ForecastResult,
    window: &EffectWindow,
    level: f64,
) -> Result<Vec<EffectEstimate>> {
    if window.end_offset >= forecast.horizon() {
        return Err(Error::invalid(format!(
            "window {} ends at offset {} beyond forecast horizon {}",
            window.label,
            window.end_offset,
            forecast.horizon()
        )));
    }
    if observed.start_date() != forecast.dates[0] {
        return Err(Error::invalid(
            "observed panel must start at the forecast cutoff",
        ));
    }
    if observed.len() <= window.end_offset {
        return Err(Error::invalid("observed panel does not cover the window"));
    }
    if observed.series_names() != forecast.series_names.as_slice() {
        return Err(Error::invalid("observed and forecast series differ"));
    }
    let mut out = Vec::with_capacity(forecast.series_count());
    for (j, name) in forecast.series_names.iter().enumerate() {
        let observed_cum: f64 = (window.start_offset..=window.end_offset)
            .map(|t| observed.count(t, j) as f64)
            .sum();
        let predicted_cum: f64 = (window.start_offset..=window.end_offset)
            .map(|t| forecast.point_path[(t, j)])
            .sum();
        let abs_diff = observed_cum - predicted_cum;
        let pct_diff = if predicted_cum > 0.0 {
            Some(abs_diff / predicted_cum)
        } else {
            None
        };
        let diffs: Vec<f64> = forecast
            .cumulative_draws(j, window.start_offset, window.end_offset)?
            .into_iter()
            .map(|cum| observed_cum - cum)
            .collect();
        let (ci_low, ci_high) = percentile_interval(&diffs, level)?;
        let significant = !(ci_low <= 0.0 && 0.0 <= ci_high);
        out.push(EffectEstimate {
            window: window.clone(),
            series: name.clone(),
            observed_cum,
            predicted_cum,
            abs_diff,
            pct_diff,
            ci_low,
            ci_high,
            level,
            significant,
        });
    }
    Ok(out)
}

/// Per-series holdout accuracy on the level scale.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HoldoutSeries {
    pub series: String,
    /// Mean of (predicted - observed)/observed over non-zero observed days.
    pub mean_daily_pct_error: Option<f64>,
    pub days_used: usize,
    pub zero_days_excluded: usize,
    pub observed_cum: f64,
    pub predicted_cum: f64,
    /// (sum predicted - sum observed)/sum observed.
    pub cumulative_pct_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HoldoutReport {
    pub cutoff: NaiveDate,
    pub horizon: usize,
    pub b: usize,
    pub seed: u64,
    pub series: Vec<HoldoutSeries>,
}

/// Refits on data before `cutoff`, forecasts `horizon` days, and scores the
/// predictions against the held-out observations. Post-cutoff outcomes are
/// only read for scoring, never for fitting.
pub fn holdout_validation(
    panel: &DailyPanel,
    spec: &ModelSpec,
    cutoff: NaiveDate,
    horizon: usize,
    b: usize,
    seed: u64,
) -> Result<HoldoutReport> {
    let train = panel.up_to(cutoff)?;
    let observed = panel.slice(cutoff, horizon)?;
    let exogenous = panel.exogenous_after(cutoff, horizon)?;
    let fit = fit_sur(&train, spec)?;
    let forecast = forecast_counterfactual(&fit, &train, cutoff, horizon, &exogenous, b, seed)?;
    let mut series = Vec::with_capacity(panel.series_count());
    for (j, name) in panel.series_names().iter().enumerate() {
        let mut pct_sum = 0.0;
        let mut used = 0;
        let mut zeros = 0;
        let mut observed_cum = 0.0;
        let mut predicted_cum = 0.0;
        for t in 0..horizon {
            let obs = observed.count(t, j) as f64;
            let pred = forecast.point_path[(t, j)];
            observed_cum += obs;
            predicted_cum += pred;
            if obs == 0.0 {
                zeros += 1;
            } else {
                pct_sum += (pred - obs) / obs;
                used += 1;
            }
        }
        series.push(HoldoutSeries {
            series: name.clone(),
            mean_daily_pct_error: if used > 0 { Some(pct_sum / used as f64) } else { None },
            days_used: used,
            zero_days_excluded: zeros,
            observed_cum,
            predicted_cum,
            cumulative_pct_error: if observed_cum > 0.0 {
                Some((predicted_cum - observed_cum) / observed_cum)
            } else {
                None
            },
        });
    }
    Ok(HoldoutReport {
        cutoff,
        horizon,
        b,
        seed,
        series,
    })
}

/// Weeks of sustained short-run deficit needed to offset an immediate
/// surplus. `Never` when there is no deficit to do the offsetting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Breakeven {
    Never,
    After { weeks: f64, rounded_weeks: i64 },
}

pub fn breakeven_weeks(
    immediate_surplus: f64,
    shortrun_deficit: f64,
    shortrun_days: usize,
) -> Result<Breakeven> {
    if shortrun_days < 1 {
        return Err(Error::invalid("short-run window must cover at least one day"));
    }
    if shortrun_deficit <= 0.0 {
        return Ok(Breakeven::Never);
    }
    let deficit_per_week = shortrun_deficit / shortrun_days as f64 * 7.0;
    let weeks = immediate_surplus / deficit_per_week;
    Ok(Breakeven::After {
        weeks,
        rounded_weeks: weeks.round() as i64,
    })
}
