//! Delimited-table and JSON writers for every analysis artifact, plus the
//! panel file the pipeline stages hand to each other.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, Days, NaiveDate};

use crate::classifier::{ConfusionMatrix, Metrics};
use crate::data::{DailyPanel, FirearmType};
use crate::descriptives::{
    Association, ConcentrationReport, MonthlyChange, NewlyObservedWeekly, RetailerRatio, TypeCounts,
};
use crate::effects::{EffectEstimate, HoldoutReport};
use crate::error::{Error, Result};
use crate::estimator::SurFit;
use crate::forecast::ForecastResult;
use crate::selection::CvReport;

/// Writes bytes to `path` atomically: temp file in the same directory, then
/// rename over the target.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .ok_or_else(|| Error::invalid(format!("no parent directory for {}", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        path.file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_else(|| "out".into()),
        std::process::id()
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Panel file: `date,<series...>,new_licenses,renewal_licenses`.
pub fn write_panel_csv<W: Write>(panel: &DailyPanel, mut w: W) -> Result<()> {
    write!(w, "date")?;
    for name in panel.series_names() {
        write!(w, ",{name}")?;
    }
    writeln!(w, ",new_licenses,renewal_licenses")?;
    for t in 0..panel.len() {
        write!(w, "{}", panel.date_at(t))?;
        for j in 0..panel.series_count() {
            write!(w, ",{}", panel.count(t, j))?;
        }
        writeln!(
            w,
            ",{},{}",
            panel.new_licenses()[t],
            panel.renewal_licenses()[t]
        )?;
    }
    Ok(())
}

pub fn read_panel_csv<R: Read>(reader: R, offset: f64) -> Result<DailyPanel> {
    let mut csv_reader = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = csv_reader.headers()?.clone();
    if headers.len() < 4 || &headers[0] != "date" {
        return Err(Error::format(
            "panel file needs date, at least one series, and the two license columns",
        ));
    }
    let j = headers.len() - 3;
    let names: Vec<String> = (1..=j).map(|k| headers[k].to_string()).collect();
    let mut start: Option<NaiveDate> = None;
    let mut expected: Option<NaiveDate> = None;
    let mut counts = Vec::new();
    let mut new_lic = Vec::new();
    let mut renew_lic = Vec::new();
    for (idx, row) in csv_reader.records().enumerate() {
        let row = row?;
        let line = idx + 1;
        if row.len() != headers.len() {
            return Err(Error::format(format!("panel row {line}: wrong column count")));
        }
        let date = NaiveDate::parse_from_str(row[0].trim(), "%Y-%m-%d")
            .map_err(|_| Error::format(format!("panel row {line}: bad date")))?;
        match expected {
            None => start = Some(date),
            Some(e) if e == date => {}
            Some(e) => {
                return Err(Error::format(format!(
                    "panel row {line}: expected {e}, got {date} (dates must be contiguous)"
                )))
            }
        }
        expected = Some(date + Days::new(1));
        let parse = |s: &str, what: &str| -> Result<u32> {
            s.trim()
                .parse()
                .map_err(|_| Error::format(format!("panel row {line}: bad {what} {s:?}")))
        };
        for k in 0..j {
            counts.push(parse(&row[1 + k], "count")?);
        }
        new_lic.push(parse(&row[1 + j], "license count")?);
        renew_lic.push(parse(&row[2 + j], "license count")?);
    }
    let start = start.ok_or_else(|| Error::format("panel file has no rows"))?;
    DailyPanel::new(start, names, counts, new_lic, renew_lic, offset)
}

/// Transactions file in the ingestion schema.
pub fn write_transactions_csv<W: Write>(
    records: &[crate::data::TransactionRecord],
    mut w: W,
) -> Result<()> {
    writeln!(w, "date,firearm_type,dealer_id,dealer_zip,purchaser_id,make,model")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.date,
            r.firearm_type.name(),
            r.dealer_id,
            r.dealer_zip.clone().unwrap_or_default(),
            r.purchaser_id,
            r.make,
            r.model
        )?;
    }
    Ok(())
}

/// Licenses file in the ingestion schema.
pub fn write_licenses_csv<W: Write>(
    records: &[crate::data::LicenseRecord],
    mut w: W,
) -> Result<()> {
    writeln!(w, "issue_date,kind")?;
    for r in records {
        let kind = match r.kind {
            crate::data::LicenseKind::New => "New",
            crate::data::LicenseKind::Renewal => "Renewal",
        };
        writeln!(w, "{},{}", r.issue_date, kind)?;
    }
    Ok(())
}

/// Coefficient table: series, column, coefficient, std_error.
pub fn write_fit_csv<W: Write>(fit: &SurFit, mut w: W) -> Result<()> {
    writeln!(w, "series,column,coefficient,std_error")?;
    let offsets = fit.block_offsets();
    for (jj, name) in fit.series_names.iter().enumerate() {
        for (k, label) in fit.column_labels[jj].iter().enumerate() {
            let idx = offsets[jj] + k;
            let se = fit.coef_covariance[(idx, idx)].max(0.0).sqrt();
            writeln!(w, "{name},{label},{},{se}", fit.coefficients[jj][k])?;
        }
    }
    Ok(())
}

/// Fit summary: residual covariance, per-series R², fallback flag.
pub fn write_fit_summary_json<W: Write>(fit: &SurFit, mut w: W) -> Result<()> {
    let sigma: Vec<Vec<f64>> = (0..fit.equations())
        .map(|a| (0..fit.equations()).map(|b| fit.sigma[(a, b)]).collect())
        .collect();
    let value = serde_json::json!({
        "series": fit.series_names,
        "r_squared": fit.r_squared,
        "sigma": sigma,
        "usable_days": fit.usable_len(),
        "first_usable_date": fit.first_date,
        "ols_fallback": fit.ols_fallback,
        "spec": fit.spec,
    });
    serde_json::to_writer_pretty(&mut w, &value)
        .map_err(|e| Error::format(format!("json: {e}")))?;
    writeln!(w)?;
    Ok(())
}

/// Cross-validation table, candidate specifications as columns: the flag
/// block on top, per-series RMSE/MAE below.
pub fn write_cv_table<W: Write>(reports: &[CvReport], mut w: W) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::invalid("no reports to tabulate"));
    }
    write!(w, "row")?;
    for k in 1..=reports.len() {
        write!(w, ",spec_{k}")?;
    }
    writeln!(w)?;
    type FlagGetter = fn(&CvReport) -> bool;
    let flags: [(&str, FlagGetter); 6] = [
        ("day_of_week_fe", |r| r.spec.day_of_week),
        ("holiday_fe", |r| r.spec.holiday),
        ("day_of_year_fe", |r| r.spec.day_of_year),
        ("week_of_year_fe", |r| r.spec.week_of_year),
        ("linear_trend", |r| r.spec.linear_trend),
        ("quadratic_trend", |r| r.spec.quadratic_trend),
    ];
    for (label, get) in flags {
        write!(w, "{label}")?;
        for r in reports {
            write!(w, ",{}", if get(r) { "x" } else { "" })?;
        }
        writeln!(w)?;
    }
    type LagGetter = fn(&CvReport) -> usize;
    let lag_rows: [(&str, LagGetter); 2] = [
        ("sales_lags", |r| r.spec.sales_lags),
        ("license_lags", |r| r.spec.license_lags),
    ];
    for (label, get) in lag_rows {
        write!(w, "{label}")?;
        for r in reports {
            write!(w, ",{}", get(r))?;
        }
        writeln!(w)?;
    }
    let series_count = reports[0].per_series.len();
    for s in 0..series_count {
        let name = &reports[0].per_series[s].series;
        write!(w, "{name} rmse")?;
        for r in reports {
            write!(w, ",{:.6}", r.per_series[s].rmse)?;
        }
        writeln!(w)?;
        write!(w, "{name} mae")?;
        for r in reports {
            write!(w, ",{:.6}", r.per_series[s].mae)?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Forecast paths and bounds: date, series, point, plugin, lower, upper.
pub fn write_forecast_csv<W: Write>(forecast: &ForecastResult, mut w: W) -> Result<()> {
    writeln!(w, "date,series,point,plugin,lower,upper")?;
    for (t, date) in forecast.dates.iter().enumerate() {
        for (j, name) in forecast.series_names.iter().enumerate() {
            writeln!(
                w,
                "{date},{name},{},{},{},{}",
                forecast.point_path[(t, j)],
                forecast.plugin_path[(t, j)],
                forecast.intervals.lower[(t, j)],
                forecast.intervals.upper[(t, j)],
            )?;
        }
    }
    Ok(())
}

pub fn write_effects_csv<W: Write>(estimates: &[EffectEstimate], mut w: W) -> Result<()> {
    writeln!(
        w,
        "window,start_offset,end_offset,series,observed_cum,predicted_cum,abs_diff,pct_diff,ci_low,ci_high,level,significant"
    )?;
    for e in estimates {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            e.window.label,
            e.window.start_offset,
            e.window.end_offset,
            e.series,
            e.observed_cum,
            e.predicted_cum,
            e.abs_diff,
            e.pct_diff.map(|v| v.to_string()).unwrap_or_default(),
            e.ci_low,
            e.ci_high,
            e.level,
            e.significant
        )?;
    }
    Ok(())
}

pub fn write_holdout_csv<W: Write>(report: &HoldoutReport, mut w: W) -> Result<()> {
    writeln!(
        w,
        "series,mean_daily_pct_error,days_used,zero_days_excluded,observed_cum,predicted_cum,cumulative_pct_error"
    )?;
    for s in &report.series {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            s.series,
            s.mean_daily_pct_error.map(|v| v.to_string()).unwrap_or_default(),
            s.days_used,
            s.zero_days_excluded,
            s.observed_cum,
            s.predicted_cum,
            s.cumulative_pct_error.map(|v| v.to_string()).unwrap_or_default(),
        )?;
    }
    Ok(())
}

fn write_type_count_table<W: Write, K: std::fmt::Display>(
    rows: impl Iterator<Item = (K, TypeCounts)>,
    key_label: &str,
    mut w: W,
) -> Result<()> {
    write!(w, "{key_label}")?;
    for t in FirearmType::ALL {
        write!(w, ",{}", t.name())?;
    }
    writeln!(w, ",total")?;
    for (key, counts) in rows {
        write!(w, "{key}")?;
        for t in FirearmType::ALL {
            write!(w, ",{}", counts.get(t))?;
        }
        writeln!(w, ",{}", counts.total())?;
    }
    Ok(())
}

pub fn write_annual_totals_csv<W: Write>(
    totals: &BTreeMap<i32, TypeCounts>,
    w: W,
) -> Result<()> {
    write_type_count_table(totals.iter().map(|(k, v)| (*k, *v)), "year", w)
}

pub fn write_monthly_totals_csv<W: Write>(
    totals: &BTreeMap<(i32, u32), TypeCounts>,
    w: W,
) -> Result<()> {
    write_type_count_table(
        totals
            .iter()
            .map(|((y, m), v)| (format!("{y}-{m:02}"), *v)),
        "month",
        w,
    )
}

pub fn write_weekly_by_year_csv<W: Write>(
    weekly: &BTreeMap<(i32, u32), TypeCounts>,
    w: W,
) -> Result<()> {
    write_type_count_table(
        weekly
            .iter()
            .map(|((y, week), v)| (format!("{y},{week}"), *v)),
        "year,week",
        w,
    )
}

pub fn write_monthly_changes_csv<W: Write>(changes: &[MonthlyChange], mut w: W) -> Result<()> {
    writeln!(w, "series,mean_of_monthly_pct,pct_change_of_totals")?;
    for c in changes {
        writeln!(
            w,
            "{},{},{}",
            c.firearm_type.name(),
            c.mean_of_monthly_pct.map(|v| v.to_string()).unwrap_or_default(),
            c.pct_change_of_totals.map(|v| v.to_string()).unwrap_or_default(),
        )?;
    }
    Ok(())
}

/// Annual license issuance totals from the panel's license series.
pub fn write_annual_licenses_csv<W: Write>(panel: &DailyPanel, mut w: W) -> Result<()> {
    let mut by_year: BTreeMap<i32, (u64, u64)> = BTreeMap::new();
    for t in 0..panel.len() {
        let e = by_year.entry(panel.date_at(t).year()).or_insert((0, 0));
        e.0 += panel.new_licenses()[t] as u64;
        e.1 += panel.renewal_licenses()[t] as u64;
    }
    writeln!(w, "year,new,renewal,total")?;
    for (year, (n, r)) in by_year {
        writeln!(w, "{year},{n},{r},{}", n + r)?;
    }
    Ok(())
}

pub fn write_concentration_csv<W: Write>(report: &ConcentrationReport, mut w: W) -> Result<()> {
    writeln!(w, "bucket,buyers,purchases,share")?;
    for b in &report.buckets {
        writeln!(w, "{},{},{},{}", b.label, b.buyers, b.purchases, b.share)?;
    }
    writeln!(
        w,
        "top10_retailer_share,,,{}",
        report.top10_retailer_share.map(|v| v.to_string()).unwrap_or_default()
    )?;
    Ok(())
}

/// Histogram-ready long format: dealer, series, base and comparison sales,
/// ratio.
pub fn write_retailer_ratios_csv<W: Write>(ratios: &[RetailerRatio], mut w: W) -> Result<()> {
    writeln!(w, "dealer_id,zip,series,y0_sales,y1_sales,ratio")?;
    for r in ratios {
        for t in FirearmType::ALL {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.dealer_id,
                r.zip.clone().unwrap_or_default(),
                t.name(),
                r.y0_sales[t.index()],
                r.y1_sales[t.index()],
                r.ratios[t.index()].map(|v| v.to_string()).unwrap_or_default(),
            )?;
        }
    }
    Ok(())
}

/// Scatter points plus the fitted line for one firearm type.
pub fn write_association_csv<W: Write>(assoc: &Association, mut w: W) -> Result<()> {
    writeln!(
        w,
        "# series={} matched={} excluded={} correlation={} slope={} intercept={}",
        assoc.firearm_type.name(),
        assoc.matched,
        assoc.excluded,
        assoc.correlation.map(|v| v.to_string()).unwrap_or_default(),
        assoc.slope,
        assoc.intercept
    )?;
    writeln!(w, "dealer_id,covariate,ratio")?;
    for (dealer, x, y) in &assoc.points {
        writeln!(w, "{dealer},{x},{y}")?;
    }
    Ok(())
}

pub fn write_newly_observed_weekly_csv<W: Write>(
    weekly: &NewlyObservedWeekly,
    mut w: W,
) -> Result<()> {
    writeln!(
        w,
        "week_index,week_start,{},{}",
        FirearmType::ALL.map(|t| format!("newly_{}", t.name())).join(","),
        FirearmType::ALL.map(|t| format!("total_{}", t.name())).join(","),
    )?;
    let Some(first) = weekly.first_date else {
        return Ok(());
    };
    for (&week, total) in &weekly.total {
        let newly = weekly.newly.get(&week).copied().unwrap_or_default();
        write!(w, "{week},{}", first + Days::new(7 * week as u64))?;
        for t in FirearmType::ALL {
            write!(w, ",{}", newly.get(t))?;
        }
        for t in FirearmType::ALL {
            write!(w, ",{}", total.get(t))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// The four-way classifier evaluation (truth standard x weighting) in one
/// table.
pub struct ClassifierEvaluation {
    pub standard: &'static str,
    pub weighted: bool,
    pub matrix: ConfusionMatrix,
    pub metrics: Metrics,
    pub skipped_excluded: usize,
}

pub fn write_classifier_csv<W: Write>(evals: &[ClassifierEvaluation], mut w: W) -> Result<()> {
    writeln!(
        w,
        "standard,weighted,true_negative,false_positive,false_negative,true_positive,total,accuracy,false_negative_rate,false_positive_rate,miss_rate,fall_out,items_excluded"
    )?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for e in evals {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            e.standard,
            e.weighted,
            e.matrix.true_negative,
            e.matrix.false_positive,
            e.matrix.false_negative,
            e.matrix.true_positive,
            e.matrix.total(),
            fmt(e.metrics.accuracy),
            fmt(e.metrics.false_negative_rate),
            fmt(e.metrics.false_positive_rate),
            fmt(e.metrics.miss_rate),
            fmt(e.metrics.fall_out),
            e.skipped_excluded
        )?;
    }
    Ok(())
}
