//! Per-equation design matrices: lagged log outcomes, calendar effects,
//! trends, and lagged log license regressors.

use std::collections::BTreeSet;
use std::ops::Range;

use chrono::{Datelike, Days, NaiveDate, Weekday};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::DailyPanel;
use crate::error::{Error, Result};
use crate::linalg;

/// Regression specification: lag depths plus the time-effect family.
///
/// `week_of_year` and `day_of_year` are alternative seasonal families and
/// cannot both be on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub sales_lags: usize,
    pub license_lags: usize,
    pub day_of_week: bool,
    pub holiday: bool,
    pub week_of_year: bool,
    pub day_of_year: bool,
    pub linear_trend: bool,
    pub quadratic_trend: bool,
    #[serde(default)]
    pub holiday_dates: BTreeSet<NaiveDate>,
}

impl Default for ModelSpec {
    /// The full selected specification: 28 sales lags, 10 license lags,
    /// weekday + holiday + week-of-year effects with both trends.
    fn default() -> Self {
        ModelSpec {
            sales_lags: 28,
            license_lags: 10,
            day_of_week: true,
            holiday: true,
            week_of_year: true,
            day_of_year: false,
            linear_trend: true,
            quadratic_trend: true,
            holiday_dates: BTreeSet::new(),
        }
    }
}

impl ModelSpec {
    /// Intercept-only starting point: no lags, no time effects.
    pub fn empty() -> Self {
        ModelSpec {
            sales_lags: 0,
            license_lags: 0,
            day_of_week: false,
            holiday: false,
            week_of_year: false,
            day_of_year: false,
            linear_trend: false,
            quadratic_trend: false,
            holiday_dates: BTreeSet::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.week_of_year && self.day_of_year {
            return Err(Error::invalid(
                "week-of-year and day-of-year effects are mutually exclusive",
            ));
        }
        Ok(())
    }

    pub fn max_lag(&self) -> usize {
        self.sales_lags.max(self.license_lags)
    }

    pub fn with_lags(&self, sales_lags: usize, license_lags: usize) -> Self {
        let mut spec = self.clone();
        spec.sales_lags = sales_lags;
        spec.license_lags = license_lags;
        spec
    }

    pub fn is_holiday(&self, date: NaiveDate) -> bool {
        self.holiday_dates.contains(&date)
    }
}

/// The six time-effect alternatives evaluated against each other: weekday and
/// holiday effects always on, seasonal family and trends varying.
pub fn time_effect_grid(
    sales_lags: usize,
    license_lags: usize,
    holiday_dates: &BTreeSet<NaiveDate>,
) -> Vec<ModelSpec> {
    let base = |woy: bool, lin: bool, quad: bool| ModelSpec {
        sales_lags,
        license_lags,
        day_of_week: true,
        holiday: true,
        week_of_year: woy,
        day_of_year: !woy,
        linear_trend: lin,
        quadratic_trend: quad,
        holiday_dates: holiday_dates.clone(),
    };
    vec![
        base(true, false, false),
        base(false, false, false),
        base(true, true, false),
        base(false, true, false),
        base(true, true, true),
        base(false, true, true),
    ]
}

/// Week of year as capped 7-day blocks: min(ceil(ordinal / 7), 52), so days
/// 365/366 fold into week 52.
pub fn week_of_year(date: NaiveDate) -> u32 {
    date.ordinal().div_ceil(7).min(52)
}

/// Day of year with Feb 29 pooled into Feb 28's slot, giving 1..=365 in all
/// years.
pub fn adjusted_day_of_year(date: NaiveDate) -> u32 {
    let ordinal = date.ordinal();
    if date.leap_year() && ordinal >= 60 {
        ordinal - 1
    } else {
        ordinal
    }
}

/// Columns occupied by each regressor family, in design-row order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DesignLayout {
    pub intercept: usize,
    pub sales_lags: Range<usize>,
    pub calendar: Range<usize>,
    pub new_license_lags: Range<usize>,
    pub renewal_license_lags: Range<usize>,
    pub width: usize,
}

fn calendar_width(spec: &ModelSpec) -> usize {
    let mut w = 0;
    if spec.day_of_week {
        w += 6;
    }
    if spec.holiday {
        w += 1;
    }
    if spec.week_of_year {
        w += 51;
    }
    if spec.day_of_year {
        w += 364;
    }
    if spec.linear_trend {
        w += 1;
    }
    if spec.quadratic_trend {
        w += 1;
    }
    w
}

pub fn layout(spec: &ModelSpec) -> DesignLayout {
    let sales_start = 1;
    let calendar_start = sales_start + spec.sales_lags;
    let new_start = calendar_start + calendar_width(spec);
    let renew_start = new_start + spec.license_lags;
    let width = renew_start + spec.license_lags;
    DesignLayout {
        intercept: 0,
        sales_lags: sales_start..calendar_start,
        calendar: calendar_start..new_start,
        new_license_lags: new_start..renew_start,
        renewal_license_lags: renew_start..width,
        width,
    }
}

pub fn column_labels(spec: &ModelSpec) -> Vec<String> {
    let mut labels = Vec::with_capacity(layout(spec).width);
    labels.push("intercept".to_string());
    for lag in 1..=spec.sales_lags {
        labels.push(format!("sales_lag_{lag}"));
    }
    if spec.day_of_week {
        for day in ["tue", "wed", "thu", "fri", "sat", "sun"] {
            labels.push(format!("dow_{day}"));
        }
    }
    if spec.holiday {
        labels.push("holiday".to_string());
    }
    if spec.week_of_year {
        for week in 2..=52 {
            labels.push(format!("woy_{week}"));
        }
    }
    if spec.day_of_year {
        for day in 2..=365 {
            labels.push(format!("doy_{day}"));
        }
    }
    if spec.linear_trend {
        labels.push("trend".to_string());
    }
    if spec.quadratic_trend {
        labels.push("trend_sq".to_string());
    }
    for lag in 1..=spec.license_lags {
        labels.push(format!("new_lic_lag_{lag}"));
    }
    for lag in 1..=spec.license_lags {
        labels.push(format!("renew_lic_lag_{lag}"));
    }
    labels
}

/// Calendar features for one date: one-hot weekday (Monday baseline), holiday
/// indicator, one-hot seasonal family (first category baseline), and trend
/// terms scaled to the unit interval over the panel length.
pub fn calendar_features(
    date: NaiveDate,
    spec: &ModelSpec,
    trend_index: i64,
    trend_len: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; calendar_width(spec)];
    fill_calendar(&mut out, date, spec, trend_index, trend_len);
    out
}

fn fill_calendar(out: &mut [f64], date: NaiveDate, spec: &ModelSpec, trend_index: i64, trend_len: usize) {
    // Callers reuse row buffers; stale one-hot entries must not survive.
    out.fill(0.0);
    let mut k = 0;
    if spec.day_of_week {
        let dow = date.weekday().num_days_from_monday() as usize;
        if dow >= 1 {
            out[k + dow - 1] = 1.0;
        }
        k += 6;
    }
    if spec.holiday {
        out[k] = if spec.is_holiday(date) { 1.0 } else { 0.0 };
        k += 1;
    }
    if spec.week_of_year {
        let week = week_of_year(date) as usize;
        if week >= 2 {
            out[k + week - 2] = 1.0;
        }
        k += 51;
    }
    if spec.day_of_year {
        let day = adjusted_day_of_year(date) as usize;
        if day >= 2 {
            out[k + day - 2] = 1.0;
        }
        k += 364;
    }
    let t = trend_index as f64 / trend_len as f64;
    if spec.linear_trend {
        out[k] = t;
        k += 1;
    }
    if spec.quadratic_trend {
        out[k] = t * t;
    }
}

/// Fills one full design row. Lagged values are read from history arrays at
/// `history_index - lag`, so callers control whether lags come from observed
/// or generated values.
#[allow(clippy::too_many_arguments)]
pub(crate) fn fill_row(
    out: &mut [f64],
    spec: &ModelSpec,
    layout: &DesignLayout,
    sales_log: &[f64],
    new_log: &[f64],
    renew_log: &[f64],
    history_index: usize,
    date: NaiveDate,
    trend_index: i64,
    trend_len: usize,
) {
    out[layout.intercept] = 1.0;
    for lag in 1..=spec.sales_lags {
        out[layout.sales_lags.start + lag - 1] = sales_log[history_index - lag];
    }
    fill_calendar(
        &mut out[layout.calendar.clone()],
        date,
        spec,
        trend_index,
        trend_len,
    );
    for lag in 1..=spec.license_lags {
        out[layout.new_license_lags.start + lag - 1] = new_log[history_index - lag];
        out[layout.renewal_license_lags.start + lag - 1] = renew_log[history_index - lag];
    }
}

/// One equation's regressor matrix and log-scale target.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub rows: DMatrix<f64>,
    pub column_labels: Vec<String>,
    pub target: DVector<f64>,
    /// First usable date (after the lag burn-in).
    pub first_date: NaiveDate,
}

impl DesignMatrix {
    pub fn new(
        rows: DMatrix<f64>,
        column_labels: Vec<String>,
        target: DVector<f64>,
        first_date: NaiveDate,
    ) -> Result<DesignMatrix> {
        if rows.ncols() != column_labels.len() {
            return Err(Error::invalid(format!(
                "{} labels for {} columns",
                column_labels.len(),
                rows.ncols()
            )));
        }
        if rows.nrows() != target.len() {
            return Err(Error::invalid("target length must match row count"));
        }
        let mut unique: Vec<&String> = column_labels.iter().collect();
        unique.sort();
        unique.dedup();
        if unique.len() != column_labels.len() {
            return Err(Error::invalid("duplicate column labels"));
        }
        Ok(DesignMatrix {
            rows,
            column_labels,
            target,
            first_date,
        })
    }

    pub fn usable_len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn width(&self) -> usize {
        self.rows.ncols()
    }
}

/// Builds the design for series `j` with the default burn-in
/// max(sales_lags, license_lags) and verifies full column rank.
pub fn build_design(panel: &DailyPanel, series: usize, spec: &ModelSpec) -> Result<DesignMatrix> {
    let design = build_design_with_burn_in(panel, series, spec, spec.max_lag())?;
    linalg::column_rank_check(&design.rows, &design.column_labels)?;
    Ok(design)
}

/// Builds the design for series `j`, dropping the first `burn_in` dates.
///
/// A burn-in larger than the spec's own lag depth pins the usable rows to a
/// fixed window, which keeps cross-validation folds identical across
/// candidate specifications.
pub fn build_design_with_burn_in(
    panel: &DailyPanel,
    series: usize,
    spec: &ModelSpec,
    burn_in: usize,
) -> Result<DesignMatrix> {
    spec.validate()?;
    if series >= panel.series_count() {
        return Err(Error::invalid(format!(
            "series index {series} out of range (panel has {})",
            panel.series_count()
        )));
    }
    if burn_in < spec.max_lag() {
        return Err(Error::invalid(format!(
            "burn-in {burn_in} shorter than max lag {}",
            spec.max_lag()
        )));
    }
    let t_total = panel.len();
    if t_total <= burn_in {
        return Err(Error::invalid(format!(
            "panel length {t_total} does not exceed burn-in {burn_in}"
        )));
    }
    let usable = t_total - burn_in;
    let lay = layout(spec);
    let labels = column_labels(spec);
    let sales_log = panel.log_series(series)?;
    let new_log = panel.log_new_licenses()?;
    let renew_log = panel.log_renewal_licenses()?;

    let mut rows = DMatrix::zeros(usable, lay.width);
    let mut target = DVector::zeros(usable);
    let mut buf = vec![0.0; lay.width];
    for r in 0..usable {
        let t = burn_in + r;
        fill_row(
            &mut buf,
            spec,
            &lay,
            sales_log.values(),
            new_log.values(),
            renew_log.values(),
            t,
            panel.date_at(t),
            t as i64,
            t_total,
        );
        for (c, &v) in buf.iter().enumerate() {
            rows[(r, c)] = v;
        }
        target[r] = sales_log.values()[t];
    }
    DesignMatrix::new(rows, labels, target, panel.date_at(burn_in))
}

/// Holiday list file: one ISO date per line; blank lines and `#` comments
/// allowed.
pub fn read_holidays<R: std::io::Read>(mut reader: R) -> Result<BTreeSet<NaiveDate>> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let mut out = BTreeSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let date = NaiveDate::parse_from_str(line, "%Y-%m-%d")
            .map_err(|_| Error::format(format!("holiday line {}: bad date {line:?}", idx + 1)))?;
        out.insert(date);
    }
    Ok(out)
}

/// Observed US federal holidays (weekend dates shifted to the adjacent
/// weekday), restricted to the given year range.
pub fn us_federal_holidays(first_year: i32, last_year: i32) -> BTreeSet<NaiveDate> {
    let mut out = BTreeSet::new();
    for year in (first_year - 1)..=(last_year + 1) {
        let mut dates = vec![
            observed(NaiveDate::from_ymd_opt(year, 1, 1).unwrap()),
            nth_weekday(year, 1, Weekday::Mon, 3),
            nth_weekday(year, 2, Weekday::Mon, 3),
            last_weekday(year, 5, Weekday::Mon),
            observed(NaiveDate::from_ymd_opt(year, 7, 4).unwrap()),
            nth_weekday(year, 9, Weekday::Mon, 1),
            nth_weekday(year, 10, Weekday::Mon, 2),
            observed(NaiveDate::from_ymd_opt(year, 11, 11).unwrap()),
            nth_weekday(year, 11, Weekday::Thu, 4),
            observed(NaiveDate::from_ymd_opt(year, 12, 25).unwrap()),
        ];
        if year >= 2021 {
            dates.push(observed(NaiveDate::from_ymd_opt(year, 6, 19).unwrap()));
        }
        for d in dates {
            if d.year() >= first_year && d.year() <= last_year {
                out.insert(d);
            }
        }
    }
    out
}

fn observed(date: NaiveDate) -> NaiveDate {
    match date.weekday() {
        Weekday::Sat => date - Days::new(1),
        Weekday::Sun => date + Days::new(1),
        _ => date,
    }
}

fn nth_weekday(year: i32, month: u32, weekday: Weekday, n: u32) -> NaiveDate {
    let first = NaiveDate::from_ymd_opt(year, month, 1).unwrap();
    let shift = (7 + weekday.num_days_from_monday() - first.weekday().num_days_from_monday()) % 7;
    first + Days::new((shift + 7 * (n - 1)) as u64)
}

fn last_weekday(year: i32, month: u32, weekday: Weekday) -> NaiveDate {
    let next_month = if month == 12 {
        NaiveDate::from_ymd_opt(year + 1, 1, 1).unwrap()
    } else {
        NaiveDate::from_ymd_opt(year, month + 1, 1).unwrap()
    };
    let last = next_month - Days::new(1);
    let shift = (7 + last.weekday().num_days_from_monday() - weekday.num_days_from_monday()) % 7;
    last - Days::new(shift as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::aggregate_daily;

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn full_spec() -> ModelSpec {
        ModelSpec::default()
    }

    #[test]
    fn mutually_exclusive_seasonal_families() {
        let mut spec = ModelSpec::empty();
        spec.week_of_year = true;
        spec.day_of_year = true;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn monday_week1_is_all_baseline() {
        // 2018-01-01 is a Monday in week 1.
        let spec = full_spec();
        let d = date("2018-01-01");
        assert_eq!(d.weekday(), Weekday::Mon);
        let feats = calendar_features(d, &spec, 10, 100);
        let w = calendar_width(&spec);
        // All dummies zero, only the two trailing trend terms non-zero.
        assert!(feats[..w - 2].iter().all(|&v| v == 0.0));
        assert!((feats[w - 2] - 0.1).abs() < 1e-12);
        assert!((feats[w - 1] - 0.01).abs() < 1e-12);
    }

    #[test]
    fn dec31_folds_into_week_52() {
        assert_eq!(week_of_year(date("2017-12-31")), 52); // day 365
        assert_eq!(week_of_year(date("2016-12-31")), 52); // day 366 (leap)
        assert_eq!(week_of_year(date("2017-01-07")), 1);
        assert_eq!(week_of_year(date("2017-01-08")), 2);
    }

    #[test]
    fn weekday_periodicity() {
        let spec = full_spec();
        let a = calendar_features(date("2016-03-04"), &spec, 0, 100);
        let b = calendar_features(date("2016-03-11"), &spec, 0, 100);
        // Same weekday dummy block (first 6 entries).
        assert_eq!(&a[..6], &b[..6]);
    }

    #[test]
    fn feb29_pools_into_feb28() {
        assert_eq!(
            adjusted_day_of_year(date("2016-02-29")),
            adjusted_day_of_year(date("2016-02-28"))
        );
        assert_eq!(
            adjusted_day_of_year(date("2016-03-01")),
            adjusted_day_of_year(date("2017-03-01"))
        );
        assert_eq!(adjusted_day_of_year(date("2016-12-31")), 365);
    }

    #[test]
    fn minimal_design_shape() {
        // T_y=1, T_z=0, no time effects, 3-day panel -> 2x2 (intercept, one lag).
        let panel = crate::data::DailyPanel::new(
            date("2016-01-01"),
            vec!["only".into()],
            vec![1, 3, 9],
            vec![0; 3],
            vec![0; 3],
            0.1,
        )
        .unwrap();
        let mut spec = ModelSpec::empty();
        spec.sales_lags = 1;
        let design = build_design(&panel, 0, &spec).unwrap();
        assert_eq!(design.rows.shape(), (2, 2));
        assert_eq!(design.column_labels, vec!["intercept", "sales_lag_1"]);
        assert_eq!(design.first_date, date("2016-01-02"));
        // Lag column carries yesterday's log count.
        assert!((design.rows[(0, 1)] - 1.1f64.ln()).abs() < 1e-12);
        assert!((design.target[0] - 3.1f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn paper_spec_column_count() {
        // P = 1 + T_y + 6 + 1 + 51 + 2 + 2*T_z with T_y=28, T_z=10.
        let spec = full_spec();
        let labels = column_labels(&spec);
        let expected = 1 + 28 + 6 + 1 + 51 + 2 + 2 * 10;
        assert_eq!(labels.len(), expected);
        assert_eq!(layout(&spec).width, expected);
        assert_eq!(
            labels.iter().filter(|l| l.starts_with("sales_lag_")).count(),
            28
        );
        assert_eq!(
            labels.iter().filter(|l| l.starts_with("new_lic_lag_")).count(),
            10
        );
        assert_eq!(
            labels.iter().filter(|l| l.starts_with("renew_lic_lag_")).count(),
            10
        );
    }

    #[test]
    fn intercept_only_reduction() {
        let (panel, _) = aggregate_daily(&[], &[], date("2016-01-01"), date("2016-01-05"), 0.1).unwrap();
        let spec = ModelSpec::empty();
        let design = build_design(&panel, 0, &spec).unwrap();
        assert_eq!(design.width(), 1);
        assert!(design.rows.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn label_stability_under_start_shift() {
        let spec = {
            let mut s = ModelSpec::empty();
            s.sales_lags = 2;
            s.day_of_week = true;
            s
        };
        let (p1, _) = aggregate_daily(&[], &[], date("2016-01-01"), date("2016-02-01"), 0.1).unwrap();
        let (p2, _) = aggregate_daily(&[], &[], date("2016-01-04"), date("2016-02-01"), 0.1).unwrap();
        let d1 = build_design_with_burn_in(&p1, 0, &spec, 2).unwrap();
        let d2 = build_design_with_burn_in(&p2, 0, &spec, 2).unwrap();
        assert_eq!(d1.column_labels, d2.column_labels);
    }

    #[test]
    fn burn_in_shorter_than_lag_rejected() {
        let (panel, _) = aggregate_daily(&[], &[], date("2016-01-01"), date("2016-03-01"), 0.1).unwrap();
        let mut spec = ModelSpec::empty();
        spec.sales_lags = 5;
        assert!(build_design_with_burn_in(&panel, 0, &spec, 3).is_err());
    }

    #[test]
    fn holidays_observed_shifts() {
        let holidays = us_federal_holidays(2016, 2016);
        // 2016-07-04 was a Monday: kept as-is.
        assert!(holidays.contains(&date("2016-07-04")));
        // Christmas 2016 fell on Sunday: observed Monday Dec 26.
        assert!(holidays.contains(&date("2016-12-26")));
        // New Year's Day 2017 fell on Sunday: observed Jan 2, 2017 (outside range).
        assert!(!holidays.contains(&date("2017-01-02")));
        // Thanksgiving 2016: fourth Thursday of November.
        assert!(holidays.contains(&date("2016-11-24")));
    }

    #[test]
    fn holiday_file_parsing() {
        let text = "# observed holidays\n2016-07-04\n\n2016-12-26\n";
        let dates = read_holidays(text.as_bytes()).unwrap();
        assert_eq!(dates.len(), 2);
        assert!(dates.contains(&date("2016-07-04")));
        assert!(read_holidays("not-a-date\n".as_bytes()).is_err());
    }

    #[test]
    fn time_effect_grid_has_six_variants() {
        let grid = time_effect_grid(1, 0, &BTreeSet::new());
        assert_eq!(grid.len(), 6);
        for spec in &grid {
            assert!(spec.validate().is_ok());
            assert!(spec.day_of_week && spec.holiday);
            assert!(spec.week_of_year != spec.day_of_year);
        }
        assert!(grid[4].week_of_year && grid[4].linear_trend && grid[4].quadratic_trend);
    }
}
