//! Cross-module integration checks: holdout behavior, bootstrap symmetry,
//! overfitting direction in cross-validation, the six-spec comparison table,
//! and estimator convergence on generated panels.

use chrono::{Days, NaiveDate};
use countercast_core::design::{build_design, time_effect_grid};
use countercast_core::effects::holdout_validation;
use countercast_core::selection::LagDimension;
use countercast_core::synth::{generate_panel, LicenseProcess, SynthConfig};
use countercast_core::*;

fn date(s: &str) -> NaiveDate {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
}

/// AR(1) + weekday process over `series` series.
fn ar1_config(series: usize, days: usize, level: f64, alpha: f64, var: f64, seed: u64) -> SynthConfig {
    let mut spec = ModelSpec::empty();
    spec.sales_lags = 1;
    spec.day_of_week = true;
    let mu = (level + 0.1f64).ln();
    let coefficients: Vec<Vec<f64>> = (0..series)
        .map(|_| {
            let mut c = vec![(1.0 - alpha) * mu - 0.046, alpha];
            c.extend([0.03, 0.05, 0.02, 0.12, 0.28, -0.18]);
            c
        })
        .collect();
    let mut sigma = vec![vec![var * 0.4; series]; series];
    for (k, row) in sigma.iter_mut().enumerate() {
        row[k] = var;
    }
    SynthConfig {
        start_date: date("2014-01-06"),
        days,
        series_names: (0..series).map(|j| format!("s{j}")).collect(),
        spec,
        coefficients,
        sigma,
        offset: 0.1,
        licenses: LicenseProcess {
            new_rate: 25.0,
            renewal_rate: 35.0,
            delay_min: 35,
            delay_max: 40,
        },
        intervention_date: None,
        interventions: vec![],
        seed,
        burn_in: 150,
    }
}

#[test]
fn holdout_on_noiseless_panel_is_exact() {
    let mut config = ar1_config(2, 500, 90.0, 0.4, 0.0, 11);
    config.spec.license_lags = 1;
    for c in config.coefficients.iter_mut() {
        c.extend([0.02, 0.01]);
    }
    let (panel, _) = generate_panel(&config).unwrap();
    let cutoff = panel.end_date() - Days::new(9);
    let report = holdout_validation(&panel, &config.spec, cutoff, 10, 100, 5).unwrap();
    for s in &report.series {
        // Counts are integers, predictions real-valued: errors at rounding scale.
        assert!(
            s.mean_daily_pct_error.unwrap().abs() < 0.02,
            "{}: daily error {:?}",
            s.series,
            s.mean_daily_pct_error
        );
        assert!(s.cumulative_pct_error.unwrap().abs() < 0.02);
        assert_eq!(s.zero_days_excluded, 0);
    }
}

#[test]
fn holdout_errors_are_unbiased_across_replications() {
    let mut errors = Vec::new();
    for run in 0..50u64 {
        let config = ar1_config(1, 420, 80.0, 0.45, 0.01, 400 + run);
        let (panel, _) = generate_panel(&config).unwrap();
        let cutoff = panel.end_date() - Days::new(9);
        let report = holdout_validation(&panel, &config.spec, cutoff, 10, 120, run).unwrap();
        errors.push(report.series[0].cumulative_pct_error.unwrap());
    }
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let sd = (errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    // The mean error stays within 3 standard errors of zero.
    assert!(
        mean.abs() <= 3.0 * sd / n.sqrt(),
        "holdout bias {mean:.4} vs sd {sd:.4}"
    );
}

#[test]
fn holdout_skips_zero_observed_days() {
    // A panel with hard zero days: tiny level drives rounded counts to zero.
    let config = ar1_config(1, 300, 0.4, 0.2, 0.04, 21);
    let (panel, _) = generate_panel(&config).unwrap();
    let cutoff = panel.end_date() - Days::new(9);
    let report = holdout_validation(&panel, &config.spec, cutoff, 10, 60, 1).unwrap();
    let s = &report.series[0];
    assert!(s.zero_days_excluded > 0);
    assert_eq!(s.days_used + s.zero_days_excluded, 10);
}

#[test]
fn bootstrap_median_tracks_point_path_under_symmetric_errors() {
    // No-trend process with symmetric log-scale errors.
    let config = ar1_config(2, 600, 120.0, 0.3, 0.0049, 31);
    let (panel, _) = generate_panel(&config).unwrap();
    let cutoff = panel.end_date() + Days::new(1);
    let fit = fit_sur(&panel, &config.spec).unwrap();
    let exo = ExogenousFuture {
        new_licenses: vec![25; 15],
        renewal_licenses: vec![35; 15],
    };
    let fc = forecast_counterfactual(&fit, &panel, cutoff, 15, &exo, 4000, 9).unwrap();
    for t in 0..15 {
        for j in 0..2 {
            let mut draws: Vec<f64> = (0..fc.b).map(|b| fc.draw(b, t, j)).collect();
            draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let median = draws[fc.b / 2];
            let point = fc.point_path[(t, j)];
            assert!(
                (median - point).abs() / point < 0.02,
                "day {t} series {j}: median {median:.2} vs mean path {point:.2}"
            );
        }
    }
}

#[test]
fn irrelevant_regressors_raise_cv_error_on_average() {
    // DGP has weekday effects only; the larger spec adds trend terms with
    // true coefficient zero. In-sample fit never gets worse; out-of-sample
    // MAE does on average.
    let mut small_total = 0.0;
    let mut big_total = 0.0;
    for run in 0..50u64 {
        let config = ar1_config(1, 250, 70.0, 0.0, 0.02, 800 + run);
        let (panel, _) = generate_panel(&config).unwrap();
        let small = config.spec.clone();
        let mut big = small.clone();
        big.linear_trend = true;
        big.quadratic_trend = true;
        let reports = compare_time_specs(&panel, &[small.clone(), big.clone()], 10, 0).unwrap();
        small_total += reports[0].mean_mae();
        big_total += reports[1].mean_mae();
        if run < 5 {
            // Nested least squares: in-sample SSR can only shrink.
            let d_small = build_design(&panel, 0, &small).unwrap();
            let d_big = build_design(&panel, 0, &big).unwrap();
            let ssr = |d: &DesignMatrix| {
                let fit = fit_ols(d).unwrap();
                fit.residuals.iter().map(|e| e * e).sum::<f64>()
            };
            assert!(ssr(&d_big) <= ssr(&d_small) + 1e-9);
        }
    }
    assert!(
        big_total > small_total,
        "irrelevant regressors lowered average CV MAE: {big_total:.4} vs {small_total:.4}"
    );
}

#[test]
fn six_spec_grid_structural() {
    // Two full years plus margin so day-of-year dummies stay estimable in
    // every training fold.
    let mut config = ar1_config(2, 1100, 100.0, 0.3, 0.01, 77);
    config.spec.week_of_year = true;
    let width = countercast_core::design::layout(&config.spec).width;
    for c in config.coefficients.iter_mut() {
        let mut seasonal: Vec<f64> = (2..=52)
            .map(|w| 0.08 * (std::f64::consts::TAU * (w as f64 - 1.0) / 52.0).sin())
            .collect();
        c.append(&mut seasonal);
        assert_eq!(c.len(), width);
    }
    let (panel, _) = generate_panel(&config).unwrap();
    let holidays = countercast_core::design::us_federal_holidays(2014, 2017);
    let grid = time_effect_grid(1, 0, &holidays);
    let reports = compare_time_specs(&panel, &grid, 10, 0).unwrap();
    assert_eq!(reports.len(), 6);
    for r in &reports {
        assert_eq!(r.per_series.len(), 2);
        for s in &r.per_series {
            assert!(s.rmse >= s.mae);
            assert!(s.mae > 0.0);
        }
        assert_eq!(r.fold_count, 10);
    }
    // All six scored on identical folds: same prediction counts.
    let counts: Vec<usize> = reports.iter().map(|r| r.per_series[0].predictions).collect();
    assert!(counts.windows(2).all(|w| w[0] == w[1]));

    // The generating process uses week-of-year seasonality, so the
    // week-of-year family beats its day-of-year counterpart on MAE.
    assert!(
        reports[0].mean_mae() < reports[1].mean_mae(),
        "woy {} vs doy {}",
        reports[0].mean_mae(),
        reports[1].mean_mae()
    );
    assert!(reports[4].mean_mae() < reports[5].mean_mae());

    // Table export mirrors the layout: flags, lags, then series x metrics.
    let mut table = Vec::new();
    countercast_core::report::write_cv_table(&reports, &mut table).unwrap();
    let table = String::from_utf8(table).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 1 + 6 + 2 + 2 * 2);
    assert!(lines[0].starts_with("row,spec_1,spec_2"));
    assert!(lines[1].starts_with("day_of_week_fe,x,x,x,x,x,x"));
    // The week-of-year and day-of-year rows alternate.
    assert!(lines[3].starts_with("day_of_year_fe,,x,,x,,x"));
    assert!(lines[4].starts_with("week_of_year_fe,x,,x,,x,"));
}

#[test]
fn r_squared_matches_independent_recomputation() {
    let config = ar1_config(3, 500, 90.0, 0.4, 0.0064, 17);
    let (panel, _) = generate_panel(&config).unwrap();
    let fit = fit_sur(&panel, &config.spec).unwrap();
    for (j, r2) in countercast_core::estimator::r_squared(&fit).iter().enumerate() {
        // Recompute 1 - SSR/SST from the stored residuals and raw panel logs.
        let target = panel.log_series(j).unwrap();
        let values = &target.values()[config.spec.max_lag()..];
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let sst: f64 = values.iter().map(|y| (y - mean) * (y - mean)).sum();
        let ssr: f64 = fit.residuals.column(j).iter().map(|e| e * e).sum();
        let want = (1.0 - ssr / sst).max(0.0);
        assert!((r2.unwrap() - want).abs() <= 1e-10, "series {j}");
    }
}

#[test]
fn ols_approaches_truth_as_noise_vanishes() {
    // High counts keep integer rounding negligible on the log scale.
    let mut worst = Vec::new();
    for var in [0.01, 1e-6] {
        let config = ar1_config(1, 900, 2500.0, 0.5, var, 13);
        let (panel, _) = generate_panel(&config).unwrap();
        let design = build_design(&panel, 0, &config.spec).unwrap();
        let fit = fit_ols(&design).unwrap();
        let err = fit
            .coefficients
            .iter()
            .zip(&config.coefficients[0])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        worst.push(err);
    }
    assert!(worst[1] < worst[0], "error did not shrink: {worst:?}");
    assert!(worst[1] < 5e-3, "residual coefficient error {:.2e}", worst[1]);
}

#[test]
fn auto_select_orders_sales_then_license() {
    // Process with one sales lag and one license lag.
    let mut config = ar1_config(3, 800, 90.0, 0.45, 0.0049, 51);
    config.spec.license_lags = 1;
    for c in config.coefficients.iter_mut() {
        c.extend([0.10, 0.08]);
    }
    let (panel, _) = generate_panel(&config).unwrap();
    let base = config.spec.with_lags(0, 0);
    let selection = auto_select(&panel, &base, 4, 3, 10, 3).unwrap();
    assert_eq!(selection.spec.sales_lags, selection.sales.selected);
    assert_eq!(selection.spec.license_lags, selection.license.selected);
    assert!(selection.sales.selected >= 1, "sales lag signal missed");
    // Stage ordering: license candidates were evaluated with the selected
    // sales depth, so lag-0 license MAE matches the sales stage's selected MAE
    // only when the burn-in windows coincide; at minimum both stages ran.
    assert!(!selection.sales.mae_by_lag.is_empty());
    assert!(!selection.license.mae_by_lag.is_empty());
}

#[test]
fn select_lags_license_dimension() {
    let mut config = ar1_config(2, 700, 100.0, 0.3, 0.0049, 61);
    config.spec.license_lags = 2;
    for c in config.coefficients.iter_mut() {
        c.extend([0.12, 0.06, 0.10, 0.05]);
    }
    let (panel, _) = generate_panel(&config).unwrap();
    let base = config.spec.with_lags(1, 0);
    let sel = select_lags(&panel, &base, LagDimension::License, 4, 10, 0).unwrap();
    assert!(sel.selected >= 1, "license signal missed entirely");
}
