//! Shared fixtures for the pipeline benchmarks.

use chrono::NaiveDate;
use countercast_core::design::us_federal_holidays;
use countercast_core::synth::{InterventionSpec, LicenseProcess, SynthConfig};
use countercast_core::ModelSpec;

/// A four-series panel from the full specification family: two sales lags,
/// two license lags, weekday/holiday/week-of-year effects, both trends.
pub fn benchmark_config(days: usize, seed: u64) -> SynthConfig {
    let start = NaiveDate::from_ymd_opt(2011, 1, 1).unwrap();
    let mut spec = ModelSpec::empty();
    spec.sales_lags = 2;
    spec.license_lags = 2;
    spec.day_of_week = true;
    spec.holiday = true;
    spec.week_of_year = true;
    spec.linear_trend = true;
    spec.quadratic_trend = true;
    spec.holiday_dates = us_federal_holidays(2010, 2020);
    let levels = [150.0f64, 40.0, 60.0, 35.0];
    let coefficients: Vec<Vec<f64>> = levels
        .iter()
        .map(|&level| {
            let mu = (level + 0.1f64).ln();
            let mut c = vec![0.55 * mu - 0.62, 0.30, 0.15];
            c.extend([0.03, 0.05, 0.02, 0.12, 0.28, -0.18]);
            c.push(-0.4);
            for w in 2..=52u32 {
                c.push(0.10 * (std::f64::consts::TAU * (w as f64 - 1.0) / 52.0).sin());
            }
            c.extend([0.12, -0.04, 0.05, 0.03, 0.04, 0.02]);
            c
        })
        .collect();
    let mut sigma = vec![vec![0.0025; 4]; 4];
    for (k, row) in sigma.iter_mut().enumerate() {
        row[k] = 0.005;
    }
    SynthConfig {
        start_date: start,
        days,
        series_names: ["Handgun", "TAWRifle", "NonTAWRifle", "Shotgun"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        spec,
        coefficients,
        sigma,
        offset: 0.1,
        licenses: LicenseProcess::default(),
        intervention_date: Some(start + chrono::Days::new(days as u64 - 26)),
        interventions: vec![InterventionSpec {
            series: 1,
            start_offset: 0,
            end_offset: 4,
            factor: 7.16,
        }],
        seed,
        burn_in: 250,
    }
}
