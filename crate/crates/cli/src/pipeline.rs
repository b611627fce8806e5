//! The end-to-end report pipeline: every stage writes into a staging
//! directory that is renamed into place only when the whole run succeeds, so
//! a failed run leaves no partial bundle.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use serde::Serialize;
use sha2::{Digest, Sha256};

use countercast_core::data::{
    ingest_licenses_path, ingest_transactions_path, AggregationSummary, IngestReport,
    TransactionRecord,
};
use countercast_core::descriptives;
use countercast_core::effects::{estimate_effects, holdout_validation};
use countercast_core::report as tables;
use countercast_core::{
    aggregate_daily, auto_select, compare_time_specs, fit_sur, forecast_counterfactual,
    time_effect_grid, DailyPanel, FirearmType,
};

use crate::config::{DescribeConfig, RunConfig};

#[derive(Debug, Serialize)]
pub struct IngestSummary {
    pub range_start: NaiveDate,
    pub range_end: NaiveDate,
    pub transactions: IngestReport,
    pub licenses: IngestReport,
    pub aggregation: AggregationSummary,
}

/// Ingests both record files and aggregates them onto the configured (or
/// data-implied) date range.
pub fn ingest_panel(
    run: &RunConfig,
    transactions: Option<PathBuf>,
    licenses: Option<PathBuf>,
    start: Option<NaiveDate>,
    end: Option<NaiveDate>,
) -> Result<(DailyPanel, IngestSummary)> {
    let txn_path = transactions
        .or_else(|| run.paths.transactions.clone())
        .ok_or_else(|| anyhow::anyhow!("no transactions file (use --transactions or [paths])"))?;
    let lic_path = licenses.or_else(|| run.paths.licenses.clone());
    let (records, txn_report) = ingest_transactions_path(&txn_path)
        .with_context(|| format!("ingesting {}", txn_path.display()))?;
    let (lic_records, lic_report) = match &lic_path {
        Some(path) => {
            ingest_licenses_path(path).with_context(|| format!("ingesting {}", path.display()))?
        }
        None => (Vec::new(), IngestReport::default()),
    };
    let range_start = start
        .or(run.range.map(|r| r.start))
        .or_else(|| records.iter().map(|r| r.date).min())
        .ok_or_else(|| anyhow::anyhow!("empty transactions file and no explicit range"))?;
    let range_end = end
        .or(run.range.map(|r| r.end))
        .or_else(|| records.iter().map(|r| r.date).max())
        .ok_or_else(|| anyhow::anyhow!("empty transactions file and no explicit range"))?;
    let (panel, aggregation) =
        aggregate_daily(&records, &lic_records, range_start, range_end, run.offset)?;
    Ok((
        panel,
        IngestSummary {
            range_start,
            range_end,
            transactions: txn_report,
            licenses: lic_report,
            aggregation,
        },
    ))
}

/// All descriptive tables as (file name, contents).
pub fn describe_tables(
    run: &RunConfig,
    describe: &DescribeConfig,
    records: &[TransactionRecord],
    covariates_path: Option<&Path>,
) -> Result<Vec<(String, Vec<u8>)>> {
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    let mut push = |name: &str, bytes: Vec<u8>| files.push((name.to_string(), bytes));

    let annual = descriptives::annual_totals(records);
    let mut buf = Vec::new();
    tables::write_annual_totals_csv(&annual, &mut buf)?;
    push("annual_sales.csv", buf);

    let monthly = descriptives::monthly_totals(records);
    let mut buf = Vec::new();
    tables::write_monthly_totals_csv(&monthly, &mut buf)?;
    push("monthly_sales.csv", buf);

    let changes =
        descriptives::monthly_yoy_change(&monthly, describe.ratio_base_year, describe.ratio_comparison_year);
    let mut buf = Vec::new();
    tables::write_monthly_changes_csv(&changes, &mut buf)?;
    push("monthly_changes.csv", buf);

    let weekly = descriptives::weekly_by_year(records);
    let mut buf = Vec::new();
    tables::write_weekly_by_year_csv(&weekly, &mut buf)?;
    push("weekly_by_year.csv", buf);

    let newly = descriptives::newly_observed_weekly(records);
    let mut buf = Vec::new();
    tables::write_newly_observed_weekly_csv(&newly, &mut buf)?;
    push("newly_observed_weekly.csv", buf);

    let newly_by_year = descriptives::weekly_newly_observed_by_year(records);
    let mut buf = Vec::new();
    tables::write_weekly_by_year_csv(&newly_by_year, &mut buf)?;
    push("newly_observed_by_year.csv", buf);

    if let Some(cutoff) = run.cutoff.or(describe.spike_start) {
        let spike_start = describe.spike_start.unwrap_or(cutoff);
        let spike_end = describe
            .spike_end
            .unwrap_or(spike_start + chrono::Days::new(4));
        let concentration = descriptives::purchaser_concentration(
            records,
            spike_start,
            spike_end,
            &[FirearmType::TawRifle, FirearmType::NonTawRifle],
        )?;
        let mut buf = Vec::new();
        tables::write_concentration_csv(&concentration, &mut buf)?;
        push("concentration.csv", buf);
    }

    match descriptives::retailer_sales_ratios(
        records,
        describe.ratio_base_year,
        describe.ratio_comparison_year,
        describe.coverage,
        FirearmType::TawRifle,
    ) {
        Ok(ratios) => {
            let mut buf = Vec::new();
            tables::write_retailer_ratios_csv(&ratios, &mut buf)?;
            push("retailer_ratios.csv", buf);
            if let Some(path) = covariates_path {
                let file = std::fs::File::open(path)
                    .with_context(|| format!("opening covariates {}", path.display()))?;
                let covariates = descriptives::read_covariates(file)?;
                for t in FirearmType::ALL {
                    match descriptives::covariate_association(&ratios, &covariates, t) {
                        Ok(assoc) => {
                            let mut buf = Vec::new();
                            tables::write_association_csv(&assoc, &mut buf)?;
                            push(&format!("association_{}.csv", t.name()), buf);
                        }
                        Err(err) => {
                            // Too few matched retailers for this type is a
                            // data condition, not a pipeline failure.
                            eprintln!("association {} skipped: {err}", t.name());
                        }
                    }
                }
            }
        }
        Err(err) => {
            eprintln!("retailer ratios skipped: {err}");
        }
    }

    if let Some(path) = &run.paths.external_annual {
        let rows = crate::external_correlation(records, path)?;
        let mut buf = Vec::new();
        {
            use std::io::Write;
            writeln!(buf, "series,correlation,years")?;
            for (name, r, n) in rows {
                writeln!(
                    buf,
                    "{name},{},{n}",
                    r.map(|v| v.to_string()).unwrap_or_default()
                )?;
            }
        }
        push("external_correlation.csv", buf);
    }

    Ok(files)
}

#[derive(Serialize)]
struct ManifestInput {
    role: String,
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest {
    tool: String,
    version: String,
    seed: u64,
    bootstrap_reps: usize,
    confidence: f64,
    offset: f64,
    cutoff: Option<NaiveDate>,
    inputs: Vec<ManifestInput>,
    outputs: Vec<String>,
}

fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    Ok(hex)
}

/// Runs ingestion, selection, estimation, forecasting, effects, holdout
/// validation, descriptives, and classifier scoring into one atomic bundle.
pub fn run_pipeline(run: &RunConfig) -> Result<()> {
    let output = run
        .paths
        .output
        .clone()
        .ok_or_else(|| anyhow::anyhow!("no output directory (use --output or [paths].output)"))?;
    if output.exists() && output.read_dir().map(|mut d| d.next().is_some()).unwrap_or(true) {
        bail!("output {} already exists and is not empty", output.display());
    }
    let staging = output.with_file_name(format!(
        "{}.staging{}",
        output
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_else(|| "bundle".into()),
        std::process::id()
    ));
    if staging.exists() {
        std::fs::remove_dir_all(&staging)?;
    }
    std::fs::create_dir_all(&staging)?;
    let result = build_bundle(run, &staging);
    match result {
        Ok(()) => {
            if output.exists() {
                std::fs::remove_dir(&output)?;
            }
            std::fs::rename(&staging, &output)?;
            println!("report bundle written to {}", output.display());
            Ok(())
        }
        Err(err) => {
            let _ = std::fs::remove_dir_all(&staging);
            Err(err)
        }
    }
}

fn build_bundle(run: &RunConfig, dir: &Path) -> Result<()> {
    let mut outputs: Vec<String> = Vec::new();
    let mut save = |name: &str, bytes: &[u8]| -> Result<()> {
        tables::atomic_write(&dir.join(name), bytes).with_context(|| format!("writing {name}"))?;
        outputs.push(name.to_string());
        Ok(())
    };

    // Ingestion.
    let (panel, summary) = ingest_panel(run, None, None, None, None)?;
    let mut panel_csv = Vec::new();
    tables::write_panel_csv(&panel, &mut panel_csv)?;
    save("panel.csv", &panel_csv)?;
    save("ingest_summary.json", &crate::to_json(&summary)?)?;

    let cutoff = run
        .cutoff
        .ok_or_else(|| anyhow::anyhow!("the report pipeline needs a cutoff date"))?;
    let train = panel.up_to(cutoff)?;
    let windows = run.effect_windows()?;
    let horizon = windows.iter().map(|w| w.end_offset + 1).max().unwrap();
    if panel.index_of(cutoff).is_none()
        || panel.len() - panel.index_of(cutoff).unwrap() < horizon
    {
        bail!(
            "panel range must cover {horizon} days from the cutoff for licenses and observed outcomes"
        );
    }

    // Specification: configured model, lags optionally replaced by selection.
    let mut spec = crate::spec_for(run, &train, None, None)?;
    if let Some(select_cfg) = &run.select {
        let selection = auto_select(
            &train,
            &spec,
            select_cfg.max_sales_lag,
            select_cfg.max_license_lag,
            select_cfg.folds,
            run.seed,
        )?;
        save("selection.json", &crate::to_json(&selection)?)?;
        if select_cfg.grid {
            let grid = time_effect_grid(
                selection.spec.sales_lags,
                selection.spec.license_lags,
                &selection.spec.holiday_dates,
            );
            let reports = compare_time_specs(&train, &grid, select_cfg.folds, run.seed)?;
            let mut cv_csv = Vec::new();
            tables::write_cv_table(&reports, &mut cv_csv)?;
            save("cv_table.csv", &cv_csv)?;
        }
        spec = selection.spec;
    }

    // Fit on pre-cutoff data.
    let fit = fit_sur(&train, &spec)?;
    let mut coef_csv = Vec::new();
    tables::write_fit_csv(&fit, &mut coef_csv)?;
    save("fit_coefficients.csv", &coef_csv)?;
    let mut fit_json = Vec::new();
    tables::write_fit_summary_json(&fit, &mut fit_json)?;
    save("fit_summary.json", &fit_json)?;

    // Counterfactual forecast and windowed effects.
    let exo = panel.exogenous_after(cutoff, horizon)?;
    let forecast =
        forecast_counterfactual(&fit, &train, cutoff, horizon, &exo, run.bootstrap_reps, run.seed)?;
    let mut fc_csv = Vec::new();
    tables::write_forecast_csv(&forecast, &mut fc_csv)?;
    save("forecast.csv", &fc_csv)?;
    if run.export_draws {
        let mut buf = Vec::new();
        forecast.write_draws(&mut buf)?;
        save("draws.bin", &buf)?;
    }
    let observed = panel.slice(cutoff, horizon)?;
    let mut estimates = Vec::new();
    for window in &windows {
        estimates.extend(estimate_effects(&observed, &forecast, window, run.confidence)?);
    }
    let mut effects_csv = Vec::new();
    tables::write_effects_csv(&estimates, &mut effects_csv)?;
    save("effects.csv", &effects_csv)?;
    save("breakeven.json", &crate::to_json(&crate::breakeven_rows(&estimates))?)?;

    // Human-readable digest of the run.
    let mut summary_text = String::new();
    {
        use std::fmt::Write;
        let w = &mut summary_text;
        writeln!(w, "countercast run summary").unwrap();
        writeln!(w, "=======================").unwrap();
        writeln!(
            w,
            "cutoff {cutoff} | seed {} | bootstrap reps {} | confidence {}",
            run.seed, run.bootstrap_reps, run.confidence
        )
        .unwrap();
        writeln!(
            w,
            "panel {} .. {} ({} days); fit on {} pre-cutoff days",
            panel.start_date(),
            panel.end_date(),
            panel.len(),
            train.len()
        )
        .unwrap();
        writeln!(
            w,
            "specification: {} sales lags, {} license lags{}",
            spec.sales_lags,
            spec.license_lags,
            if run.select.is_some() { " (cross-validated)" } else { "" }
        )
        .unwrap();
        for (name, r2) in fit.series_names.iter().zip(&fit.r_squared) {
            match r2 {
                Some(v) => writeln!(w, "  {name}: R^2 {v:.3}").unwrap(),
                None => writeln!(w, "  {name}: R^2 undefined").unwrap(),
            }
        }
        writeln!(w).unwrap();
        writeln!(w, "effects (observed vs counterfactual):").unwrap();
        for e in &estimates {
            writeln!(
                w,
                "  {:<10} {:<12} {:+8.0} ({}){}",
                e.window.label,
                e.series,
                e.abs_diff,
                e.pct_diff
                    .map(|p| format!("{:+.0}%", p * 100.0))
                    .unwrap_or_else(|| "n/a".into()),
                if e.significant { "  significant" } else { "" }
            )
            .unwrap();
        }
    }
    save("summary.txt", summary_text.as_bytes())?;

    // Holdout validation before the cutoff.
    let holdout_cfg = run.holdout.unwrap_or(crate::config::HoldoutConfig {
        days_before_cutoff: 10,
        horizon: 10,
    });
    let holdout_cutoff = cutoff - chrono::Days::new(holdout_cfg.days_before_cutoff as u64);
    let holdout = holdout_validation(
        &panel.up_to(cutoff)?,
        &spec,
        holdout_cutoff,
        holdout_cfg.horizon,
        run.bootstrap_reps,
        run.seed,
    )?;
    let mut holdout_csv = Vec::new();
    tables::write_holdout_csv(&holdout, &mut holdout_csv)?;
    save("holdout.csv", &holdout_csv)?;

    // License issuance annual totals.
    let mut lic_csv = Vec::new();
    tables::write_annual_licenses_csv(&panel, &mut lic_csv)?;
    save("annual_licenses.csv", &lic_csv)?;

    // Descriptives from the raw transaction records.
    let txn_path = run.paths.transactions.clone().unwrap();
    let (records, _) = ingest_transactions_path(&txn_path)?;
    for (name, bytes) in
        describe_tables(run, &run.describe, &records, run.paths.covariates.as_deref())?
    {
        save(&name, &bytes)?;
    }

    // Classifier evaluation when labels are configured.
    if let Some(labels_path) = &run.paths.labels {
        let file = std::fs::File::open(labels_path)
            .with_context(|| format!("opening labels {}", labels_path.display()))?;
        let (items, predicted) = countercast_core::classifier::read_labels(file)?;
        let evals = crate::classifier_evaluations(&items, &predicted)?;
        let mut csv = Vec::new();
        tables::write_classifier_csv(&evals, &mut csv)?;
        save("classifier_eval.csv", &csv)?;
    }

    // Manifest: inputs hashed, outputs listed.
    let mut inputs = Vec::new();
    let roles: [(&str, Option<&PathBuf>); 6] = [
        ("transactions", run.paths.transactions.as_ref()),
        ("licenses", run.paths.licenses.as_ref()),
        ("holidays", run.paths.holidays.as_ref()),
        ("labels", run.paths.labels.as_ref()),
        ("covariates", run.paths.covariates.as_ref()),
        ("external_annual", run.paths.external_annual.as_ref()),
    ];
    for (role, path) in roles {
        if let Some(path) = path {
            inputs.push(ManifestInput {
                role: role.to_string(),
                path: path.display().to_string(),
                sha256: sha256_hex(path)?,
            });
        }
    }
    outputs.push("manifest.json".to_string());
    outputs.sort();
    let manifest = Manifest {
        tool: "countercast".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: run.seed,
        bootstrap_reps: run.bootstrap_reps,
        confidence: run.confidence,
        offset: run.offset,
        cutoff: run.cutoff,
        inputs,
        outputs,
    };
    tables::atomic_write(&dir.join("manifest.json"), &crate::to_json(&manifest)?)?;
    Ok(())
}
