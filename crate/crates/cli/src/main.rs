//! Command-line entry point wiring ingestion, estimation, specification
//! search, counterfactual forecasting, effect estimation, classifier
//! evaluation, descriptives, and simulation into reproducible report bundles.

mod config;
mod pipeline;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use serde::Serialize;

use countercast_core::classifier::{self, TruthStandard};
use countercast_core::descriptives;
use countercast_core::design::ModelSpec;
use countercast_core::effects::{breakeven_weeks, estimate_effects};
use countercast_core::report as tables;
use countercast_core::synth::{self, SynthConfig};
use countercast_core::{
    auto_select, compare_time_specs, fit_sur, forecast_counterfactual, time_effect_grid,
    DailyPanel, FirearmType,
};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "countercast", version, about = "Counterfactual impact analysis for daily count panels")]
struct Cli {
    /// TOML run configuration; flags below override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for all randomness.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Intervention date; the forecast starts here.
    #[arg(long, global = true)]
    cutoff: Option<NaiveDate>,
    /// Bootstrap replication count.
    #[arg(long, global = true)]
    bootstrap_reps: Option<usize>,
    /// Two-sided interval level, e.g. 0.95.
    #[arg(long, global = true)]
    confidence: Option<f64>,
    /// Output directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Parse transaction and license files into a daily panel.
    Ingest {
        #[arg(long)]
        transactions: Option<PathBuf>,
        #[arg(long)]
        licenses: Option<PathBuf>,
        #[arg(long)]
        start: Option<NaiveDate>,
        #[arg(long)]
        end: Option<NaiveDate>,
    },
    /// Fit the joint regression on a panel file.
    Fit {
        #[arg(long)]
        panel: PathBuf,
        #[arg(long)]
        sales_lags: Option<usize>,
        #[arg(long)]
        license_lags: Option<usize>,
    },
    /// Choose lag depths by cross-validation and score the time-effect grid.
    Select {
        #[arg(long)]
        panel: PathBuf,
        #[arg(long)]
        max_sales_lag: Option<usize>,
        #[arg(long)]
        max_license_lag: Option<usize>,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Forecast the counterfactual path after the cutoff.
    Forecast {
        #[arg(long)]
        panel: PathBuf,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        sales_lags: Option<usize>,
        #[arg(long)]
        license_lags: Option<usize>,
        #[arg(long)]
        export_draws: bool,
    },
    /// Windowed observed-vs-counterfactual effect estimates.
    Effects {
        #[arg(long)]
        panel: PathBuf,
        #[arg(long)]
        sales_lags: Option<usize>,
        #[arg(long)]
        license_lags: Option<usize>,
        #[arg(long)]
        export_draws: bool,
    },
    /// Score a predicted labeling against fused rater truth.
    ClassifyEval {
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Longitudinal and cross-sectional descriptive tables.
    Describe {
        #[arg(long)]
        transactions: Option<PathBuf>,
        #[arg(long)]
        covariates: Option<PathBuf>,
        #[arg(long)]
        ratio_base_year: Option<i32>,
        #[arg(long)]
        ratio_comparison_year: Option<i32>,
    },
    /// Generate a synthetic panel with known ground truth.
    Simulate {
        /// TOML synthetic-process description.
        #[arg(long)]
        synth_config: PathBuf,
        /// Dealer pool size for the exported transactions file.
        #[arg(long, default_value_t = 20)]
        dealers: usize,
    },
    /// Run the full pipeline into a fresh report bundle.
    Report,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut run = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        run.seed = seed;
    }
    if let Some(cutoff) = cli.cutoff {
        run.cutoff = Some(cutoff);
    }
    if let Some(b) = cli.bootstrap_reps {
        run.bootstrap_reps = b;
    }
    if let Some(c) = cli.confidence {
        run.confidence = c;
    }
    if let Some(out) = cli.output {
        run.paths.output = Some(out);
    }
    run.validate()?;

    match cli.command {
        Commands::Ingest {
            transactions,
            licenses,
            start,
            end,
        } => cmd_ingest(&run, transactions, licenses, start, end),
        Commands::Fit {
            panel,
            sales_lags,
            license_lags,
        } => cmd_fit(&run, &panel, sales_lags, license_lags),
        Commands::Select {
            panel,
            max_sales_lag,
            max_license_lag,
            folds,
        } => cmd_select(&run, &panel, max_sales_lag, max_license_lag, folds),
        Commands::Forecast {
            panel,
            horizon,
            sales_lags,
            license_lags,
            export_draws,
        } => cmd_forecast(&run, &panel, horizon, sales_lags, license_lags, export_draws),
        Commands::Effects {
            panel,
            sales_lags,
            license_lags,
            export_draws,
        } => cmd_effects(&run, &panel, sales_lags, license_lags, export_draws),
        Commands::ClassifyEval { labels } => cmd_classify_eval(&run, labels),
        Commands::Describe {
            transactions,
            covariates,
            ratio_base_year,
            ratio_comparison_year,
        } => cmd_describe(&run, transactions, covariates, ratio_base_year, ratio_comparison_year),
        Commands::Simulate {
            synth_config,
            dealers,
        } => cmd_simulate(&run, &synth_config, dealers),
        Commands::Report => pipeline::run_pipeline(&run),
    }
}

fn output_dir(run: &RunConfig) -> Result<PathBuf> {
    let dir = run
        .paths
        .output
        .clone()
        .ok_or_else(|| anyhow::anyhow!("no output directory (use --output or [paths].output)"))?;
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn save(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    tables::atomic_write(&dir.join(name), bytes).with_context(|| format!("writing {name}"))
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn read_panel_file(path: &Path, offset: f64) -> Result<DailyPanel> {
    let file =
        std::fs::File::open(path).with_context(|| format!("opening panel {}", path.display()))?;
    Ok(tables::read_panel_csv(file, offset)?)
}

/// The model specification implied by config, flags, and the holiday source.
fn spec_for(
    run: &RunConfig,
    panel: &DailyPanel,
    sales_lags: Option<usize>,
    license_lags: Option<usize>,
) -> Result<ModelSpec> {
    let holidays = config::holidays_for(&run.paths, panel)?;
    let mut spec = run.model.clone().unwrap_or_default().to_spec(holidays);
    if let Some(l) = sales_lags {
        spec.sales_lags = l;
    }
    if let Some(l) = license_lags {
        spec.license_lags = l;
    }
    spec.validate()?;
    Ok(spec)
}

fn cmd_ingest(
    run: &RunConfig,
    transactions: Option<PathBuf>,
    licenses: Option<PathBuf>,
    start: Option<NaiveDate>,
    end: Option<NaiveDate>,
) -> Result<()> {
    let dir = output_dir(run)?;
    let (panel, summary) = pipeline::ingest_panel(run, transactions, licenses, start, end)?;
    let mut panel_csv = Vec::new();
    tables::write_panel_csv(&panel, &mut panel_csv)?;
    save(&dir, "panel.csv", &panel_csv)?;
    save(&dir, "ingest_summary.json", &to_json(&summary)?)?;
    println!(
        "panel: {} days x {} series, {} transactions accepted, {} rejected",
        panel.len(),
        panel.series_count(),
        summary.transactions.accepted,
        summary.transactions.rejected_total()
    );
    Ok(())
}

fn cmd_fit(
    run: &RunConfig,
    panel_path: &Path,
    sales_lags: Option<usize>,
    license_lags: Option<usize>,
) -> Result<()> {
    let dir = output_dir(run)?;
    let panel = read_panel_file(panel_path, run.offset)?;
    let train = match run.cutoff {
        Some(cutoff) => panel.up_to(cutoff)?,
        None => panel,
    };
    let spec = spec_for(run, &train, sales_lags, license_lags)?;
    let fit = fit_sur(&train, &spec)?;
    let mut coef_csv = Vec::new();
    tables::write_fit_csv(&fit, &mut coef_csv)?;
    save(&dir, "fit_coefficients.csv", &coef_csv)?;
    let mut summary = Vec::new();
    tables::write_fit_summary_json(&fit, &mut summary)?;
    save(&dir, "fit_summary.json", &summary)?;
    for (name, r2) in fit.series_names.iter().zip(&fit.r_squared) {
        match r2 {
            Some(v) => println!("{name}: R^2 = {v:.4}"),
            None => println!("{name}: R^2 undefined (zero-variance target)"),
        }
    }
    Ok(())
}

fn cmd_select(
    run: &RunConfig,
    panel_path: &Path,
    max_sales_lag: Option<usize>,
    max_license_lag: Option<usize>,
    folds: Option<usize>,
) -> Result<()> {
    let dir = output_dir(run)?;
    let panel = read_panel_file(panel_path, run.offset)?;
    let train = match run.cutoff {
        Some(cutoff) => panel.up_to(cutoff)?,
        None => panel,
    };
    let select_cfg = run.select.clone().unwrap_or(config::SelectConfig {
        max_sales_lag: 35,
        max_license_lag: 14,
        folds: 10,
        grid: true,
    });
    let max_sales = max_sales_lag.unwrap_or(select_cfg.max_sales_lag);
    let max_license = max_license_lag.unwrap_or(select_cfg.max_license_lag);
    let k = folds.unwrap_or(select_cfg.folds);
    let base = spec_for(run, &train, None, None)?;
    let selection = auto_select(&train, &base, max_sales, max_license, k, run.seed)?;
    save(&dir, "selection.json", &to_json(&selection)?)?;
    println!(
        "selected sales_lags = {}{}, license_lags = {}{}",
        selection.sales.selected,
        if selection.sales.truncated { " (truncated)" } else { "" },
        selection.license.selected,
        if selection.license.truncated { " (truncated)" } else { "" },
    );
    if select_cfg.grid {
        let grid = time_effect_grid(
            selection.spec.sales_lags,
            selection.spec.license_lags,
            &selection.spec.holiday_dates,
        );
        let reports = compare_time_specs(&train, &grid, k, run.seed)?;
        let mut cv_csv = Vec::new();
        tables::write_cv_table(&reports, &mut cv_csv)?;
        save(&dir, "cv_table.csv", &cv_csv)?;
    }
    Ok(())
}

/// Shared fit-and-forecast step for the forecast and effects commands.
fn fit_and_forecast(
    run: &RunConfig,
    panel: &DailyPanel,
    horizon: usize,
    sales_lags: Option<usize>,
    license_lags: Option<usize>,
) -> Result<(countercast_core::SurFit, countercast_core::ForecastResult, NaiveDate)> {
    let cutoff = run
        .cutoff
        .ok_or_else(|| anyhow::anyhow!("a cutoff date is required (--cutoff)"))?;
    let train = panel.up_to(cutoff)?;
    if train.len() == panel.len() {
        bail!(
            "panel ends at {} and holds no post-cutoff license data for the forecast horizon",
            panel.end_date()
        );
    }
    let spec = spec_for(run, &train, sales_lags, license_lags)?;
    let exo = panel.exogenous_after(cutoff, horizon)?;
    let fit = fit_sur(&train, &spec)?;
    let forecast = forecast_counterfactual(
        &fit,
        &train,
        cutoff,
        horizon,
        &exo,
        run.bootstrap_reps,
        run.seed,
    )?;
    Ok((fit, forecast, cutoff))
}

fn cmd_forecast(
    run: &RunConfig,
    panel_path: &Path,
    horizon: Option<usize>,
    sales_lags: Option<usize>,
    license_lags: Option<usize>,
    export_draws: bool,
) -> Result<()> {
    let dir = output_dir(run)?;
    let panel = read_panel_file(panel_path, run.offset)?;
    let windows = run.effect_windows()?;
    let horizon = horizon
        .unwrap_or_else(|| windows.iter().map(|w| w.end_offset + 1).max().unwrap_or(26));
    let (fit, forecast, _) = fit_and_forecast(run, &panel, horizon, sales_lags, license_lags)?;
    let mut fc_csv = Vec::new();
    tables::write_forecast_csv(&forecast, &mut fc_csv)?;
    save(&dir, "forecast.csv", &fc_csv)?;
    let mut summary = Vec::new();
    tables::write_fit_summary_json(&fit, &mut summary)?;
    save(&dir, "fit_summary.json", &summary)?;
    if export_draws || run.export_draws {
        let mut buf = Vec::new();
        forecast.write_draws(&mut buf)?;
        save(&dir, "draws.bin", &buf)?;
    }
    println!("forecast of {} days written", forecast.horizon());
    Ok(())
}

#[derive(Serialize)]
struct BreakevenRow {
    series: String,
    immediate_surplus: f64,
    shortrun_deficit: f64,
    shortrun_days: usize,
    weeks: Option<f64>,
    rounded_weeks: Option<i64>,
}

fn cmd_effects(
    run: &RunConfig,
    panel_path: &Path,
    sales_lags: Option<usize>,
    license_lags: Option<usize>,
    export_draws: bool,
) -> Result<()> {
    let dir = output_dir(run)?;
    let panel = read_panel_file(panel_path, run.offset)?;
    let windows = run.effect_windows()?;
    let horizon = windows.iter().map(|w| w.end_offset + 1).max().unwrap();
    let (fit, forecast, cutoff) =
        fit_and_forecast(run, &panel, horizon, sales_lags, license_lags)?;
    let observed = panel.slice(cutoff, horizon)?;
    let mut estimates = Vec::new();
    for window in &windows {
        estimates.extend(estimate_effects(&observed, &forecast, window, run.confidence)?);
    }
    let mut csv = Vec::new();
    tables::write_effects_csv(&estimates, &mut csv)?;
    save(&dir, "effects.csv", &csv)?;
    let mut fc_csv = Vec::new();
    tables::write_forecast_csv(&forecast, &mut fc_csv)?;
    save(&dir, "forecast.csv", &fc_csv)?;
    let mut summary = Vec::new();
    tables::write_fit_summary_json(&fit, &mut summary)?;
    save(&dir, "fit_summary.json", &summary)?;
    save(&dir, "breakeven.json", &to_json(&breakeven_rows(&estimates))?)?;
    if export_draws || run.export_draws {
        let mut buf = Vec::new();
        forecast.write_draws(&mut buf)?;
        save(&dir, "draws.bin", &buf)?;
    }
    for e in &estimates {
        println!(
            "{} {}: {:+.0} ({}){}",
            e.series,
            e.window.label,
            e.abs_diff,
            e.pct_diff
                .map(|p| format!("{:+.0}%", p * 100.0))
                .unwrap_or_else(|| "n/a".into()),
            if e.significant { " significant" } else { "" }
        );
    }
    Ok(())
}

/// Breakeven arithmetic per series when an immediate surplus coexists with a
/// short-run deficit.
fn breakeven_rows(estimates: &[countercast_core::EffectEstimate]) -> Vec<BreakevenRow> {
    let mut rows = Vec::new();
    let immediate: Vec<_> = estimates
        .iter()
        .filter(|e| e.window.label == "immediate")
        .collect();
    for imm in immediate {
        let Some(short) = estimates
            .iter()
            .find(|e| e.window.label == "short-run" && e.series == imm.series)
        else {
            continue;
        };
        let deficit = -short.abs_diff;
        let days = short.window.days();
        let breakeven = breakeven_weeks(imm.abs_diff, deficit, days).ok();
        let (weeks, rounded) = match breakeven {
            Some(countercast_core::Breakeven::After {
                weeks,
                rounded_weeks,
            }) => (Some(weeks), Some(rounded_weeks)),
            _ => (None, None),
        };
        rows.push(BreakevenRow {
            series: imm.series.clone(),
            immediate_surplus: imm.abs_diff,
            shortrun_deficit: deficit,
            shortrun_days: days,
            weeks,
            rounded_weeks: rounded,
        });
    }
    rows
}

fn cmd_classify_eval(run: &RunConfig, labels: Option<PathBuf>) -> Result<()> {
    let dir = output_dir(run)?;
    let labels_path = labels
        .or_else(|| run.paths.labels.clone())
        .ok_or_else(|| anyhow::anyhow!("no labels file (use --labels or [paths].labels)"))?;
    let file = std::fs::File::open(&labels_path)
        .with_context(|| format!("opening labels {}", labels_path.display()))?;
    let (items, predicted) = classifier::read_labels(file)?;
    let evals = classifier_evaluations(&items, &predicted)?;
    let mut csv = Vec::new();
    tables::write_classifier_csv(&evals, &mut csv)?;
    save(&dir, "classifier_eval.csv", &csv)?;
    for e in &evals {
        println!(
            "{} / {}: accuracy {}",
            e.standard,
            if e.weighted { "weighted" } else { "unweighted" },
            e.metrics
                .accuracy
                .map(|a| format!("{:.1}%", a * 100.0))
                .unwrap_or_else(|| "n/a".into())
        );
    }
    Ok(())
}

fn classifier_evaluations(
    items: &[classifier::RaterLabels],
    predicted: &std::collections::BTreeMap<String, classifier::PredictedLabel>,
) -> Result<Vec<tables::ClassifierEvaluation>> {
    let mut evals = Vec::new();
    for (standard, name) in [
        (TruthStandard::Median, "median"),
        (TruthStandard::Unanimous, "unanimous"),
    ] {
        for weighted in [false, true] {
            let (matrix, metrics, skipped) =
                classifier::evaluate(items, predicted, standard, weighted)?;
            evals.push(tables::ClassifierEvaluation {
                standard: name,
                weighted,
                matrix,
                metrics,
                skipped_excluded: skipped,
            });
        }
    }
    Ok(evals)
}

fn cmd_describe(
    run: &RunConfig,
    transactions: Option<PathBuf>,
    covariates: Option<PathBuf>,
    ratio_base_year: Option<i32>,
    ratio_comparison_year: Option<i32>,
) -> Result<()> {
    let dir = output_dir(run)?;
    let path = transactions
        .or_else(|| run.paths.transactions.clone())
        .ok_or_else(|| anyhow::anyhow!("no transactions file"))?;
    let (records, _) = countercast_core::data::ingest_transactions_path(&path)?;
    let mut describe = run.describe.clone();
    if let Some(y) = ratio_base_year {
        describe.ratio_base_year = y;
    }
    if let Some(y) = ratio_comparison_year {
        describe.ratio_comparison_year = y;
    }
    let covariates_path = covariates.or_else(|| run.paths.covariates.clone());
    let files = pipeline::describe_tables(run, &describe, &records, covariates_path.as_deref())?;
    for (name, bytes) in files {
        save(&dir, &name, &bytes)?;
        println!("wrote {name}");
    }
    Ok(())
}

fn cmd_simulate(run: &RunConfig, synth_path: &Path, dealers: usize) -> Result<()> {
    let dir = output_dir(run)?;
    let text = std::fs::read_to_string(synth_path)
        .with_context(|| format!("reading synthetic config {}", synth_path.display()))?;
    let mut config: SynthConfig = toml::from_str(&text)
        .with_context(|| format!("parsing synthetic config {}", synth_path.display()))?;
    if run.seed != 0 {
        config.seed = run.seed;
    }
    let (panel, truth) = synth::generate_panel(&config)?;
    let mut panel_csv = Vec::new();
    tables::write_panel_csv(&panel, &mut panel_csv)?;
    save(&dir, "panel.csv", &panel_csv)?;

    let txns = synth::export_transactions(&panel, dealers, config.seed ^ 0x74726e73)?;
    let mut txn_csv = Vec::new();
    tables::write_transactions_csv(&txns, &mut txn_csv)?;
    save(&dir, "transactions.csv", &txn_csv)?;

    let lics = synth::export_licenses(&panel);
    let mut lic_csv = Vec::new();
    tables::write_licenses_csv(&lics, &mut lic_csv)?;
    save(&dir, "licenses.csv", &lic_csv)?;

    let truth_json = serde_json::json!({
        "true_effects": truth.true_effects,
        "series_names": panel.series_names(),
        "start_date": panel.start_date(),
        "counterfactual": truth.counterfactual_rows(),
        "factual": truth.factual_rows(),
    });
    save(&dir, "truth.json", &to_json(&truth_json)?)?;
    println!(
        "simulated {} days x {} series with {} transactions",
        panel.len(),
        panel.series_count(),
        txns.len()
    );
    Ok(())
}

/// External annual comparison file: `year,handguns,long_guns`. Correlates
/// each column with the matching aggregate of the panel's annual totals.
fn external_correlation(
    records: &[countercast_core::TransactionRecord],
    path: &Path,
) -> Result<Vec<(String, Option<f64>, usize)>> {
    let totals = descriptives::annual_totals(records);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .with_context(|| format!("opening external series {}", path.display()))?;
    let mut years = Vec::new();
    let mut handguns = Vec::new();
    let mut long_guns = Vec::new();
    for row in reader.records() {
        let row = row?;
        if row.len() < 3 {
            bail!("external series rows need year,handguns,long_guns");
        }
        years.push(row[0].trim().parse::<i32>().context("bad year")?);
        handguns.push(row[1].trim().parse::<f64>().context("bad handgun count")?);
        long_guns.push(row[2].trim().parse::<f64>().context("bad long-gun count")?);
    }
    let mut own_handguns = Vec::new();
    let mut own_long_guns = Vec::new();
    for &year in &years {
        let counts = totals.get(&year).copied().unwrap_or_default();
        own_handguns.push(counts.get(FirearmType::Handgun) as f64);
        own_long_guns.push(
            (counts.get(FirearmType::TawRifle)
                + counts.get(FirearmType::NonTawRifle)
                + counts.get(FirearmType::Shotgun)) as f64,
        );
    }
    Ok(vec![
        (
            "handguns".to_string(),
            descriptives::series_correlation(&own_handguns, &handguns)?,
            years.len(),
        ),
        (
            "long_guns".to_string(),
            descriptives::series_correlation(&own_long_guns, &long_guns)?,
            years.len(),
        ),
    ])
}
