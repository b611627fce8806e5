//! Synthetic panels drawn from the model's own data-generating process, with
//! known parameters and injected interventions. The recorded truth backs the
//! pipeline's recovery and coverage tests.

use chrono::{Days, NaiveDate};
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{inverse_log_offset, log_offset, DailyPanel, FirearmType, LicenseKind, LicenseRecord, TransactionRecord};
use crate::design::{self, ModelSpec};
use crate::error::{Error, Result};
use crate::linalg;

/// License issuance process: Poisson daily applications, issued after a
/// uniformly distributed processing delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LicenseProcess {
    pub new_rate: f64,
    pub renewal_rate: f64,
    pub delay_min: usize,
    pub delay_max: usize,
}

impl Default for LicenseProcess {
    fn default() -> Self {
        // 35-40 day processing window.
        LicenseProcess {
            new_rate: 40.0,
            renewal_rate: 60.0,
            delay_min: 35,
            delay_max: 40,
        }
    }
}

/// Multiplicative level-scale effect over an offset window (inclusive),
/// anchored at the configured intervention date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionSpec {
    pub series: usize,
    pub start_offset: usize,
    pub end_offset: usize,
    pub factor: f64,
}

fn default_burn_in() -> usize {
    200
}

/// Full description of a synthetic panel.
///
/// `coefficients[j]` is aligned to the design layout of `spec` (intercept,
/// sales lags, calendar block, license lags), so the generator and the
/// estimator speak the same parameterization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub start_date: NaiveDate,
    pub days: usize,
    pub series_names: Vec<String>,
    pub spec: ModelSpec,
    pub coefficients: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    pub offset: f64,
    #[serde(default)]
    pub licenses: LicenseProcess,
    #[serde(default)]
    pub intervention_date: Option<NaiveDate>,
    #[serde(default)]
    pub interventions: Vec<InterventionSpec>,
    pub seed: u64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
}

/// True cumulative effect of one intervention window, from the rounded paths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrueEffect {
    pub series: usize,
    pub start_offset: usize,
    pub end_offset: usize,
    pub factor: f64,
    pub cumulative: f64,
}

/// The generator's ground truth: rounded level paths with and without the
/// intervention (identical error draws), plus per-window cumulative effects.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    /// T x J rounded counterfactual counts.
    pub counterfactual: DMatrix<f64>,
    /// T x J rounded factual counts (equals counterfactual outside windows).
    pub factual: DMatrix<f64>,
    pub true_effects: Vec<TrueEffect>,
}

impl SynthTruth {
    pub fn counterfactual_rows(&self) -> Vec<Vec<f64>> {
        matrix_rows(&self.counterfactual)
    }

    pub fn factual_rows(&self) -> Vec<Vec<f64>> {
        matrix_rows(&self.factual)
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}

impl SynthConfig {
    pub fn series_count(&self) -> usize {
        self.series_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let j = self.series_count();
        if j == 0 || self.days == 0 {
            return Err(Error::invalid("need at least one series and one day"));
        }
        if self.coefficients.len() != j {
            return Err(Error::invalid("one coefficient vector per series"));
        }
        let width = design::layout(&self.spec).width;
        for (idx, c) in self.coefficients.iter().enumerate() {
            if c.len() != width {
                return Err(Error::invalid(format!(
                    "series {idx}: {} coefficients, design layout needs {width}",
                    c.len()
                )));
            }
        }
        if self.sigma.len() != j || self.sigma.iter().any(|r| r.len() != j) {
            return Err(Error::invalid("sigma must be J x J"));
        }
        for a in 0..j {
            for b in 0..j {
                if (self.sigma[a][b] - self.sigma[b][a]).abs() > 1e-10 {
                    return Err(Error::invalid("sigma must be symmetric"));
                }
            }
        }
        let sig = self.sigma_matrix();
        let eig = sig.clone().symmetric_eigen();
        if eig.eigenvalues.iter().any(|&l| l < -1e-10) {
            return Err(Error::invalid("sigma must be positive semidefinite"));
        }
        if self.offset <= 0.0 {
            return Err(Error::invalid("offset must be > 0"));
        }
        if self.licenses.delay_min > self.licenses.delay_max {
            return Err(Error::invalid("delay_min must be <= delay_max"));
        }
        if self.licenses.new_rate < 0.0 || self.licenses.renewal_rate < 0.0 {
            return Err(Error::invalid("license rates must be >= 0"));
        }
        self.check_stability()?;
        self.intervention_windows()?;
        Ok(())
    }

    fn sigma_matrix(&self) -> DMatrix<f64> {
        let j = self.series_count();
        DMatrix::from_fn(j, j, |r, c| self.sigma[r][c])
    }

    /// All companion-matrix eigenvalues strictly inside the unit circle.
    fn check_stability(&self) -> Result<()> {
        let p = self.spec.sales_lags;
        if p == 0 {
            return Ok(());
        }
        let lay = design::layout(&self.spec);
        for (idx, coefs) in self.coefficients.iter().enumerate() {
            let alphas = &coefs[lay.sales_lags.clone()];
            let mut companion = DMatrix::zeros(p, p);
            for (k, &a) in alphas.iter().enumerate() {
                companion[(0, k)] = a;
            }
            for k in 1..p {
                companion[(k, k - 1)] = 1.0;
            }
            let radius = linalg::spectral_radius(&companion);
            if radius >= 1.0 {
                return Err(Error::UnstableProcess(format!(
                    "series {idx}: autoregressive spectral radius {radius:.4} >= 1"
                )));
            }
        }
        Ok(())
    }

    /// Per-series intervention windows as panel-day offsets, overlap-checked.
    fn intervention_windows(&self) -> Result<Vec<Vec<(usize, usize, f64)>>> {
        let j = self.series_count();
        let mut per_series: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); j];
        if self.interventions.is_empty() {
            return Ok(per_series);
        }
        let anchor_date = self
            .intervention_date
            .ok_or_else(|| Error::invalid("interventions configured without intervention_date"))?;
        let anchor = (anchor_date - self.start_date).num_days();
        if anchor < 0 {
            return Err(Error::invalid("intervention date before panel start"));
        }
        for iv in &self.interventions {
            if iv.series >= j {
                return Err(Error::invalid(format!("intervention series {} out of range", iv.series)));
            }
            if iv.start_offset > iv.end_offset {
                return Err(Error::invalid("intervention window start after end"));
            }
            let start = anchor as usize + iv.start_offset;
            let end = anchor as usize + iv.end_offset;
            if end >= self.days {
                return Err(Error::invalid("intervention window runs past panel end"));
            }
            if iv.factor < 0.0 {
                return Err(Error::invalid("intervention factor must be >= 0"));
            }
            per_series[iv.series].push((start, end, iv.factor));
        }
        for windows in per_series.iter_mut() {
            windows.sort_by_key(|w| w.0);
            for pair in windows.windows(2) {
                if pair[1].0 <= pair[0].1 {
                    return Err(Error::invalid("overlapping intervention windows on one series"));
                }
            }
        }
        Ok(per_series)
    }
}

/// Multiplies level-scale values inside each (start, end, factor) window.
/// Windows must lie inside the path and must not overlap.
pub fn inject_intervention(path: &[f64], windows: &[(usize, usize, f64)]) -> Result<Vec<f64>> {
    let mut sorted = windows.to_vec();
    sorted.sort_by_key(|w| w.0);
    for pair in sorted.windows(2) {
        if pair[1].0 <= pair[0].1 {
            return Err(Error::invalid("overlapping intervention windows"));
        }
    }
    let mut out = path.to_vec();
    for &(start, end, factor) in &sorted {
        if start > end || end >= path.len() {
            return Err(Error::invalid(format!(
                "window [{start}, {end}] outside path of length {}",
                path.len()
            )));
        }
        for v in &mut out[start..=end] {
            *v *= factor;
        }
    }
    Ok(out)
}

fn sample_poisson(rng: &mut ChaCha12Rng, rate: f64) -> u32 {
    if rate <= 0.0 {
        return 0;
    }
    let dist = Poisson::new(rate).expect("validated rate");
    let v: f64 = dist.sample(rng);
    v as u32
}

/// Simulates licenses and the log-scale sales recursion, materializes rounded
/// counts, and applies interventions with common random numbers.
pub fn generate_panel(config: &SynthConfig) -> Result<(DailyPanel, SynthTruth)> {
    config.validate()?;
    let j = config.series_count();
    let spec = &config.spec;
    let lay = design::layout(spec);
    let ext = spec.max_lag();
    let sim_days = config.burn_in + config.days;
    let total = ext + sim_days;
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);

    // License issuances over the extended simulation range. Applications
    // start delay_max days before the range so early days see normal flow.
    let mut new_lic = vec![0u32; total];
    let mut renew_lic = vec![0u32; total];
    let delay_span = config.licenses.delay_max;
    for app in 0..(total + delay_span) {
        let app_time = app as i64 - delay_span as i64;
        let n_new = sample_poisson(&mut rng, config.licenses.new_rate);
        for _ in 0..n_new {
            let delay =
                rng.random_range(config.licenses.delay_min..=config.licenses.delay_max) as i64;
            let issue = app_time + delay;
            if issue >= 0 && (issue as usize) < total {
                new_lic[issue as usize] += 1;
            }
        }
        let n_renew = sample_poisson(&mut rng, config.licenses.renewal_rate);
        for _ in 0..n_renew {
            let delay =
                rng.random_range(config.licenses.delay_min..=config.licenses.delay_max) as i64;
            let issue = app_time + delay;
            if issue >= 0 && (issue as usize) < total {
                renew_lic[issue as usize] += 1;
            }
        }
    }
    let new_log: Vec<f64> = new_lic
        .iter()
        .map(|&c| log_offset(c as f64, config.offset))
        .collect::<Result<_>>()?;
    let renew_log: Vec<f64> = renew_lic
        .iter()
        .map(|&c| log_offset(c as f64, config.offset))
        .collect::<Result<_>>()?;

    // Log-sales recursion with pre-history pinned at the no-covariate mean.
    let error_factor = linalg::psd_factor(&config.sigma_matrix());
    let mut log_y: Vec<Vec<f64>> = (0..j)
        .map(|s| {
            let alphas: f64 = config.coefficients[s][lay.sales_lags.clone()].iter().sum();
            let intercept = config.coefficients[s][lay.intercept];
            vec![intercept / (1.0 - alphas); total]
        })
        .collect();
    let coef_vectors: Vec<DVector<f64>> = config
        .coefficients
        .iter()
        .map(|c| DVector::from_vec(c.clone()))
        .collect();
    let mut row = vec![0.0; lay.width];
    let mut shocks = DVector::zeros(j);
    for s in 0..sim_days {
        let idx = ext + s;
        let day_offset = s as i64 - config.burn_in as i64;
        let date = if day_offset >= 0 {
            config.start_date + Days::new(day_offset as u64)
        } else {
            config.start_date - Days::new((-day_offset) as u64)
        };
        for e in 0..j {
            shocks[e] = rng.sample::<f64, _>(StandardNormal);
        }
        let eps = &error_factor * &shocks;
        for series in 0..j {
            design::fill_row(
                &mut row,
                spec,
                &lay,
                &log_y[series],
                &new_log,
                &renew_log,
                idx,
                date,
                day_offset,
                config.days,
            );
            let mean: f64 = row
                .iter()
                .zip(coef_vectors[series].iter())
                .map(|(x, b)| x * b)
                .sum();
            log_y[series][idx] = mean + eps[series];
        }
    }

    // Level paths: counterfactual raw, intervention applied, both rounded.
    let windows = config.intervention_windows()?;
    let mut counterfactual = DMatrix::zeros(config.days, j);
    let mut factual = DMatrix::zeros(config.days, j);
    for series in 0..j {
        let raw: Vec<f64> = (0..config.days)
            .map(|t| inverse_log_offset(log_y[series][ext + config.burn_in + t], config.offset))
            .collect();
        let bent = inject_intervention(&raw, &windows[series])?;
        for t in 0..config.days {
            counterfactual[(t, series)] = raw[t].round();
            factual[(t, series)] = bent[t].round();
        }
    }

    let true_effects = config
        .interventions
        .iter()
        .map(|iv| {
            let anchor = (self_anchor(config) + iv.start_offset as i64) as usize;
            let end = (self_anchor(config) + iv.end_offset as i64) as usize;
            let cumulative: f64 = (anchor..=end)
                .map(|t| factual[(t, iv.series)] - counterfactual[(t, iv.series)])
                .sum();
            TrueEffect {
                series: iv.series,
                start_offset: iv.start_offset,
                end_offset: iv.end_offset,
                factor: iv.factor,
                cumulative,
            }
        })
        .collect();

    let counts: Vec<u32> = (0..config.days)
        .flat_map(|t| (0..j).map(move |s| (t, s)))
        .map(|(t, s)| factual[(t, s)] as u32)
        .collect();
    let panel = DailyPanel::new(
        config.start_date,
        config.series_names.clone(),
        counts,
        new_lic[ext + config.burn_in..].to_vec(),
        renew_lic[ext + config.burn_in..].to_vec(),
        config.offset,
    )?;
    Ok((
        panel,
        SynthTruth {
            counterfactual,
            factual,
            true_effects,
        },
    ))
}

fn self_anchor(config: &SynthConfig) -> i64 {
    config
        .intervention_date
        .map(|d| (d - config.start_date).num_days())
        .unwrap_or(0)
}

/// Expands a panel into the transactions file schema: one row per count,
/// dealers drawn from a fixed pool, unique purchaser per row. Series names
/// must be the standard firearm categories.
pub fn export_transactions(
    panel: &DailyPanel,
    dealer_pool: usize,
    seed: u64,
) -> Result<Vec<TransactionRecord>> {
    if dealer_pool == 0 {
        return Err(Error::invalid("dealer pool must be non-empty"));
    }
    let types: Vec<FirearmType> = panel
        .series_names()
        .iter()
        .map(|name| {
            FirearmType::parse(name)
                .map_err(|_| Error::invalid(format!("series {name} is not a firearm category")))
        })
        .collect::<Result<_>>()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut purchaser = 0usize;
    for t in 0..panel.len() {
        let date = panel.date_at(t);
        for (j, firearm_type) in types.iter().enumerate() {
            for _ in 0..panel.count(t, j) {
                let dealer = rng.random_range(0..dealer_pool);
                records.push(TransactionRecord {
                    date,
                    firearm_type: *firearm_type,
                    dealer_id: format!("D{dealer:03}"),
                    dealer_zip: Some(format!("{:05}", 10000 + dealer)),
                    purchaser_id: format!("P{purchaser:07}"),
                    make: format!("Make{}", firearm_type.name()),
                    model: format!("Model{}", firearm_type.name()),
                });
                purchaser += 1;
            }
        }
    }
    Ok(records)
}

/// Expands the panel's license series into the licenses file schema.
pub fn export_licenses(panel: &DailyPanel) -> Vec<LicenseRecord> {
    let mut records = Vec::new();
    for t in 0..panel.len() {
        let date = panel.date_at(t);
        for _ in 0..panel.new_licenses()[t] {
            records.push(LicenseRecord {
                issue_date: date,
                kind: LicenseKind::New,
            });
        }
        for _ in 0..panel.renewal_licenses()[t] {
            records.push(LicenseRecord {
                issue_date: date,
                kind: LicenseKind::Renewal,
            });
        }
    }
    records
}
