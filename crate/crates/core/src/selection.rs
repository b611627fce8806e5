//! Specification search: blocked K-fold cross-validation on log-scale
//! prediction errors, successive lag selection, and the time-effect grid.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::DailyPanel;
use crate::design::{build_design_with_burn_in, ModelSpec};
use crate::error::{Error, Result};
use crate::linalg;

/// Log-scale prediction errors for one series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesError {
    pub series: String,
    pub rmse: f64,
    pub mae: f64,
    /// Held-out rows predicted; folds partition the usable rows exactly.
    pub predictions: usize,
}

/// Cross-validation outcome for one specification.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvReport {
    pub spec: ModelSpec,
    pub per_series: Vec<SeriesError>,
    pub fold_count: usize,
    pub fold_assignment: String,
    pub seed: u64,
}

impl CvReport {
    /// MAE averaged equally across series.
    pub fn mean_mae(&self) -> f64 {
        self.per_series.iter().map(|s| s.mae).sum::<f64>() / self.per_series.len() as f64
    }

    pub fn mean_rmse(&self) -> f64 {
        self.per_series.iter().map(|s| s.rmse).sum::<f64>() / self.per_series.len() as f64
    }
}

/// K contiguous date blocks over the usable rows.
fn fold_bounds(usable: usize, k: usize) -> Vec<(usize, usize)> {
    (0..k)
        .map(|f| (f * usable / k, (f + 1) * usable / k))
        .collect()
}

/// 10-fold style cross-validation: contiguous blocks, one-step-ahead
/// prediction with lags taken from the observed series, errors on the log
/// scale.
pub fn cross_validate(panel: &DailyPanel, spec: &ModelSpec, k: usize, seed: u64) -> Result<CvReport> {
    cross_validate_with_burn_in(panel, spec, k, seed, spec.max_lag())
}

/// Same as [`cross_validate`] but with a caller-pinned burn-in so several
/// candidate specifications can share identical folds.
pub fn cross_validate_with_burn_in(
    panel: &DailyPanel,
    spec: &ModelSpec,
    k: usize,
    seed: u64,
    burn_in: usize,
) -> Result<CvReport> {
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {k}")));
    }
    spec.validate()?;
    if panel.len() <= burn_in {
        return Err(Error::invalid("panel shorter than burn-in"));
    }
    let usable = panel.len() - burn_in;
    if usable < k {
        return Err(Error::invalid(format!(
            "{usable} usable rows cannot form {k} folds"
        )));
    }
    let bounds = fold_bounds(usable, k);
    let per_series: Vec<SeriesError> = (0..panel.series_count())
        .into_par_iter()
        .map(|j| {
            let design = build_design_with_burn_in(panel, j, spec, burn_in)?;
            let (abs_sum, sq_sum, n) = holdout_errors(&design.rows, &design.target, &bounds, &design.column_labels)?;
            Ok(SeriesError {
                series: panel.series_names()[j].clone(),
                rmse: (sq_sum / n as f64).sqrt(),
                mae: abs_sum / n as f64,
                predictions: n,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CvReport {
        spec: spec.clone(),
        per_series,
        fold_count: k,
        fold_assignment: format!("{k} contiguous blocks over {usable} usable rows"),
        seed,
    })
}

/// Fits on the complement of each fold via Gram downdating and scores the
/// held-out block. Returns (sum |e|, sum e², rows predicted).
fn holdout_errors(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    bounds: &[(usize, usize)],
    labels: &[String],
) -> Result<(f64, f64, usize)> {
    let n = x.nrows();
    let p = x.ncols();
    let gram = x.transpose() * x;
    let xty = x.transpose() * y;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut predicted = 0;
    for (fold, &(start, end)) in bounds.iter().enumerate() {
        let rows = end - start;
        if n - rows < p {
            return Err(Error::in_fold(
                fold,
                Error::invalid(format!(
                    "training set of {} rows cannot identify {p} coefficients",
                    n - rows
                )),
            ));
        }
        let x_fold = x.rows(start, rows);
        let y_fold = y.rows(start, rows);
        let gram_fold = x_fold.transpose() * x_fold;
        let train_gram = &gram - gram_fold;
        let train_xty = &xty - x_fold.transpose() * y_fold;
        let beta = match linalg::cholesky_solve(&train_gram, &train_xty) {
            Some(beta) => beta,
            None => {
                // Slow path only on failure: name the collinear columns.
                let train_rows = complement_rows(x, start, end);
                let check = linalg::column_rank_check(&train_rows, labels);
                let cause = check.err().unwrap_or_else(|| {
                    Error::invalid("training normal equations not positive definite")
                });
                return Err(Error::in_fold(fold, cause));
            }
        };
        let pred = x_fold * &beta;
        for (i, &obs) in y_fold.iter().enumerate() {
            let e = obs - pred[i];
            abs_sum += e.abs();
            sq_sum += e * e;
        }
        predicted += rows;
    }
    Ok((abs_sum, sq_sum, predicted))
}

fn complement_rows(x: &DMatrix<f64>, start: usize, end: usize) -> DMatrix<f64> {
    let n = x.nrows();
    let keep = n - (end - start);
    let mut out = DMatrix::zeros(keep, x.ncols());
    for (r, i) in (0..start).chain(end..n).enumerate() {
        out.row_mut(r).copy_from(&x.row(i));
    }
    out
}

/// Which lag depth a selection pass varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LagDimension {
    Sales,
    License,
}

/// Outcome of the successive-lag stopping rule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LagSelection {
    pub selected: usize,
    /// Set when MAE was still decreasing at `max_lag`.
    pub truncated: bool,
    /// Mean MAE per candidate depth, 0..=last evaluated.
    pub mae_by_lag: Vec<f64>,
}

/// Adds lags one at a time and stops the first time an additional lag
/// increases cross-validated MAE (averaged across series). Folds are pinned
/// to the window implied by `max_lag`, so every candidate predicts the same
/// dates.
pub fn select_lags(
    panel: &DailyPanel,
    base_spec: &ModelSpec,
    which: LagDimension,
    max_lag: usize,
    k: usize,
    seed: u64,
) -> Result<LagSelection> {
    if max_lag < 1 {
        return Err(Error::invalid("max_lag must be at least 1"));
    }
    let burn_in = match which {
        LagDimension::Sales => max_lag.max(base_spec.license_lags),
        LagDimension::License => base_spec.sales_lags.max(max_lag),
    };
    let spec_for = |lag: usize| match which {
        LagDimension::Sales => base_spec.with_lags(lag, base_spec.license_lags),
        LagDimension::License => base_spec.with_lags(base_spec.sales_lags, lag),
    };
    let mut mae_by_lag = Vec::with_capacity(max_lag + 1);
    let first = cross_validate_with_burn_in(panel, &spec_for(0), k, seed, burn_in)?;
    mae_by_lag.push(first.mean_mae());
    for lag in 1..=max_lag {
        let report = cross_validate_with_burn_in(panel, &spec_for(lag), k, seed, burn_in)?;
        let mae = report.mean_mae();
        mae_by_lag.push(mae);
        if mae > mae_by_lag[lag - 1] {
            return Ok(LagSelection {
                selected: lag - 1,
                truncated: false,
                mae_by_lag,
            });
        }
    }
    Ok(LagSelection {
        selected: max_lag,
        truncated: true,
        mae_by_lag,
    })
}

/// Both lag depths chosen in order: sales lags first (license lags held at
/// zero), then license lags with the selected sales depth held fixed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AutoSelection {
    pub spec: ModelSpec,
    pub sales: LagSelection,
    pub license: LagSelection,
}

pub fn auto_select(
    panel: &DailyPanel,
    base_spec: &ModelSpec,
    max_sales_lag: usize,
    max_license_lag: usize,
    k: usize,
    seed: u64,
) -> Result<AutoSelection> {
    let stage1_base = base_spec.with_lags(0, 0);
    let sales = select_lags(panel, &stage1_base, LagDimension::Sales, max_sales_lag, k, seed)?;
    let stage2_base = base_spec.with_lags(sales.selected, 0);
    let license = select_lags(
        panel,
        &stage2_base,
        LagDimension::License,
        max_license_lag,
        k,
        seed,
    )?;
    Ok(AutoSelection {
        spec: base_spec.with_lags(sales.selected, license.selected),
        sales,
        license,
    })
}

/// One report per candidate specification, all scored on identical folds.
pub fn compare_time_specs(
    panel: &DailyPanel,
    specs: &[ModelSpec],
    k: usize,
    seed: u64,
) -> Result<Vec<CvReport>> {
    if specs.is_empty() {
        return Err(Error::invalid("need at least one specification"));
    }
    let burn_in = specs.iter().map(|s| s.max_lag()).max().unwrap();
    specs
        .par_iter()
        .map(|spec| cross_validate_with_burn_in(panel, spec, k, seed, burn_in))
        .collect()
}
