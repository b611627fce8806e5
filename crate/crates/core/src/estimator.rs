//! Joint estimation of the per-series regressions: per-equation least squares
//! as the base case, one-step feasible GLS across equations on top.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::design::{DesignMatrix, ModelSpec};
use crate::error::{Error, Result};
use crate::linalg;

/// A single-equation least-squares fit.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coefficients: DVector<f64>,
    pub fitted: DVector<f64>,
    pub residuals: DVector<f64>,
    /// 1 - SSR/SST on the estimation scale; `None` for a zero-variance target.
    pub r_squared: Option<f64>,
}

/// Least squares via Householder QR; never forms the cross-product inverse.
pub fn fit_ols(design: &DesignMatrix) -> Result<OlsFit> {
    let coefficients =
        linalg::solve_least_squares(&design.rows, &design.target, &design.column_labels)?;
    let fitted = &design.rows * &coefficients;
    let residuals = &design.target - &fitted;
    let r_squared = r_squared_from(&design.target, &residuals);
    Ok(OlsFit {
        coefficients,
        fitted,
        residuals,
        r_squared,
    })
}

fn r_squared_from(target: &DVector<f64>, residuals: &DVector<f64>) -> Option<f64> {
    let n = target.len() as f64;
    let mean = target.sum() / n;
    let sst: f64 = target.iter().map(|&y| (y - mean) * (y - mean)).sum();
    if sst == 0.0 {
        return None;
    }
    let ssr: f64 = residuals.iter().map(|&e| e * e).sum();
    Some((1.0 - ssr / sst).max(0.0))
}

/// The joint fit: coefficients per equation, stage-1 residual covariance,
/// stacked coefficient covariance from the GLS formula.
#[derive(Debug, Clone)]
pub struct SurFit {
    pub series_names: Vec<String>,
    pub column_labels: Vec<Vec<String>>,
    pub coefficients: Vec<DVector<f64>>,
    /// Final-stage residuals, usable_T x J.
    pub residuals: DMatrix<f64>,
    /// Stage-1 residual covariance (ML divisor usable_T).
    pub sigma: DMatrix<f64>,
    /// Covariance of the stacked coefficient vector, equations in order.
    pub coef_covariance: DMatrix<f64>,
    pub r_squared: Vec<Option<f64>>,
    pub spec: ModelSpec,
    pub first_date: NaiveDate,
    /// Set when the residual covariance was singular and the fit fell back to
    /// per-equation least squares.
    pub ols_fallback: bool,
}

impl SurFit {
    pub fn equations(&self) -> usize {
        self.series_names.len()
    }

    pub fn usable_len(&self) -> usize {
        self.residuals.nrows()
    }

    /// Offsets of each equation's block in the stacked coefficient vector.
    pub fn block_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.coefficients.len());
        let mut acc = 0;
        for c in &self.coefficients {
            offsets.push(acc);
            acc += c.len();
        }
        offsets
    }

    pub fn stacked_len(&self) -> usize {
        self.coefficients.iter().map(|c| c.len()).sum()
    }

    pub fn stacked_coefficients(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.stacked_len());
        let mut k = 0;
        for c in &self.coefficients {
            out.rows_mut(k, c.len()).copy_from(c);
            k += c.len();
        }
        out
    }
}

/// Per-equation R² statistics of a joint fit.
pub fn r_squared(fit: &SurFit) -> &[Option<f64>] {
    &fit.r_squared
}

/// Fits all panel series jointly with `spec`.
pub fn fit_sur(panel: &crate::data::DailyPanel, spec: &ModelSpec) -> Result<SurFit> {
    let designs = (0..panel.series_count())
        .map(|j| crate::design::build_design(panel, j, spec))
        .collect::<Result<Vec<_>>>()?;
    fit_sur_designs(&designs, spec.clone(), panel.series_names().to_vec())
}

/// One-step FGLS on prebuilt designs sharing a usable date range.
///
/// Stage 1 is per-equation least squares; the residual covariance from that
/// stage weights a single stacked GLS solve. A singular covariance downgrades
/// the result to the stage-1 fit with `ols_fallback` set.
pub fn fit_sur_designs(
    designs: &[DesignMatrix],
    spec: ModelSpec,
    series_names: Vec<String>,
) -> Result<SurFit> {
    if designs.is_empty() {
        return Err(Error::invalid("need at least one equation"));
    }
    if series_names.len() != designs.len() {
        return Err(Error::invalid("one series name per equation"));
    }
    let usable = designs[0].usable_len();
    let first_date = designs[0].first_date;
    for d in designs {
        if d.usable_len() != usable || d.first_date != first_date {
            return Err(Error::invalid(
                "equations must share an identical usable date range",
            ));
        }
    }

    let stage1: Vec<OlsFit> = designs
        .par_iter()
        .map(fit_ols)
        .collect::<Result<Vec<_>>>()?;

    let j = designs.len();
    let mut resid1 = DMatrix::zeros(usable, j);
    for (k, fit) in stage1.iter().enumerate() {
        resid1.column_mut(k).copy_from(&fit.residuals);
    }
    let sigma = (resid1.transpose() * &resid1) / usable as f64;

    let sigma_inv = match invert_if_well_conditioned(&sigma) {
        Some(inv) => inv,
        None => {
            // Singular residual covariance: keep the per-equation fits.
            let coef_covariance = ols_block_covariance(designs, &stage1, usable)?;
            let column_labels = designs.iter().map(|d| d.column_labels.clone()).collect();
            return Ok(SurFit {
                series_names,
                column_labels,
                coefficients: stage1.iter().map(|f| f.coefficients.clone()).collect(),
                residuals: resid1,
                sigma,
                coef_covariance,
                r_squared: stage1.iter().map(|f| f.r_squared).collect(),
                spec,
                first_date,
                ols_fallback: true,
            });
        }
    };

    let (coefficients, coef_covariance) = gls_with_sigma_inverse(designs, &sigma_inv)?;

    let mut residuals = DMatrix::zeros(usable, j);
    let mut r2 = Vec::with_capacity(j);
    for (k, d) in designs.iter().enumerate() {
        let e = &d.target - &d.rows * &coefficients[k];
        r2.push(r_squared_from(&d.target, &e));
        residuals.column_mut(k).copy_from(&e);
    }

    let column_labels = designs.iter().map(|d| d.column_labels.clone()).collect();
    Ok(SurFit {
        series_names,
        column_labels,
        coefficients,
        residuals,
        sigma,
        coef_covariance,
        r_squared: r2,
        spec,
        first_date,
        ols_fallback: false,
    })
}

/// Inverts the residual covariance unless it is singular to working
/// precision. A Cholesky alone can slip through an exactly singular matrix on
/// rounding luck, so the eigenvalue ratio is checked first.
fn invert_if_well_conditioned(sigma: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let eig = sigma.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    if max <= 0.0 || min <= max * 1e-12 {
        return None;
    }
    linalg::cholesky_inverse(sigma)
}

/// Stacked GLS solve with a caller-supplied residual covariance. Exposed for
/// the identity-weight and diagonal-weight reductions.
pub fn gls_with_sigma(
    designs: &[DesignMatrix],
    sigma: &DMatrix<f64>,
) -> Result<(Vec<DVector<f64>>, DMatrix<f64>)> {
    let sigma_inv = invert_if_well_conditioned(sigma)
        .ok_or_else(|| Error::invalid("residual covariance is not positive definite"))?;
    gls_with_sigma_inverse(designs, &sigma_inv)
}

/// Normal equations of the stacked system: block (j,k) of XᵀΩ⁻¹X is
/// σ^{jk} · XⱼᵀX_k, so the T·J-row weight matrix is never materialized.
fn gls_with_sigma_inverse(
    designs: &[DesignMatrix],
    sigma_inv: &DMatrix<f64>,
) -> Result<(Vec<DVector<f64>>, DMatrix<f64>)> {
    let j = designs.len();
    let widths: Vec<usize> = designs.iter().map(|d| d.width()).collect();
    let offsets: Vec<usize> = widths
        .iter()
        .scan(0usize, |acc, &w| {
            let o = *acc;
            *acc += w;
            Some(o)
        })
        .collect();
    let total: usize = widths.iter().sum();

    let mut gram = vec![vec![None::<DMatrix<f64>>; j]; j];
    for a in 0..j {
        for b in a..j {
            let g = designs[a].rows.transpose() * &designs[b].rows;
            gram[a][b] = Some(g);
        }
    }
    let mut xty = vec![DVector::zeros(0); j];
    for (a, d) in designs.iter().enumerate() {
        let mut acc = DVector::zeros(widths[a]);
        for (b, other) in designs.iter().enumerate() {
            let w = sigma_inv[(a, b)];
            if w != 0.0 {
                acc += (d.rows.transpose() * &other.target) * w;
            }
        }
        xty[a] = acc;
    }

    let mut normal = DMatrix::zeros(total, total);
    let mut rhs = DVector::zeros(total);
    for a in 0..j {
        rhs.rows_mut(offsets[a], widths[a]).copy_from(&xty[a]);
        for b in 0..j {
            let w = sigma_inv[(a, b)];
            if w == 0.0 {
                continue;
            }
            let block = if a <= b {
                gram[a][b].as_ref().unwrap().clone()
            } else {
                gram[b][a].as_ref().unwrap().transpose()
            };
            normal
                .view_mut((offsets[a], offsets[b]), (widths[a], widths[b]))
                .copy_from(&(block * w));
        }
    }

    let chol = normal
        .clone()
        .cholesky()
        .ok_or_else(|| Error::invalid("stacked GLS normal equations not positive definite"))?;
    let stacked = chol.solve(&rhs);
    let mut covariance = chol.inverse();
    // Clean rounding asymmetry so downstream factorizations see a symmetric matrix.
    let sym = (&covariance + covariance.transpose()) * 0.5;
    covariance = sym;

    let coefficients = (0..j)
        .map(|a| stacked.rows(offsets[a], widths[a]).into_owned())
        .collect();
    Ok((coefficients, covariance))
}

fn ols_block_covariance(
    designs: &[DesignMatrix],
    stage1: &[OlsFit],
    usable: usize,
) -> Result<DMatrix<f64>> {
    let widths: Vec<usize> = designs.iter().map(|d| d.width()).collect();
    let total: usize = widths.iter().sum();
    let mut cov = DMatrix::zeros(total, total);
    let mut offset = 0;
    for (d, fit) in designs.iter().zip(stage1) {
        let gram = d.rows.transpose() * &d.rows;
        let inv = linalg::cholesky_inverse(&gram)
            .ok_or_else(|| Error::RankDeficient {
                columns: vec!["cross-product not invertible".into()],
            })?;
        let s2 = fit.residuals.iter().map(|&e| e * e).sum::<f64>() / usable as f64;
        cov.view_mut((offset, offset), (d.width(), d.width()))
            .copy_from(&(inv * s2));
        offset += d.width();
    }
    Ok(cov)
}
