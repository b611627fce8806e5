//! Dense solve helpers shared by the estimators and the bootstrap.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance for declaring a triangular diagonal entry zero.
const RANK_TOL: f64 = 1e-10;

/// Least-squares solve of `min ||y - X b||` via Householder QR.
///
/// Rank deficiency is detected from the R diagonal; offending columns are
/// reported by label so callers can surface which regressors collide.
pub fn solve_least_squares(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    labels: &[String],
) -> Result<DVector<f64>> {
    let (n, p) = x.shape();
    if n < p {
        return Err(Error::invalid(format!(
            "least squares needs at least as many rows as columns (got {n}x{p})"
        )));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    check_triangular_rank(&r, labels)?;
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let rhs = qty.rows(0, p).into_owned();
    let beta = r
        .solve_upper_triangular(&rhs)
        .ok_or_else(|| rank_error(&r, labels))?;
    Ok(beta)
}

/// Column labels whose R diagonal collapsed, for rank-deficiency reports.
fn deficient_columns(r: &DMatrix<f64>, labels: &[String]) -> Vec<String> {
    let p = r.ncols();
    let scale = (0..p).map(|i| r[(i, i)].abs()).fold(0.0_f64, f64::max);
    let tol = scale.max(1.0) * RANK_TOL;
    (0..p)
        .filter(|&i| r[(i, i)].abs() <= tol)
        .map(|i| {
            labels
                .get(i)
                .cloned()
                .unwrap_or_else(|| format!("column {i}"))
        })
        .collect()
}

fn rank_error(r: &DMatrix<f64>, labels: &[String]) -> Error {
    let mut columns = deficient_columns(r, labels);
    if columns.is_empty() {
        columns.push("unidentified column".to_string());
    }
    Error::RankDeficient { columns }
}

fn check_triangular_rank(r: &DMatrix<f64>, labels: &[String]) -> Result<()> {
    let columns = deficient_columns(r, labels);
    if columns.is_empty() {
        Ok(())
    } else {
        Err(Error::RankDeficient { columns })
    }
}

/// Rank of a matrix via column-pivoted QR, with the labels of the columns
/// that fall outside the numerical column space.
pub fn column_rank_check(x: &DMatrix<f64>, labels: &[String]) -> Result<()> {
    let p = x.ncols();
    let qr = x.clone().col_piv_qr();
    let r = qr.r();
    let scale = (0..p.min(x.nrows()))
        .map(|i| r[(i, i)].abs())
        .fold(0.0_f64, f64::max);
    let tol = scale.max(1.0) * RANK_TOL;
    let rank = (0..p.min(x.nrows()))
        .take_while(|&i| r[(i, i)].abs() > tol)
        .count();
    if rank == p {
        return Ok(());
    }
    // Columns pivoted past the numerical rank are the collinear ones.
    let perm = qr.p();
    let mut indicator: Vec<usize> = (0..p).collect();
    let mut cols = DMatrix::<usize>::from_fn(1, p, |_, c| indicator[c]);
    // nalgebra permutes columns in place; replay the recorded sequence.
    perm.permute_columns(&mut cols);
    indicator = (0..p).map(|c| cols[(0, c)]).collect();
    let columns = indicator[rank..]
        .iter()
        .map(|&c| {
            labels
                .get(c)
                .cloned()
                .unwrap_or_else(|| format!("column {c}"))
        })
        .collect();
    Err(Error::RankDeficient { columns })
}

/// Solve `A x = b` for symmetric positive definite `A` via Cholesky.
pub fn cholesky_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.clone().cholesky().map(|chol| chol.solve(b))
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn cholesky_inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    a.clone().cholesky().map(|chol| chol.inverse())
}

/// A factor `L` with `L Lᵀ ≈ M` for symmetric positive semidefinite `M`.
///
/// Tries Cholesky first; if `M` is only semidefinite (or indefinite to
/// rounding), falls back to a symmetric eigendecomposition with negative
/// eigenvalues clipped at zero.
pub fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(chol) = m.clone().cholesky() {
        return chol.l();
    }
    let eig = m.clone().symmetric_eigen();
    let n = m.nrows();
    let mut factor = eig.eigenvectors;
    for (c, &lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        for r in 0..n {
            factor[(r, c)] *= s;
        }
    }
    factor
}

/// Largest eigenvalue modulus of a square matrix (companion-matrix stability).
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        None
    } else {
        Some(sab / (saa * sbb).sqrt())
    }
}
