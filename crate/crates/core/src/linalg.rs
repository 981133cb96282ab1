//! Thin wrappers over the `faer` kernels used throughout the crate.

use faer::linalg::solvers::DenseSolveCore;
use faer::Side;

use crate::error::{Result, WaxError};
use crate::matrix::{CMatrix, C64};

pub(crate) struct Svd {
    pub u: CMatrix,
    pub s: Vec<f64>,
    pub v: CMatrix,
}

/// Default relative rank tolerance: `max(rows, cols) · 2⁻⁵²`.
pub fn default_rank_tol(rows: usize, cols: usize) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON
}

/// Full SVD (square U and V).
pub(crate) fn svd(m: &CMatrix) -> Result<Svd> {
    let d = m
        .as_faer()
        .svd()
        .map_err(|e| WaxError::Numerical(format!("SVD did not converge: {e:?}")))?;
    let s = d.S().column_vector().iter().map(|z| z.re).collect();
    Ok(Svd {
        u: CMatrix::from_faer(d.U().to_owned()),
        s,
        v: CMatrix::from_faer(d.V().to_owned()),
    })
}

pub(crate) fn thin_svd(m: &CMatrix) -> Result<Svd> {
    let d = m
        .as_faer()
        .thin_svd()
        .map_err(|e| WaxError::Numerical(format!("SVD did not converge: {e:?}")))?;
    let s = d.S().column_vector().iter().map(|z| z.re).collect();
    Ok(Svd {
        u: CMatrix::from_faer(d.U().to_owned()),
        s,
        v: CMatrix::from_faer(d.V().to_owned()),
    })
}

pub(crate) fn singular_values(m: &CMatrix) -> Result<Vec<f64>> {
    if m.is_empty() {
        return Ok(Vec::new());
    }
    let s = m
        .as_faer()
        .singular_values()
        .map_err(|e| WaxError::Numerical(format!("SVD did not converge: {e:?}")))?;
    Ok(s)
}

/// Number of singular values above `rel_tol · σ_max`.
pub(crate) fn rank_from_singular_values(s: &[f64], rel_tol: f64) -> usize {
    let smax = s.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    s.iter().filter(|&&x| x > rel_tol * smax).count()
}

/// 2-norm condition number; infinite for singular or empty input.
pub(crate) fn condition_number(m: &CMatrix) -> Result<f64> {
    let s = singular_values(m)?;
    let (max, min) = s.iter().fold((0.0f64, f64::INFINITY), |(hi, lo), &x| {
        (hi.max(x), lo.min(x))
    });
    if s.len() < m.rows().min(m.cols()) || min == 0.0 || s.is_empty() {
        return Ok(f64::INFINITY);
    }
    Ok(max / min)
}

pub(crate) fn inverse(m: &CMatrix) -> CMatrix {
    CMatrix::from_faer(m.as_faer().partial_piv_lu().inverse())
}

/// Moore–Penrose pseudo-inverse with spectral truncation at the default rank rule.
pub(crate) fn pinv(m: &CMatrix) -> Result<CMatrix> {
    pinv_truncated(m, usize::MAX, default_rank_tol(m.rows(), m.cols()))
}

/// Pseudo-inverse keeping at most `max_rank` singular values above `rel_tol · σ_max`.
pub(crate) fn pinv_truncated(m: &CMatrix, max_rank: usize, rel_tol: f64) -> Result<CMatrix> {
    let d = thin_svd(m)?;
    let r = rank_from_singular_values(&d.s, rel_tol).min(max_rank);
    Ok(CMatrix::from_fn(m.cols(), m.rows(), |i, j| {
        (0..r)
            .map(|q| d.v.get(i, q) * d.u.get(j, q).conj() / d.s[q])
            .sum()
    }))
}

/// Orthonormal basis of the column space, truncated at the default rank rule.
pub(crate) fn range_basis(m: &CMatrix) -> Result<CMatrix> {
    if m.is_empty() {
        return Ok(CMatrix::zeros(m.rows(), 0));
    }
    let d = thin_svd(m)?;
    let r = rank_from_singular_values(&d.s, default_rank_tol(m.rows(), m.cols()));
    let cols: Vec<usize> = (0..r).collect();
    Ok(d.u.select_cols(&cols))
}

/// `log₂ det(S)` for Hermitian positive-definite `S`, via Cholesky.
pub(crate) fn log2_det_hpd(s: &CMatrix) -> Result<f64> {
    let llt = s
        .as_faer()
        .llt(Side::Lower)
        .map_err(|e| WaxError::Numerical(format!("Cholesky failed: {e:?}")))?;
    let l = llt.L();
    let ln: f64 = (0..s.rows()).map(|i| l[(i, i)].re.ln()).sum();
    Ok(2.0 * ln / std::f64::consts::LN_2)
}

/// Eigen-decomposition of a Hermitian matrix; eigenvalues ascending.
pub(crate) fn hermitian_eigen(m: &CMatrix) -> Result<(Vec<f64>, CMatrix)> {
    let e = m
        .as_faer()
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| WaxError::Numerical(format!("eigen solver failed: {e:?}")))?;
    let vals = e.S().column_vector().iter().map(|z| z.re).collect();
    Ok((vals, CMatrix::from_faer(e.U().to_owned())))
}

/// `Aᴴ A` with exact Hermitian symmetry enforced.
pub(crate) fn gram(a: &CMatrix) -> CMatrix {
    let g = &a.adjoint() * a;
    CMatrix::from_fn(g.rows(), g.cols(), |i, j| {
        if i == j {
            C64::new(g.get(i, i).re, 0.0)
        } else {
            0.5 * (g.get(i, j) + g.get(j, i).conj())
        }
    })
}
