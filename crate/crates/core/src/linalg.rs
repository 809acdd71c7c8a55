//! Dense symmetric helpers shared by the block solvers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{EioError, Result};

/// Relative pivot floor for Cholesky factorizations.
pub const PIVOT_TOL: f64 = 1e-12;

/// Asymmetry above which inputs are reported before being symmetrized.
pub const ASYM_WARN: f64 = 1e-8;

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Returns `(M + Mᵀ)/2` and the largest absolute entry of `M - Mᵀ` relative to `max|M|`.
pub fn symmetrize(m: &DMatrix<f64>, label: &str) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(EioError::Dimension(format!(
            "{label} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = max_abs(m).max(f64::MIN_POSITIVE);
    let asym = max_abs(&(m - m.transpose())) / scale;
    if asym > ASYM_WARN {
        log::warn!("{label}: relative asymmetry {asym:.3e} removed by symmetrization");
    }
    Ok((m + m.transpose()) * 0.5)
}

/// Cholesky factor that rejects pivots below `PIVOT_TOL * max diag`.
pub fn spd_factor(m: &DMatrix<f64>, label: &str) -> Result<Cholesky<f64, Dyn>> {
    if m.nrows() == 0 {
        return Cholesky::new(m.clone()).ok_or_else(|| EioError::singular(label));
    }
    let dmax = m.diagonal().iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let chol = Cholesky::new(m.clone()).ok_or_else(|| EioError::singular(label))?;
    let l = chol.l_dirty();
    let floor = PIVOT_TOL * dmax.max(f64::MIN_POSITIVE);
    for i in 0..m.nrows() {
        let piv = l[(i, i)] * l[(i, i)];
        if !(piv > floor) {
            return Err(EioError::singular(label));
        }
    }
    Ok(chol)
}

pub fn spd_inverse(m: &DMatrix<f64>, label: &str) -> Result<DMatrix<f64>> {
    Ok(spd_factor(m, label)?.inverse())
}

pub fn spd_solve(m: &DMatrix<f64>, rhs: &DVector<f64>, label: &str) -> Result<DVector<f64>> {
    Ok(spd_factor(m, label)?.solve(rhs))
}

fn eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, Dyn> {
    SymmetricEigen::new((m + m.transpose()) * 0.5)
}

pub fn min_eig(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    eigen(m).eigenvalues.min()
}

pub fn max_eig(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    eigen(m).eigenvalues.max()
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = eigen(m).eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Applies `f` to the spectrum of a symmetric matrix.
pub fn sym_fn(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let e = eigen(m);
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(f));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_fn(m, |x| x.max(0.0).sqrt())
}

pub fn sym_inv_sqrt(m: &DMatrix<f64>, label: &str) -> Result<DMatrix<f64>> {
    let e = eigen(m);
    let top = e.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if e.eigenvalues.iter().any(|&v| !(v > PIVOT_TOL * top)) {
        return Err(EioError::singular(label));
    }
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|x| 1.0 / x.sqrt()));
    Ok(&e.eigenvectors * d * e.eigenvectors.transpose())
}

/// Spectral norm (largest singular value).
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.singular_values().max()
}

pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(n, n);
    let mut off = 0;
    for b in blocks {
        out.view_mut((off, off), (b.nrows(), b.ncols())).copy_from(b);
        off += b.nrows();
    }
    out
}

/// Submatrix on the given row and column index sets.
pub fn select(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn select_vec(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}
