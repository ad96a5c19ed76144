//! Small dense helpers shared by the fitters, the bound computations and the oracle.

use nalgebra::{DMatrix, SMatrix, SVector};

use crate::error::{Error, Result};

/// Upper-triangular factor of a tall matrix accumulated row by row with Givens
/// rotations, so `R^T R = Z^T Z` without forming the normal matrix.
#[derive(Debug, Clone)]
pub struct RowQr<const N: usize> {
    r: SMatrix<f64, N, N>,
}

impl<const N: usize> Default for RowQr<N> {
    fn default() -> Self {
        Self { r: SMatrix::zeros() }
    }
}

impl<const N: usize> RowQr<N> {
    pub fn push(&mut self, row: [f64; N]) {
        let mut row = row;
        for j in 0..N {
            if row[j] == 0.0 {
                continue;
            }
            let rjj = self.r[(j, j)];
            let h = rjj.hypot(row[j]);
            let (c, s) = (rjj / h, row[j] / h);
            self.r[(j, j)] = h;
            row[j] = 0.0;
            for k in j + 1..N {
                let rjk = self.r[(j, k)];
                self.r[(j, k)] = c * rjk + s * row[k];
                row[k] = c * row[k] - s * rjk;
            }
        }
    }

    pub fn r(&self) -> &SMatrix<f64, N, N> {
        &self.r
    }
}

/// Eigen-decomposition of a small symmetric matrix with eigenvalues sorted ascending.
pub fn sym_eigen<const N: usize>(m: &SMatrix<f64, N, N>) -> (SVector<f64, N>, SMatrix<f64, N, N>) {
    let sym = 0.5 * (m + m.transpose());
    let eig = DMatrix::from_column_slice(N, N, sym.as_slice()).symmetric_eigen();
    let mut order: Vec<usize> = (0..N).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let mut values = SVector::<f64, N>::zeros();
    let mut vectors = SMatrix::<f64, N, N>::zeros();
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eig.eigenvalues[src];
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Inverse of a symmetric positive-definite matrix via Cholesky; no pseudo-inverse fallback.
pub fn spd_inverse<const N: usize>(m: &SMatrix<f64, N, N>) -> Result<SMatrix<f64, N, N>> {
    let sym = 0.5 * (m + m.transpose());
    let (values, _) = sym_eigen(&sym);
    let cond = values[N - 1] / values[0];
    if !(values[0] > 0.0) || !(cond <= 1e12) {
        return Err(Error::DegenerateConfiguration(format!(
            "matrix is singular or ill-conditioned (eigenvalues {:e}..{:e})",
            values[0],
            values[N - 1]
        )));
    }
    let chol = sym
        .cholesky()
        .ok_or_else(|| Error::DegenerateConfiguration("Cholesky factorization failed".into()))?;
    let inv = chol.inverse();
    Ok(0.5 * (inv + inv.transpose()))
}

pub fn min_eigenvalue_dyn(m: &DMatrix<f64>) -> f64 {
    let sym = 0.5 * (m + m.transpose());
    sym.symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn min_eigenvalue<const N: usize>(m: &SMatrix<f64, N, N>) -> f64 {
    sym_eigen(m).0[0]
}

/// PSD test by factorization: `m + tol I` admits a Cholesky factor.
pub fn is_psd_by_cholesky(m: &DMatrix<f64>, tol: f64) -> bool {
    let n = m.nrows();
    let shifted = 0.5 * (m + m.transpose()) + DMatrix::identity(n, n) * tol;
    shifted.cholesky().is_some()
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

pub fn spectral_norm_s<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> f64 {
    spectral_norm(&DMatrix::from_column_slice(R, C, m.as_slice()))
}
