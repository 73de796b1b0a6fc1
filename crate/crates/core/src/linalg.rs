//! Dense linear-algebra helpers shared by the synthesis, analysis and
//! simulation modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Symmetric part `(M + Mᵀ)/2`.
pub fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Sorted (ascending) eigenvalues of a symmetric matrix.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut vals: Vec<f64> = SymmetricEigen::new(sym(m)).eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.total_cmp(b));
    vals
}

pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(f64::NAN)
}

pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(f64::NAN)
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Maximum real part over the spectrum of a square matrix.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol
}

/// Symmetric positive-definite square root and its inverse.
pub fn spd_sqrt(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let eig = SymmetricEigen::new(sym(m));
    if eig.eigenvalues.iter().any(|&v| v <= 0.0) {
        return Err(Error::InvalidValue(
            "matrix square root requires a positive-definite argument".into(),
        ));
    }
    let q = &eig.eigenvectors;
    let root = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|v| v.sqrt()));
    let inv_root = root.map(|v| 1.0 / v);
    let s = q * DMatrix::from_diagonal(&root) * q.transpose();
    let s_inv = q * DMatrix::from_diagonal(&inv_root) * q.transpose();
    Ok((s, s_inv))
}

/// Solves the continuous Lyapunov equation `FᵀX + XF + Q = 0` by
/// vectorisation. Intended for the small state dimensions used here.
pub fn solve_lyapunov(f: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = f.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    // vec(FᵀX + XF) = (I ⊗ Fᵀ + Fᵀ ⊗ I) vec(X)
    let ft = f.transpose();
    let op = eye.kronecker(&ft) + ft.kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, q.iter().map(|v| -v));
    let sol = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Eigen("Lyapunov operator is singular".into()))?;
    Ok(sym(&DMatrix::from_column_slice(n, n, sol.as_slice())))
}

/// Orthonormal basis (as columns) of the numerical null space of `m`,
/// keeping singular directions with `σ < rel_tol · σ_max`.
pub fn null_space(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let cols = m.ncols();
    // Pad to a square matrix so the SVD returns a full right basis.
    let mut padded = DMatrix::<f64>::zeros(m.nrows().max(cols), cols);
    padded.view_mut((0, 0), (m.nrows(), cols)).copy_from(m);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let sigma_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cutoff = rel_tol * sigma_max.max(f64::MIN_POSITIVE);
    let picked: Vec<DVector<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s < cutoff || sigma_max == 0.0)
        .map(|(k, _)| v_t.row(k).transpose())
        .collect();
    if picked.is_empty() {
        DMatrix::zeros(cols, 0)
    } else {
        DMatrix::from_columns(&picked)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lyapunov_scalar() {
        let f = DMatrix::from_element(1, 1, -2.0);
        let q = DMatrix::from_element(1, 1, 4.0);
        let x = solve_lyapunov(&f, &q).unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn lyapunov_residual_small() {
        let f = DMatrix::from_row_slice(3, 3, &[-1.0, 2.0, 0.0, 0.0, -3.0, 1.0, 0.5, 0.0, -2.0]);
        let q = DMatrix::identity(3, 3);
        let x = solve_lyapunov(&f, &q).unwrap();
        let r = f.transpose() * &x + &x * &f + &q;
        assert!(r.norm() < 1e-12);
    }

    #[test]
    fn null_space_of_laplacian() {
        let l = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
        let ns = null_space(&l, 1e-8);
        assert_eq!(ns.ncols(), 1);
        let v = ns.column(0);
        assert!((v[0] - v[1]).abs() < 1e-12 && (v[1] - v[2]).abs() < 1e-12);
    }

    #[test]
    fn spd_sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let (s, s_inv) = spd_sqrt(&m).unwrap();
        assert!((&s * &s - &m).norm() < 1e-12);
        assert!((&s * &s_inv - DMatrix::identity(2, 2)).norm() < 1e-12);
    }
}
