//! Small dense helpers on top of nalgebra for the symmetric matrices that
//! appear in Gaussian laws and constant Hessians.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

pub type Matrix<T> = DMatrix<T>;
pub type Vector<T> = DVector<T>;

pub fn frobenius<T: Scalar>(m: &Matrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, v| acc + *v * *v).sqrt()
}

/// `‖m − mᵀ‖_F ≤ rel_tol · ‖m‖_F`.
pub fn is_symmetric<T: Scalar>(m: &Matrix<T>, rel_tol: T) -> bool {
    if !m.is_square() {
        return false;
    }
    let asym = frobenius(&(m - m.transpose()));
    asym <= rel_tol * frobenius(m)
}

pub fn symmetrize<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    (m + m.transpose()) * T::lit(0.5)
}

/// Eigenvalues in ascending order together with matching eigenvector columns.
pub fn sym_eigen<T: Scalar>(m: &Matrix<T>) -> (Vector<T>, Matrix<T>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = Vector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn min_eigenvalue<T: Scalar>(m: &Matrix<T>) -> T {
    let (values, _) = sym_eigen(m);
    values[0]
}

fn spectral_map<T: Scalar>(m: &Matrix<T>, f: impl Fn(T) -> T) -> Matrix<T> {
    let (values, vectors) = sym_eigen(m);
    let mapped = Matrix::from_diagonal(&values.map(f));
    &vectors * mapped * vectors.transpose()
}

/// Principal square root of a symmetric positive semi-definite matrix.
/// Round-off negative eigenvalues are clamped to zero.
pub fn sqrtm_psd<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    spectral_map(m, |v| if v > T::zero() { v.sqrt() } else { T::zero() })
}

/// Largest singular value.
pub fn op_norm<T: Scalar>(m: &Matrix<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    let gram = m.transpose() * m;
    let (values, _) = sym_eigen(&gram);
    let top = values[values.len() - 1];
    if top > T::zero() {
        top.sqrt()
    } else {
        T::zero()
    }
}

/// Cholesky-based inverse; fails unless `m` is symmetric positive definite.
pub fn spd_inverse<T: Scalar>(m: &Matrix<T>, what: &str) -> Result<Matrix<T>> {
    let chol = nalgebra::Cholesky::new(symmetrize(m))
        .ok_or_else(|| Error::DegenerateModel(format!("{what} is not positive definite")))?;
    Ok(chol.inverse())
}

pub fn log_det_spd<T: Scalar>(m: &Matrix<T>, what: &str) -> Result<T> {
    let chol = nalgebra::Cholesky::new(symmetrize(m))
        .ok_or_else(|| Error::DegenerateModel(format!("{what} is not positive definite")))?;
    let l = chol.l();
    Ok((0..l.nrows()).fold(T::zero(), |acc, i| acc + l[(i, i)].ln()) * T::lit(2.0))
}

pub fn cholesky_factor<T: Scalar>(m: &Matrix<T>, what: &str) -> Result<Matrix<T>> {
    nalgebra::Cholesky::new(symmetrize(m))
        .map(|c| c.l())
        .ok_or_else(|| Error::DegenerateModel(format!("{what} is not positive definite")))
}

pub fn check_dims<T: Scalar>(m: &Matrix<T>, rows: usize, cols: usize, what: &str) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(invalid(format!(
            "{what} must be {rows}x{cols}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

pub fn all_finite<T: Scalar>(values: &[T]) -> bool {
    values.iter().all(|v| v.is_finite_value())
}
