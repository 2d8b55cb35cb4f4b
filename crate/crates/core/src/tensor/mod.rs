//! Dense real-matrix primitives.
//!
//! [`Matrix`] is a validated wrapper over [`nalgebra::DMatrix`]: at least one
//! row and one column, every entry finite. The decompositions used by the CCA
//! code live in [`decomp`], orthonormalization and seeded orthogonal matrices
//! in [`ortho`], and the chi-squared survival function in [`special`].

pub mod decomp;
pub mod ortho;
pub mod special;

use std::fmt;
use std::ops::Index;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use decomp::{inv_sqrt_psd, svd, symmetric_eigen, SvdResult, SymmetricEigen};
pub use ortho::{gram_schmidt, random_orthogonal, random_rotation, Orthonormalized};
pub use special::chi_squared_sf;

/// Real matrix with `rows >= 1`, `cols >= 1` and finite entries.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Matrix(DMatrix<f64>);

impl Matrix {
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyMatrix { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(Error::DataLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        Self::from_dmatrix(DMatrix::from_row_slice(rows, cols, &data))
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::invalid(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::from_row_major(rows.len(), cols, data)
    }

    pub fn from_dmatrix(m: DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = m.shape();
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyMatrix { rows, cols });
        }
        for j in 0..cols {
            for i in 0..rows {
                if !m[(i, j)].is_finite() {
                    return Err(Error::NonFiniteValue { row: i, col: j });
                }
            }
        }
        Ok(Matrix(m))
    }

    /// Wraps a matrix produced by this crate's own arithmetic; shape and
    /// finiteness are checked only in debug builds.
    pub(crate) fn from_dmatrix_unchecked(m: DMatrix<f64>) -> Self {
        debug_assert!(m.nrows() > 0 && m.ncols() > 0);
        debug_assert!(m.iter().all(|v| v.is_finite()));
        Matrix(m)
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        Self::from_dmatrix(DMatrix::from_fn(rows, cols, f))
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::from_dmatrix(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::from_dmatrix(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        let n = diag.len();
        Self::from_fn(n, n, |i, j| if i == j { diag[i] } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.0.row(i).iter().copied().collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows()).map(|i| self.row(i)).collect()
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        self.0.transpose().as_slice().to_vec()
    }

    pub fn as_dmatrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_dmatrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn transpose(&self) -> Matrix {
        Matrix(self.0.transpose())
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols() != other.rows() {
            return Err(Error::ShapeMismatch {
                left: self.shape(),
                right: other.shape(),
            });
        }
        Matrix::from_dmatrix(&self.0 * &other.0)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Keeps the listed rows, in the order given.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Matrix> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.rows()) {
            return Err(Error::invalid(format!("row index {bad} out of range")));
        }
        Matrix::from_dmatrix(self.0.select_rows(indices))
    }

    pub fn select_columns(&self, indices: &[usize]) -> Result<Matrix> {
        if let Some(&bad) = indices.iter().find(|&&j| j >= self.cols()) {
            return Err(Error::invalid(format!("column index {bad} out of range")));
        }
        Matrix::from_dmatrix(self.0.select_columns(indices))
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols() != other.cols() {
            return Err(Error::ColumnMismatch {
                left: self.cols(),
                right: other.cols(),
            });
        }
        let (a, b) = (self.rows(), other.rows());
        Ok(Matrix(DMatrix::from_fn(a + b, self.cols(), |i, j| {
            if i < a {
                self.0[(i, j)]
            } else {
                other.0[(i - a, j)]
            }
        })))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix{:?} ", self.shape())?;
        f.debug_list().entries(self.to_rows()).finish()
    }
}

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Matrix::from_rows(&rows)
    }
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Self {
        m.to_rows()
    }
}

/// Subtracts each row's mean from that row.
///
/// Two passes: the residual mean left by the first subtraction is removed
/// again, which keeps rows with a large common offset centered to roundoff.
pub fn center_rows(m: &Matrix) -> Matrix {
    Matrix(center_dmatrix(&m.0))
}

pub(crate) fn center_dmatrix(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.ncols() as f64;
    let mut out = m.clone();
    for _ in 0..2 {
        let means = out.column_mean();
        for mut col in out.column_iter_mut() {
            col -= &means;
        }
    }
    debug_assert!(n > 0.0);
    out
}

/// Covariance blocks of two layers observed on the same datapoints.
#[derive(Clone, Debug)]
pub struct CovarianceBlocks {
    /// `a x a` auto-covariance of the first layer.
    pub s11: Matrix,
    /// `b x b` auto-covariance of the second layer.
    pub s22: Matrix,
    /// `a x b` cross-covariance.
    pub s12: Matrix,
}

/// Centers both inputs and returns their covariance blocks with divisor `n - 1`.
pub fn covariance_blocks(l1: &Matrix, l2: &Matrix) -> Result<CovarianceBlocks> {
    if l1.cols() != l2.cols() {
        return Err(Error::ColumnMismatch {
            left: l1.cols(),
            right: l2.cols(),
        });
    }
    let n = l1.cols();
    if n < 2 {
        return Err(Error::invalid("covariance needs at least two datapoints"));
    }
    let c1 = center_dmatrix(&l1.0);
    let c2 = center_dmatrix(&l2.0);
    let scale = 1.0 / (n as f64 - 1.0);
    let s11 = symmetrize(&c1 * c1.transpose()) * scale;
    let s22 = symmetrize(&c2 * c2.transpose()) * scale;
    let s12 = (&c1 * c2.transpose()) * scale;
    Ok(CovarianceBlocks {
        s11: Matrix::from_dmatrix(s11)?,
        s22: Matrix::from_dmatrix(s22)?,
        s12: Matrix::from_dmatrix(s12)?,
    })
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(matches!(
            Matrix::from_row_major(0, 3, vec![]),
            Err(Error::EmptyMatrix { .. })
        ));
        assert!(matches!(
            Matrix::from_row_major(2, 2, vec![1.0; 3]),
            Err(Error::DataLength { .. })
        ));
        assert!(matches!(
            Matrix::from_row_major(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFiniteValue { row: 0, col: 1 })
        ));
        assert!(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }

    #[test]
    fn row_major_layout() {
        let x = Matrix::from_row_major(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(x[(0, 2)], 3.0);
        assert_eq!(x[(1, 0)], 4.0);
        assert_eq!(x.to_row_major(), vec![1., 2., 3., 4., 5., 6.]);
    }

    #[test]
    fn center_rows_examples() {
        assert_eq!(center_rows(&m(&[&[1., 2., 3.]])), m(&[&[-1., 0., 1.]]));
        assert_eq!(center_rows(&m(&[&[5., 5., 5.]])), m(&[&[0., 0., 0.]]));
        assert_eq!(
            center_rows(&m(&[&[1., 3.], &[2., 6.]])),
            m(&[&[-1., 1.], &[-2., 2.]])
        );
    }

    #[test]
    fn center_rows_large_offset() {
        let x = m(&[&[1e8 + 0.1, 1e8 + 0.2, 1e8 + 0.3, 1e8 + 0.7]]);
        let c = center_rows(&x);
        let mean: f64 = c.row(0).iter().sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 * 1e8);
    }

    #[test]
    fn covariance_examples() {
        let l = m(&[&[-1., 0., 1.]]);
        let cov = covariance_blocks(&l, &l).unwrap();
        assert_eq!(cov.s11, m(&[&[1.0]]));
        assert_eq!(cov.s22, m(&[&[1.0]]));
        assert_eq!(cov.s12, m(&[&[1.0]]));

        let cov = covariance_blocks(&m(&[&[-1., 0., 1.]]), &m(&[&[1., -2., 1.]])).unwrap();
        assert_eq!(cov.s12, m(&[&[0.0]]));

        let x = m(&[&[1., 4., 2., 8.], &[0., 1., 0., -3.]]);
        let cov = covariance_blocks(&x, &x).unwrap();
        assert_eq!(cov.s11, cov.s12);
        assert_eq!(cov.s11, cov.s22);
    }

    #[test]
    fn covariance_column_mismatch() {
        let err = covariance_blocks(&m(&[&[1., 2., 3.]]), &m(&[&[1., 2.]])).unwrap_err();
        assert!(matches!(err, Error::ColumnMismatch { left: 3, right: 2 }));
    }

    #[test]
    fn covariance_is_symmetric_psd() {
        let x =
            Matrix::from_fn(4, 9, |i, j| ((i * 7 + j * 3) % 5) as f64 - 0.3 * j as f64).unwrap();
        let y = Matrix::from_fn(3, 9, |i, j| ((i + 2 * j) % 4) as f64).unwrap();
        let cov = covariance_blocks(&x, &y).unwrap();
        assert_eq!(cov.s12.shape(), (4, 3));
        let s = cov.s11.as_dmatrix();
        assert_abs_diff_eq!((s - s.transpose()).amax(), 0.0);
        let eig = symmetric_eigen(&cov.s11).unwrap();
        assert!(eig.values.iter().all(|&v| v > -1e-12));
    }

    #[test]
    fn serde_as_nested_rows() {
        let x = m(&[&[1., 2.], &[3., 4.]]);
        let s = serde_json::to_string(&x).unwrap();
        assert_eq!(s, "[[1.0,2.0],[3.0,4.0]]");
        let back: Matrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, x);
        assert!(serde_json::from_str::<Matrix>("[]").is_err());
    }
}
