//! Symmetric eigendecomposition, PSD inverse square root and thin SVD.
//!
//! The iterative kernels come from nalgebra; this module adds the iteration
//! caps, descending sort order and rank truncation the rest of the crate
//! relies on.

use nalgebra::DMatrix;

use super::Matrix;
use crate::error::{Error, Result};

/// Relative symmetry tolerance accepted by [`inv_sqrt_psd`].
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Eigenpairs of a symmetric matrix, eigenvalues nonincreasing.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    /// Column `i` is the unit eigenvector for `values[i]`.
    pub vectors: DMatrix<f64>,
}

fn iteration_cap(rows: usize, cols: usize) -> usize {
    100 * rows.max(cols).max(1)
}

pub(crate) fn eigen_dmatrix(m: &DMatrix<f64>) -> Result<SymmetricEigen> {
    let n = m.nrows();
    let eig = nalgebra::SymmetricEigen::try_new(m.clone(), f64::EPSILON, iteration_cap(n, n))
        .ok_or(Error::ConvergenceFailure("symmetric eigendecomposition"))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = eig.eigenvectors.select_columns(&order);
    Ok(SymmetricEigen { values, vectors })
}

/// Eigendecomposition of a symmetric matrix (only the lower triangle is read).
pub fn symmetric_eigen(m: &Matrix) -> Result<SymmetricEigen> {
    if m.rows() != m.cols() {
        return Err(Error::invalid("eigendecomposition needs a square matrix"));
    }
    eigen_dmatrix(m.as_dmatrix())
}

fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    (m - m.transpose()).amax() / scale
}

/// Eigenvalues at or below `max(eps * max_eigenvalue, floor)` are dropped.
pub(crate) struct RetainedEigen {
    pub values: Vec<f64>,
    /// `n x r`, retained eigenvectors as columns.
    pub vectors: DMatrix<f64>,
}

pub(crate) fn retained_eigen(m: &DMatrix<f64>, eps: f64, floor: f64) -> Result<RetainedEigen> {
    let eig = eigen_dmatrix(m)?;
    let max = eig.values.first().copied().unwrap_or(0.0);
    let threshold = (eps * max).max(floor);
    if !(max > 0.0) {
        return Err(Error::AllEigenvaluesNegligible);
    }
    let keep: Vec<usize> = eig
        .values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0 && v >= threshold)
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(Error::AllEigenvaluesNegligible);
    }
    Ok(RetainedEigen {
        values: keep.iter().map(|&i| eig.values[i]).collect(),
        vectors: eig.vectors.select_columns(&keep),
    })
}

/// Pseudo-inverse square root of a symmetric PSD matrix.
///
/// Eigenvalues below `eps * max_eigenvalue` are treated as zero and their
/// directions excluded, so `R * m * R` is the projector onto the retained
/// eigenspace.
pub fn inv_sqrt_psd(m: &Matrix, eps: f64) -> Result<Matrix> {
    if m.rows() != m.cols() {
        return Err(Error::invalid("inv_sqrt_psd needs a square matrix"));
    }
    if !(eps >= 0.0) {
        return Err(Error::invalid("eps must be nonnegative"));
    }
    let asym = asymmetry(m.as_dmatrix());
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    let ret = retained_eigen(m.as_dmatrix(), eps, 0.0)?;
    let mut scaled = ret.vectors.clone();
    for (mut col, &v) in scaled.column_iter_mut().zip(&ret.values) {
        col /= v.sqrt();
    }
    let out = &scaled * ret.vectors.transpose();
    Matrix::from_dmatrix(super::symmetrize(out))
}

/// Thin SVD: `u` is `rows x k`, `vt` is `k x cols`, `k = min(rows, cols)`.
#[derive(Clone, Debug)]
pub struct SvdResult {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub vt: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.as_dmatrix().clone();
        for (mut col, &s) in us.column_iter_mut().zip(&self.singular_values) {
            col *= s;
        }
        Matrix::from_dmatrix_unchecked(us * self.vt.as_dmatrix())
    }
}

pub(crate) struct RawSvd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub vt: DMatrix<f64>,
}

pub(crate) fn svd_dmatrix(m: &DMatrix<f64>) -> Result<RawSvd> {
    let (rows, cols) = m.shape();
    let svd = nalgebra::SVD::try_new(
        m.clone(),
        true,
        true,
        f64::EPSILON,
        iteration_cap(rows, cols),
    )
    .ok_or(Error::ConvergenceFailure("singular value decomposition"))?;
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let k = svd.singular_values.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    Ok(RawSvd {
        s: order
            .iter()
            .map(|&i| svd.singular_values[i].max(0.0))
            .collect(),
        u: u.select_columns(&order),
        vt: vt.select_rows(&order),
    })
}

pub fn svd(m: &Matrix) -> Result<SvdResult> {
    let raw = svd_dmatrix(m.as_dmatrix())?;
    Ok(SvdResult {
        u: Matrix::from_dmatrix(raw.u)?,
        singular_values: raw.s,
        vt: Matrix::from_dmatrix(raw.vt)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn max_diff(a: &Matrix, b: &Matrix) -> f64 {
        (a.as_dmatrix() - b.as_dmatrix()).amax()
    }

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut r = rng::seeded(seed);
        Matrix::from_row_major(rows, cols, rng::normal_vec(&mut r, rows * cols)).unwrap()
    }

    #[test]
    fn inv_sqrt_examples() {
        let i3 = Matrix::identity(3).unwrap();
        assert!(max_diff(&inv_sqrt_psd(&i3, 1e-10).unwrap(), &i3) < 1e-14);

        let d = inv_sqrt_psd(&Matrix::from_diagonal(&[4.0, 9.0]).unwrap(), 1e-10).unwrap();
        assert!(max_diff(&d, &Matrix::from_diagonal(&[0.5, 1.0 / 3.0]).unwrap()) < 1e-14);

        // eigenpair (2, [1,1]/sqrt 2) kept, zero eigenvalue dropped
        let r = inv_sqrt_psd(&m(&[&[1., 1.], &[1., 1.]]), 1e-6).unwrap();
        let h = 0.5 / 2f64.sqrt();
        assert!(max_diff(&r, &m(&[&[h, h], &[h, h]])) < 1e-12);
    }

    #[test]
    fn inv_sqrt_errors() {
        assert!(matches!(
            inv_sqrt_psd(&m(&[&[1., 2.], &[0., 1.]]), 1e-10),
            Err(Error::NotSymmetric(_))
        ));
        assert!(matches!(
            inv_sqrt_psd(&Matrix::zeros(2, 2).unwrap(), 1e-10),
            Err(Error::AllEigenvaluesNegligible)
        ));
        assert!(matches!(
            inv_sqrt_psd(&Matrix::from_diagonal(&[-1.0, -2.0]).unwrap(), 1e-10),
            Err(Error::AllEigenvaluesNegligible)
        ));
    }

    #[test]
    fn inv_sqrt_rank_deficient_gives_projector() {
        // 5 neurons observed on 3 datapoints: rank 2 after centering
        let x = gaussian(5, 3, 11);
        let cov = super::super::covariance_blocks(&x, &x).unwrap().s11;
        let r = inv_sqrt_psd(&cov, 1e-10).unwrap();
        let p = r.matmul(&cov).unwrap().matmul(&r).unwrap();
        let pp = p.matmul(&p).unwrap();
        assert!(max_diff(&p, &pp) < 1e-8);
        let trace: f64 = (0..5).map(|i| p[(i, i)]).sum();
        assert_abs_diff_eq!(trace, 2.0, epsilon = 1e-8);
    }

    #[test]
    fn svd_examples() {
        let s = svd(&Matrix::from_diagonal(&[3.0, 1.0]).unwrap()).unwrap();
        assert_abs_diff_eq!(s.singular_values[0], 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.singular_values[1], 1.0, epsilon = 1e-14);

        let s = svd(&Matrix::zeros(3, 2).unwrap()).unwrap();
        assert_eq!(s.singular_values, vec![0.0, 0.0]);

        let s = svd(&m(&[&[0., 1.], &[1., 0.]])).unwrap();
        assert_abs_diff_eq!(s.singular_values[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.singular_values[1], 1.0, epsilon = 1e-14);

        // ascending diagonal comes back sorted
        let s = svd(&Matrix::from_diagonal(&[1.0, 5.0, 2.0]).unwrap()).unwrap();
        assert_eq!(s.singular_values.len(), 3);
        assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn svd_reconstructs_512() {
        let x = gaussian(512, 512, 3);
        let s = svd(&x).unwrap();
        let err = max_diff(&s.reconstruct(), &x);
        assert!(err <= 1e-8 * s.singular_values[0], "err {err}");
    }

    fn check_svd(x: &Matrix) {
        let s = svd(x).unwrap();
        let k = x.rows().min(x.cols());
        assert_eq!(s.u.shape(), (x.rows(), k));
        assert_eq!(s.vt.shape(), (k, x.cols()));
        assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]));
        assert!(s.singular_values.iter().all(|&v| v >= 0.0));
        let tol = 1e-8 * s.singular_values[0].max(1.0);
        assert!(max_diff(&s.reconstruct(), x) <= tol);
        let utu = s.u.transpose().matmul(&s.u).unwrap();
        assert!(max_diff(&utu, &Matrix::identity(k).unwrap()) < 1e-10);
        let vvt = s.vt.matmul(&s.vt.transpose()).unwrap();
        assert!(max_diff(&vvt, &Matrix::identity(k).unwrap()) < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn svd_invariants(rows in 1usize..40, cols in 1usize..40, seed in any::<u64>()) {
            check_svd(&gaussian(rows, cols, seed));
        }

        #[test]
        fn inv_sqrt_whitens_well_conditioned(n in 1usize..12, log_cond in 0.0f64..6.0, seed in any::<u64>()) {
            // random PSD with condition number 10^log_cond < 1e6
            let q = super::super::random_orthogonal(n, seed);
            let vals: Vec<f64> = (0..n)
                .map(|i| if n == 1 { 1.0 } else { 10f64.powf(-log_cond * i as f64 / (n - 1) as f64) })
                .collect();
            let d = Matrix::from_diagonal(&vals).unwrap();
            let psd = Matrix::from_dmatrix(super::super::symmetrize(
                q.as_dmatrix() * d.as_dmatrix() * q.as_dmatrix().transpose())).unwrap();
            let r = inv_sqrt_psd(&psd, 1e-10).unwrap();
            let w = r.matmul(&psd).unwrap().matmul(&r).unwrap();
            prop_assert!(max_diff(&w, &Matrix::identity(n).unwrap()) < 1e-6);
        }
    }
}
