//! Canonical correlation analysis between two activation matrices.
//!
//! Each layer is centered, whitened on the eigenspace of its covariance that
//! survives `eps` truncation, and the whitened cross-covariance is
//! decomposed with an SVD. The singular values are the canonical correlations
//! `rho`; projecting the whitened data onto the singular vectors gives the
//! canonical vectors `h_i` in datapoint space.
//!
//! The whitening is applied twice: after the first pass the Gram matrix of the
//! whitened rows is the identity up to roundoff amplified by the covariance's
//! condition number, and a second eigen-whitening of that near-identity Gram
//! matrix removes the residual. The product of the two passes is still an
//! inverse square root of the covariance (up to an orthogonal factor), so the
//! correlations are unchanged and badly conditioned layers keep full accuracy.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::decomp::{eigen_dmatrix, retained_eigen, svd_dmatrix};
use crate::tensor::{center_dmatrix, Matrix};

/// Default relative eigenvalue cutoff for covariance whitening.
pub const DEFAULT_EPS: f64 = 1e-10;

/// Default retained-variance fraction for SVCCA pruning.
pub const DEFAULT_VARIANCE_FRACTION: f64 = 0.99;

/// Neuron activations over a dataset: rows are neurons, columns datapoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationMatrix {
    matrix: Matrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<String>>,
}

impl ActivationMatrix {
    pub fn new(matrix: Matrix) -> Result<Self> {
        if matrix.cols() < 2 {
            return Err(Error::invalid(format!(
                "activation matrix needs at least 2 datapoints, got {}",
                matrix.cols()
            )));
        }
        Ok(ActivationMatrix {
            matrix,
            labels: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.neurons() {
            return Err(Error::invalid(format!(
                "{} labels for {} neurons",
                labels.len(),
                self.neurons()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn neurons(&self) -> usize {
        self.matrix.rows()
    }

    pub fn datapoints(&self) -> usize {
        self.matrix.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub(crate) fn dm(&self) -> &DMatrix<f64> {
        self.matrix.as_dmatrix()
    }
}

impl TryFrom<Matrix> for ActivationMatrix {
    type Error = Error;

    fn try_from(m: Matrix) -> Result<Self> {
        ActivationMatrix::new(m)
    }
}

/// Which layer of a CCA a quantity belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

/// Result of [`compute_cca`]. `c = min(retained_rank_left, retained_rank_right)`.
#[derive(Clone, Debug)]
pub struct CcaResult {
    /// Canonical correlations, nonincreasing, clamped to `[0, 1]`.
    pub rho: Vec<f64>,
    /// `c x a`: row `i` is the unit singular vector `u_i` in the whitened
    /// coordinates of the symmetric inverse square root of the left covariance.
    pub left_directions: Matrix,
    /// `c x b`, right analogue of `left_directions`.
    pub right_directions: Matrix,
    /// `c x n`: row `i` is the unit-norm canonical vector `h_i`.
    pub left_canonical: Matrix,
    /// `c x n`, right analogue of `left_canonical`.
    pub right_canonical: Matrix,
    /// `c x a`: coefficients `w_i` with `w_i^T L1c` proportional to `h_i`.
    pub left_weights: Matrix,
    /// `c x b`.
    pub right_weights: Matrix,
    pub retained_rank_left: usize,
    pub retained_rank_right: usize,
}

impl CcaResult {
    pub fn num_coefficients(&self) -> usize {
        self.rho.len()
    }

    pub fn canonical(&self, side: Side) -> &Matrix {
        match side {
            Side::Left => &self.left_canonical,
            Side::Right => &self.right_canonical,
        }
    }
}

/// A centered layer whitened on its retained covariance eigenspace.
struct Whitened {
    /// `r x n`, rows satisfy `z z^T / (n-1) = I`.
    z: DMatrix<f64>,
    /// `r x a`, `z = transform * centered`.
    transform: DMatrix<f64>,
    /// `a x a` square root of the covariance restricted to the retained space.
    sqrt_cov: DMatrix<f64>,
}

/// Absolute eigenvalue floor: covariance eigenvalues this small are roundoff
/// left over from centering rows that were constant.
fn roundoff_floor(raw: &DMatrix<f64>) -> f64 {
    let n = raw.ncols() as f64;
    let scale = raw.amax();
    let e = 64.0 * f64::EPSILON * scale;
    e * e * n
}

fn whiten(raw: &DMatrix<f64>, centered: &DMatrix<f64>, eps: f64) -> Result<Whitened> {
    let n = centered.ncols() as f64;
    let cov = crate::tensor::symmetrize(centered * centered.transpose()) / (n - 1.0);
    let ret = match retained_eigen(&cov, eps, roundoff_floor(raw)) {
        Ok(r) => r,
        Err(Error::AllEigenvaluesNegligible) => {
            return Err(Error::degenerate(
                "layer has no variance (all rows constant)",
            ))
        }
        Err(e) => return Err(e),
    };
    let mut t0 = ret.vectors.transpose();
    for (mut row, &v) in t0.row_iter_mut().zip(&ret.values) {
        row /= v.sqrt();
    }
    let z0 = &t0 * centered;

    // second pass on the near-identity Gram matrix
    let gram = crate::tensor::symmetrize(&z0 * z0.transpose()) / (n - 1.0);
    let ge = eigen_dmatrix(&gram)?;
    let mut t1 = ge.vectors.transpose();
    for (mut row, &v) in t1.row_iter_mut().zip(&ge.values) {
        if !(v > 0.0) {
            return Err(Error::degenerate("whitening lost rank"));
        }
        row /= v.sqrt();
    }
    let z = &t1 * z0;
    let transform = t1 * t0;

    let mut half = ret.vectors.clone();
    for (mut col, &v) in half.column_iter_mut().zip(&ret.values) {
        col *= v.sqrt();
    }
    let sqrt_cov = &half * ret.vectors.transpose();
    Ok(Whitened {
        z,
        transform,
        sqrt_cov,
    })
}

fn normalize_rows(m: &mut DMatrix<f64>) {
    for mut row in m.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
    }
}

/// Full CCA between `l1` (`a x n`) and `l2` (`b x n`).
pub fn compute_cca(l1: &ActivationMatrix, l2: &ActivationMatrix, eps: f64) -> Result<CcaResult> {
    if l1.datapoints() != l2.datapoints() {
        return Err(Error::ColumnMismatch {
            left: l1.datapoints(),
            right: l2.datapoints(),
        });
    }
    if !(eps >= 0.0) {
        return Err(Error::invalid("eps must be nonnegative"));
    }
    let n = l1.datapoints() as f64;
    let c1 = center_dmatrix(l1.dm());
    let c2 = center_dmatrix(l2.dm());
    let w1 = whiten(l1.dm(), &c1, eps)?;
    let w2 = whiten(l2.dm(), &c2, eps)?;

    let cross = (&w1.z * w2.z.transpose()) / (n - 1.0);
    let svd = svd_dmatrix(&cross)?;
    let c = svd.s.len();
    let rho: Vec<f64> = svd.s.iter().map(|&s| s.clamp(0.0, 1.0)).collect();

    let u_t = svd.u.transpose(); // c x r1
    let v_t = svd.vt; // c x r2

    let mut left_canonical = &u_t * &w1.z;
    let mut right_canonical = &v_t * &w2.z;
    normalize_rows(&mut left_canonical);
    normalize_rows(&mut right_canonical);

    let left_weights = &u_t * &w1.transform;
    let right_weights = &v_t * &w2.transform;
    let mut left_directions = &left_weights * &w1.sqrt_cov;
    let mut right_directions = &right_weights * &w2.sqrt_cov;
    normalize_rows(&mut left_directions);
    normalize_rows(&mut right_directions);

    debug_assert_eq!(c, w1.z.nrows().min(w2.z.nrows()));
    Ok(CcaResult {
        rho,
        left_directions: Matrix::from_dmatrix(left_directions)?,
        right_directions: Matrix::from_dmatrix(right_directions)?,
        left_canonical: Matrix::from_dmatrix(left_canonical)?,
        right_canonical: Matrix::from_dmatrix(right_canonical)?,
        left_weights: Matrix::from_dmatrix(left_weights)?,
        right_weights: Matrix::from_dmatrix(right_weights)?,
        retained_rank_left: w1.z.nrows(),
        retained_rank_right: w2.z.nrows(),
    })
}

/// SVCCA pruning: keeps the fewest top singular directions of the centered
/// layer whose squared singular values reach `variance_fraction` of the
/// total, and returns the layer expressed in those directions (each row is a
/// singular value times its right singular vector).
///
/// Row signs are fixed so the largest-magnitude entry of each row is positive.
pub fn svcca_preprocess(l: &ActivationMatrix, variance_fraction: f64) -> Result<ActivationMatrix> {
    if !(variance_fraction > 0.0 && variance_fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "variance_fraction must be in (0, 1], got {variance_fraction}"
        )));
    }
    if l.matrix().max_abs() == 0.0 {
        return Err(Error::degenerate("svcca_preprocess on a zero matrix"));
    }
    let centered = center_dmatrix(l.dm());
    // Left singular vectors and squared singular values via the eigenpairs of
    // the Gram matrix: layers are far wider in datapoints than in neurons.
    let (directions, energies): (DMatrix<f64>, Vec<f64>) = if centered.nrows() <= centered.ncols() {
        let eig = eigen_dmatrix(&crate::tensor::symmetrize(&centered * centered.transpose()))?;
        (
            eig.vectors,
            eig.values.iter().map(|&v| v.max(0.0)).collect(),
        )
    } else {
        let s = svd_dmatrix(&centered)?;
        (s.u, s.s.iter().map(|v| v * v).collect())
    };
    let floor = roundoff_floor(l.dm());
    let total: f64 = energies.iter().filter(|&&e| e > floor).sum();
    if total <= 0.0 {
        return Err(Error::degenerate(
            "layer has no variance (all rows constant)",
        ));
    }
    let target = variance_fraction * total * (1.0 - 1e-12);
    let mut keep = 0;
    let mut acc = 0.0;
    for &e in &energies {
        if e <= floor {
            break;
        }
        acc += e;
        keep += 1;
        if acc >= target {
            break;
        }
    }
    let basis = directions.columns(0, keep).transpose();
    let mut projected = basis * &centered;
    for mut row in projected.row_iter_mut() {
        let pivot = row
            .iter()
            .copied()
            .fold(0.0_f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if pivot < 0.0 {
            row.neg_mut();
        }
    }
    ActivationMatrix::new(Matrix::from_dmatrix(projected)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::tensor::{covariance_blocks, inv_sqrt_psd, svd};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn act(rows: &[&[f64]]) -> ActivationMatrix {
        ActivationMatrix::from_rows(rows).unwrap()
    }

    fn gaussian(rows: usize, cols: usize, seed: u64) -> ActivationMatrix {
        let mut r = rng::seeded(seed);
        ActivationMatrix::new(
            Matrix::from_row_major(rows, cols, rng::normal_vec(&mut r, rows * cols)).unwrap(),
        )
        .unwrap()
    }

    /// Correlation of two series, oracle-side helper.
    fn corr(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (a, b) in x.iter().zip(y) {
            sxy += (a - mx) * (b - my);
            sxx += (a - mx) * (a - mx);
            syy += (b - my) * (b - my);
        }
        sxy / (sxx * syy).sqrt()
    }

    /// Brute force: largest |corr(w^T L1, s^T L2)| over unit w, s on a 1 degree grid.
    fn grid_top_correlation(l1: &ActivationMatrix, l2: &ActivationMatrix) -> f64 {
        let n = l1.datapoints();
        let project = |l: &ActivationMatrix, deg: f64| -> Vec<f64> {
            let t = deg.to_radians();
            (0..n)
                .map(|j| t.cos() * l.matrix()[(0, j)] + t.sin() * l.matrix()[(1, j)])
                .collect()
        };
        let xs: Vec<Vec<f64>> = (0..180).map(|d| project(l1, d as f64)).collect();
        let ys: Vec<Vec<f64>> = (0..180).map(|d| project(l2, d as f64)).collect();
        let mut best = 0.0_f64;
        for x in &xs {
            for y in &ys {
                best = best.max(corr(x, y).abs());
            }
        }
        best
    }

    #[test]
    fn activation_matrix_needs_two_datapoints() {
        assert!(ActivationMatrix::from_rows(&[[1.0]]).is_err());
        let a = act(&[&[1., 2.]]).with_labels(vec!["n0".into()]).unwrap();
        assert_eq!(a.labels().unwrap(), ["n0".to_string()]);
        assert!(act(&[&[1., 2.]]).with_labels(vec![]).is_err());
    }

    #[test]
    fn self_comparison_is_perfect() {
        let l = gaussian(6, 40, 1);
        let r = compute_cca(&l, &l, DEFAULT_EPS).unwrap();
        assert_eq!(r.rho.len(), 6);
        for &p in &r.rho {
            assert_abs_diff_eq!(p, 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn hand_examples() {
        let r = compute_cca(&act(&[&[1., 2., 3.]]), &act(&[&[3., 2., 1.]]), DEFAULT_EPS).unwrap();
        assert_abs_diff_eq!(r.rho[0], 1.0, epsilon = 1e-12);
        let r = compute_cca(&act(&[&[1., 2., 3.]]), &act(&[&[1., -2., 1.]]), DEFAULT_EPS).unwrap();
        assert_abs_diff_eq!(r.rho[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            compute_cca(&act(&[&[1., 2., 3.]]), &act(&[&[1., 2.]]), DEFAULT_EPS),
            Err(Error::ColumnMismatch { left: 3, right: 2 })
        ));
        assert!(matches!(
            compute_cca(
                &act(&[&[1., 1., 1.], &[0.1, 0.1, 0.1]]),
                &act(&[&[1., 2., 3.]]),
                DEFAULT_EPS
            ),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn grid_oracle_agrees_on_random_pairs() {
        for seed in 0..20 {
            let l1 = gaussian(2, 50, 100 + seed);
            let l2 = gaussian(2, 50, 200 + seed);
            let r = compute_cca(&l1, &l2, DEFAULT_EPS).unwrap();
            let oracle = grid_top_correlation(&l1, &l2);
            assert!(
                (r.rho[0] - oracle).abs() < 2e-3,
                "seed {seed}: {} vs {oracle}",
                r.rho[0]
            );
        }
    }

    #[test]
    fn matches_explicit_covariance_route() {
        // Sigma11^{-1/2} Sigma12 Sigma22^{-1/2} assembled from the tensor
        // primitives has the same singular values.
        let l1 = gaussian(5, 80, 7);
        let l2 = gaussian(3, 80, 8);
        let cov = covariance_blocks(l1.matrix(), l2.matrix()).unwrap();
        let m = inv_sqrt_psd(&cov.s11, DEFAULT_EPS)
            .unwrap()
            .matmul(&cov.s12)
            .unwrap()
            .matmul(&inv_sqrt_psd(&cov.s22, DEFAULT_EPS).unwrap())
            .unwrap();
        let s = svd(&m).unwrap();
        let r = compute_cca(&l1, &l2, DEFAULT_EPS).unwrap();
        assert_eq!(r.rho.len(), 3);
        for (a, b) in r.rho.iter().zip(&s.singular_values) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
        // and h_i = u_i^T Sigma11^{-1/2} L1c up to normalization
        let inv = inv_sqrt_psd(&cov.s11, DEFAULT_EPS).unwrap();
        let centered = crate::tensor::center_rows(l1.matrix());
        let h = r
            .left_directions
            .matmul(&inv)
            .unwrap()
            .matmul(&centered)
            .unwrap();
        for i in 0..3 {
            let row = h.row(i);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            for (j, v) in row.iter().enumerate() {
                assert_abs_diff_eq!(v / norm, r.left_canonical[(i, j)], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn canonical_pairs_have_rho_correlation() {
        let l1 = gaussian(4, 60, 21);
        let l2 = gaussian(4, 60, 22);
        let r = compute_cca(&l1, &l2, DEFAULT_EPS).unwrap();
        for i in 0..4 {
            let got = corr(&r.left_canonical.row(i), &r.right_canonical.row(i));
            assert_abs_diff_eq!(got, r.rho[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn rank_deficient_layers_truncate() {
        // third row duplicates the first: retained rank 2
        let base = gaussian(2, 30, 5);
        let mut rows = base.matrix().to_rows();
        rows.push(rows[0].iter().map(|v| 2.0 * v).collect());
        let l1 = ActivationMatrix::from_rows(&rows).unwrap();
        let r = compute_cca(&l1, &gaussian(4, 30, 6), DEFAULT_EPS).unwrap();
        assert_eq!(r.retained_rank_left, 2);
        assert_eq!(r.retained_rank_right, 4);
        assert_eq!(r.rho.len(), 2);

        // more neurons than datapoints
        let r = compute_cca(&gaussian(12, 8, 1), &gaussian(12, 8, 2), DEFAULT_EPS).unwrap();
        assert_eq!(r.retained_rank_left, 7);
        assert!(r.rho.iter().all(|&p| (p - 1.0).abs() < 1e-8));
    }

    #[test]
    fn svcca_examples() {
        let l = gaussian(4, 30, 9);
        let p = svcca_preprocess(&l, 1.0).unwrap();
        assert_eq!(p.neurons(), 4);
        let other = gaussian(3, 30, 10);
        let a = compute_cca(&l, &other, DEFAULT_EPS).unwrap();
        let b = compute_cca(&p, &other, DEFAULT_EPS).unwrap();
        for (x, y) in a.rho.iter().zip(&b.rho) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-10);
        }

        // singular values [10, 0.01]: 100 / 100.0001 > 0.99 keeps one row
        let n = 40;
        let mut r = rng::seeded(4);
        let q = crate::tensor::random_orthogonal(2, 3);
        let mut v1: Vec<f64> = rng::normal_vec(&mut r, n);
        let mut v2: Vec<f64> = rng::normal_vec(&mut r, n);
        let g = crate::tensor::gram_schmidt(
            &Matrix::from_rows(&[center(&mut v1), center(&mut v2)]).unwrap(),
        );
        let rows: Vec<Vec<f64>> = (0..2)
            .map(|i| {
                (0..n)
                    .map(|j| q[(i, 0)] * 10.0 * g.rows[0][j] + q[(i, 1)] * 0.01 * g.rows[1][j])
                    .collect()
            })
            .collect();
        let l = ActivationMatrix::from_rows(&rows).unwrap();
        assert_eq!(svcca_preprocess(&l, 0.99).unwrap().neurons(), 1);
        assert_eq!(svcca_preprocess(&l, 1.0).unwrap().neurons(), 2);
    }

    fn center(v: &mut [f64]) -> Vec<f64> {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter_mut().for_each(|x| *x -= m);
        v.to_vec()
    }

    #[test]
    fn svcca_ignores_constant_rows() {
        let l = gaussian(3, 25, 12);
        let mut rows = l.matrix().to_rows();
        rows.push(vec![4.0; 25]);
        rows.push(vec![0.0; 25]);
        let padded = ActivationMatrix::from_rows(&rows).unwrap();
        let a = svcca_preprocess(&l, 0.9).unwrap();
        let b = svcca_preprocess(&padded, 0.9).unwrap();
        assert_eq!(a.neurons(), b.neurons());
        assert!((a.matrix().as_dmatrix() - b.matrix().as_dmatrix()).amax() < 1e-9);
    }

    #[test]
    fn svcca_errors() {
        let zero = ActivationMatrix::new(Matrix::zeros(2, 5).unwrap()).unwrap();
        assert!(matches!(
            svcca_preprocess(&zero, 0.99),
            Err(Error::DegenerateInput(_))
        ));
        let l = gaussian(2, 5, 1);
        assert!(svcca_preprocess(&l, 0.0).is_err());
        assert!(svcca_preprocess(&l, 1.5).is_err());
    }

    fn invertible(a: usize, seed: u64) -> DMatrix<f64> {
        // orthogonal * diag(log-spaced, cond <= 1e3) * orthogonal
        let q1 = crate::tensor::random_orthogonal(a, seed).into_dmatrix();
        let q2 = crate::tensor::random_orthogonal(a, seed ^ 0xABCD).into_dmatrix();
        let d = DMatrix::from_fn(a, a, |i, j| {
            if i == j {
                10f64.powf(-3.0 * i as f64 / a.max(2) as f64)
            } else {
                0.0
            }
        });
        q1 * d * q2
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn invariants(a in 1usize..8, b in 1usize..8, n in 20usize..80, seed in any::<u64>()) {
            let l1 = gaussian(a, n, seed);
            let l2 = gaussian(b, n, seed.wrapping_add(1));
            let r = compute_cca(&l1, &l2, DEFAULT_EPS).unwrap();
            prop_assert_eq!(r.rho.len(), a.min(b));
            prop_assert!(r.rho.windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(r.rho.iter().all(|&p| (0.0..=1.0).contains(&p)));

            // symmetry of coefficients
            let back = compute_cca(&l2, &l1, DEFAULT_EPS).unwrap();
            for (x, y) in r.rho.iter().zip(&back.rho) {
                prop_assert!((x - y).abs() < 1e-8);
            }

            // canonical vectors are orthonormal
            let h = r.left_canonical.as_dmatrix();
            let gram = h * h.transpose();
            prop_assert!((gram - DMatrix::<f64>::identity(r.rho.len(), r.rho.len())).amax() < 1e-6);

            // affine invariance
            let t: Vec<f64> = (0..a).map(|i| 3.0 * i as f64 - 1.0).collect();
            let mut moved = invertible(a, seed) * l1.matrix().as_dmatrix();
            for (i, mut row) in moved.row_iter_mut().enumerate() {
                row.add_scalar_mut(t[i]);
            }
            let moved = ActivationMatrix::new(Matrix::from_dmatrix(moved).unwrap()).unwrap();
            let r2 = compute_cca(&moved, &l2, DEFAULT_EPS).unwrap();
            for (x, y) in r.rho.iter().zip(&r2.rho) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }

        #[test]
        fn grid_oracle_on_small_instances(n in 20usize..60, seed in any::<u64>()) {
            let l1 = gaussian(2, n, seed);
            let l2 = gaussian(2, n, seed ^ 0x5555);
            let r = compute_cca(&l1, &l2, DEFAULT_EPS).unwrap();
            prop_assert!((r.rho[0] - grid_top_correlation(&l1, &l2)).abs() < 2e-3);
        }
    }
}
