//! Orthonormalization and seeded random orthogonal matrices.

use nalgebra::DMatrix;

use super::Matrix;
use crate::rng::{self, SeededRng};

/// Residual-to-original norm ratio below which a row counts as dependent.
pub const DROP_TOL: f64 = 1e-10;

/// Output of [`gram_schmidt`].
#[derive(Clone, Debug, PartialEq)]
pub struct Orthonormalized {
    /// Orthonormal rows, one per kept input row, in input order.
    pub rows: Vec<Vec<f64>>,
    /// Input indices of the rows in `rows`.
    pub kept: Vec<usize>,
    /// Input indices dropped as (numerically) dependent on earlier rows.
    pub dropped: Vec<usize>,
}

impl Orthonormalized {
    /// `None` when every row was dropped.
    pub fn to_matrix(&self) -> Option<Matrix> {
        if self.rows.is_empty() {
            None
        } else {
            Matrix::from_rows(&self.rows).ok()
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Modified Gram–Schmidt over the rows of `vectors`, with a second
/// orthogonalization pass against the accepted basis.
pub fn gram_schmidt(vectors: &Matrix) -> Orthonormalized {
    let mut out = Orthonormalized {
        rows: Vec::new(),
        kept: Vec::new(),
        dropped: Vec::new(),
    };
    for i in 0..vectors.rows() {
        let mut v = vectors.row(i);
        let original = dot(&v, &v).sqrt();
        for _pass in 0..2 {
            for q in &out.rows {
                let p = dot(q, &v);
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= p * qi;
                }
            }
        }
        let norm = dot(&v, &v).sqrt();
        if original == 0.0 || norm < DROP_TOL * original {
            out.dropped.push(i);
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        out.rows.push(v);
        out.kept.push(i);
    }
    out
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `R`'s diagonal folded into `Q`.
pub(crate) fn haar_orthogonal(dim: usize, rng: &mut SeededRng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| rng::standard_normal(rng));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for (j, mut col) in q.column_iter_mut().enumerate() {
        if r[(j, j)] < 0.0 {
            col.neg_mut();
        }
    }
    q
}

pub(crate) fn rotation_from_rng(dim: usize, rng: &mut SeededRng) -> DMatrix<f64> {
    let mut q = haar_orthogonal(dim, rng);
    if q.clone().determinant() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    q
}

/// Random orthogonal matrix with determinant `+1`, deterministic per seed.
///
/// # Panics
/// If `dim == 0`.
pub fn random_rotation(dim: usize, seed: u64) -> Matrix {
    assert!(dim >= 1, "rotation dimension must be at least 1");
    let mut r = rng::seeded(seed);
    Matrix::from_dmatrix_unchecked(rotation_from_rng(dim, &mut r))
}

/// Random orthogonal matrix (determinant `+1` or `-1`), deterministic per seed.
///
/// # Panics
/// If `dim == 0`.
pub fn random_orthogonal(dim: usize, seed: u64) -> Matrix {
    assert!(dim >= 1, "dimension must be at least 1");
    let mut r = rng::seeded(seed);
    Matrix::from_dmatrix_unchecked(haar_orthogonal(dim, &mut r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn close(a: &[Vec<f64>], b: &[Vec<f64>], tol: f64) -> bool {
        a.len() == b.len()
            && a.iter()
                .zip(b)
                .all(|(x, y)| x.iter().zip(y).all(|(p, q)| (p - q).abs() < tol))
    }

    #[test]
    fn gram_schmidt_examples() {
        let g = gram_schmidt(&m(&[&[2., 0.], &[0., 3.]]));
        assert!(close(&g.rows, &[vec![1., 0.], vec![0., 1.]], 1e-15));
        assert!(g.dropped.is_empty());

        let g = gram_schmidt(&m(&[&[1., 0.], &[1., 1.]]));
        assert!(close(&g.rows, &[vec![1., 0.], vec![0., 1.]], 1e-15));

        let g = gram_schmidt(&m(&[&[1., 1.], &[2., 2.]]));
        let h = 1.0 / 2f64.sqrt();
        assert!(close(&g.rows, &[vec![h, h]], 1e-15));
        assert_eq!(g.kept, vec![0]);
        assert_eq!(g.dropped, vec![1]);
    }

    #[test]
    fn gram_schmidt_zero_rows_dropped() {
        let g = gram_schmidt(&m(&[&[0., 0., 0.]]));
        assert!(g.rows.is_empty());
        assert_eq!(g.dropped, vec![0]);
        assert!(g.to_matrix().is_none());
    }

    #[test]
    fn gram_schmidt_nearly_dependent_hilbert_rows() {
        let h = Matrix::from_fn(8, 8, |i, j| 1.0 / (i + j + 1) as f64).unwrap();
        let g = gram_schmidt(&h).to_matrix().unwrap();
        let gg = g.matmul(&g.transpose()).unwrap();
        let k = g.rows();
        assert!((gg.as_dmatrix() - DMatrix::<f64>::identity(k, k)).amax() < 1e-10);
    }

    #[test]
    fn rotation_examples() {
        assert_eq!(random_rotation(1, 99), m(&[&[1.0]]));
        assert_eq!(random_rotation(6, 5), random_rotation(6, 5));
        assert_ne!(random_rotation(6, 5), random_rotation(6, 6));
    }

    #[test]
    fn orthogonal_hits_both_determinant_signs() {
        let signs: Vec<bool> = (0..40)
            .map(|s| random_orthogonal(3, s).into_dmatrix().determinant() > 0.0)
            .collect();
        assert!(signs.iter().any(|&p| p) && signs.iter().any(|&p| !p));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn rotation_is_special_orthogonal(dim in 1usize..48, seed in any::<u64>()) {
            let w = random_rotation(dim, seed).into_dmatrix();
            let wwt = &w * w.transpose();
            prop_assert!((wwt - DMatrix::<f64>::identity(dim, dim)).amax() < 1e-10);
            prop_assert!((w.determinant() - 1.0).abs() < 1e-8);
        }

        #[test]
        fn gram_schmidt_is_orthonormal(rows in 1usize..10, extra in 0usize..10, seed in any::<u64>()) {
            let cols = rows + extra;
            let mut r = rng::seeded(seed);
            let x = Matrix::from_row_major(rows, cols, rng::normal_vec(&mut r, rows * cols)).unwrap();
            let g = gram_schmidt(&x);
            prop_assert_eq!(g.rows.len(), rows);
            let gm = g.to_matrix().unwrap();
            let gg = gm.matmul(&gm.transpose()).unwrap();
            prop_assert!((gg.as_dmatrix() - DMatrix::<f64>::identity(rows, rows)).amax() < 1e-10);
            // span preserved: each input row is reproduced by its projection
            for i in 0..rows {
                let v = x.row(i);
                let mut resid = v.clone();
                for q in &g.rows {
                    let p = dot(q, &v);
                    resid.iter_mut().zip(q).for_each(|(a, b)| *a -= p * b);
                }
                prop_assert!(dot(&resid, &resid).sqrt() < 1e-10 * dot(&v, &v).sqrt());
            }
        }
    }
}
