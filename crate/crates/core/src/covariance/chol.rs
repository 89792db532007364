//! Cholesky factorization with an escalating diagonal jitter ladder.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::{Error, Result};

/// Relative jitter ladder: starts at 1e-10 of the mean diagonal and
/// escalates by 10x up to 1e-4.
const JITTER_START: f64 = 1e-10;
const JITTER_CAP: f64 = 1e-4;

/// Lower-triangular factor of a symmetric positive-definite matrix, plus a
/// record of any diagonal regularization that was needed to get it.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredMatrix {
    lower: DMatrix<f64>,
    jitter_applied: f64,
}

impl FactoredMatrix {
    /// Factor a symmetric matrix, retrying with diagonal jitter
    /// `1e-10 * mean(diag)` escalating tenfold up to `1e-4 * mean(diag)`.
    pub fn factor(matrix: &DMatrix<f64>) -> Result<FactoredMatrix> {
        let n = matrix.nrows();
        if n != matrix.ncols() {
            return Err(Error::dims(format!(
                "factor expects a square matrix, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let mean_diag = matrix.diagonal().mean();

        if let Some(chol) = try_chol(matrix.clone()) {
            return Ok(FactoredMatrix { lower: chol.unpack(), jitter_applied: 0.0 });
        }
        // A non-positive mean diagonal cannot come from an SPD matrix, and
        // scaling jitter by it would make the ladder useless.
        if mean_diag > 0.0 {
            let mut rel = JITTER_START;
            while rel <= JITTER_CAP {
                let jitter = rel * mean_diag;
                let mut jittered = matrix.clone();
                for i in 0..n {
                    jittered[(i, i)] += jitter;
                }
                if let Some(chol) = try_chol(jittered) {
                    return Ok(FactoredMatrix { lower: chol.unpack(), jitter_applied: jitter });
                }
                rel *= 10.0;
            }
        }
        Err(Error::NotPositiveDefinite { jitter_cap: JITTER_CAP * mean_diag.max(0.0) })
    }

    pub fn n(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn jitter_applied(&self) -> f64 {
        self.jitter_applied
    }

    /// log det of the (jittered) input matrix.
    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Solves A x = b.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let y = self.solve_lower(b);
        self.solve_lower_t(&y)
    }

    /// Solves L y = b.
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        self.lower
            .solve_lower_triangular(b)
            .expect("factor diagonal is positive by construction")
    }

    /// Solves L^T y = b.
    pub fn solve_lower_t(&self, b: &DVector<f64>) -> DVector<f64> {
        self.lower
            .tr_solve_lower_triangular(b)
            .expect("factor diagonal is positive by construction")
    }

    /// Solves L Y = B for a matrix right-hand side.
    pub fn solve_lower_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.lower
            .solve_lower_triangular(b)
            .expect("factor diagonal is positive by construction")
    }

    /// x^T A^{-1} x via one triangular solve; nonnegative by construction.
    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        self.solve_lower(x).norm_squared()
    }

    /// Dense A^{-1}.
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.n();
        let linv = self
            .lower
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .expect("factor diagonal is positive by construction");
        linv.transpose() * linv
    }

    /// L z for a standard-normal z: a draw with covariance A.
    pub fn lower_times(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.lower * z
    }
}

fn try_chol(m: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_abs(m: &DMatrix<f64>) -> f64 {
        m.iter().fold(0.0f64, |a, &x| a.max(x.abs()))
    }

    #[test]
    fn identity_factors_cleanly() {
        let f = FactoredMatrix::factor(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(f.jitter_applied(), 0.0);
        assert_eq!(f.lower(), &DMatrix::identity(3, 3));
        assert_eq!(f.log_det(), 0.0);
    }

    #[test]
    fn near_singular_succeeds_with_small_jitter() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.999_999_999, 0.999_999_999, 1.0]);
        let f = FactoredMatrix::factor(&a).unwrap();
        assert!(f.jitter_applied() <= 1e-6);
        let mut recon = f.lower() * f.lower().transpose();
        for i in 0..2 {
            recon[(i, i)] -= f.jitter_applied();
        }
        assert!(max_abs(&(recon - &a)) < 1e-10 * max_abs(&a));
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        // Eigenvalues 3 and -1; no jitter on this ladder fixes that.
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match FactoredMatrix::factor(&a) {
            Err(Error::NotPositiveDefinite { .. }) => {}
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_residual_is_tiny() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(7);
        for n in [2usize, 5, 16, 64] {
            let b = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
            let a = &b * b.transpose() + DMatrix::identity(n, n) * 0.5;
            let f = FactoredMatrix::factor(&a).unwrap();
            let mut recon = f.lower() * f.lower().transpose();
            for i in 0..n {
                recon[(i, i)] -= f.jitter_applied();
            }
            assert!(max_abs(&(recon - &a)) < 1e-10 * max_abs(&a), "n={n}");
        }
    }

    #[test]
    fn quad_form_and_logdet_match_dense_inverse() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(11);
        let b = DMatrix::from_fn(4, 4, |_, _| rng.gen::<f64>() - 0.5);
        let a = &b * b.transpose() + DMatrix::identity(4, 4);
        let f = FactoredMatrix::factor(&a).unwrap();

        let x = DVector::from_fn(4, |i, _| (i as f64) - 1.3);
        let inv = a.clone().try_inverse().unwrap();
        let direct = (x.transpose() * &inv * &x)[(0, 0)];
        assert!((f.quad_form(&x) - direct).abs() <= 1e-10 * direct.abs());

        let det = a.determinant();
        assert!((f.log_det() - det.ln()).abs() < 1e-10 * det.ln().abs().max(1.0));

        assert!(max_abs(&(f.inverse() - &inv)) < 1e-10 * max_abs(&inv));
    }

    #[test]
    fn quad_form_on_identity_is_norm_squared() {
        let f = FactoredMatrix::factor(&DMatrix::identity(5, 5)).unwrap();
        let x = DVector::from_vec(vec![1.0, -2.0, 3.0, 0.5, 0.0]);
        assert_eq!(f.quad_form(&x), x.norm_squared());
    }
}
