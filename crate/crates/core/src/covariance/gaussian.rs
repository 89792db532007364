//! Precision-form Gaussian sampling.
//!
//! Every Gaussian full conditional in the sampler is of the form
//! N(Q^{-1} v, Q^{-1}); funnelling all of them through one routine makes
//! chain reproducibility a function of the seed and update order alone.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::FactoredMatrix;
use crate::Result;

/// Draw from N(Q^{-1} v, Q^{-1}) given the precision matrix Q.
pub fn sample_gaussian_precision<R: Rng + ?Sized>(
    precision_times_mean: &DVector<f64>,
    precision: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let f = FactoredMatrix::factor(precision)?;
    Ok(sample_gaussian_precision_factored(precision_times_mean, &f, rng))
}

/// Same draw with the precision already factored (the sampler's hot path).
pub fn sample_gaussian_precision_factored<R: Rng + ?Sized>(
    precision_times_mean: &DVector<f64>,
    factored_precision: &FactoredMatrix,
    rng: &mut R,
) -> DVector<f64> {
    let n = factored_precision.n();
    let noise = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    gaussian_precision_with_noise(precision_times_mean, factored_precision, &noise)
}

/// Deterministic core: mean Q^{-1} v plus L^{-T} eps, which has covariance
/// Q^{-1} when eps is standard normal. Exposed so tests can inject zeros.
pub fn gaussian_precision_with_noise(
    precision_times_mean: &DVector<f64>,
    factored_precision: &FactoredMatrix,
    noise: &DVector<f64>,
) -> DVector<f64> {
    factored_precision.solve(precision_times_mean) + factored_precision.solve_lower_t(noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn zero_noise_returns_exact_mean() {
        // Q = diag(4), v = (8): mean is exactly 2.
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0]));
        let f = FactoredMatrix::factor(&q).unwrap();
        let v = DVector::from_vec(vec![8.0]);
        let draw = gaussian_precision_with_noise(&v, &f, &DVector::zeros(1));
        assert_eq!(draw[0], 2.0);
    }

    #[test]
    fn standard_normal_moments() {
        let n = 3;
        let q = DMatrix::identity(n, n);
        let v = DVector::zeros(n);
        let f = FactoredMatrix::factor(&q).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(2024);
        let draws: Vec<DVector<f64>> = (0..100_000)
            .map(|_| sample_gaussian_precision_factored(&v, &f, &mut rng))
            .collect();
        for c in 0..n {
            let mean = draws.iter().map(|d| d[c]).sum::<f64>() / draws.len() as f64;
            let var =
                draws.iter().map(|d| (d[c] - mean).powi(2)).sum::<f64>() / draws.len() as f64;
            assert!(mean.abs() < 0.02, "coord {c} mean {mean}");
            assert!((0.97..=1.03).contains(&var), "coord {c} var {var}");
        }
    }

    #[test]
    fn monte_carlo_covariance_matches_precision_inverse() {
        let q = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.8, 0.5, 0.8, 2.0]);
        let v = DVector::from_vec(vec![1.0, -1.0, 0.5]);
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        let draws: Vec<DVector<f64>> = (0..100_000)
            .map(|_| sample_gaussian_precision(&v, &q, &mut rng).unwrap())
            .collect();
        let n = draws.len() as f64;
        let mean = draws.iter().fold(DVector::zeros(3), |a, d| a + d) / n;
        let mut cov = DMatrix::zeros(3, 3);
        for d in &draws {
            let c = d - &mean;
            cov += &c * c.transpose();
        }
        cov /= n;
        let want_cov = q.clone().try_inverse().unwrap();
        let want_mean = &want_cov * &v;
        for i in 0..3 {
            assert!((mean[i] - want_mean[i]).abs() < 0.02);
            for j in 0..3 {
                assert!(
                    (cov[(i, j)] - want_cov[(i, j)]).abs() < 0.05,
                    "cov[{i}][{j}] {} vs {}",
                    cov[(i, j)],
                    want_cov[(i, j)]
                );
            }
        }
    }

    #[test]
    fn fixed_seed_is_bit_reproducible() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let v = DVector::from_vec(vec![0.2, -0.7]);
        let run = || {
            let mut rng = ChaCha20Rng::seed_from_u64(5);
            (0..10)
                .map(|_| sample_gaussian_precision(&v, &q, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
