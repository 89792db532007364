//! Inverse-Wishart sampling via the Bartlett decomposition.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::covariance::FactoredMatrix;
use crate::{Error, Result};

/// Draw V ~ IW(scale, df), density proportional to
/// |V|^{-(df+p+1)/2} exp(-tr(scale V^{-1})/2).
///
/// Uses W = C A A^T C^T ~ Wishart(scale^{-1}, df) with C C^T = scale^{-1},
/// so V = W^{-1} = U^T U with U = A^{-1} L_S^T and L_S the factor of
/// `scale`; only triangular solves are needed.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(
    scale: &DMatrix<f64>,
    df: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let p = scale.nrows();
    if df <= (p - 1) as f64 {
        return Err(Error::domain(format!(
            "inverse-Wishart needs df > p - 1 (df = {df}, p = {p})"
        )));
    }
    let scale_factor = FactoredMatrix::factor(scale)?;

    let mut bartlett = DMatrix::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(df - i as f64).map_err(|e| Error::domain(e.to_string()))?;
        bartlett[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            bartlett[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }

    let u = bartlett
        .solve_lower_triangular(&scale_factor.lower().transpose())
        .expect("Bartlett diagonal is positive");
    let mut v = u.transpose() * u;
    // Exact symmetry, not just up to roundoff.
    for i in 0..p {
        for j in 0..i {
            let avg = 0.5 * (v[(i, j)] + v[(j, i)]);
            v[(i, j)] = avg;
            v[(j, i)] = avg;
        }
    }
    Ok(v)
}
