//! Variant-aware covariance bundles and the joint log-density.
//!
//! The density keeps every term that depends on sampled parameters or
//! latent state (determinants, Gamma-function normalizers tied to nu and
//! phi, the inverse-Wishart exponent) and drops only terms that are fixed
//! given dimensions and prior constants (powers of 2*pi, the uniform and
//! inverse-Wishart prior normalizers). Differences of the returned value
//! are therefore exact log-posterior ratios.

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use crate::covariance::{build_correlation, CorrelationSpec, FactoredMatrix, Grid};
use crate::model::{
    column_centered, future_residual, EnsembleDataset, HyperParams, LatentState, ModelVariant,
    PriorConfig,
};
use crate::Result;

/// A correlation matrix together with its factorization, inverse, and log
/// determinant, or the identity fast path used by the white-noise variants.
#[derive(Debug, Clone)]
pub enum CovMatrix {
    Identity { n: usize },
    Dense { matrix: DMatrix<f64>, factor: FactoredMatrix, inverse: DMatrix<f64>, log_det: f64 },
}

impl CovMatrix {
    pub fn identity(n: usize) -> CovMatrix {
        CovMatrix::Identity { n }
    }

    pub fn dense(matrix: DMatrix<f64>) -> Result<CovMatrix> {
        let factor = FactoredMatrix::factor(&matrix)?;
        let inverse = factor.inverse();
        let log_det = factor.log_det();
        Ok(CovMatrix::Dense { matrix, factor, inverse, log_det })
    }

    /// Whittle correlation matrix over the grid for the given range.
    pub fn from_kernel(grid: &Grid, range: f64) -> Result<CovMatrix> {
        let spec = CorrelationSpec::whittle(range)?;
        CovMatrix::dense(build_correlation(grid, &spec))
    }

    pub fn n(&self) -> usize {
        match self {
            CovMatrix::Identity { n } => *n,
            CovMatrix::Dense { matrix, .. } => matrix.nrows(),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, CovMatrix::Identity { .. })
    }

    pub fn log_det(&self) -> f64 {
        match self {
            CovMatrix::Identity { .. } => 0.0,
            CovMatrix::Dense { log_det, .. } => *log_det,
        }
    }

    /// x^T S^{-1} x.
    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        match self {
            CovMatrix::Identity { .. } => x.norm_squared(),
            CovMatrix::Dense { factor, .. } => factor.quad_form(x),
        }
    }

    /// S^{-1} x.
    pub fn solve(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            CovMatrix::Identity { .. } => x.clone(),
            CovMatrix::Dense { factor, .. } => factor.solve(x),
        }
    }

    /// acc += coeff * S^{-1}.
    pub fn add_scaled_inverse(&self, coeff: f64, acc: &mut DMatrix<f64>) {
        match self {
            CovMatrix::Identity { n } => {
                for i in 0..*n {
                    acc[(i, i)] += coeff;
                }
            }
            CovMatrix::Dense { inverse, .. } => {
                acc.zip_apply(inverse, |a, b| *a += coeff * b);
            }
        }
    }

    /// E^T S^{-1} E for an n x k matrix E.
    pub fn gram_inverse(&self, e: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            CovMatrix::Identity { .. } => e.transpose() * e,
            CovMatrix::Dense { inverse, .. } => e.transpose() * inverse * e,
        }
    }

    /// S^{-1} E.
    pub fn solve_mat(&self, e: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            CovMatrix::Identity { .. } => e.clone(),
            CovMatrix::Dense { inverse, .. } => inverse * e,
        }
    }

    /// The Cholesky factor behind a dense matrix (None for identity).
    pub fn factor(&self) -> Option<&FactoredMatrix> {
        match self {
            CovMatrix::Identity { .. } => None,
            CovMatrix::Dense { factor, .. } => Some(factor),
        }
    }

    /// L z, giving a draw with covariance S from standard-normal z.
    pub fn correlate(&self, z: &DVector<f64>) -> DVector<f64> {
        match self {
            CovMatrix::Identity { .. } => z.clone(),
            CovMatrix::Dense { factor, .. } => factor.lower_times(z),
        }
    }
}

/// The spatial correlation matrices a variant uses: consensus-layer
/// Sigma_H/Sigma_F and per-model run-layer Sigma_Hm/Sigma_Fm.
#[derive(Debug, Clone)]
pub struct CovarianceBundle {
    pub sigma_h: CovMatrix,
    pub sigma_f: CovMatrix,
    pub sigma_hm: Vec<CovMatrix>,
    pub sigma_fm: Vec<CovMatrix>,
}

/// Build the bundle for a variant. White-noise variants get identity
/// matrices in place of every spatial kernel.
pub fn build_variant_covariances(
    params: &HyperParams,
    variant: ModelVariant,
    grid: &Grid,
) -> Result<CovarianceBundle> {
    let n = grid.n();
    let m = params.gamma_hm.len();
    if variant.has_spatial_correlation() {
        let sigma_h = CovMatrix::from_kernel(grid, params.gamma_h)?;
        let sigma_f = CovMatrix::from_kernel(grid, params.gamma_f)?;
        let sigma_hm = params
            .gamma_hm
            .iter()
            .map(|&g| CovMatrix::from_kernel(grid, g))
            .collect::<Result<Vec<_>>>()?;
        let sigma_fm = params
            .gamma_fm
            .iter()
            .map(|&g| CovMatrix::from_kernel(grid, g))
            .collect::<Result<Vec<_>>>()?;
        Ok(CovarianceBundle { sigma_h, sigma_f, sigma_hm, sigma_fm })
    } else {
        Ok(CovarianceBundle {
            sigma_h: CovMatrix::identity(n),
            sigma_f: CovMatrix::identity(n),
            sigma_hm: vec![CovMatrix::identity(n); m],
            sigma_fm: vec![CovMatrix::identity(n); m],
        })
    }
}

/// Gamma(shape, rate) log-density including its normalizer.
pub(crate) fn ln_gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Inverse-Gamma(shape, rate) log-density including its normalizer.
pub(crate) fn ln_inv_gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - rate / x
}

/// tr(A B) for symmetric A, B of equal size.
pub(crate) fn trace_product_sym(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn in_support(params: &HyperParams, variant: ModelVariant, priors: &PriorConfig) -> bool {
    let pos = [
        params.tau_h,
        params.tau_f,
        params.tau_w,
        params.nu_h,
        params.nu_f,
        params.phi_h,
        params.phi_f,
        params.phi_ha,
        params.phi_fa,
    ];
    if pos.iter().any(|&v| !v.is_finite() || v <= 0.0) {
        return false;
    }
    if params.phi_hm.iter().chain(params.phi_fm.iter()).any(|&v| !v.is_finite() || v <= 0.0) {
        return false;
    }
    if !params.beta.is_finite() {
        return false;
    }
    if variant.has_spatial_correlation() {
        let (lo, hi) = priors.gamma_support();
        let ranges = [params.gamma_h, params.gamma_f];
        if ranges
            .iter()
            .chain(params.gamma_hm.iter())
            .chain(params.gamma_fm.iter())
            .any(|&g| !(g > lo && g <= hi))
        {
            return false;
        }
    }
    true
}

/// Joint log-density of data, latents, and parameters under the variant.
///
/// Returns negative infinity (not an error) when a parameter sits outside
/// its prior support, so Metropolis proposals reject naturally. Covariance
/// factorization failures still surface as errors.
pub fn log_joint_density(
    data: &EnsembleDataset,
    state: &LatentState,
    params: &HyperParams,
    variant: ModelVariant,
    priors: &PriorConfig,
) -> Result<f64> {
    let n = data.n_sites() as f64;
    let m_count = data.n_models();
    state.validate(data.n_sites(), m_count)?;

    if !in_support(params, variant, priors) {
        return Ok(f64::NEG_INFINITY);
    }

    let bundle = build_variant_covariances(params, variant, data.grid())?;
    let kappa = params.kappa;

    // V as the variant sees it.
    let identity_v = DMatrix::identity(m_count, m_count);
    let v_eff: &DMatrix<f64> = if variant.has_model_dependence() { &params.v } else { &identity_v };
    let v_factor = FactoredMatrix::factor(v_eff)?;
    let v_inv = v_factor.inverse();
    let v_log_det = v_factor.log_det();

    let mut lp = 0.0;

    // Run layer: X_mr ~ N(x_m, phi_m^{-1} Sigma_m).
    for model in 0..m_count {
        let x_hm = state.x_h.column(model).into_owned();
        let sig = &bundle.sigma_hm[model];
        for run in data.runs_h(model) {
            let resid = run - &x_hm;
            lp += 0.5 * n * params.phi_hm[model].ln() - 0.5 * sig.log_det()
                - 0.5 * params.phi_hm[model] * sig.quad_form(&resid);
        }
        let x_fm = state.x_f.column(model).into_owned();
        let sig = &bundle.sigma_fm[model];
        for run in data.runs_f(model) {
            let resid = run - &x_fm;
            lp += 0.5 * n * params.phi_fm[model].ln() - 0.5 * sig.log_det()
                - 0.5 * params.phi_fm[model] * sig.quad_form(&resid);
        }
    }

    // Observation layer: W_i ~ N(y_Ha, tau_W^{-1} I).
    for w in data.obs() {
        let resid = &state.y_ha - w;
        lp += 0.5 * n * params.tau_w.ln() - 0.5 * params.tau_w * resid.norm_squared();
    }

    // Expected-climate layer.
    let r_h = &state.y_h - &state.mu_h;
    let r_f = &state.y_f - &state.mu_f - (&state.y_h - &state.mu_h) * params.beta;
    lp += 0.5 * n * (params.tau_h / kappa).ln() - 0.5 * bundle.sigma_h.log_det()
        - 0.5 * params.tau_h / kappa * bundle.sigma_h.quad_form(&r_h);
    lp += 0.5 * n * (params.tau_f / kappa).ln() - 0.5 * bundle.sigma_f.log_det()
        - 0.5 * params.tau_f / kappa * bundle.sigma_f.quad_form(&r_f);

    // Actual-climate layer (white noise around the expected climate).
    lp += 0.5 * n * params.phi_ha.ln()
        - 0.5 * params.phi_ha * (&state.y_ha - &state.y_h).norm_squared();
    lp += 0.5 * n * params.phi_fa.ln()
        - 0.5 * params.phi_fa * (&state.y_fa - &state.y_f).norm_squared();

    // Model-mean layer with the separable (V x Sigma) covariance.
    let e_h = column_centered(&state.x_h, &state.mu_h);
    let e_f = future_residual(state, params.beta);
    let m_f64 = m_count as f64;
    lp += 0.5 * m_f64 * n * params.tau_h.ln()
        - 0.5 * (n * v_log_det + m_f64 * bundle.sigma_h.log_det())
        - 0.5 * params.tau_h * trace_product_sym(&v_inv, &bundle.sigma_h.gram_inverse(&e_h));
    lp += 0.5 * m_f64 * n * params.tau_f.ln()
        - 0.5 * (n * v_log_det + m_f64 * bundle.sigma_f.log_det())
        - 0.5 * params.tau_f * trace_product_sym(&v_inv, &bundle.sigma_f.gram_inverse(&e_f));

    // Consensus-field and beta priors (zero-mean Gaussian).
    let prior_prec = priors.gaussian_prior_precision();
    lp -= 0.5 * prior_prec * (state.mu_h.norm_squared() + state.mu_f.norm_squared());
    lp -= 0.5 * prior_prec * params.beta * params.beta;

    // Run-precision hyper-layer (normalizers depend on nu and phi: keep them).
    for model in 0..m_count {
        lp += ln_gamma_pdf(params.phi_hm[model], params.nu_h / 2.0, params.nu_h / (2.0 * params.phi_h));
        lp += ln_gamma_pdf(params.phi_fm[model], params.nu_f / 2.0, params.nu_f / (2.0 * params.phi_f));
    }
    lp += ln_gamma_pdf(params.phi_ha, params.nu_h / (2.0 * kappa), params.nu_h / (2.0 * kappa * params.phi_h));
    lp += ln_gamma_pdf(params.phi_fa, params.nu_f / (2.0 * kappa), params.nu_f / (2.0 * kappa * params.phi_f));

    // Scalar priors.
    let (a, b) = (priors.gamma_shape, priors.gamma_rate);
    for &x in &[params.tau_h, params.tau_f, params.tau_w, params.nu_h, params.nu_f] {
        lp += ln_gamma_pdf(x, a, b);
    }
    let (ai, bi) = (priors.inv_gamma_shape, priors.inv_gamma_rate);
    lp += ln_inv_gamma_pdf(params.phi_h, ai, bi);
    lp += ln_inv_gamma_pdf(params.phi_f, ai, bi);

    // Inverse-Wishart prior on V (only when the variant samples V).
    if variant.has_model_dependence() {
        let d = priors.v_prior_d as f64;
        let v_tilde = priors.v_tilde(m_count);
        lp += -(m_f64 + 1.0 + d / 2.0) * v_log_det - 0.5 * d * trace_product_sym(&v_tilde, &v_inv);
    }

    Ok(lp)
}
