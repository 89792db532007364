//! Domain types for data, latent state, and parameters, plus the exact
//! joint log-density the sampler is tested against.

mod density;

pub use density::{build_variant_covariances, log_joint_density, CovMatrix, CovarianceBundle};
pub(crate) use density::{ln_gamma_pdf, trace_product_sym};

use nalgebra::{DMatrix, DVector};

use crate::covariance::{FactoredMatrix, Grid, MAX_RANGE};
use crate::{Error, Result};

/// All model runs and observation sets over a shared grid.
///
/// `runs_h[m][r]` is run r of model m in the historical period; `runs_f`
/// the future period; `obs[i]` the i-th observation set (historical only).
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleDataset {
    grid: Grid,
    runs_h: Vec<Vec<DVector<f64>>>,
    runs_f: Vec<Vec<DVector<f64>>>,
    obs: Vec<DVector<f64>>,
    model_names: Vec<String>,
}

impl EnsembleDataset {
    pub fn new(
        grid: Grid,
        runs_h: Vec<Vec<DVector<f64>>>,
        runs_f: Vec<Vec<DVector<f64>>>,
        obs: Vec<DVector<f64>>,
        model_names: Vec<String>,
    ) -> Result<EnsembleDataset> {
        let n = grid.n();
        let m = runs_h.len();
        if m == 0 {
            return Err(Error::dims("need at least one model"));
        }
        if runs_f.len() != m {
            return Err(Error::dims(format!(
                "historical and future model counts differ: {m} vs {}",
                runs_f.len()
            )));
        }
        if model_names.len() != m {
            return Err(Error::dims("model_names length must equal model count"));
        }
        if obs.is_empty() {
            return Err(Error::dims("need at least one observation set"));
        }
        let all_fields = runs_h
            .iter()
            .chain(runs_f.iter())
            .flatten()
            .chain(obs.iter());
        for field in all_fields {
            if field.len() != n {
                return Err(Error::dims(format!(
                    "field length {} does not match grid size {n}",
                    field.len()
                )));
            }
            if field.iter().any(|v| !v.is_finite()) {
                return Err(Error::domain("dataset fields must be finite"));
            }
        }
        for (model, runs) in runs_h.iter().enumerate() {
            if runs.is_empty() {
                return Err(Error::dims(format!("model {model} has no historical runs")));
            }
        }
        for (model, runs) in runs_f.iter().enumerate() {
            if runs.is_empty() {
                return Err(Error::dims(format!("model {model} has no future runs")));
            }
        }
        Ok(EnsembleDataset { grid, runs_h, runs_f, obs, model_names })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n_sites(&self) -> usize {
        self.grid.n()
    }

    pub fn n_models(&self) -> usize {
        self.runs_h.len()
    }

    pub fn n_obs(&self) -> usize {
        self.obs.len()
    }

    pub fn runs_h(&self, model: usize) -> &[DVector<f64>] {
        &self.runs_h[model]
    }

    pub fn runs_f(&self, model: usize) -> &[DVector<f64>] {
        &self.runs_f[model]
    }

    pub fn obs(&self) -> &[DVector<f64>] {
        &self.obs
    }

    pub fn model_names(&self) -> &[String] {
        &self.model_names
    }

    pub fn total_runs_h(&self) -> usize {
        self.runs_h.iter().map(Vec::len).sum()
    }

    pub fn total_runs_f(&self) -> usize {
        self.runs_f.iter().map(Vec::len).sum()
    }
}

/// Latent fields: consensus means, per-model means, expected and actual
/// climate. Columns of `x_h`/`x_f` are per-model mean fields.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub mu_h: DVector<f64>,
    pub mu_f: DVector<f64>,
    pub x_h: DMatrix<f64>,
    pub x_f: DMatrix<f64>,
    pub y_h: DVector<f64>,
    pub y_f: DVector<f64>,
    pub y_ha: DVector<f64>,
    pub y_fa: DVector<f64>,
}

impl LatentState {
    pub fn zeros(n: usize, m: usize) -> LatentState {
        LatentState {
            mu_h: DVector::zeros(n),
            mu_f: DVector::zeros(n),
            x_h: DMatrix::zeros(n, m),
            x_f: DMatrix::zeros(n, m),
            y_h: DVector::zeros(n),
            y_f: DVector::zeros(n),
            y_ha: DVector::zeros(n),
            y_fa: DVector::zeros(n),
        }
    }

    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        let dims_ok = self.mu_h.len() == n
            && self.mu_f.len() == n
            && self.y_h.len() == n
            && self.y_f.len() == n
            && self.y_ha.len() == n
            && self.y_fa.len() == n
            && self.x_h.shape() == (n, m)
            && self.x_f.shape() == (n, m);
        if !dims_ok {
            return Err(Error::dims("latent state dimensions inconsistent with grid/models"));
        }
        let finite = self
            .mu_h
            .iter()
            .chain(self.mu_f.iter())
            .chain(self.y_h.iter())
            .chain(self.y_f.iter())
            .chain(self.y_ha.iter())
            .chain(self.y_fa.iter())
            .chain(self.x_h.iter())
            .chain(self.x_f.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::domain("latent state contains non-finite values"));
        }
        Ok(())
    }
}

/// Every sampled (or fixed) scalar/matrix parameter of the hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub beta: f64,
    pub tau_h: f64,
    pub tau_f: f64,
    pub tau_w: f64,
    pub gamma_h: f64,
    pub gamma_f: f64,
    /// Inter-model dependence matrix, M x M symmetric positive definite.
    pub v: DMatrix<f64>,
    pub phi_hm: Vec<f64>,
    pub phi_fm: Vec<f64>,
    pub gamma_hm: Vec<f64>,
    pub gamma_fm: Vec<f64>,
    pub nu_h: f64,
    pub nu_f: f64,
    pub phi_h: f64,
    pub phi_f: f64,
    pub phi_ha: f64,
    pub phi_fa: f64,
    /// Fixed variance-inflation factor for the expected-climate layer;
    /// never sampled (it is not identifiable).
    pub kappa: f64,
}

impl HyperParams {
    pub fn validate(&self, m: usize, priors: &PriorConfig) -> Result<()> {
        let positives = [
            ("tau_h", self.tau_h),
            ("tau_f", self.tau_f),
            ("tau_w", self.tau_w),
            ("nu_h", self.nu_h),
            ("nu_f", self.nu_f),
            ("phi_h", self.phi_h),
            ("phi_f", self.phi_f),
            ("phi_ha", self.phi_ha),
            ("phi_fa", self.phi_fa),
            ("kappa", self.kappa),
        ];
        for (name, value) in positives {
            if !value.is_finite() || value <= 0.0 {
                return Err(Error::domain(format!("{name} must be positive, got {value}")));
            }
        }
        if !self.beta.is_finite() {
            return Err(Error::domain("beta must be finite"));
        }
        let (lo, hi) = priors.gamma_support();
        for (name, ranges) in [("gamma_hm", &self.gamma_hm), ("gamma_fm", &self.gamma_fm)] {
            if ranges.len() != m {
                return Err(Error::dims(format!("{name} length must be {m}")));
            }
        }
        for &g in [self.gamma_h, self.gamma_f]
            .iter()
            .chain(self.gamma_hm.iter())
            .chain(self.gamma_fm.iter())
        {
            if !(g > lo && g <= hi) {
                return Err(Error::domain(format!("range {g} outside prior support ({lo}, {hi}]")));
            }
        }
        for (name, phis) in [("phi_hm", &self.phi_hm), ("phi_fm", &self.phi_fm)] {
            if phis.len() != m {
                return Err(Error::dims(format!("{name} length must be {m}")));
            }
            if phis.iter().any(|&p| !p.is_finite() || p <= 0.0) {
                return Err(Error::domain(format!("{name} entries must be positive")));
            }
        }
        if self.v.shape() != (m, m) {
            return Err(Error::dims(format!("V must be {m}x{m}")));
        }
        let asym = (&self.v - self.v.transpose()).abs().max();
        if asym > 1e-10 {
            return Err(Error::domain(format!("V must be symmetric (asymmetry {asym:.3e})")));
        }
        FactoredMatrix::factor(&self.v)?;
        Ok(())
    }
}

/// Which parts of the hierarchy the inference keeps.
///
/// `Full` is the complete model. `NoModelDependence` drops the inter-model
/// dependence matrix (V = I). `NoSpatialMeans` replaces every spatial
/// correlation matrix by the identity but keeps V. `Simplest` does both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ModelVariant {
    Full,
    NoModelDependence,
    NoSpatialMeans,
    Simplest,
}

impl ModelVariant {
    pub fn has_spatial_correlation(self) -> bool {
        matches!(self, ModelVariant::Full | ModelVariant::NoModelDependence)
    }

    pub fn has_model_dependence(self) -> bool {
        matches!(self, ModelVariant::Full | ModelVariant::NoSpatialMeans)
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(ModelVariant::Full),
            "no-v" => Ok(ModelVariant::NoModelDependence),
            "no-spatial" => Ok(ModelVariant::NoSpatialMeans),
            "simplest" => Ok(ModelVariant::Simplest),
            other => Err(Error::domain(format!(
                "unknown variant `{other}` (expected full|no-v|no-spatial|simplest)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::Full => "full",
            ModelVariant::NoModelDependence => "no-v",
            ModelVariant::NoSpatialMeans => "no-spatial",
            ModelVariant::Simplest => "simplest",
        }
    }
}

/// Prior hyperconstants. Defaults are the non-informative choices used
/// throughout; tests that need proper, concentrated priors override them.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorConfig {
    /// Variance of the zero-mean Gaussian priors on consensus fields and beta.
    pub gaussian_mean_variance: f64,
    /// Shape/rate of the Gamma priors on tau_H, tau_F, tau_W, nu_H, nu_F.
    pub gamma_shape: f64,
    pub gamma_rate: f64,
    /// Shape/rate of the inverse-Gamma priors on phi_H, phi_F.
    pub inv_gamma_shape: f64,
    pub inv_gamma_rate: f64,
    /// Support of the uniform priors on all correlation ranges.
    pub uniform_lower: f64,
    pub uniform_upper: f64,
    /// Prior mean of V (None means identity).
    pub v_prior_mean: Option<DMatrix<f64>>,
    /// Degrees-of-freedom control d in the inverse-Wishart prior IW(d*Vt, M+d+1).
    pub v_prior_d: u32,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            gaussian_mean_variance: 1e6,
            gamma_shape: 1e-3,
            gamma_rate: 1e-3,
            inv_gamma_shape: 1e-3,
            inv_gamma_rate: 1e-3,
            uniform_lower: 0.0,
            uniform_upper: MAX_RANGE,
            v_prior_mean: None,
            v_prior_d: 1,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        let positives = [
            ("gaussian_mean_variance", self.gaussian_mean_variance),
            ("gamma_shape", self.gamma_shape),
            ("gamma_rate", self.gamma_rate),
            ("inv_gamma_shape", self.inv_gamma_shape),
            ("inv_gamma_rate", self.inv_gamma_rate),
        ];
        for (name, value) in positives {
            if !value.is_finite() || value <= 0.0 {
                return Err(Error::domain(format!("{name} must be positive")));
            }
        }
        if self.v_prior_d == 0 {
            return Err(Error::domain("v_prior_d must be a positive integer"));
        }
        if !(self.uniform_lower >= 0.0 && self.uniform_upper > self.uniform_lower) {
            return Err(Error::domain("uniform range support must satisfy 0 <= lower < upper"));
        }
        if self.uniform_upper > MAX_RANGE {
            return Err(Error::domain(format!("uniform_upper cannot exceed {MAX_RANGE:e}")));
        }
        if let Some(vt) = &self.v_prior_mean {
            if vt.nrows() != vt.ncols() {
                return Err(Error::dims("v_prior_mean must be square"));
            }
            FactoredMatrix::factor(vt)?;
        }
        Ok(())
    }

    pub fn gamma_support(&self) -> (f64, f64) {
        (self.uniform_lower, self.uniform_upper)
    }

    /// Prior mean of V, defaulting to the identity.
    pub fn v_tilde(&self, m: usize) -> DMatrix<f64> {
        match &self.v_prior_mean {
            Some(vt) => vt.clone(),
            None => DMatrix::identity(m, m),
        }
    }

    /// Precision of the Gaussian priors on mu fields and beta.
    pub fn gaussian_prior_precision(&self) -> f64 {
        1.0 / self.gaussian_mean_variance
    }
}

/// X - mu 1^T: subtracts a field from every column.
pub(crate) fn column_centered(x: &DMatrix<f64>, mu: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut col in out.column_iter_mut() {
        col -= mu;
    }
    out
}

/// E_F = X_F - mu_F 1^T - beta (X_H - mu_H 1^T), the future-layer residual.
pub(crate) fn future_residual(state: &LatentState, beta: f64) -> DMatrix<f64> {
    let centered_h = column_centered(&state.x_h, &state.mu_h);
    let mut out = column_centered(&state.x_f, &state.mu_f);
    out -= centered_h * beta;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::Metric;

    #[test]
    fn dataset_constructor_enforces_invariants() {
        let grid = Grid::new(vec![[0.0, 0.0], [1.0, 0.0]], Metric::Euclidean).unwrap();
        let field = |v: f64| DVector::from_element(2, v);
        let ok = EnsembleDataset::new(
            grid.clone(),
            vec![vec![field(1.0)]],
            vec![vec![field(2.0)]],
            vec![field(0.5)],
            vec!["a".into()],
        );
        assert!(ok.is_ok());

        // Wrong field length.
        assert!(EnsembleDataset::new(
            grid.clone(),
            vec![vec![DVector::from_element(3, 1.0)]],
            vec![vec![field(2.0)]],
            vec![field(0.5)],
            vec!["a".into()],
        )
        .is_err());

        // Non-finite values.
        assert!(EnsembleDataset::new(
            grid.clone(),
            vec![vec![field(f64::NAN)]],
            vec![vec![field(2.0)]],
            vec![field(0.5)],
            vec!["a".into()],
        )
        .is_err());

        // Model with no runs, and no observations at all.
        assert!(EnsembleDataset::new(
            grid.clone(),
            vec![vec![]],
            vec![vec![field(2.0)]],
            vec![field(0.5)],
            vec!["a".into()],
        )
        .is_err());
        assert!(EnsembleDataset::new(
            grid,
            vec![vec![field(1.0)]],
            vec![vec![field(2.0)]],
            vec![],
            vec!["a".into()],
        )
        .is_err());
    }

    #[test]
    fn hyperparams_validation_catches_support_violations() {
        let priors = PriorConfig::default();
        let mut p = HyperParams {
            beta: 1.0,
            tau_h: 1.0,
            tau_f: 1.0,
            tau_w: 1.0,
            gamma_h: 0.5,
            gamma_f: 0.5,
            v: DMatrix::identity(2, 2),
            phi_hm: vec![1.0; 2],
            phi_fm: vec![1.0; 2],
            gamma_hm: vec![0.5; 2],
            gamma_fm: vec![0.5; 2],
            nu_h: 1.0,
            nu_f: 1.0,
            phi_h: 1.0,
            phi_f: 1.0,
            phi_ha: 1.0,
            phi_fa: 1.0,
            kappa: 1.0,
        };
        assert!(p.validate(2, &priors).is_ok());
        p.gamma_h = 2e6;
        assert!(p.validate(2, &priors).is_err());
        p.gamma_h = 0.5;
        p.tau_w = -1.0;
        assert!(p.validate(2, &priors).is_err());
        p.tau_w = 1.0;
        p.v[(0, 1)] = 0.5; // asymmetric
        assert!(p.validate(2, &priors).is_err());
    }
}
