//! The MCMC engine: a fixed-order sweep of Gibbs and Metropolis-Hastings
//! updates over every latent block and parameter, with adaptive proposal
//! steps during burn-in and an identifiability rescale of V.

mod mh;
mod updates;
mod wishart;

pub use mh::AdaptiveStep;
pub use wishart::sample_inverse_wishart;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::covariance::FactoredMatrix;
use crate::model::{
    build_variant_covariances, CovarianceBundle, EnsembleDataset, HyperParams, LatentState,
    ModelVariant, PriorConfig,
};
use crate::{Error, Result};

/// How the per-model mean columns condition on each other within a sweep.
///
/// `SequentialPartition` conditions model m on models 1..m-1 only, exactly
/// as the update formulas are usually written; `FullConditional` conditions
/// on every other model, which is the textbook Gibbs requirement. The
/// getting-it-right test arbitrates; `FullConditional` is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChiUpdateScheme {
    SequentialPartition,
    FullConditional,
}

/// Where the V[0][0] = 1 identifiability normalization is applied.
///
/// `OnReport` (the default) runs the exact Gibbs kernel and normalizes
/// stored draws only, dividing tau_H and tau_F by the same factor so every
/// covariance product tau^{-1} c(.) v_pq is unchanged. `InKernel` rescales
/// the chain state after each V draw; that matches the literal published
/// procedure but measurably distorts the stationary distribution (the
/// getting-it-right test rejects it and credible intervals undercover), so
/// it is opt-in. `Off` disables the normalization entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VRescale {
    OnReport,
    InKernel,
    Off,
}

impl VRescale {
    pub fn parse(s: &str) -> crate::Result<Self> {
        match s {
            "report" => Ok(VRescale::OnReport),
            "in-kernel" => Ok(VRescale::InKernel),
            "off" => Ok(VRescale::Off),
            other => Err(Error::domain(format!(
                "unknown v_rescale mode `{other}` (expected report|in-kernel|off)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            VRescale::OnReport => "report",
            VRescale::InKernel => "in-kernel",
            VRescale::Off => "off",
        }
    }
}

/// Deliberate fault hooks for validating that the correctness tests can
/// detect a broken update. Always `None` in real runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FaultInjection {
    #[default]
    None,
    /// Halve the rate of the observation-precision conditional.
    HalveTauWRate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Initial log-scale random-walk step, shared by every MH parameter.
    pub mh_initial_step: f64,
    pub adapt_target_acceptance: f64,
    pub adapt_window: u32,
    pub variant: ModelVariant,
    pub kappa: f64,
    pub v_rescale: VRescale,
    pub chi_scheme: ChiUpdateScheme,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            iterations: 30_000,
            burn_in: 10_000,
            thin: 1,
            seed: 0,
            mh_initial_step: 0.5,
            adapt_target_acceptance: 0.44,
            adapt_window: 50,
            variant: ModelVariant::Full,
            kappa: 1.0,
            v_rescale: VRescale::OnReport,
            chi_scheme: ChiUpdateScheme::FullConditional,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::domain("burn_in must be smaller than iterations"));
        }
        if self.thin == 0 {
            return Err(Error::domain("thin must be at least 1"));
        }
        if !(self.mh_initial_step.is_finite() && self.mh_initial_step > 0.0) {
            return Err(Error::domain("mh_initial_step must be positive"));
        }
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return Err(Error::domain("kappa must be positive"));
        }
        if !(0.0 < self.adapt_target_acceptance && self.adapt_target_acceptance < 1.0) {
            return Err(Error::domain("adapt_target_acceptance must lie in (0, 1)"));
        }
        if self.adapt_window == 0 {
            return Err(Error::domain("adapt_window must be at least 1"));
        }
        Ok(())
    }

    /// Number of draws a run with this config stores.
    pub fn stored_draws(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// One stored (thinned, post-burn-in) draw.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredDraw {
    pub y_h: DVector<f64>,
    pub y_f: DVector<f64>,
    pub mu_h: DVector<f64>,
    pub mu_f: DVector<f64>,
    pub beta: f64,
    pub tau_h: f64,
    pub tau_f: f64,
    pub tau_w: f64,
    pub gamma_h: f64,
    pub gamma_f: f64,
    pub nu_h: f64,
    pub nu_f: f64,
    pub phi_ha: f64,
    pub phi_fa: f64,
    pub phi_h: f64,
    pub phi_f: f64,
    pub v: DMatrix<f64>,
    pub phi_hm: Vec<f64>,
    pub phi_fm: Vec<f64>,
    pub gamma_hm: Vec<f64>,
    pub gamma_fm: Vec<f64>,
}

impl StoredDraw {
    /// Flat layout used by the on-disk chain format: deterministic order,
    /// matching [`ChainOutput::layout`].
    pub fn flatten_into(&self, buf: &mut Vec<f64>) {
        buf.extend(self.y_h.iter());
        buf.extend(self.y_f.iter());
        buf.extend(self.mu_h.iter());
        buf.extend(self.mu_f.iter());
        buf.extend_from_slice(&[
            self.beta, self.tau_h, self.tau_f, self.tau_w, self.gamma_h, self.gamma_f, self.nu_h,
            self.nu_f, self.phi_ha, self.phi_fa, self.phi_h, self.phi_f,
        ]);
        for i in 0..self.v.nrows() {
            for j in 0..self.v.ncols() {
                buf.push(self.v[(i, j)]);
            }
        }
        buf.extend_from_slice(&self.phi_hm);
        buf.extend_from_slice(&self.phi_fm);
        buf.extend_from_slice(&self.gamma_hm);
        buf.extend_from_slice(&self.gamma_fm);
    }

    /// Inverse of [`StoredDraw::flatten_into`] for `n` sites, `m` models.
    pub fn unflatten(values: &[f64], n: usize, m: usize) -> Result<StoredDraw> {
        let expected = Self::flat_len(n, m);
        if values.len() != expected {
            return Err(Error::dims(format!(
                "flattened draw has {} values, expected {expected}",
                values.len()
            )));
        }
        let mut at = 0usize;
        let take_vec = |at: &mut usize| {
            let v = DVector::from_column_slice(&values[*at..*at + n]);
            *at += n;
            v
        };
        let y_h = take_vec(&mut at);
        let y_f = take_vec(&mut at);
        let mu_h = take_vec(&mut at);
        let mu_f = take_vec(&mut at);
        let scalar = |at: &mut usize| {
            let v = values[*at];
            *at += 1;
            v
        };
        let beta = scalar(&mut at);
        let tau_h = scalar(&mut at);
        let tau_f = scalar(&mut at);
        let tau_w = scalar(&mut at);
        let gamma_h = scalar(&mut at);
        let gamma_f = scalar(&mut at);
        let nu_h = scalar(&mut at);
        let nu_f = scalar(&mut at);
        let phi_ha = scalar(&mut at);
        let phi_fa = scalar(&mut at);
        let phi_h = scalar(&mut at);
        let phi_f = scalar(&mut at);
        let v = DMatrix::from_row_slice(m, m, &values[at..at + m * m]);
        at += m * m;
        let take_plain = |at: &mut usize| {
            let v = values[*at..*at + m].to_vec();
            *at += m;
            v
        };
        let phi_hm = take_plain(&mut at);
        let phi_fm = take_plain(&mut at);
        let gamma_hm = take_plain(&mut at);
        let gamma_fm = take_plain(&mut at);
        Ok(StoredDraw {
            y_h,
            y_f,
            mu_h,
            mu_f,
            beta,
            tau_h,
            tau_f,
            tau_w,
            gamma_h,
            gamma_f,
            nu_h,
            nu_f,
            phi_ha,
            phi_fa,
            phi_h,
            phi_f,
            v,
            phi_hm,
            phi_fm,
            gamma_hm,
            gamma_fm,
        })
    }

    pub fn flat_len(n: usize, m: usize) -> usize {
        4 * n + 12 + m * m + 4 * m
    }
}

/// Acceptance bookkeeping for one MH parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MhAcceptance {
    pub name: String,
    pub proposals: u64,
    pub accepts: u64,
    pub final_step: f64,
}

impl MhAcceptance {
    pub fn rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepts as f64 / self.proposals as f64
        }
    }
}

/// Thinned draws plus run metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub config: ChainConfig,
    pub n_sites: usize,
    pub n_models: usize,
    pub model_names: Vec<String>,
    pub draws: Vec<StoredDraw>,
    pub acceptance: Vec<MhAcceptance>,
}

impl ChainOutput {
    /// (name, length) pairs in flat-layout order.
    pub fn layout(n: usize, m: usize) -> Vec<(String, usize)> {
        let mut out = vec![
            ("y_h".to_string(), n),
            ("y_f".to_string(), n),
            ("mu_h".to_string(), n),
            ("mu_f".to_string(), n),
        ];
        for s in [
            "beta", "tau_h", "tau_f", "tau_w", "gamma_h", "gamma_f", "nu_h", "nu_f", "phi_ha",
            "phi_fa", "phi_h", "phi_f",
        ] {
            out.push((s.to_string(), 1));
        }
        out.push(("v".to_string(), m * m));
        out.push(("phi_hm".to_string(), m));
        out.push(("phi_fm".to_string(), m));
        out.push(("gamma_hm".to_string(), m));
        out.push(("gamma_fm".to_string(), m));
        out
    }

    /// Scalar series for a parameter name: plain scalars (`beta`, `tau_h`),
    /// indexed fields (`y_h[3]`, `gamma_hm[2]`), or V entries (`v[0][1]`).
    pub fn series(&self, name: &str) -> Result<Vec<f64>> {
        let get = self.accessor(name)?;
        Ok(self.draws.iter().map(&get).collect())
    }

    #[allow(clippy::type_complexity)]
    fn accessor(&self, name: &str) -> Result<Box<dyn Fn(&StoredDraw) -> f64>> {
        let unknown = || Error::UnknownParameter(name.to_string());
        if let Some((base, rest)) = name.split_once('[') {
            let idx: Vec<usize> = rest
                .trim_end_matches(']')
                .split("][")
                .map(|p| p.parse::<usize>().map_err(|_| unknown()))
                .collect::<std::result::Result<_, _>>()?;
            let n = self.n_sites;
            let m = self.n_models;
            match (base, idx.as_slice()) {
                ("y_h", &[i]) if i < n => Ok(Box::new(move |d| d.y_h[i])),
                ("y_f", &[i]) if i < n => Ok(Box::new(move |d| d.y_f[i])),
                ("mu_h", &[i]) if i < n => Ok(Box::new(move |d| d.mu_h[i])),
                ("mu_f", &[i]) if i < n => Ok(Box::new(move |d| d.mu_f[i])),
                ("v", &[i, j]) if i < m && j < m => Ok(Box::new(move |d| d.v[(i, j)])),
                ("phi_hm", &[i]) if i < m => Ok(Box::new(move |d| d.phi_hm[i])),
                ("phi_fm", &[i]) if i < m => Ok(Box::new(move |d| d.phi_fm[i])),
                ("gamma_hm", &[i]) if i < m => Ok(Box::new(move |d| d.gamma_hm[i])),
                ("gamma_fm", &[i]) if i < m => Ok(Box::new(move |d| d.gamma_fm[i])),
                _ => Err(unknown()),
            }
        } else {
            match name {
                "beta" => Ok(Box::new(|d: &StoredDraw| d.beta)),
                "tau_h" => Ok(Box::new(|d: &StoredDraw| d.tau_h)),
                "tau_f" => Ok(Box::new(|d: &StoredDraw| d.tau_f)),
                "tau_w" => Ok(Box::new(|d: &StoredDraw| d.tau_w)),
                "gamma_h" => Ok(Box::new(|d: &StoredDraw| d.gamma_h)),
                "gamma_f" => Ok(Box::new(|d: &StoredDraw| d.gamma_f)),
                "nu_h" => Ok(Box::new(|d: &StoredDraw| d.nu_h)),
                "nu_f" => Ok(Box::new(|d: &StoredDraw| d.nu_f)),
                "phi_ha" => Ok(Box::new(|d: &StoredDraw| d.phi_ha)),
                "phi_fa" => Ok(Box::new(|d: &StoredDraw| d.phi_fa)),
                "phi_h" => Ok(Box::new(|d: &StoredDraw| d.phi_h)),
                "phi_f" => Ok(Box::new(|d: &StoredDraw| d.phi_f)),
                _ => Err(unknown()),
            }
        }
    }
}

pub(crate) struct StepSizes {
    pub gamma_h: AdaptiveStep,
    pub gamma_f: AdaptiveStep,
    pub nu_h: AdaptiveStep,
    pub nu_f: AdaptiveStep,
    pub gamma_hm: Vec<AdaptiveStep>,
    pub gamma_fm: Vec<AdaptiveStep>,
}

impl StepSizes {
    fn new(config: &ChainConfig, m: usize) -> StepSizes {
        let make = || {
            AdaptiveStep::new(
                config.mh_initial_step,
                config.adapt_target_acceptance,
                config.adapt_window,
            )
        };
        StepSizes {
            gamma_h: make(),
            gamma_f: make(),
            nu_h: make(),
            nu_f: make(),
            gamma_hm: (0..m).map(|_| make()).collect(),
            gamma_fm: (0..m).map(|_| make()).collect(),
        }
    }
}

/// One chain: owns its dataset, mutable state, covariance caches, step
/// sizes, and RNG. Multiple chains run concurrently with independent seeds
/// and no shared mutable state.
pub struct Chain {
    pub(crate) data: EnsembleDataset,
    pub(crate) config: ChainConfig,
    pub(crate) priors: PriorConfig,
    pub(crate) state: LatentState,
    pub(crate) params: HyperParams,
    pub(crate) bundle: CovarianceBundle,
    pub(crate) v_factor: FactoredMatrix,
    pub(crate) v_inv: DMatrix<f64>,
    pub(crate) steps: StepSizes,
    pub(crate) rng: ChaCha20Rng,
    pub(crate) iteration: usize,
    pub(crate) fault: FaultInjection,
    pub(crate) run_sums_h: Vec<DVector<f64>>,
    pub(crate) run_sums_f: Vec<DVector<f64>>,
}

impl Chain {
    pub fn new(data: &EnsembleDataset, config: ChainConfig, priors: PriorConfig) -> Result<Chain> {
        let (state, params) = initialize_state(data, &config, &priors)?;
        Chain::from_parts(data.clone(), state, params, config, priors)
    }

    /// Build a chain around an explicit starting state. The correctness
    /// harnesses start from exact draws of the joint.
    pub fn from_parts(
        data: EnsembleDataset,
        state: LatentState,
        params: HyperParams,
        config: ChainConfig,
        priors: PriorConfig,
    ) -> Result<Chain> {
        config.validate()?;
        priors.validate()?;
        let m = data.n_models();
        state.validate(data.n_sites(), m)?;
        params.validate(m, &priors)?;
        if !config.variant.has_model_dependence() && params.v != DMatrix::identity(m, m) {
            return Err(Error::domain(
                "variant without model dependence requires V = identity",
            ));
        }
        let bundle = build_variant_covariances(&params, config.variant, data.grid())?;
        let v_factor = FactoredMatrix::factor(&params.v)?;
        let v_inv = v_factor.inverse();
        let steps = StepSizes::new(&config, m);
        let rng = ChaCha20Rng::seed_from_u64(config.seed);
        let (run_sums_h, run_sums_f) = run_sums(&data);
        Ok(Chain {
            data,
            config,
            priors,
            state,
            params,
            bundle,
            v_factor,
            v_inv,
            steps,
            rng,
            iteration: 0,
            fault: FaultInjection::None,
            run_sums_h,
            run_sums_f,
        })
    }

    pub fn state(&self) -> &LatentState {
        &self.state
    }

    pub fn params(&self) -> &HyperParams {
        &self.params
    }

    pub fn config(&self) -> &ChainConfig {
        &self.config
    }

    pub fn priors(&self) -> &PriorConfig {
        &self.priors
    }

    pub fn data(&self) -> &EnsembleDataset {
        &self.data
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn set_fault(&mut self, fault: FaultInjection) {
        self.fault = fault;
    }

    /// Replace state and parameters wholesale, refreshing every cache.
    pub fn set_state(&mut self, state: LatentState, params: HyperParams) -> Result<()> {
        let m = self.data.n_models();
        state.validate(self.data.n_sites(), m)?;
        params.validate(m, &self.priors)?;
        self.bundle = build_variant_covariances(&params, self.config.variant, self.data.grid())?;
        self.v_factor = FactoredMatrix::factor(&params.v)?;
        self.v_inv = self.v_factor.inverse();
        self.state = state;
        self.params = params;
        Ok(())
    }

    /// Swap the dataset (same dimensions); the getting-it-right harness
    /// regenerates data between sweeps.
    pub fn replace_data(&mut self, data: EnsembleDataset) -> Result<()> {
        if data.n_sites() != self.data.n_sites() || data.n_models() != self.data.n_models() {
            return Err(Error::dims("replacement dataset has different dimensions"));
        }
        let (h, f) = run_sums(&data);
        self.run_sums_h = h;
        self.run_sums_f = f;
        self.data = data;
        Ok(())
    }

    pub(crate) fn adapting(&self) -> bool {
        self.iteration < self.config.burn_in
    }

    /// One full sweep in the fixed order: expected/actual block, model
    /// means, consensus fields, conjugate scales, V (with rescale), beta,
    /// range MH updates, shape MH updates.
    pub fn step(&mut self) -> Result<()> {
        let it = self.iteration;
        self.update_expected_and_actual().map_err(|e| ctx(e, it, "expected_actual"))?;
        self.update_model_means().map_err(|e| ctx(e, it, "model_means"))?;
        self.update_consensus().map_err(|e| ctx(e, it, "consensus"))?;
        self.update_conjugate_scales().map_err(|e| ctx(e, it, "conjugate_scales"))?;
        self.update_v().map_err(|e| ctx(e, it, "v"))?;
        self.update_beta().map_err(|e| ctx(e, it, "beta"))?;
        self.update_ranges_mh().map_err(|e| ctx(e, it, "ranges_mh"))?;
        self.update_shapes_mh().map_err(|e| ctx(e, it, "shapes_mh"))?;
        self.iteration += 1;
        Ok(())
    }

    /// Stored view of the current state. Under `VRescale::OnReport` (and
    /// `InKernel`, where it is a no-op) the draw is normalized to
    /// V[0][0] = 1 with tau_H, tau_F divided by the same factor.
    pub fn snapshot(&self) -> StoredDraw {
        let (v, tau_h, tau_f) = match self.config.v_rescale {
            VRescale::Off => (self.params.v.clone(), self.params.tau_h, self.params.tau_f),
            VRescale::OnReport | VRescale::InKernel => {
                let c = self.params.v[(0, 0)];
                (&self.params.v / c, self.params.tau_h / c, self.params.tau_f / c)
            }
        };
        StoredDraw {
            y_h: self.state.y_h.clone(),
            y_f: self.state.y_f.clone(),
            mu_h: self.state.mu_h.clone(),
            mu_f: self.state.mu_f.clone(),
            beta: self.params.beta,
            tau_h,
            tau_f,
            tau_w: self.params.tau_w,
            gamma_h: self.params.gamma_h,
            gamma_f: self.params.gamma_f,
            nu_h: self.params.nu_h,
            nu_f: self.params.nu_f,
            phi_ha: self.params.phi_ha,
            phi_fa: self.params.phi_fa,
            phi_h: self.params.phi_h,
            phi_f: self.params.phi_f,
            v,
            phi_hm: self.params.phi_hm.clone(),
            phi_fm: self.params.phi_fm.clone(),
            gamma_hm: self.params.gamma_hm.clone(),
            gamma_fm: self.params.gamma_fm.clone(),
        }
    }

    pub fn acceptance_summary(&self) -> Vec<MhAcceptance> {
        let mut out = Vec::new();
        let mut push = |name: String, s: &AdaptiveStep| {
            out.push(MhAcceptance {
                name,
                proposals: s.total_proposals,
                accepts: s.total_accepts,
                final_step: s.step(),
            });
        };
        push("gamma_h".into(), &self.steps.gamma_h);
        push("gamma_f".into(), &self.steps.gamma_f);
        push("nu_h".into(), &self.steps.nu_h);
        push("nu_f".into(), &self.steps.nu_f);
        for (i, s) in self.steps.gamma_hm.iter().enumerate() {
            push(format!("gamma_hm[{i}]"), s);
        }
        for (i, s) in self.steps.gamma_fm.iter().enumerate() {
            push(format!("gamma_fm[{i}]"), s);
        }
        out
    }
}

fn ctx(e: Error, iteration: usize, update: &'static str) -> Error {
    Error::SamplerAbort { iteration, update, source: Box::new(e) }
}

fn run_sums(data: &EnsembleDataset) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let n = data.n_sites();
    let h = (0..data.n_models())
        .map(|m| data.runs_h(m).iter().fold(DVector::zeros(n), |a, r| a + r))
        .collect();
    let f = (0..data.n_models())
        .map(|m| data.runs_f(m).iter().fold(DVector::zeros(n), |a, r| a + r))
        .collect();
    (h, f)
}

/// Run a chain to completion, storing every `thin`-th post-burn-in draw.
#[allow(clippy::manual_is_multiple_of)]
pub fn run_chain(
    data: &EnsembleDataset,
    config: ChainConfig,
    priors: PriorConfig,
) -> Result<ChainOutput> {
    let mut chain = Chain::new(data, config.clone(), priors)?;
    let mut draws = Vec::with_capacity(config.stored_draws());
    for i in 0..config.iterations {
        chain.step()?;
        if i >= config.burn_in && (i - config.burn_in + 1) % config.thin == 0 {
            draws.push(chain.snapshot());
        }
    }
    Ok(ChainOutput {
        config,
        n_sites: data.n_sites(),
        n_models: data.n_models(),
        model_names: data.model_names().to_vec(),
        draws,
        acceptance: chain.acceptance_summary(),
    })
}

/// Data-driven starting point: mean fields from run averages, precisions
/// from inverse empirical variances (variance floored at 1e-6), ranges at
/// half the grid diameter, V at the identity, beta at one.
pub fn initialize_state(
    data: &EnsembleDataset,
    config: &ChainConfig,
    priors: &PriorConfig,
) -> Result<(LatentState, HyperParams)> {
    config.validate()?;
    priors.validate()?;
    let n = data.n_sites();
    let m = data.n_models();

    let mut state = LatentState::zeros(n, m);
    for model in 0..m {
        state.x_h.set_column(model, &mean_field(data.runs_h(model)));
        state.x_f.set_column(model, &mean_field(data.runs_f(model)));
    }
    state.mu_h = grand_mean(data, true);
    state.mu_f = grand_mean(data, false);
    state.y_h = state.mu_h.clone();
    state.y_f = state.mu_f.clone();
    state.y_ha = state.y_h.clone();
    state.y_fa = state.y_f.clone();

    const VAR_FLOOR: f64 = 1e-6;
    let precision = |var: f64| 1.0 / var.max(VAR_FLOOR);

    let phi_hm: Vec<f64> = (0..m)
        .map(|model| {
            precision(pooled_run_variance(
                data.runs_h(model),
                &state.x_h.column(model).into_owned(),
            ))
        })
        .collect();
    let phi_fm: Vec<f64> = (0..m)
        .map(|model| {
            precision(pooled_run_variance(
                data.runs_f(model),
                &state.x_f.column(model).into_owned(),
            ))
        })
        .collect();

    let tau_h = precision(pooled_matrix_variance(&state.x_h, &state.mu_h));
    let tau_f = precision(pooled_matrix_variance(&state.x_f, &state.mu_f));
    let obs_mean = mean_field(data.obs());
    let tau_w = precision(pooled_run_variance(data.obs(), &obs_mean));

    let phi_h = phi_hm.iter().sum::<f64>() / m as f64;
    let phi_f = phi_fm.iter().sum::<f64>() / m as f64;

    let (lo, hi) = priors.gamma_support();
    let mut gamma0 = 0.5 * data.grid().diameter();
    if gamma0 <= lo {
        gamma0 = lo + 0.01 * (hi - lo);
    }
    let gamma0 = gamma0.min(hi);

    let params = HyperParams {
        beta: 1.0,
        tau_h,
        tau_f,
        tau_w,
        gamma_h: gamma0,
        gamma_f: gamma0,
        v: DMatrix::identity(m, m),
        phi_hm,
        phi_fm,
        gamma_hm: vec![gamma0; m],
        gamma_fm: vec![gamma0; m],
        nu_h: 2.0,
        nu_f: 2.0,
        phi_h,
        phi_f,
        phi_ha: phi_h,
        phi_fa: phi_f,
        kappa: config.kappa,
    };
    params.validate(m, priors)?;
    Ok((state, params))
}

fn mean_field(fields: &[DVector<f64>]) -> DVector<f64> {
    let n = fields[0].len();
    fields.iter().fold(DVector::zeros(n), |a, f| a + f) / fields.len() as f64
}

fn grand_mean(data: &EnsembleDataset, historical: bool) -> DVector<f64> {
    let n = data.n_sites();
    let mut acc = DVector::zeros(n);
    let mut count = 0usize;
    for m in 0..data.n_models() {
        let runs = if historical { data.runs_h(m) } else { data.runs_f(m) };
        for r in runs {
            acc += r;
            count += 1;
        }
    }
    acc / count as f64
}

fn pooled_run_variance(runs: &[DVector<f64>], center: &DVector<f64>) -> f64 {
    let mut acc = 0.0;
    let mut count = 0usize;
    for r in runs {
        acc += (r - center).norm_squared();
        count += r.len();
    }
    acc / count as f64
}

fn pooled_matrix_variance(x: &DMatrix<f64>, center: &DVector<f64>) -> f64 {
    let mut acc = 0.0;
    for col in x.column_iter() {
        acc += (col - center).norm_squared();
    }
    acc / (x.nrows() * x.ncols()) as f64
}

#[cfg(test)]
mod tests;
