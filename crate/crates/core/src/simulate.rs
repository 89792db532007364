//! Forward generation of synthetic datasets from the full hierarchy.
//!
//! Draw order matches the hierarchy exactly (hyper -> model means ->
//! runs -> expected -> actual -> observations) so the getting-it-right
//! harness in [`crate::diagnostics`] can reuse the same stages.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::Deserialize;

use crate::covariance::{FactoredMatrix, Grid};
use crate::model::{
    build_variant_covariances, CovMatrix, CovarianceBundle, EnsembleDataset, HyperParams,
    LatentState, ModelVariant,
};
use crate::{Error, Result};

/// Everything needed to generate one synthetic dataset.
///
/// `truth.phi_hm`/`truth.phi_fm` act as placeholders: the per-model run
/// precisions are redrawn from their hyper-law on every `generate` call,
/// as the hierarchy prescribes.
#[derive(Debug, Clone)]
pub struct SimulationDesign {
    pub grid: Grid,
    pub runs_h: Vec<usize>,
    pub runs_f: Vec<usize>,
    pub n_obs: usize,
    pub truth: HyperParams,
    pub mu_h_true: DVector<f64>,
    pub mu_f_true: DVector<f64>,
    pub model_names: Vec<String>,
    pub seed: u64,
}

impl SimulationDesign {
    pub fn n_models(&self) -> usize {
        self.runs_h.len()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        let m = self.runs_h.len();
        if m == 0 || self.runs_f.len() != m || self.model_names.len() != m {
            return Err(Error::dims("design model lists must be non-empty and equal length"));
        }
        if self.runs_h.iter().chain(self.runs_f.iter()).any(|&r| r == 0) {
            return Err(Error::dims("every model needs at least one run per period"));
        }
        if self.n_obs == 0 {
            return Err(Error::dims("need at least one observation set"));
        }
        let n = self.grid.n();
        if self.mu_h_true.len() != n || self.mu_f_true.len() != n {
            return Err(Error::dims("consensus fields must match the grid size"));
        }
        Ok(())
    }
}

/// The latent fields and realized parameters behind a generated dataset.
#[derive(Debug, Clone)]
pub struct SimulationTruth {
    pub latent: LatentState,
    pub params: HyperParams,
}

/// Generate a dataset plus its realized truth. Deterministic in
/// `design.seed`.
pub fn generate(design: &SimulationDesign) -> Result<(EnsembleDataset, SimulationTruth)> {
    design.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(design.seed);
    let grid = &design.grid;
    let m_count = design.n_models();

    let mut params = design.truth.clone();
    // Hyper layer: redraw per-model run precisions from their Gamma law.
    params.phi_hm = draw_run_precisions(params.nu_h, params.phi_h, m_count, &mut rng);
    params.phi_fm = draw_run_precisions(params.nu_f, params.phi_f, m_count, &mut rng);

    let bundle = build_variant_covariances(&params, ModelVariant::Full, grid)?;
    let v_factor = FactoredMatrix::factor(&params.v)?;

    let mut state = LatentState::zeros(grid.n(), m_count);
    state.mu_h = design.mu_h_true.clone();
    state.mu_f = design.mu_f_true.clone();
    draw_model_means(&mut state, &params, &bundle, &v_factor, &mut rng);
    let (runs_h, runs_f) = draw_runs(&state, &params, &bundle, &design.runs_h, &design.runs_f, &mut rng);
    draw_expected(&mut state, &params, &bundle, &mut rng);
    draw_actual(&mut state, &params, &mut rng);
    let obs = draw_obs(&state.y_ha, params.tau_w, design.n_obs, &mut rng);

    let data = EnsembleDataset::new(grid.clone(), runs_h, runs_f, obs, design.model_names.clone())?;
    Ok((data, SimulationTruth { latent: state, params }))
}

pub(crate) fn draw_run_precisions(
    nu: f64,
    phi: f64,
    m_count: usize,
    rng: &mut ChaCha20Rng,
) -> Vec<f64> {
    let law = Gamma::new(nu / 2.0, 2.0 * phi / nu).expect("positive gamma parameters");
    (0..m_count).map(|_| law.sample(rng)).collect()
}

fn std_normal_vec(n: usize, rng: &mut ChaCha20Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Matrix-normal draw: columns jointly N(0, scale^2 * V (x) Sigma), filled
/// into `x_h`/`x_f` around the consensus fields.
pub(crate) fn draw_model_means(
    state: &mut LatentState,
    params: &HyperParams,
    bundle: &CovarianceBundle,
    v_factor: &FactoredMatrix,
    rng: &mut ChaCha20Rng,
) {
    let n = state.mu_h.len();
    let m_count = v_factor.n();
    let mut draw_matrix = |sigma: &CovMatrix, scale: f64| -> DMatrix<f64> {
        let mut cols = DMatrix::zeros(n, m_count);
        for c in 0..m_count {
            cols.set_column(c, &sigma.correlate(&std_normal_vec(n, rng)));
        }
        cols * v_factor.lower().transpose() * scale
    };

    let eps_h = draw_matrix(&bundle.sigma_h, params.tau_h.sqrt().recip());
    let eps_f = draw_matrix(&bundle.sigma_f, params.tau_f.sqrt().recip());
    for c in 0..m_count {
        let x_hm = &state.mu_h + eps_h.column(c);
        let x_fm = &state.mu_f
            + eps_f.column(c)
            + (&x_hm - &state.mu_h) * params.beta;
        state.x_h.set_column(c, &x_hm);
        state.x_f.set_column(c, &x_fm);
    }
}

pub(crate) type RunDraws = (Vec<Vec<DVector<f64>>>, Vec<Vec<DVector<f64>>>);

pub(crate) fn draw_runs(
    state: &LatentState,
    params: &HyperParams,
    bundle: &CovarianceBundle,
    runs_h: &[usize],
    runs_f: &[usize],
    rng: &mut ChaCha20Rng,
) -> RunDraws {
    let n = state.mu_h.len();
    let mut out_h = Vec::with_capacity(runs_h.len());
    let mut out_f = Vec::with_capacity(runs_f.len());
    for (m, &count) in runs_h.iter().enumerate() {
        let x_hm = state.x_h.column(m).into_owned();
        let sd = params.phi_hm[m].sqrt().recip();
        out_h.push(
            (0..count)
                .map(|_| &x_hm + bundle.sigma_hm[m].correlate(&std_normal_vec(n, rng)) * sd)
                .collect(),
        );
    }
    for (m, &count) in runs_f.iter().enumerate() {
        let x_fm = state.x_f.column(m).into_owned();
        let sd = params.phi_fm[m].sqrt().recip();
        out_f.push(
            (0..count)
                .map(|_| &x_fm + bundle.sigma_fm[m].correlate(&std_normal_vec(n, rng)) * sd)
                .collect(),
        );
    }
    (out_h, out_f)
}

pub(crate) fn draw_expected(
    state: &mut LatentState,
    params: &HyperParams,
    bundle: &CovarianceBundle,
    rng: &mut ChaCha20Rng,
) {
    let n = state.mu_h.len();
    let sd_h = (params.kappa / params.tau_h).sqrt();
    let sd_f = (params.kappa / params.tau_f).sqrt();
    state.y_h = &state.mu_h + bundle.sigma_h.correlate(&std_normal_vec(n, rng)) * sd_h;
    state.y_f = &state.mu_f
        + bundle.sigma_f.correlate(&std_normal_vec(n, rng)) * sd_f
        + (&state.y_h - &state.mu_h) * params.beta;
}

pub(crate) fn draw_actual(state: &mut LatentState, params: &HyperParams, rng: &mut ChaCha20Rng) {
    let n = state.mu_h.len();
    state.y_ha = &state.y_h + std_normal_vec(n, rng) * params.phi_ha.sqrt().recip();
    state.y_fa = &state.y_f + std_normal_vec(n, rng) * params.phi_fa.sqrt().recip();
}

pub(crate) fn draw_obs(
    y_ha: &DVector<f64>,
    tau_w: f64,
    n_obs: usize,
    rng: &mut ChaCha20Rng,
) -> Vec<DVector<f64>> {
    let n = y_ha.len();
    let sd = tau_w.sqrt().recip();
    (0..n_obs).map(|_| y_ha + std_normal_vec(n, rng) * sd).collect()
}

// --- Built-in designs ------------------------------------------------------

#[derive(Deserialize)]
struct TruthFixture {
    grid_side: usize,
    mu_h: Vec<f64>,
    mu_f: Vec<f64>,
    v: Vec<Vec<f64>>,
    gamma_hm: Vec<f64>,
    gamma_fm: Vec<f64>,
}

fn load_fixture() -> TruthFixture {
    serde_json::from_str(include_str!("../fixtures/paper_truth.json"))
        .expect("bundled truth fixture parses")
}

/// Smooth consensus fields used by the bundled designs. The 20x20
/// evaluation of these formulas is frozen in the fixture file.
pub fn smooth_consensus_fields(grid: &Grid) -> (DVector<f64>, DVector<f64>) {
    use std::f64::consts::PI;
    let mu_h = DVector::from_fn(grid.n(), |i, _| {
        let [x, y] = grid.sites()[i];
        2.0 + (PI * x).sin() * (PI * y).sin() + 0.5 * x - 0.3 * y
    });
    let mu_f = DVector::from_fn(grid.n(), |i, _| {
        let [x, y] = grid.sites()[i];
        4.0 + 1.2 * (PI * x).sin() * (PI * y / 2.0).cos() + 0.4 * (x + y)
    });
    (mu_h, mu_f)
}

fn design_truth(
    m_count: usize,
    v: DMatrix<f64>,
    gamma_hm: Vec<f64>,
    gamma_fm: Vec<f64>,
) -> HyperParams {
    HyperParams {
        beta: 2.0,
        tau_h: 1.5,
        tau_f: 2.0,
        tau_w: 2.0,
        gamma_h: 0.5,
        gamma_f: 0.5,
        v,
        phi_hm: vec![10.0; m_count],
        phi_fm: vec![10.0; m_count],
        gamma_hm,
        gamma_fm,
        nu_h: 100.0,
        nu_f: 100.0,
        phi_h: 10.0,
        phi_f: 10.0,
        phi_ha: 10.0,
        phi_fa: 10.0,
        kappa: 1.0,
    }
}

/// The standard synthetic study: 20x20 grid on the unit square, 38 models
/// with 10 runs each per period, 5 observation sets. Consensus fields, V,
/// and per-model ranges come from the bundled fixture (artifact-chosen
/// stand-ins with the documented structure, not published values).
pub fn paper_design() -> SimulationDesign {
    let fx = load_fixture();
    let m_count = fx.gamma_hm.len();
    let grid = Grid::regular(fx.grid_side);
    let v = DMatrix::from_fn(m_count, m_count, |i, j| fx.v[i][j]);
    SimulationDesign {
        grid,
        runs_h: vec![10; m_count],
        runs_f: vec![10; m_count],
        n_obs: 5,
        truth: design_truth(m_count, v, fx.gamma_hm.clone(), fx.gamma_fm.clone()),
        mu_h_true: DVector::from_vec(fx.mu_h),
        mu_f_true: DVector::from_vec(fx.mu_f),
        model_names: (0..m_count).map(|i| format!("model-{:02}", i + 1)).collect(),
        seed: 0,
    }
}

/// CMIP5 archive model names and per-model run counts, in index order.
pub const CMIP5_RUN_COUNTS: [(&str, usize); 38] = [
    ("ACCESS1-0", 1),
    ("ACCESS1-3", 1),
    ("BNU-ESM", 1),
    ("CCSM4", 6),
    ("CESM1-BGC", 1),
    ("CESM1-CAM5", 3),
    ("CMCC-CM", 1),
    ("CMCC-CMS", 1),
    ("CNRM-CM5", 1),
    ("CSIRO-Mk3-6-0", 10),
    ("CanESM2", 5),
    ("EC-EARTH", 4),
    ("FGOALS-g2", 1),
    ("FIO-ESM", 3),
    ("GFDL-CM3", 1),
    ("GFDL-ESM2G", 1),
    ("GFDL-ESM2M", 1),
    ("GISS-E2-H", 5),
    ("GISS-E2-H-CC", 1),
    ("GISS-E2-R", 5),
    ("GISS-E2-R-CC", 1),
    ("HadGEM2-AO", 1),
    ("HadGEM2-CC", 1),
    ("HadGEM2-ES", 4),
    ("IPSL-CM5A-LR", 4),
    ("IPSL-CM5A-MR", 1),
    ("IPSL-CM5B-LR", 1),
    ("MIROC-ESM", 1),
    ("MIROC-ESM-CHEM", 1),
    ("MIROC5", 3),
    ("MPI-ESM-LR", 3),
    ("MPI-ESM-MR", 1),
    ("MRI-CGCM3", 1),
    ("NorESM1-M", 1),
    ("NorESM1-ME", 1),
    ("bcc-csm1-1", 1),
    ("bcc-csm1-1-m", 1),
    ("inmcm4", 1),
];

/// Same synthetic truth as [`paper_design`] but with run counts matching
/// the CMIP5 archive (81 runs over 38 models) and two observation sets.
pub fn cmip5_sized_design() -> SimulationDesign {
    let mut design = paper_design();
    design.runs_h = CMIP5_RUN_COUNTS.iter().map(|&(_, r)| r).collect();
    design.runs_f = design.runs_h.clone();
    design.n_obs = 2;
    design.model_names = CMIP5_RUN_COUNTS.iter().map(|&(name, _)| name.to_string()).collect();
    design
}

/// A reduced design with the same parameter truth, for fast experiments:
/// `side` x `side` grid, `m_count` models with `runs` runs each, `n_obs`
/// observation sets. V and the per-model ranges are the leading block of
/// the bundled truth.
pub fn desk_design(side: usize, m_count: usize, runs: usize, n_obs: usize) -> SimulationDesign {
    let fx = load_fixture();
    assert!(m_count <= fx.gamma_hm.len());
    let grid = Grid::regular(side);
    let (mu_h, mu_f) = smooth_consensus_fields(&grid);
    let v = DMatrix::from_fn(m_count, m_count, |i, j| fx.v[i][j]);
    SimulationDesign {
        grid,
        runs_h: vec![runs; m_count],
        runs_f: vec![runs; m_count],
        n_obs,
        truth: design_truth(
            m_count,
            v,
            fx.gamma_hm[..m_count].to_vec(),
            fx.gamma_fm[..m_count].to_vec(),
        ),
        mu_h_true: mu_h,
        mu_f_true: mu_f,
        model_names: (0..m_count).map(|i| format!("model-{:02}", i + 1)).collect(),
        seed: 0,
    }
}

use rand::SeedableRng;
