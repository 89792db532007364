//! Getting-it-right: compare two simulators of the same joint
//! distribution. The marginal-conditional stream draws (parameters,
//! latents, data) forward each round; the successive-conditional stream
//! alternates MCMC sweeps on (latents, parameters) with data regeneration.
//! If every conditional update is correct, monitored statistics agree
//! between the streams up to Monte-Carlo error.
//!
//! The kernel under test runs with the V-rescale turned off by default:
//! the rescale is a deterministic identifiability normalization layered on
//! top of the exact conditional draws, not itself a conditional update, so
//! the exactness certificate applies to the raw kernel. Its own invariants
//! (unit corner entry, preserved covariance products) are tested
//! separately.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::effective_sample_size;
use crate::covariance::FactoredMatrix;
use crate::model::{
    build_variant_covariances, EnsembleDataset, HyperParams, LatentState, ModelVariant,
    PriorConfig,
};
use crate::sampler::{
    sample_inverse_wishart, Chain, ChainConfig, ChiUpdateScheme, FaultInjection, VRescale,
};
use crate::simulate::{self, SimulationDesign};
use crate::Result;

#[derive(Debug, Clone)]
pub struct GewekeConfig {
    pub rounds: usize,
    /// Sweeps between data regenerations; zero turns the successive stream
    /// into fresh forward draws (a self-test of the harness).
    pub sweeps_per_round: usize,
    pub seed: u64,
    pub fault: FaultInjection,
    pub rescale_v_in_kernel: bool,
    pub chi_scheme: ChiUpdateScheme,
    /// |z| limit for a monitor to pass.
    pub z_limit: f64,
}

impl Default for GewekeConfig {
    fn default() -> Self {
        GewekeConfig {
            rounds: 10_000,
            sweeps_per_round: 1,
            seed: 0,
            fault: FaultInjection::None,
            rescale_v_in_kernel: false,
            chi_scheme: ChiUpdateScheme::FullConditional,
            z_limit: 3.0,
        }
    }
}

/// Proper, concentrated priors for the correctness harness. The vague
/// defaults are statistically fine but make forward draws numerically
/// wild, which would test floating-point limits rather than the sampler.
pub fn geweke_priors() -> PriorConfig {
    PriorConfig {
        gaussian_mean_variance: 1.0,
        gamma_shape: 3.0,
        gamma_rate: 3.0,
        inv_gamma_shape: 3.0,
        inv_gamma_rate: 3.0,
        uniform_lower: 0.2,
        uniform_upper: 1.2,
        v_prior_mean: None,
        v_prior_d: 3,
    }
}

/// A monitored scalar statistic of the full (state, params, data) triple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Monitor {
    Beta,
    BetaSq,
    TauW,
    TauH,
    TauF,
    NuH,
    GammaH,
    GammaF,
    PhiHa,
    PhiH,
    PhiHm(usize),
    VEntry(usize, usize),
    MuH(usize),
    YH(usize),
    YF(usize),
    YFSq(usize),
    /// (y_Ha - y_H) sqrt(phi_Ha): unit normal under the joint, so the
    /// comparison keeps power even when phi_Ha's prior has heavy tails.
    YHaPivot(usize),
    XH(usize, usize),
    /// (mean_i W_i - y_Ha) at a site, scaled by sqrt(N tau_W).
    ObsPivot(usize),
}

impl Monitor {
    pub fn name(&self) -> String {
        match self {
            Monitor::Beta => "beta".into(),
            Monitor::BetaSq => "beta^2".into(),
            Monitor::TauW => "tau_w".into(),
            Monitor::TauH => "tau_h".into(),
            Monitor::TauF => "tau_f".into(),
            Monitor::NuH => "nu_h".into(),
            Monitor::GammaH => "gamma_h".into(),
            Monitor::GammaF => "gamma_f".into(),
            Monitor::PhiHa => "phi_ha".into(),
            Monitor::PhiH => "phi_h".into(),
            Monitor::PhiHm(m) => format!("phi_hm[{m}]"),
            Monitor::VEntry(i, j) => format!("v[{i}][{j}]"),
            Monitor::MuH(s) => format!("mu_h[{s}]"),
            Monitor::YH(s) => format!("y_h[{s}]"),
            Monitor::YF(s) => format!("y_f[{s}]"),
            Monitor::YFSq(s) => format!("y_f[{s}]^2"),
            Monitor::YHaPivot(s) => format!("y_ha_pivot[{s}]"),
            Monitor::XH(m, s) => format!("x_h[{m}][{s}]"),
            Monitor::ObsPivot(s) => format!("obs_pivot[{s}]"),
        }
    }

    pub fn eval(&self, state: &LatentState, params: &HyperParams, data: &EnsembleDataset) -> f64 {
        match self {
            Monitor::Beta => params.beta,
            Monitor::BetaSq => params.beta * params.beta,
            Monitor::TauW => params.tau_w,
            Monitor::TauH => params.tau_h,
            Monitor::TauF => params.tau_f,
            Monitor::NuH => params.nu_h,
            Monitor::GammaH => params.gamma_h,
            Monitor::GammaF => params.gamma_f,
            Monitor::PhiHa => params.phi_ha,
            Monitor::PhiH => params.phi_h,
            Monitor::PhiHm(m) => params.phi_hm[*m],
            Monitor::VEntry(i, j) => params.v[(*i, *j)],
            Monitor::MuH(s) => state.mu_h[*s],
            Monitor::YH(s) => state.y_h[*s],
            Monitor::YF(s) => state.y_f[*s],
            Monitor::YFSq(s) => state.y_f[*s] * state.y_f[*s],
            Monitor::YHaPivot(s) => {
                (state.y_ha[*s] - state.y_h[*s]) * params.phi_ha.sqrt()
            }
            Monitor::XH(m, s) => state.x_h[(*s, *m)],
            Monitor::ObsPivot(s) => {
                let n_obs = data.n_obs() as f64;
                let mut acc = 0.0;
                for w in data.obs() {
                    acc += w[*s];
                }
                (acc / n_obs - state.y_ha[*s]) * (n_obs * params.tau_w).sqrt()
            }
        }
    }
}

/// The standard monitor set (>= 12 statistics including first and second
/// moments of the key quantities).
pub fn default_monitors(m_count: usize) -> Vec<Monitor> {
    let mut monitors = vec![
        Monitor::Beta,
        Monitor::BetaSq,
        Monitor::TauW,
        Monitor::TauH,
        Monitor::TauF,
        Monitor::NuH,
        Monitor::GammaH,
        Monitor::GammaF,
        Monitor::PhiHa,
        Monitor::PhiH,
        Monitor::PhiHm(0),
        Monitor::MuH(0),
        Monitor::YH(0),
        Monitor::YF(0),
        Monitor::YFSq(0),
        Monitor::YHaPivot(0),
        Monitor::ObsPivot(0),
    ];
    if m_count >= 2 {
        monitors.push(Monitor::VEntry(0, 1));
        monitors.push(Monitor::VEntry(1, 1));
        monitors.push(Monitor::XH(1, 0));
    }
    monitors
}

#[derive(Debug, Clone)]
pub struct MonitorZ {
    pub name: String,
    pub z: f64,
    pub marginal_mean: f64,
    pub successive_mean: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct GewekeReport {
    pub monitors: Vec<MonitorZ>,
    pub rounds: usize,
}

impl GewekeReport {
    pub fn pass_fraction(&self) -> f64 {
        if self.monitors.is_empty() {
            return 1.0;
        }
        self.monitors.iter().filter(|m| m.pass).count() as f64 / self.monitors.len() as f64
    }

    pub fn max_abs_z(&self) -> f64 {
        self.monitors.iter().map(|m| m.z.abs()).fold(0.0, f64::max)
    }

    pub fn all_pass(&self) -> bool {
        self.monitors.iter().all(|m| m.pass)
    }
}

/// Draw the full parameter vector from the priors in a fixed order.
fn draw_params_from_priors(
    m_count: usize,
    priors: &PriorConfig,
    kappa: f64,
    rescale: bool,
    rng: &mut ChaCha20Rng,
) -> Result<HyperParams> {
    let gauss_sd = priors.gaussian_mean_variance.sqrt();
    let beta = gauss_sd * rng.sample::<f64, _>(StandardNormal);
    let gamma_dist = Gamma::new(priors.gamma_shape, 1.0 / priors.gamma_rate)
        .expect("validated prior constants");
    let mut tau_h = gamma_dist.sample(rng);
    let mut tau_f = gamma_dist.sample(rng);
    let tau_w = gamma_dist.sample(rng);
    let nu_h = gamma_dist.sample(rng);
    let nu_f = gamma_dist.sample(rng);
    let inv_gamma = Gamma::new(priors.inv_gamma_shape, 1.0 / priors.inv_gamma_rate)
        .expect("validated prior constants");
    let phi_h = 1.0 / inv_gamma.sample(rng);
    let phi_f = 1.0 / inv_gamma.sample(rng);
    let (lo, hi) = priors.gamma_support();
    let mut unif = || lo + (hi - lo) * rng.gen::<f64>();
    let gamma_h = unif();
    let gamma_f = unif();
    let gamma_hm: Vec<f64> = (0..m_count).map(|_| unif()).collect();
    let gamma_fm: Vec<f64> = (0..m_count).map(|_| unif()).collect();

    let d = priors.v_prior_d as f64;
    let v_scale = priors.v_tilde(m_count) * d;
    let mut v = sample_inverse_wishart(&v_scale, m_count as f64 + d + 1.0, rng)?;
    if rescale {
        let c = v[(0, 0)];
        v /= c;
        tau_h /= c;
        tau_f /= c;
    }

    let phi_m = |nu: f64, phi: f64, rng: &mut ChaCha20Rng| -> Vec<f64> {
        let law = Gamma::new(nu / 2.0, 2.0 * phi / nu).expect("positive parameters");
        (0..m_count).map(|_| law.sample(rng)).collect()
    };
    let phi_hm = phi_m(nu_h, phi_h, rng);
    let phi_fm = phi_m(nu_f, phi_f, rng);
    let phi_a = |nu: f64, phi: f64, rng: &mut ChaCha20Rng| -> f64 {
        Gamma::new(nu / (2.0 * kappa), 2.0 * kappa * phi / nu)
            .expect("positive parameters")
            .sample(rng)
    };
    let phi_ha = phi_a(nu_h, phi_h, rng);
    let phi_fa = phi_a(nu_f, phi_f, rng);

    Ok(HyperParams {
        beta,
        tau_h,
        tau_f,
        tau_w,
        gamma_h,
        gamma_f,
        v,
        phi_hm,
        phi_fm,
        gamma_hm,
        gamma_fm,
        nu_h,
        nu_f,
        phi_h,
        phi_f,
        phi_ha,
        phi_fa,
        kappa,
    })
}

/// One complete forward draw of (params, latents, data).
fn forward_draw(
    design: &SimulationDesign,
    priors: &PriorConfig,
    rescale: bool,
    rng: &mut ChaCha20Rng,
) -> Result<(LatentState, HyperParams, EnsembleDataset)> {
    let m_count = design.n_models();
    let n = design.grid.n();
    let params =
        draw_params_from_priors(m_count, priors, design.truth.kappa, rescale, rng)?;
    let bundle = build_variant_covariances(&params, ModelVariant::Full, &design.grid)?;
    let v_factor = FactoredMatrix::factor(&params.v)?;

    let gauss_sd = priors.gaussian_mean_variance.sqrt();
    let mut state = LatentState::zeros(n, m_count);
    state.mu_h = DVector::from_fn(n, |_, _| gauss_sd * rng.sample::<f64, _>(StandardNormal));
    state.mu_f = DVector::from_fn(n, |_, _| gauss_sd * rng.sample::<f64, _>(StandardNormal));
    simulate::draw_model_means(&mut state, &params, &bundle, &v_factor, rng);
    simulate::draw_expected(&mut state, &params, &bundle, rng);
    simulate::draw_actual(&mut state, &params, rng);
    let (runs_h, runs_f) =
        simulate::draw_runs(&state, &params, &bundle, &design.runs_h, &design.runs_f, rng);
    let obs = simulate::draw_obs(&state.y_ha, params.tau_w, design.n_obs, rng);
    let data = EnsembleDataset::new(
        design.grid.clone(),
        runs_h,
        runs_f,
        obs,
        design.model_names.clone(),
    )?;
    Ok((state, params, data))
}

/// Regenerate the data block from the current latents and parameters.
fn regenerate_data(chain: &mut Chain, design: &SimulationDesign) -> Result<()> {
    let (runs_h, runs_f) = simulate::draw_runs(
        &chain.state,
        &chain.params,
        &chain.bundle,
        &design.runs_h,
        &design.runs_f,
        &mut chain.rng,
    );
    let obs =
        simulate::draw_obs(&chain.state.y_ha, chain.params.tau_w, design.n_obs, &mut chain.rng);
    let data = EnsembleDataset::new(
        design.grid.clone(),
        runs_h,
        runs_f,
        obs,
        design.model_names.clone(),
    )?;
    chain.replace_data(data)
}

/// Run the getting-it-right comparison on a small design.
pub fn geweke_test(
    design: &SimulationDesign,
    priors: &PriorConfig,
    cfg: &GewekeConfig,
    monitors: &[Monitor],
) -> Result<GewekeReport> {
    priors.validate()?;
    let rounds = cfg.rounds;
    let k = monitors.len();

    // Marginal-conditional stream: independent forward draws.
    let mut rng_m = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut marginal = vec![Vec::with_capacity(rounds); k];
    for _ in 0..rounds {
        let (state, params, data) =
            forward_draw(design, priors, cfg.rescale_v_in_kernel, &mut rng_m)?;
        for (series, monitor) in marginal.iter_mut().zip(monitors) {
            series.push(monitor.eval(&state, &params, &data));
        }
    }

    // Successive-conditional stream: sweep, then regenerate data.
    let mut rng_s = ChaCha20Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed);
    let (state0, params0, data0) =
        forward_draw(design, priors, cfg.rescale_v_in_kernel, &mut rng_s)?;
    let chain_cfg = ChainConfig {
        iterations: rounds.max(1) * cfg.sweeps_per_round.max(1) + 1,
        burn_in: 0, // fixed kernel: no step adaptation inside the test
        thin: 1,
        seed: cfg.seed ^ 0xc4a1,
        mh_initial_step: 0.5,
        variant: ModelVariant::Full,
        kappa: design.truth.kappa,
        v_rescale: if cfg.rescale_v_in_kernel { VRescale::InKernel } else { VRescale::Off },
        chi_scheme: cfg.chi_scheme,
        ..ChainConfig::default()
    };
    let mut chain = Chain::from_parts(data0, state0, params0, chain_cfg, priors.clone())?;
    chain.set_fault(cfg.fault);

    let mut successive = vec![Vec::with_capacity(rounds); k];
    for _ in 0..rounds {
        if cfg.sweeps_per_round == 0 {
            let (state, params, data) =
                forward_draw(design, priors, cfg.rescale_v_in_kernel, &mut chain.rng)?;
            chain.replace_data(data)?;
            chain.set_state(state, params)?;
        } else {
            for _ in 0..cfg.sweeps_per_round {
                chain.step()?;
            }
            regenerate_data(&mut chain, design)?;
        }
        for (series, monitor) in successive.iter_mut().zip(monitors) {
            series.push(monitor.eval(&chain.state, &chain.params, &chain.data));
        }
    }

    let mut out = Vec::with_capacity(k);
    for ((monitor, m_series), s_series) in monitors.iter().zip(&marginal).zip(&successive) {
        let nf = rounds as f64;
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        let var = |xs: &[f64], mu: f64| {
            xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
        };
        let m_mean = mean(m_series);
        let s_mean = mean(s_series);
        let m_var = var(m_series, m_mean);
        let s_var = var(s_series, s_mean);
        // Marginal draws are independent; the successive stream is a
        // Markov chain, so its standard error uses the effective size.
        let s_ess = effective_sample_size(s_series)?.ess.max(2.0);
        let se = (m_var / nf + s_var / s_ess).sqrt();
        let z = if se > 0.0 { (m_mean - s_mean) / se } else { 0.0 };
        out.push(MonitorZ {
            name: monitor.name(),
            z,
            marginal_mean: m_mean,
            successive_mean: s_mean,
            pass: z.abs() < cfg.z_limit,
        });
    }
    Ok(GewekeReport { monitors: out, rounds })
}

/// The small design the correctness suites use: 3x3 grid, two models, two
/// runs per model and period, two observation sets.
pub fn geweke_design() -> SimulationDesign {
    let mut design = simulate::desk_design(3, 2, 2, 2);
    design.truth.kappa = 1.0;
    design
}
