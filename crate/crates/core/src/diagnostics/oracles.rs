//! Brute-force conditional oracles.
//!
//! Every scalar full conditional is checked against a normalized 1-D grid
//! evaluation of exp(joint log-density): conjugate draws by KS distance,
//! Metropolis chains by total-variation distance on a binned histogram.
//! Every Gaussian block update is checked against the finite-difference
//! gradient and negative Hessian of the joint log-density, which are exact
//! for these blocks because the density is quadratic in each of them.

use nalgebra::{DMatrix, DVector};

use crate::model::{
    log_joint_density, EnsembleDataset, HyperParams, LatentState, ModelVariant, PriorConfig,
};
use crate::sampler::{Chain, ChainConfig, ChiUpdateScheme};
use crate::simulate::{self, SimulationDesign};
use crate::Result;

#[derive(Debug, Clone)]
pub struct OracleConfig {
    pub seed: u64,
    /// Draws kept per parameter.
    pub draws: usize,
    /// Extra Metropolis steps taken per kept draw to cut autocorrelation.
    pub mh_thin: usize,
    pub ks_threshold: f64,
    pub tv_threshold: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { seed: 0, draws: 10_000, mh_thin: 5, ks_threshold: 0.02, tv_threshold: 0.05 }
    }
}

#[derive(Debug, Clone)]
pub struct OracleOutcome {
    pub name: String,
    pub statistic: f64,
    pub threshold: f64,
    pub kind: &'static str,
    pub pass: bool,
}

#[derive(Debug, Clone, Default)]
pub struct OracleReport {
    pub outcomes: Vec<OracleOutcome>,
}

impl OracleReport {
    pub fn all_pass(&self) -> bool {
        self.outcomes.iter().all(|o| o.pass)
    }

    pub fn failures(&self) -> Vec<&OracleOutcome> {
        self.outcomes.iter().filter(|o| !o.pass).collect()
    }
}

/// The scalar parameters the battery exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Target {
    TauW,
    PhiHa,
    PhiFa,
    PhiH,
    PhiF,
    TauH,
    TauF,
    PhiHm(usize),
    PhiFm(usize),
    Beta,
    GammaH,
    GammaF,
    GammaHm(usize),
    GammaFm(usize),
    NuH,
    NuF,
}

impl Target {
    fn name(&self) -> String {
        match self {
            Target::TauW => "tau_w".into(),
            Target::PhiHa => "phi_ha".into(),
            Target::PhiFa => "phi_fa".into(),
            Target::PhiH => "phi_h".into(),
            Target::PhiF => "phi_f".into(),
            Target::TauH => "tau_h".into(),
            Target::TauF => "tau_f".into(),
            Target::PhiHm(m) => format!("phi_hm[{m}]"),
            Target::PhiFm(m) => format!("phi_fm[{m}]"),
            Target::Beta => "beta".into(),
            Target::GammaH => "gamma_h".into(),
            Target::GammaF => "gamma_f".into(),
            Target::GammaHm(m) => format!("gamma_hm[{m}]"),
            Target::GammaFm(m) => format!("gamma_fm[{m}]"),
            Target::NuH => "nu_h".into(),
            Target::NuF => "nu_f".into(),
        }
    }

    fn is_mh(&self) -> bool {
        matches!(
            self,
            Target::GammaH
                | Target::GammaF
                | Target::GammaHm(_)
                | Target::GammaFm(_)
                | Target::NuH
                | Target::NuF
        )
    }

    fn get(&self, p: &HyperParams) -> f64 {
        match self {
            Target::TauW => p.tau_w,
            Target::PhiHa => p.phi_ha,
            Target::PhiFa => p.phi_fa,
            Target::PhiH => p.phi_h,
            Target::PhiF => p.phi_f,
            Target::TauH => p.tau_h,
            Target::TauF => p.tau_f,
            Target::PhiHm(m) => p.phi_hm[*m],
            Target::PhiFm(m) => p.phi_fm[*m],
            Target::Beta => p.beta,
            Target::GammaH => p.gamma_h,
            Target::GammaF => p.gamma_f,
            Target::GammaHm(m) => p.gamma_hm[*m],
            Target::GammaFm(m) => p.gamma_fm[*m],
            Target::NuH => p.nu_h,
            Target::NuF => p.nu_f,
        }
    }

    fn set(&self, p: &mut HyperParams, x: f64) {
        match self {
            Target::TauW => p.tau_w = x,
            Target::PhiHa => p.phi_ha = x,
            Target::PhiFa => p.phi_fa = x,
            Target::PhiH => p.phi_h = x,
            Target::PhiF => p.phi_f = x,
            Target::TauH => p.tau_h = x,
            Target::TauF => p.tau_f = x,
            Target::PhiHm(m) => p.phi_hm[*m] = x,
            Target::PhiFm(m) => p.phi_fm[*m] = x,
            Target::Beta => p.beta = x,
            Target::GammaH => p.gamma_h = x,
            Target::GammaF => p.gamma_f = x,
            Target::GammaHm(m) => p.gamma_hm[*m] = x,
            Target::GammaFm(m) => p.gamma_fm[*m] = x,
            Target::NuH => p.nu_h = x,
            Target::NuF => p.nu_f = x,
        }
    }

    fn update(&self, chain: &mut Chain) -> Result<()> {
        match self {
            Target::TauW => chain.update_tau_w(),
            Target::PhiHa => chain.update_phi_ha(),
            Target::PhiFa => chain.update_phi_fa(),
            Target::PhiH => chain.update_phi_h(),
            Target::PhiF => chain.update_phi_f(),
            Target::TauH => chain.update_tau_h(),
            Target::TauF => chain.update_tau_f(),
            Target::PhiHm(m) => chain.update_phi_hm(*m),
            Target::PhiFm(m) => chain.update_phi_fm(*m),
            Target::Beta => chain.update_beta(),
            Target::GammaH => chain.update_gamma_h(),
            Target::GammaF => chain.update_gamma_f(),
            Target::GammaHm(m) => chain.update_gamma_hm(*m),
            Target::GammaFm(m) => chain.update_gamma_fm(*m),
            Target::NuH => chain.update_nu_h(),
            Target::NuF => chain.update_nu_f(),
        }
    }
}

pub(crate) type BatteryInstance = (EnsembleDataset, LatentState, HyperParams, PriorConfig);

/// Small instance shared by the oracle batteries: 2x2 grid, three models
/// with non-trivial inter-model correlation, two runs per model, two
/// observation sets, compact range support.
pub(crate) fn battery_instance(seed: u64) -> Result<BatteryInstance> {
    let priors = PriorConfig {
        uniform_lower: 0.05,
        uniform_upper: 3.0,
        ..PriorConfig::default()
    };
    let design = small_design(seed);
    let (data, truth) = simulate::generate(&design)?;
    Ok((data, truth.latent, truth.params, priors))
}

fn small_design(seed: u64) -> SimulationDesign {
    let mut design = simulate::desk_design(2, 3, 2, 2);
    design.truth.nu_h = 8.0;
    design.truth.nu_f = 6.0;
    design.truth.phi_h = 4.0;
    design.truth.phi_f = 5.0;
    design.seed = seed;
    design
}

fn battery_chain_config(seed: u64) -> ChainConfig {
    ChainConfig {
        iterations: 2,
        burn_in: 0, // no step adaptation: the kernel must stay fixed
        thin: 1,
        seed,
        mh_initial_step: 0.6,
        variant: ModelVariant::Full,
        chi_scheme: ChiUpdateScheme::FullConditional,
        ..ChainConfig::default()
    }
}

/// Grid of the conditional log-density of `target` with all other state
/// fixed, normalized on [lo, hi]; returns (xs, cdf) with cdf[last] = 1.
#[allow(clippy::too_many_arguments)]
fn conditional_grid_cdf(
    data: &EnsembleDataset,
    state: &LatentState,
    params: &HyperParams,
    priors: &PriorConfig,
    target: Target,
    lo: f64,
    hi: f64,
    points: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let xs: Vec<f64> =
        (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect();
    let mut logps = Vec::with_capacity(points);
    for &x in &xs {
        let mut p = params.clone();
        target.set(&mut p, x);
        logps.push(log_joint_density(data, state, &p, ModelVariant::Full, priors)?);
    }
    let max = logps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ps: Vec<f64> = logps.iter().map(|l| (l - max).exp()).collect();
    let mut cdf = vec![0.0; points];
    for i in 1..points {
        cdf[i] = cdf[i - 1] + 0.5 * (ps[i] + ps[i - 1]);
    }
    let total = cdf[points - 1];
    for c in cdf.iter_mut() {
        *c /= total;
    }
    Ok((xs, cdf))
}

fn interp_cdf(xs: &[f64], cdf: &[f64], x: f64) -> f64 {
    let lo = xs[0];
    let hi = xs[xs.len() - 1];
    if x <= lo {
        return 0.0;
    }
    if x >= hi {
        return 1.0;
    }
    let t = (x - lo) / (hi - lo) * (xs.len() - 1) as f64;
    let i = t.floor() as usize;
    let frac = t - i as f64;
    cdf[i] + frac * (cdf[i + 1] - cdf[i])
}

fn ks_distance(sorted_draws: &[f64], xs: &[f64], cdf: &[f64]) -> f64 {
    let n = sorted_draws.len() as f64;
    let mut ks = 0.0f64;
    for (k, &d) in sorted_draws.iter().enumerate() {
        let model = interp_cdf(xs, cdf, d);
        let emp_hi = (k + 1) as f64 / n;
        let emp_lo = k as f64 / n;
        ks = ks.max((emp_hi - model).abs()).max((emp_lo - model).abs());
    }
    ks
}

fn tv_distance(draws: &[f64], xs: &[f64], cdf: &[f64], lo: f64, hi: f64, bins: usize) -> f64 {
    let mut counts = vec![0usize; bins];
    for &d in draws {
        let b = (((d - lo) / (hi - lo)) * bins as f64).floor().clamp(0.0, bins as f64 - 1.0);
        counts[b as usize] += 1;
    }
    let n = draws.len() as f64;
    let mut tv = 0.0;
    for (b, &c) in counts.iter().enumerate() {
        let a = lo + (hi - lo) * b as f64 / bins as f64;
        let z = lo + (hi - lo) * (b + 1) as f64 / bins as f64;
        let p_model = interp_cdf(xs, cdf, z) - interp_cdf(xs, cdf, a);
        tv += (c as f64 / n - p_model).abs();
    }
    0.5 * tv
}

/// Check every scalar full conditional against the brute-force grid.
pub fn scalar_conditional_battery(cfg: &OracleConfig) -> Result<OracleReport> {
    let (data, state0, params0, priors) = battery_instance(cfg.seed)?;
    let targets = vec![
        Target::TauW,
        Target::PhiHa,
        Target::PhiFa,
        Target::PhiH,
        Target::PhiF,
        Target::TauH,
        Target::TauF,
        Target::PhiHm(0),
        Target::PhiHm(1),
        Target::PhiFm(0),
        Target::Beta,
        Target::GammaH,
        Target::GammaF,
        Target::GammaHm(0),
        Target::GammaFm(0),
        Target::NuH,
        Target::NuF,
    ];

    let mut report = OracleReport::default();
    for (t_idx, target) in targets.iter().enumerate() {
        let mut chain = Chain::from_parts(
            data.clone(),
            state0.clone(),
            params0.clone(),
            battery_chain_config(cfg.seed ^ (t_idx as u64) << 8),
            priors.clone(),
        )?;

        let mut draws = Vec::with_capacity(cfg.draws);
        if target.is_mh() {
            // Warm the Metropolis chain for this one coordinate, then thin.
            for _ in 0..2_000 {
                target.update(&mut chain)?;
            }
            for _ in 0..cfg.draws {
                for _ in 0..cfg.mh_thin {
                    target.update(&mut chain)?;
                }
                draws.push(target.get(chain.params()));
            }
        } else {
            for _ in 0..cfg.draws {
                target.update(&mut chain)?;
                draws.push(target.get(chain.params()));
            }
        }

        // Window covering the draw range, clipped to the prior support.
        let dmin = draws.iter().cloned().fold(f64::INFINITY, f64::min);
        let dmax = draws.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = (dmax - dmin).max(1e-12);
        let (mut lo, mut hi) = (dmin - 0.2 * span, dmax + 0.2 * span);
        match target {
            Target::Beta => {}
            Target::GammaH | Target::GammaF | Target::GammaHm(_) | Target::GammaFm(_) => {
                let (slo, shi) = priors.gamma_support();
                lo = lo.max(slo + 1e-9);
                hi = hi.min(shi);
            }
            _ => lo = lo.max(1e-12),
        }

        let (xs, cdf) =
            conditional_grid_cdf(&data, &state0, &params0, &priors, *target, lo, hi, 3_001)?;

        let outcome = if target.is_mh() {
            let tv = tv_distance(&draws, &xs, &cdf, lo, hi, 20);
            OracleOutcome {
                name: target.name(),
                statistic: tv,
                threshold: cfg.tv_threshold,
                kind: "tv",
                pass: tv < cfg.tv_threshold,
            }
        } else {
            let mut sorted = draws;
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let ks = ks_distance(&sorted, &xs, &cdf);
            OracleOutcome {
                name: target.name(),
                statistic: ks,
                threshold: cfg.ks_threshold,
                kind: "ks",
                pass: ks < cfg.ks_threshold,
            }
        };
        report.outcomes.push(outcome);
    }
    Ok(report)
}

// --- Gaussian block checks ---------------------------------------------

#[derive(Debug, Clone, Copy)]
enum Block {
    YFa,
    YHa,
    YF,
    YH,
    XF(usize),
    XH(usize),
    MuF,
    MuH,
    Beta,
}

impl Block {
    fn name(&self) -> String {
        match self {
            Block::YFa => "y_fa".into(),
            Block::YHa => "y_ha".into(),
            Block::YF => "y_f".into(),
            Block::YH => "y_h".into(),
            Block::XF(m) => format!("x_fm[{m}]"),
            Block::XH(m) => format!("x_hm[{m}]"),
            Block::MuF => "mu_f".into(),
            Block::MuH => "mu_h".into(),
            Block::Beta => "beta".into(),
        }
    }

    fn dim(&self, n: usize) -> usize {
        match self {
            Block::Beta => 1,
            _ => n,
        }
    }

    fn write(&self, state: &mut LatentState, params: &mut HyperParams, z: &DVector<f64>) {
        match self {
            Block::YFa => state.y_fa = z.clone(),
            Block::YHa => state.y_ha = z.clone(),
            Block::YF => state.y_f = z.clone(),
            Block::YH => state.y_h = z.clone(),
            Block::XF(m) => state.x_f.set_column(*m, z),
            Block::XH(m) => state.x_h.set_column(*m, z),
            Block::MuF => state.mu_f = z.clone(),
            Block::MuH => state.mu_h = z.clone(),
            Block::Beta => params.beta = z[0],
        }
    }

    fn read(&self, state: &LatentState, params: &HyperParams) -> DVector<f64> {
        match self {
            Block::YFa => state.y_fa.clone(),
            Block::YHa => state.y_ha.clone(),
            Block::YF => state.y_f.clone(),
            Block::YH => state.y_h.clone(),
            Block::XF(m) => state.x_f.column(*m).into_owned(),
            Block::XH(m) => state.x_h.column(*m).into_owned(),
            Block::MuF => state.mu_f.clone(),
            Block::MuH => state.mu_h.clone(),
            Block::Beta => DVector::from_element(1, params.beta),
        }
    }

    fn moments(&self, chain: &Chain) -> Result<(DVector<f64>, DMatrix<f64>)> {
        Ok(match self {
            Block::YFa => chain.moments_y_fa(),
            Block::YHa => chain.moments_y_ha(),
            Block::YF => chain.moments_y_f(),
            Block::YH => chain.moments_y_h(),
            Block::XF(m) => chain.moments_x_fm(*m)?,
            Block::XH(m) => chain.moments_x_hm(*m)?,
            Block::MuF => chain.moments_mu_f(),
            Block::MuH => chain.moments_mu_h(),
            Block::Beta => {
                let (v, q) = chain.moments_beta();
                (DVector::from_element(1, v), DMatrix::from_element(1, 1, q))
            }
        })
    }
}

/// Check each Gaussian block's conditional (mean, precision) against the
/// finite-difference gradient and negative Hessian of the log-density at
/// three perturbed points.
pub fn gaussian_block_battery(seed: u64) -> Result<OracleReport> {
    use rand::prelude::*;
    let (data, state0, params0, priors) = battery_instance(seed)?;
    let n = data.n_sites();
    let m_count = data.n_models();
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed ^ 0xb10c);

    let mut blocks = vec![Block::YFa, Block::YHa, Block::YF, Block::YH];
    for m in 0..m_count {
        blocks.push(Block::XF(m));
        blocks.push(Block::XH(m));
    }
    blocks.push(Block::MuF);
    blocks.push(Block::MuH);
    blocks.push(Block::Beta);

    let mut report = OracleReport::default();
    const REL_TOL: f64 = 1e-6;
    const H: f64 = 5e-3;

    for block in blocks {
        let dim = block.dim(n);
        let mut worst: f64 = 0.0;
        for _point in 0..3 {
            let mut state = state0.clone();
            let mut params = params0.clone();
            let base = block.read(&state, &params);
            let z0 = &base
                + DVector::from_fn(dim, |_, _| {
                    0.5 * rng.sample::<f64, _>(rand_distr::StandardNormal)
                });
            block.write(&mut state, &mut params, &z0);

            let chain = Chain::from_parts(
                data.clone(),
                state.clone(),
                params.clone(),
                battery_chain_config(seed),
                priors.clone(),
            )?;
            let (v, q) = block.moments(&chain)?;

            let f = |z: &DVector<f64>| -> Result<f64> {
                let mut s = state.clone();
                let mut p = params.clone();
                block.write(&mut s, &mut p, z);
                log_joint_density(&data, &s, &p, ModelVariant::Full, &priors)
            };

            // Central differences; exact for a quadratic up to roundoff.
            let mut grad = DVector::zeros(dim);
            for i in 0..dim {
                let mut zp = z0.clone();
                let mut zm = z0.clone();
                zp[i] += H;
                zm[i] -= H;
                grad[i] = (f(&zp)? - f(&zm)?) / (2.0 * H);
            }
            let mut hess = DMatrix::zeros(dim, dim);
            for i in 0..dim {
                for j in 0..=i {
                    let mut zpp = z0.clone();
                    let mut zpm = z0.clone();
                    let mut zmp = z0.clone();
                    let mut zmm = z0.clone();
                    zpp[i] += H;
                    zpp[j] += H;
                    zpm[i] += H;
                    zpm[j] -= H;
                    zmp[i] -= H;
                    zmp[j] += H;
                    zmm[i] -= H;
                    zmm[j] -= H;
                    let val = (f(&zpp)? - f(&zpm)? - f(&zmp)? + f(&zmm)?) / (4.0 * H * H);
                    hess[(i, j)] = val;
                    hess[(j, i)] = val;
                }
            }

            let q_scale = q.abs().max();
            let q_err = (&q + &hess).abs().max() / q_scale;
            // v = gradient + Q z at any point of a Gaussian block.
            let v_pred = &grad + &q * &z0;
            let v_err = (&v - &v_pred).abs().max() / v.abs().max().max(1.0);
            worst = worst.max(q_err).max(v_err);
        }
        report.outcomes.push(OracleOutcome {
            name: block.name(),
            statistic: worst,
            threshold: REL_TOL,
            kind: "rel_err",
            pass: worst < REL_TOL,
        });
    }
    Ok(report)
}
