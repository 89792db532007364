//! Chain-quality and sampler-correctness tooling: effective sample size,
//! trace export, brute-force conditional oracles, and the
//! getting-it-right joint-distribution test.

mod geweke;
mod oracles;

pub use geweke::{
    default_monitors, geweke_design, geweke_priors, geweke_test, GewekeConfig, GewekeReport,
    Monitor, MonitorZ,
};
pub use oracles::{
    gaussian_block_battery, scalar_conditional_battery, OracleConfig, OracleOutcome, OracleReport,
};

use crate::sampler::ChainOutput;
use crate::{Error, Result};

/// Effective sample size with a degenerate-variance flag for constant
/// series (where ESS is defined as the draw count).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssResult {
    pub ess: f64,
    pub degenerate_variance: bool,
}

/// ESS via Geyer's initial-positive-sequence truncation: sum lag
/// autocorrelations in adjacent pairs until a pair sum goes non-positive.
pub fn effective_sample_size(draws: &[f64]) -> Result<EssResult> {
    let n = draws.len();
    if n < 10 {
        return Err(Error::TooFewDraws { need: 10, have: n });
    }
    let nf = n as f64;
    let mean = draws.iter().sum::<f64>() / nf;
    let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nf;
    let scale = draws.iter().map(|x| x.abs()).fold(0.0f64, f64::max).max(1.0);
    if var <= 1e-30 * scale * scale {
        return Ok(EssResult { ess: nf, degenerate_variance: true });
    }

    let rho = |lag: usize| -> f64 {
        let mut acc = 0.0;
        for i in 0..n - lag {
            acc += (draws[i] - mean) * (draws[i + lag] - mean);
        }
        acc / (nf * var)
    };

    let mut tau = 1.0;
    let mut lag = 1;
    while lag + 1 < n {
        let pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    Ok(EssResult { ess: (nf / tau).min(nf), degenerate_variance: false })
}

/// Ordered post-burn-in series for one recorded parameter.
///
/// Names follow the stored layout: scalars (`beta`, `tau_h`, ...), indexed
/// fields (`y_f[12]`, `phi_hm[3]`), and V entries (`v[0][1]`).
pub fn export_trace(chain: &ChainOutput, parameter: &str) -> Result<Vec<f64>> {
    chain.series(parameter)
}
