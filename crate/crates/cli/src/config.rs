//! Flat `key = value` run configuration. Unknown keys are hard errors so a
//! typo in a prior constant cannot silently fall back to a default.

use std::fs;
use std::path::Path;

use climens_core::covariance::Metric;
use climens_core::model::PriorConfig;
use climens_core::sampler::{ChainConfig, ChiUpdateScheme, VRescale};

use crate::errors::{CliError, CliResult};

const STAGE: &str = "config";

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub chain: ChainConfig,
    pub priors: PriorConfig,
    pub metric: Metric,
    pub chains: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            chain: ChainConfig::default(),
            priors: PriorConfig::default(),
            metric: Metric::Euclidean,
            chains: 1,
        }
    }
}

pub fn parse_config(path: &Path) -> CliResult<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::input(STAGE, format!("cannot read {}: {e}", path.display())))?;
    parse_config_text(&text).map_err(|e| {
        CliError::input(STAGE, format!("{}: {}", path.display(), e.message.trim_start_matches("config: ")))
    })
}

pub fn parse_config_text(text: &str) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::input(STAGE, format!("line {}: expected `key = value`", lineno + 1))
        })?;
        let key = key.trim();
        let value = value.trim();
        let bad = |e: &dyn std::fmt::Display| {
            CliError::input(STAGE, format!("line {}: {key}: {e}", lineno + 1))
        };
        macro_rules! num {
            ($t:ty) => {
                value.parse::<$t>().map_err(|e| bad(&e))?
            };
        }
        match key {
            "iterations" => cfg.chain.iterations = num!(usize),
            "burn_in" => cfg.chain.burn_in = num!(usize),
            "thin" => cfg.chain.thin = num!(usize),
            "seed" => cfg.chain.seed = num!(u64),
            "mh_initial_step" => cfg.chain.mh_initial_step = num!(f64),
            "adapt_target_acceptance" => cfg.chain.adapt_target_acceptance = num!(f64),
            "adapt_window" => cfg.chain.adapt_window = num!(u32),
            "kappa" => cfg.chain.kappa = num!(f64),
            "v_rescale" => cfg.chain.v_rescale = VRescale::parse(value).map_err(|e| bad(&e))?,
            "chi_scheme" => {
                cfg.chain.chi_scheme = match value {
                    "full" => ChiUpdateScheme::FullConditional,
                    "sequential" => ChiUpdateScheme::SequentialPartition,
                    other => return Err(bad(&format!("unknown scheme `{other}`"))),
                }
            }
            "metric" => cfg.metric = Metric::parse(value).map_err(|e| bad(&e))?,
            "chains" => cfg.chains = num!(usize),
            "gaussian_mean_variance" => cfg.priors.gaussian_mean_variance = num!(f64),
            "gamma_shape" => cfg.priors.gamma_shape = num!(f64),
            "gamma_rate" => cfg.priors.gamma_rate = num!(f64),
            "inv_gamma_shape" => cfg.priors.inv_gamma_shape = num!(f64),
            "inv_gamma_rate" => cfg.priors.inv_gamma_rate = num!(f64),
            "uniform_lower" => cfg.priors.uniform_lower = num!(f64),
            "uniform_upper" => cfg.priors.uniform_upper = num!(f64),
            "v_prior_d" => cfg.priors.v_prior_d = num!(u32),
            other => {
                return Err(CliError::input(
                    STAGE,
                    format!("line {}: unknown key `{other}`", lineno + 1),
                ))
            }
        }
    }
    if cfg.chains == 0 {
        return Err(CliError::input(STAGE, "chains must be at least 1"));
    }
    cfg.chain.validate().map_err(|e| CliError::input(STAGE, e))?;
    cfg.priors.validate().map_err(|e| CliError::input(STAGE, e))?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_known_keys_and_rejects_unknown() {
        let cfg = parse_config_text(
            "iterations = 200\nburn_in = 50\nthin = 2\nseed = 9\nkappa = 1.5\n# comment\nv_rescale = in-kernel\nchi_scheme = sequential\n",
        )
        .unwrap();
        assert_eq!(cfg.chain.iterations, 200);
        assert_eq!(cfg.chain.thin, 2);
        assert_eq!(cfg.chain.kappa, 1.5);
        assert_eq!(cfg.chain.v_rescale, VRescale::InKernel);
        assert_eq!(cfg.chain.chi_scheme, ChiUpdateScheme::SequentialPartition);

        let err = parse_config_text("iterations = 200\nburnin = 50\n").unwrap_err();
        assert_eq!(err.exit, 2);
        assert!(err.message.contains("unknown key `burnin`"), "{}", err.message);
    }

    #[test]
    fn rejects_invalid_values() {
        assert!(parse_config_text("iterations = ten\n").is_err());
        assert!(parse_config_text("iterations = 100\nburn_in = 100\n").is_err());
        assert!(parse_config_text("v_rescale = sometimes\n").is_err());
    }
}
