//! `fit`: run one or more chains against a manifest dataset and write
//! chain container files.

use std::path::{Path, PathBuf};
use std::time::Instant;

use climens_core::model::ModelVariant;
use climens_core::sampler::run_chain;

use crate::chainfile::write_chain;
use crate::config::parse_config;
use crate::errors::{CliError, CliResult};
use crate::manifest::{load_dataset, Manifest};

const STAGE: &str = "fit";

pub fn run(
    manifest_path: &Path,
    config_path: &Path,
    variant: &str,
    out: &Path,
    chains_flag: Option<usize>,
) -> CliResult<()> {
    let variant = ModelVariant::parse(variant).map_err(|e| CliError::input(STAGE, e))?;
    let mut cfg = parse_config(config_path)?;
    cfg.chain.variant = variant;
    if let Some(k) = chains_flag {
        if k == 0 {
            return Err(CliError::input(STAGE, "--chains must be at least 1"));
        }
        cfg.chains = k;
    }

    let (manifest, base) = Manifest::load(manifest_path)?;
    let data = load_dataset(&manifest, &base, cfg.metric)?;
    println!(
        "fit: {} sites, {} models, {} runs, {} observation sets, variant {}",
        data.n_sites(),
        data.n_models(),
        data.total_runs_h() + data.total_runs_f(),
        data.n_obs(),
        variant.name()
    );

    let started = Instant::now();
    let k = cfg.chains;
    let outputs: Vec<CliResult<_>> = std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(k);
        for i in 0..k {
            let mut chain_cfg = cfg.chain.clone();
            chain_cfg.seed = cfg.chain.seed.wrapping_add(i as u64);
            let data = &data;
            let priors = cfg.priors.clone();
            handles.push(scope.spawn(move || {
                run_chain(data, chain_cfg, priors)
                    .map_err(|e| CliError::failure(STAGE, e))
            }));
        }
        handles.into_iter().map(|h| h.join().expect("chain thread")).collect()
    });

    let grid_sites = data.grid().sites().to_vec();
    for (i, result) in outputs.into_iter().enumerate() {
        let output = result?;
        let path = if k == 1 { out.to_path_buf() } else { indexed_path(out, i) };
        write_chain(&path, &output, &grid_sites)?;
        println!(
            "fit: chain {} (seed {}) -> {} ({} stored draws)",
            i,
            output.config.seed,
            path.display(),
            output.draws.len()
        );
        if i == 0 {
            println!("fit: acceptance rates");
            for a in &output.acceptance {
                println!(
                    "  {:14} {:6.3} ({} / {} proposals, final step {:.4})",
                    a.name,
                    a.rate(),
                    a.accepts,
                    a.proposals,
                    a.final_step
                );
            }
        }
    }
    println!("fit: wall time {:.1?}", started.elapsed());
    Ok(())
}

fn indexed_path(out: &Path, i: usize) -> PathBuf {
    match (out.file_stem(), out.extension()) {
        (Some(stem), Some(ext)) => out.with_file_name(format!(
            "{}_{i}.{}",
            stem.to_string_lossy(),
            ext.to_string_lossy()
        )),
        _ => out.with_file_name(format!("{}_{i}", out.to_string_lossy())),
    }
}
