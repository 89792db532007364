//! `summarize`: posterior summary tables from a chain file, optional
//! ensemble-mean quantile map, region-mean interval, and inter-model
//! correlation listing.

use std::fs;
use std::path::Path;

use climens_core::covariance::Metric;
use climens_core::diagnostics::export_trace;
use climens_core::summarize::{
    correlation_from_v, multi_model_mean, quantile_of_value, region_mean_ci, summarize,
    FieldSummary,
};

use crate::chainfile::read_chain;
use crate::errors::{CliError, CliResult};
use crate::manifest::{load_dataset, Manifest};

const STAGE: &str = "summarize";

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text)
        .map_err(|e| CliError::input(STAGE, format!("cannot write {}: {e}", path.display())))
}

fn field_csv(sites: &[[f64; 2]], s: &FieldSummary) -> String {
    let mut out = String::from("x,y,mean,sd,q05,q50,q95,q99\n");
    for (i, site) in sites.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            site[0], site[1], s.mean[i], s.sd[i], s.q05[i], s.q50[i], s.q95[i], s.q99[i]
        ));
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn run(
    chain_path: &Path,
    mmm_from: Option<&Path>,
    region_ci: bool,
    v_corr: bool,
    threshold: f64,
    traces: &[String],
    out: &Path,
) -> CliResult<()> {
    let (chain, header) = read_chain(chain_path)?;
    let summary = summarize(&chain).map_err(|e| CliError::input(STAGE, e))?;
    fs::create_dir_all(out)
        .map_err(|e| CliError::input(STAGE, format!("cannot create {}: {e}", out.display())))?;

    write_text(&out.join("summary_y_h.csv"), &field_csv(&header.grid_sites, &summary.y_h))?;
    write_text(&out.join("summary_y_f.csv"), &field_csv(&header.grid_sites, &summary.y_f))?;
    write_text(
        &out.join("beta.csv"),
        &format!(
            "mean,sd,q05,q50,q95\n{},{},{},{},{}\n",
            summary.beta.mean, summary.beta.sd, summary.beta.q05, summary.beta.q50, summary.beta.q95
        ),
    )?;
    println!(
        "summarize: {} draws, {} sites -> {}",
        chain.draws.len(),
        chain.n_sites,
        out.display()
    );

    if let Some(manifest_path) = mmm_from {
        let (manifest, base) = Manifest::load(manifest_path)?;
        let data = load_dataset(&manifest, &base, Metric::Euclidean)?;
        if data.n_sites() != chain.n_sites {
            return Err(CliError::input(
                STAGE,
                "manifest grid does not match the chain's site count",
            ));
        }
        let (mmm_h, mmm_f) = multi_model_mean(&data);
        let probs =
            quantile_of_value(&chain, &mmm_f).map_err(|e| CliError::input(STAGE, e))?;
        let mut csv = String::from("x,y,mmm_hist,mmm_fut,posterior_quantile_of_mmm_fut\n");
        for (i, site) in header.grid_sites.iter().enumerate() {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                site[0], site[1], mmm_h[i], mmm_f[i], probs[i]
            ));
        }
        write_text(&out.join("mmm_quantiles.csv"), &csv)?;
        println!("summarize: ensemble-mean quantile map -> mmm_quantiles.csv");
    }

    if region_ci {
        let ci = region_mean_ci(&chain, 0.90).map_err(|e| CliError::input(STAGE, e))?;
        write_text(
            &out.join("region_ci.csv"),
            &format!("mean,lower,upper\n{},{},{}\n", ci.mean, ci.lower, ci.upper),
        )?;
        println!(
            "summarize: region mean {:.4}, 90% interval [{:.4}, {:.4}]",
            ci.mean, ci.lower, ci.upper
        );
    }

    for name in traces {
        let series = export_trace(&chain, name).map_err(|e| CliError::input(STAGE, e))?;
        let mut csv = String::from("draw,value\n");
        for (i, v) in series.iter().enumerate() {
            csv.push_str(&format!("{i},{v}\n"));
        }
        let safe: String = name
            .chars()
            .map(|c| if c.is_alphanumeric() || c == '_' { c } else { '_' })
            .collect();
        write_text(&out.join(format!("trace_{safe}.csv")), &csv)?;
        println!("summarize: trace `{name}` -> trace_{safe}.csv ({} draws)", series.len());
    }

    if v_corr {
        let corr =
            correlation_from_v(&chain, threshold).map_err(|e| CliError::input(STAGE, e))?;
        let m = chain.n_models;
        let mut csv = String::from("model");
        for name in &chain.model_names {
            csv.push(',');
            csv.push_str(name);
        }
        csv.push('\n');
        for i in 0..m {
            csv.push_str(&chain.model_names[i]);
            for j in 0..m {
                csv.push_str(&format!(",{}", corr.from_mean_v[(i, j)]));
            }
            csv.push('\n');
        }
        write_text(&out.join("v_correlation.csv"), &csv)?;

        let mut pairs = String::from("model_1,model_2,correlation\n");
        for (a, b, c) in &corr.high_pairs {
            pairs.push_str(&format!("{a},{b},{c}\n"));
        }
        write_text(&out.join("v_high_pairs.csv"), &pairs)?;
        println!(
            "summarize: {} model pairs above correlation {threshold}",
            corr.high_pairs.len()
        );
    }
    Ok(())
}
