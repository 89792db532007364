//! `simulate`: generate a synthetic dataset and write it as a manifest
//! tree (grid, per-run field files, observations, truth).

use std::fs;
use std::path::Path;

use serde::Serialize;

use climens_core::model::HyperParams;
use climens_core::simulate::{self, SimulationDesign};

use crate::errors::{CliError, CliResult};
use crate::manifest::{write_field, write_grid, Manifest, ModelEntry, TruthFiles};

const STAGE: &str = "simulate";

/// Serializable echo of the realized truth parameters.
#[derive(Serialize)]
struct TruthParamsFile {
    beta: f64,
    tau_h: f64,
    tau_f: f64,
    tau_w: f64,
    gamma_h: f64,
    gamma_f: f64,
    nu_h: f64,
    nu_f: f64,
    phi_h: f64,
    phi_f: f64,
    phi_ha: f64,
    phi_fa: f64,
    kappa: f64,
    v: Vec<Vec<f64>>,
    phi_hm: Vec<f64>,
    phi_fm: Vec<f64>,
    gamma_hm: Vec<f64>,
    gamma_fm: Vec<f64>,
}

impl TruthParamsFile {
    fn from_params(p: &HyperParams) -> Self {
        let m = p.phi_hm.len();
        TruthParamsFile {
            beta: p.beta,
            tau_h: p.tau_h,
            tau_f: p.tau_f,
            tau_w: p.tau_w,
            gamma_h: p.gamma_h,
            gamma_f: p.gamma_f,
            nu_h: p.nu_h,
            nu_f: p.nu_f,
            phi_h: p.phi_h,
            phi_f: p.phi_f,
            phi_ha: p.phi_ha,
            phi_fa: p.phi_fa,
            kappa: p.kappa,
            v: (0..m).map(|i| (0..m).map(|j| p.v[(i, j)]).collect()).collect(),
            phi_hm: p.phi_hm.clone(),
            phi_fm: p.phi_fm.clone(),
            gamma_hm: p.gamma_hm.clone(),
            gamma_fm: p.gamma_fm.clone(),
        }
    }
}

fn parse_custom_design(path: &Path) -> CliResult<SimulationDesign> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::input(STAGE, format!("cannot read {}: {e}", path.display())))?;
    let mut grid_side = 8usize;
    let mut models = 6usize;
    let mut runs_h = 3usize;
    let mut runs_f = 3usize;
    let mut n_obs = 3usize;
    let mut overrides: Vec<(String, f64)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::input(STAGE, format!("design line {}: expected `key = value`", lineno + 1))
        })?;
        let key = key.trim();
        let value = value.trim();
        let bad =
            |e: &dyn std::fmt::Display| CliError::input(STAGE, format!("design {key}: {e}"));
        match key {
            "grid_side" => grid_side = value.parse().map_err(|e| bad(&e))?,
            "models" => models = value.parse().map_err(|e| bad(&e))?,
            "runs" => {
                runs_h = value.parse().map_err(|e| bad(&e))?;
                runs_f = runs_h;
            }
            "runs_h" => runs_h = value.parse().map_err(|e| bad(&e))?,
            "runs_f" => runs_f = value.parse().map_err(|e| bad(&e))?,
            "n_obs" => n_obs = value.parse().map_err(|e| bad(&e))?,
            "beta" | "tau_h" | "tau_f" | "tau_w" | "gamma_h" | "gamma_f" | "nu_h" | "nu_f"
            | "phi_h" | "phi_f" | "phi_ha" | "phi_fa" | "kappa" => {
                overrides.push((key.to_string(), value.parse().map_err(|e| bad(&e))?));
            }
            other => {
                return Err(CliError::input(STAGE, format!("design: unknown key `{other}`")))
            }
        }
    }
    if models > 38 {
        return Err(CliError::input(STAGE, "custom designs support at most 38 models"));
    }
    let mut design = simulate::desk_design(grid_side, models, runs_h, n_obs);
    design.runs_f = vec![runs_f; models];
    for (key, v) in overrides {
        let t = &mut design.truth;
        match key.as_str() {
            "beta" => t.beta = v,
            "tau_h" => t.tau_h = v,
            "tau_f" => t.tau_f = v,
            "tau_w" => t.tau_w = v,
            "gamma_h" => t.gamma_h = v,
            "gamma_f" => t.gamma_f = v,
            "nu_h" => t.nu_h = v,
            "nu_f" => t.nu_f = v,
            "phi_h" => t.phi_h = v,
            "phi_f" => t.phi_f = v,
            "phi_ha" => t.phi_ha = v,
            "phi_fa" => t.phi_fa = v,
            "kappa" => t.kappa = v,
            _ => unreachable!(),
        }
    }
    Ok(design)
}

pub fn run(design_name: &str, config: Option<&Path>, seed: u64, out: &Path) -> CliResult<()> {
    let design = match design_name {
        "paper" => simulate::paper_design(),
        "cmip5" => simulate::cmip5_sized_design(),
        "custom" => {
            let path = config.ok_or_else(|| {
                CliError::input(STAGE, "--design custom requires --config <design file>")
            })?;
            parse_custom_design(path)?
        }
        other => {
            return Err(CliError::input(
                STAGE,
                format!("unknown design `{other}` (expected paper|cmip5|custom)"),
            ))
        }
    };
    let design = design.with_seed(seed);
    let (data, truth) =
        simulate::generate(&design).map_err(|e| CliError::input(STAGE, e))?;

    fs::create_dir_all(out)
        .map_err(|e| CliError::input(STAGE, format!("cannot create {}: {e}", out.display())))?;
    write_grid(&out.join("grid.csv"), data.grid())?;

    let mut models = Vec::new();
    for (m, name) in data.model_names().iter().enumerate() {
        let mut historical = Vec::new();
        for (r, run) in data.runs_h(m).iter().enumerate() {
            let file = format!("{name}_hist_{r}.csv");
            write_field(&out.join(&file), data.grid(), run)?;
            historical.push(file);
        }
        let mut future = Vec::new();
        for (r, run) in data.runs_f(m).iter().enumerate() {
            let file = format!("{name}_fut_{r}.csv");
            write_field(&out.join(&file), data.grid(), run)?;
            future.push(file);
        }
        models.push(ModelEntry { name: name.clone(), historical, future });
    }

    let mut observations = Vec::new();
    for (i, w) in data.obs().iter().enumerate() {
        let file = format!("obs_{i}.csv");
        write_field(&out.join(&file), data.grid(), w)?;
        observations.push(file);
    }

    for (file, field) in [
        ("truth_y_h.csv", &truth.latent.y_h),
        ("truth_y_f.csv", &truth.latent.y_f),
        ("truth_mu_h.csv", &truth.latent.mu_h),
        ("truth_mu_f.csv", &truth.latent.mu_f),
    ] {
        write_field(&out.join(file), data.grid(), field)?;
    }
    let params_json = serde_json::to_string_pretty(&TruthParamsFile::from_params(&truth.params))
        .map_err(|e| CliError::input(STAGE, e))?;
    fs::write(out.join("truth_params.json"), params_json)
        .map_err(|e| CliError::input(STAGE, e))?;

    let manifest = Manifest {
        grid: "grid.csv".to_string(),
        models,
        observations,
        truth: Some(TruthFiles {
            y_h: "truth_y_h.csv".into(),
            y_f: "truth_y_f.csv".into(),
            mu_h: "truth_mu_h.csv".into(),
            mu_f: "truth_mu_f.csv".into(),
            params: "truth_params.json".into(),
        }),
    };
    manifest.save(&out.join("manifest.json"))?;

    println!(
        "simulate: wrote {} models ({} historical + {} future runs), {} observation sets to {}",
        data.n_models(),
        data.total_runs_h(),
        data.total_runs_f(),
        data.n_obs(),
        out.display()
    );
    Ok(())
}
