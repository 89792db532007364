//! On-disk dataset layout: a JSON manifest referencing a grid file, field
//! files per model run and observation set, and optional truth files.
//!
//! Field files are CSV with header `x,y,value`, one row per site, in the
//! exact site order fixed by the grid file. Floats are written in Rust's
//! shortest round-trip form, so a write/read cycle is bit-exact.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use climens_core::covariance::{Grid, Metric};
use climens_core::model::EnsembleDataset;

use crate::errors::{CliError, CliResult};

const STAGE: &str = "manifest";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelEntry {
    pub name: String,
    pub historical: Vec<String>,
    pub future: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthFiles {
    pub y_h: String,
    pub y_f: String,
    pub mu_h: String,
    pub mu_f: String,
    pub params: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub grid: String,
    pub models: Vec<ModelEntry>,
    pub observations: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<TruthFiles>,
}

impl Manifest {
    pub fn load(path: &Path) -> CliResult<(Manifest, PathBuf)> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::input(STAGE, format!("cannot read {}: {e}", path.display())))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| CliError::input(STAGE, format!("{} is not valid: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok((manifest, base))
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::input(STAGE, e))?;
        fs::write(path, text)
            .map_err(|e| CliError::input(STAGE, format!("cannot write {}: {e}", path.display())))
    }
}

/// Write the grid file: header `x,y`, one row per site.
pub fn write_grid(path: &Path, grid: &Grid) -> CliResult<()> {
    let mut out = String::from("x,y\n");
    for s in grid.sites() {
        out.push_str(&format!("{},{}\n", s[0], s[1]));
    }
    fs::write(path, out)
        .map_err(|e| CliError::input(STAGE, format!("cannot write {}: {e}", path.display())))
}

pub fn read_grid(path: &Path, metric: Metric) -> CliResult<Grid> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::input(STAGE, format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("x,y") => {}
        other => {
            return Err(CliError::input(
                STAGE,
                format!("{}: expected header `x,y`, found {other:?}", path.display()),
            ))
        }
    }
    let mut sites = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let x = parse_float(parts.next(), path, i)?;
        let y = parse_float(parts.next(), path, i)?;
        if parts.next().is_some() {
            return Err(CliError::input(
                STAGE,
                format!("{}: row {} has extra columns", path.display(), i + 2),
            ));
        }
        sites.push([x, y]);
    }
    Grid::new(sites, metric).map_err(|e| CliError::input(STAGE, e))
}

fn parse_float(part: Option<&str>, path: &Path, row: usize) -> CliResult<f64> {
    part.ok_or_else(|| {
        CliError::input(STAGE, format!("{}: row {} is missing a column", path.display(), row + 2))
    })?
    .trim()
    .parse::<f64>()
    .map_err(|e| CliError::input(STAGE, format!("{}: row {}: {e}", path.display(), row + 2)))
}

/// Write one field file in grid order.
pub fn write_field(path: &Path, grid: &Grid, values: &DVector<f64>) -> CliResult<()> {
    assert_eq!(values.len(), grid.n());
    let mut out = String::from("x,y,value\n");
    for (s, v) in grid.sites().iter().zip(values.iter()) {
        out.push_str(&format!("{},{},{}\n", s[0], s[1], v));
    }
    fs::write(path, out)
        .map_err(|e| CliError::input(STAGE, format!("cannot write {}: {e}", path.display())))
}

/// Read one field file, checking that the site coordinates match the grid
/// exactly and in order.
pub fn read_field(path: &Path, grid: &Grid) -> CliResult<DVector<f64>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::input(STAGE, format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("x,y,value") => {}
        other => {
            return Err(CliError::input(
                STAGE,
                format!("{}: expected header `x,y,value`, found {other:?}", path.display()),
            ))
        }
    }
    let mut values = Vec::with_capacity(grid.n());
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        if i >= grid.n() {
            return Err(CliError::input(
                STAGE,
                format!("{}: more rows than grid sites ({})", path.display(), grid.n()),
            ));
        }
        let mut parts = line.split(',');
        let x = parse_float(parts.next(), path, i)?;
        let y = parse_float(parts.next(), path, i)?;
        let v = parse_float(parts.next(), path, i)?;
        let site = grid.sites()[i];
        if x != site[0] || y != site[1] {
            return Err(CliError::input(
                STAGE,
                format!(
                    "{}: row {} coordinates ({x}, {y}) do not match grid site ({}, {})",
                    path.display(),
                    i + 2,
                    site[0],
                    site[1]
                ),
            ));
        }
        values.push(v);
    }
    if values.len() != grid.n() {
        return Err(CliError::input(
            STAGE,
            format!("{}: {} rows for {} grid sites", path.display(), values.len(), grid.n()),
        ));
    }
    Ok(DVector::from_vec(values))
}

/// Load the full dataset a manifest describes.
pub fn load_dataset(
    manifest: &Manifest,
    base: &Path,
    metric: Metric,
) -> CliResult<EnsembleDataset> {
    let grid = read_grid(&base.join(&manifest.grid), metric)?;
    let mut runs_h = Vec::with_capacity(manifest.models.len());
    let mut runs_f = Vec::with_capacity(manifest.models.len());
    let mut names = Vec::with_capacity(manifest.models.len());
    for entry in &manifest.models {
        let h: CliResult<Vec<DVector<f64>>> =
            entry.historical.iter().map(|f| read_field(&base.join(f), &grid)).collect();
        let f: CliResult<Vec<DVector<f64>>> =
            entry.future.iter().map(|f| read_field(&base.join(f), &grid)).collect();
        runs_h.push(h?);
        runs_f.push(f?);
        names.push(entry.name.clone());
    }
    let obs: CliResult<Vec<DVector<f64>>> =
        manifest.observations.iter().map(|f| read_field(&base.join(f), &grid)).collect();
    EnsembleDataset::new(grid, runs_h, runs_f, obs?, names)
        .map_err(|e| CliError::input(STAGE, e))
}
