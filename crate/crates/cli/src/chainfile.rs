//! Chain container: one JSON header line (config echo, dimensions, layout,
//! acceptance record, grid coordinates), then the stored draws as
//! little-endian 64-bit floats in declared order. Bit-exact round trips.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use climens_core::sampler::{ChainConfig, ChainOutput, MhAcceptance, StoredDraw};

use crate::errors::{CliError, CliResult};

const STAGE: &str = "chain";
const FORMAT: &str = "climens-chain";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct ChainHeader {
    pub format: String,
    pub version: u32,
    pub config: ChainConfig,
    pub n_sites: usize,
    pub n_models: usize,
    pub model_names: Vec<String>,
    pub grid_sites: Vec<[f64; 2]>,
    pub draw_count: usize,
    pub layout: Vec<(String, usize)>,
    pub acceptance: Vec<MhAcceptance>,
}

pub fn write_chain(path: &Path, chain: &ChainOutput, grid_sites: &[[f64; 2]]) -> CliResult<()> {
    let header = ChainHeader {
        format: FORMAT.to_string(),
        version: VERSION,
        config: chain.config.clone(),
        n_sites: chain.n_sites,
        n_models: chain.n_models,
        model_names: chain.model_names.clone(),
        grid_sites: grid_sites.to_vec(),
        draw_count: chain.draws.len(),
        layout: ChainOutput::layout(chain.n_sites, chain.n_models),
        acceptance: chain.acceptance.clone(),
    };
    let file = fs::File::create(path)
        .map_err(|e| CliError::input(STAGE, format!("cannot create {}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    let header_line =
        serde_json::to_string(&header).map_err(|e| CliError::input(STAGE, e))?;
    writeln!(w, "{header_line}").map_err(|e| CliError::input(STAGE, e))?;

    let mut buf = Vec::with_capacity(StoredDraw::flat_len(chain.n_sites, chain.n_models));
    for draw in &chain.draws {
        buf.clear();
        draw.flatten_into(&mut buf);
        for v in &buf {
            w.write_all(&v.to_le_bytes()).map_err(|e| CliError::input(STAGE, e))?;
        }
    }
    w.flush().map_err(|e| CliError::input(STAGE, e))
}

pub fn read_chain(path: &Path) -> CliResult<(ChainOutput, ChainHeader)> {
    let mut file = fs::File::open(path)
        .map_err(|e| CliError::input(STAGE, format!("cannot open {}: {e}", path.display())))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| CliError::input(STAGE, e))?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| CliError::input(STAGE, format!("{}: missing header line", path.display())))?;
    let header: ChainHeader = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| CliError::input(STAGE, format!("{}: bad header: {e}", path.display())))?;
    if header.format != FORMAT {
        return Err(CliError::input(
            STAGE,
            format!("{}: not a {FORMAT} file", path.display()),
        ));
    }
    if header.version != VERSION {
        return Err(CliError::input(
            STAGE,
            format!("{}: unsupported version {}", path.display(), header.version),
        ));
    }

    let flat = StoredDraw::flat_len(header.n_sites, header.n_models);
    let body = &bytes[newline + 1..];
    let expected = header.draw_count * flat * 8;
    if body.len() != expected {
        return Err(CliError::input(
            STAGE,
            format!(
                "{}: draw block is {} bytes, expected {expected}",
                path.display(),
                body.len()
            ),
        ));
    }
    let mut draws = Vec::with_capacity(header.draw_count);
    let mut values = vec![0.0f64; flat];
    for d in 0..header.draw_count {
        let at = d * flat * 8;
        for (k, v) in values.iter_mut().enumerate() {
            let o = at + k * 8;
            *v = f64::from_le_bytes(body[o..o + 8].try_into().expect("8-byte slice"));
        }
        draws.push(
            StoredDraw::unflatten(&values, header.n_sites, header.n_models)
                .map_err(|e| CliError::input(STAGE, e))?,
        );
    }
    let output = ChainOutput {
        config: header.config.clone(),
        n_sites: header.n_sites,
        n_models: header.n_models,
        model_names: header.model_names.clone(),
        draws,
        acceptance: header.acceptance.clone(),
    };
    Ok((output, header))
}
