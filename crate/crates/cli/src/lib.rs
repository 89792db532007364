//! Library surface of the command-line tool: on-disk formats (manifest,
//! field CSV, chain container), run configuration, and the subcommand
//! implementations. The `climens` binary is a thin wrapper over this.

pub mod chainfile;
pub mod commands;
pub mod config;
pub mod errors;
pub mod manifest;
