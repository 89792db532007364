//! Command-line surface: generate synthetic datasets, fit chains against
//! manifest data, summarize posteriors, and run the built-in correctness
//! suites.

use climens::commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "climens",
    version,
    about = "Bayesian hierarchical fusion of gridded model ensembles with observations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and write a manifest tree.
    Simulate {
        /// Built-in design (`paper`, `cmip5`) or `custom` with --config.
        #[arg(long)]
        design: String,
        /// Design file for `--design custom` (flat key = value).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for the manifest and field files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the sampler against a manifest dataset.
    Fit {
        #[arg(long)]
        manifest: PathBuf,
        /// Run configuration (flat key = value; unknown keys are errors).
        #[arg(long)]
        config: PathBuf,
        /// Model variant: full | no-v | no-spatial | simplest.
        #[arg(long, default_value = "full")]
        variant: String,
        /// Chain file to write (suffix _0.._k-1 added when --chains > 1).
        #[arg(long)]
        out: PathBuf,
        /// Number of independent seeded chains to run in parallel.
        #[arg(long)]
        chains: Option<usize>,
    },
    /// Posterior summaries from a chain file.
    Summarize {
        #[arg(long)]
        chain: PathBuf,
        /// Manifest to compute the multi-model-mean quantile map against.
        #[arg(long)]
        mmm_from: Option<PathBuf>,
        /// Emit the 90% credible interval of the region mean.
        #[arg(long)]
        region_ci: bool,
        /// Emit the inter-model correlation matrix and high pairs.
        #[arg(long)]
        v_corr: bool,
        /// Correlation threshold for the high-pair listing.
        #[arg(long, default_value_t = 0.7)]
        threshold: f64,
        /// Parameter names to export as trace CSVs (repeatable), e.g.
        /// `beta`, `tau_h`, `y_f[12]`, `v[0][1]`.
        #[arg(long)]
        trace: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a built-in correctness suite (exit 1 on check failure).
    Validate {
        /// Suite name: geweke | oracles.
        #[arg(long)]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Rounds for the geweke suite (default 10000).
        #[arg(long)]
        rounds: Option<usize>,
        /// Report file (default validate_report.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { design, config, seed, out } => {
            commands::simulate::run(&design, config.as_deref(), seed, &out).map(|()| true)
        }
        Command::Fit { manifest, config, variant, out, chains } => {
            commands::fit::run(&manifest, &config, &variant, &out, chains).map(|()| true)
        }
        Command::Summarize { chain, mmm_from, region_ci, v_corr, threshold, trace, out } => {
            commands::summarize::run(
                &chain,
                mmm_from.as_deref(),
                region_ci,
                v_corr,
                threshold,
                &trace,
                &out,
            )
            .map(|()| true)
        }
        Command::Validate { suite, seed, rounds, out } => {
            commands::validate::run(&suite, seed, rounds, out.as_deref())
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
