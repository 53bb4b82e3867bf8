//! Command-line front end: configuration, mode dispatch and artifacts.

pub mod compare;
pub mod config;
pub mod error;
pub mod output;
pub mod result;
pub mod run;
pub mod scenario;

use std::path::PathBuf;

use clap::Parser;

pub use config::RunConfig;
pub use error::CliError;
pub use run::{run, Mode, Outcome};

#[derive(Debug, Parser)]
#[command(
    name = "mter",
    version,
    about = "Markovian traffic equilibrium for ride-hailing fleets"
)]
pub struct Cli {
    #[arg(value_enum)]
    pub mode: Mode,
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set solver.tol=1e-6`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Process exit code for a parsed command line: 0 on success, 2 when the
/// solver did not converge, 1 on any error.
pub fn main_with(cli: &Cli) -> i32 {
    let result =
        RunConfig::load(cli.config.as_deref(), &cli.overrides).and_then(|cfg| run(cli.mode, &cfg, &cli.out));
    match result {
        Ok(Outcome { converged: true }) => 0,
        Ok(Outcome { converged: false }) => {
            eprintln!(
                "warning: did not converge; artifacts written to {}",
                cli.out.display()
            );
            2
        }
        Err(CliError::Model(mter::MterError::Convergence {
            stage,
            iterations,
            residual,
        })) => {
            eprintln!(
                "error: {stage} did not converge after {iterations} iterations (residual {residual:e})"
            );
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Caps rayon's global pool at `MTER_THREADS` when set.
pub fn init_threads() {
    if let Some(n) = std::env::var("MTER_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}
