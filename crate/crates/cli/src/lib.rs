//! Command-line front end: simulate study datasets, fit models, and
//! tabulate posterior summaries.

pub mod args;
pub mod error;
pub mod fit;
pub mod layout;
pub mod report;
pub mod simulate;

pub use error::{CliError, CliResult};

/// Environment variable holding the worker count for replicate fan-out.
pub const WORKERS_ENV: &str = "PSBP_WORKERS";

/// Dispatch a parsed command line.
pub fn run(cli: args::Cli) -> CliResult<()> {
    match cli.command {
        args::Command::Simulate(a) => simulate::run(&a),
        args::Command::Fit(a) => fit::run(&a).map(|_| ()),
        args::Command::Report(a) => report::run(&a).map(|_| ()),
    }
}
