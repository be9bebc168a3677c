//! Command-line front end: argument parsing, experiment presets and the
//! commands behind the `subsetgrad` binary.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod args;
pub mod bench;
pub mod error;
pub mod lab;
pub mod output;
pub mod presets;
pub mod run;

use args::{Cli, Command};
use error::{CliError, CliResult};
use run::Written;

/// Worker-pool size from `SUBSETGRAD_THREADS`; unset leaves rayon's default.
pub fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("SUBSETGRAD_THREADS") else {
        return Ok(());
    };
    let threads: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|t| *t > 0)
        .ok_or_else(|| CliError {
            code: error::EXIT_FLAG,
            message: format!("SUBSETGRAD_THREADS: expected a positive integer, got {v:?}"),
        })?;
    // A second call in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

pub fn dispatch(cli: &Cli) -> CliResult<Written> {
    match &cli.command {
        Command::Fit(a) => run::cmd_fit(a),
        Command::Bench(a) => bench::cmd_bench(a),
        Command::Lab(a) => lab::cmd_lab(a),
        Command::Path(a) => run::cmd_path(a),
        Command::Oracle(a) => run::cmd_oracle(a),
    }
}
