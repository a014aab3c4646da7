//! Command-line front end: file formats and the `design`, `select`,
//! `estimate` and `simulate` subcommands.
//!
//! Exit codes: 0 success, 2 input error, 3 numeric failure, 4 usage error.

pub mod commands;
pub mod error;
pub mod formats;

use std::ffi::OsString;

use clap::Parser;

pub use commands::{cmd_design, cmd_estimate, cmd_select, cmd_simulate, Cli};
pub use error::{CliError, CliResult};

/// Parse arguments, run the subcommand and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 4 } else { 0 };
        }
    };
    match commands::dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
