//! `overt`: command-line front end for reachability, feasibility,
//! approximation and simulation runs.
//!
//! Exit status: 0 holds or completed, 1 fails with a real counterexample,
//! 2 inconclusive or unknown, 3 usage or I/O error.

mod config;
mod pipeline;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use thiserror::Error;

use config::{Cli, Mode};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}: {1}")]
    Io(String, String),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(3),
            };
        }
    };
    match run(&cli.mode) {
        Ok(summary) => {
            println!("{}", summary.line);
            ExitCode::from(summary.code)
        }
        Err(e) => {
            println!("ERROR {} {e}", cli.mode.name());
            ExitCode::from(3)
        }
    }
}

fn run(mode: &Mode) -> Result<pipeline::Summary, CliError> {
    let flags = config::merge(mode)?;
    if let Some(j) = flags.jobs {
        if j == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match mode {
        Mode::Reach(_) => pipeline::reach(&flags),
        Mode::Feas(_) => pipeline::feasibility(&flags, None),
        Mode::Hsfeas(_) => pipeline::feasibility(&flags, Some(config::reset_policy(&flags)?)),
        Mode::Approx(_) => pipeline::approx(&flags),
        Mode::Simulate(_) => pipeline::simulate(&flags),
    }
}
