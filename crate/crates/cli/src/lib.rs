//! Configuration, orchestration and persistence for `qam`.
//!
//! Each experiment cell (dissipator kind, `nu_-`, and any other swept
//! parameter) gets its own output directory with the quantum, oracle and
//! driving MSD series, a diagnostics summary, fit reports and a copy of the
//! manifest that produced them.

pub mod commands;
pub mod config;
pub mod error;
pub mod runner;

pub use config::{parse_config, ExperimentFile, ExperimentManifest};
pub use error::CliError;

/// Environment variable that overrides `--workers`.
pub const WORKERS_ENV: &str = "QAM_WORKERS";

/// Worker count: the environment override, else the flag, else all cores.
pub fn resolve_workers(flag: Option<usize>, env: Option<&str>) -> Result<usize, CliError> {
    let n = match env.map(str::trim).filter(|s| !s.is_empty()) {
        Some(s) => s.parse::<usize>().map_err(|_| CliError::Config(format!("{WORKERS_ENV}={s} is not a worker count")))?,
        None => flag.unwrap_or_else(qam_core::ensemble::default_workers),
    };
    if n == 0 {
        return Err(CliError::Config("workers must be >= 1".into()));
    }
    Ok(n)
}
