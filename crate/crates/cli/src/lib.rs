//! Command-line front end: configuration, model registry, data files and
//! the `simulate`, `pfilter`, `mif`, `score` and `profile` commands.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod registry;

pub use commands::{run, Command, Outcome};
pub use config::{Overrides, RunConfig};
pub use error::{CliError, CliResult};
pub use registry::{Configured, ModelEntry, Registry};

/// Environment variable capping the worker thread count; `0` means automatic.
pub const THREADS_ENV: &str = "ITERFILT_THREADS";

/// Size the global worker pool from [`THREADS_ENV`].
pub fn configure_threads() -> CliResult<()> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::config(format!("{THREADS_ENV}={v} is not a thread count")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::config(e.to_string()))
}
