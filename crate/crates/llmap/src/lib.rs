//! File formats, a remote scorer client and the `llmap` command line on top
//! of `llmap-core`.

pub mod cli;
pub mod commands;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod oracle_run;
pub mod scorer;

pub use commands::run;
pub use error::{CliError, Result};
