//! File formats, configuration, reports and the command-line front end for
//! `spr-core`.
//!
//! - [`format`]: binary embeddings (`SPRE`), buffer snapshots (`SPRB`) and
//!   network weights (`SPRW`).
//! - [`config`]: TOML episode and run configs.
//! - [`episode`]: episode directories written by `spr gen`.
//! - [`report`]: key/value and tab-separated reports.
//! - [`cli`]: the subcommands behind the `spr` binary.

#![warn(missing_debug_implementations)]

pub mod cli;
pub mod config;
pub mod episode;
mod error;
pub mod format;
pub mod report;

pub use error::{CliError, FormatError, Result};
