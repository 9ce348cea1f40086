//! Batch runner for the levitated-mirror study: reads a TOML configuration,
//! sweeps one axis and writes CSV tables (optionally SVG charts).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod plot;

pub use commands::{Command, Table};
pub use config::{Figure, RunConfig};
pub use error::{CliError, Result};
