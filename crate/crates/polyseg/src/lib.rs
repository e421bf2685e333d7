//! File formats, dataset IO and command-line plumbing around
//! [`polyseg_core`].

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod output;

pub use config::{ConfigError, RunConfig};
