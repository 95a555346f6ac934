//! File formats, run configuration and the command-line driver around
//! `ossl`.

pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod metrics;

pub use error::{Error, Result};
