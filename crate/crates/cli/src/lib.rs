//! Batch commands over the alignment pipeline. Each command reads a resolved
//! [`config::Config`], writes its outputs into one directory and records a
//! [`manifest::RunManifest`] there.

pub mod commands;
pub mod config;
mod error;
pub mod manifest;
pub mod synth;

pub use error::CliError;
