//! Configuration files, CSV outputs and the `uavfl` command line on top of
//! [`uavfl_core`].

pub mod cli;
pub mod config;
pub mod experiment;
pub mod manifest;
pub mod output;
pub mod plot;
pub mod verify;

pub use config::{Config, ConfigError, Resolved};
