//! Command-line driver: dataset generation, training, evaluation, cost
//! accounting and paired ablations.

pub mod commands;
pub mod config;

pub use config::RunConfig;
