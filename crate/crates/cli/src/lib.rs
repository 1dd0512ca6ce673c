//! Experiment driver behind the `phlearn` binary: configs, data
//! generation, training, evaluation, potential export and benchmarks.

pub mod commands;
pub mod config;
pub mod experiments;
pub mod manifest;
