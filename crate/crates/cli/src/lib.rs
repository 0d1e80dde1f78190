//! Experiment plumbing behind the `rankbo` binary.

pub mod campaign;
pub mod config;
pub mod output;
