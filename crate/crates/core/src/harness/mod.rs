//! Experiment plumbing: run configs, frame/mask I/O, metrics, and the CLI.

pub mod cli;
pub mod config;
pub mod io;
pub mod metrics;
