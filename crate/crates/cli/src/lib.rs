//! Configuration, commands and result files behind the `fbkubo` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

/// Environment variable overriding the worker thread count.
pub const THREADS_ENV: &str = "FBKUBO_THREADS";
