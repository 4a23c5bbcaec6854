//! Engineering shell around the core laboratory: built-in embodiment
//! families, plain-text run configuration, the pretrain/finetune/eval
//! pipeline with resumable persistence, verification suites, and plot-data
//! emission. The `celab` binary exposes all of it as subcommands.

pub mod config;
pub mod envs;
pub mod error;
pub mod plot;
pub mod records;
pub mod runner;
pub mod verify;

pub use error::{BenchError, Result};
