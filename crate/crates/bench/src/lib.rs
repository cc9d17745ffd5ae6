//! Benchmark harness for flow policies on the planar arm: demonstration
//! datasets, checkpoints, training and evaluation runs, timing and result
//! tables.

pub mod commands;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod format;
pub mod results;
pub mod timing;

pub use error::{BenchError, Result};
