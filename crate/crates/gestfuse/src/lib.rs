//! File formats, checkpoints, reports and the command-line pipeline for
//! `gestfuse-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod report;
pub mod windows;

pub use error::{Error, Result};
