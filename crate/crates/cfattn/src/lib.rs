//! File formats, reports and the command-line tool around `cfattn-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod heatmap;
pub mod io;
pub mod pipeline;
pub mod report;

pub use error::{Error, Result};
