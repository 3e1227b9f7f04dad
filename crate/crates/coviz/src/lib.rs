//! File formats, SVG export, pipeline orchestration, CLI and HTTP API for
//! the counterfactual-outcome explanation pipeline in `coviz-core`.

pub mod api;
pub mod artifacts;
pub mod cli;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod svg;

pub use error::{CheckpointError, Error, Result};
