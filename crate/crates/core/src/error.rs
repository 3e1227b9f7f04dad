use alloc::string::String;

use thiserror::Error;

use crate::sim::Action;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Rejected environment, training or explanation parameters.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// An operation was applied to a state it is not defined on,
    /// e.g. stepping a terminal state.
    #[error("usage error: {0}")]
    Usage(String),
    /// The requested foil equals the action the agent actually took.
    #[error("invalid foil: {foil} is the agent's own action")]
    InvalidFoil { foil: Action },
    /// Artifacts produced by different agents were combined.
    #[error("consistency error: expected agent `{expected}`, found `{found}`")]
    AgentMismatch { expected: String, found: String },
    /// Origin index has fewer than `k` recorded successor steps.
    #[error("origin {origin} is not eligible: needs {k} successor steps, trace has {len} steps")]
    Ineligible { origin: usize, k: usize, len: usize },
}
