//! Counterfactual outcome explanations for reward-decomposed Q-learning
//! agents on a small highway simulation.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is a pure
//! function of its inputs: the simulation state carries its own random
//! stream, so any state can be copied, stepped, and discarded without
//! touching the original. IO, file formats, rendering to disk, the CLI and
//! the HTTP service live in the `coviz` crate.
//!
//! Module map:
//!
//! * [`sim`]: seedable multi-lane highway with a decomposed reward.
//! * [`agent`]: one tabular Q-function per reward component, greedy over
//!   their sum.
//! * [`engine`]: execution traces and fact/foil trajectory pairs.
//! * [`summary`]: importance scores and top-n selection under an overlap
//!   budget.
//! * [`explain`]: reward-decomposition bars, overlay frames and the
//!   combined explanation payload.

#![no_std]

extern crate alloc;

pub mod agent;
pub mod engine;
pub mod error;
pub mod explain;
pub mod sim;
pub mod summary;

pub use agent::{
    AgentModel, AgentProfile, CollisionFolding, Component, DecomposedQ, EpsilonSchedule, HraTable,
    Hyperparams, QMatrix, TrainingMeta,
};
pub use engine::{CfMethod, CfPair, CovizConfig, TerminalCause, Trace, TraceStep};
pub use error::{Error, Result};
pub use explain::{BarChart, CordPayload, Frame, FrameSequence, Rect, ScoreMeta, Viewport};
pub use sim::{
    Action, EnvConfig, Highway, Observation, RewardVector, RewardWeights, SimState, Transition,
    Vehicle,
};
pub use summary::{ImportanceMethod, ImportanceScores, Summary, SummaryEntry};
