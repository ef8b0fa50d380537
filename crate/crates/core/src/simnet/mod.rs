//! Deterministic multi-node simulator driven by a JSON scenario script.

mod scenario;
mod transcript;
mod workload;
mod world;

use thiserror::Error;

pub use scenario::{Action, ChainSel, Scenario, ScopeSpec, ScriptEvent, SimConfig, DEFAULT_GENESIS};
pub use transcript::{ChainSummary, Checkpoint, LogEntry, NodeSummary, OfferRecord, SwapSummary, Transcript, WorldSummary};
pub use workload::{random_ledger, workload_actors, WorkloadConfig, WorkloadStats};
pub use world::{node_keys, public_view_digest, run, PollRecord, SimNode, SwapRecord, World};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScriptError {
    #[error("scenario does not parse: {0}")]
    Parse(String),
    #[error("scenario lists no nodes")]
    NoNodes,
    #[error("node names must be unique")]
    DuplicateNode,
    #[error("bad config: {0}")]
    Config(String),
    #[error("script event {index}: {reason}")]
    Event { index: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error("invariant {property} violated at tick {tick}: {detail}")]
    Invariant { property: String, tick: u64, detail: String },
}
