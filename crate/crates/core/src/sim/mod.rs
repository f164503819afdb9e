//! Deterministic discrete-event simulator.
//!
//! [`run`] instantiates one engine [`Node`](crate::engine::Node) per
//! participant, delivers messages under a partial-synchrony delay model,
//! injects Byzantine behaviors and returns a [`Trace`]. Time is measured in
//! integer ticks and every random choice is drawn from streams derived from
//! the scenario's master seed, so a trace is a pure function of its
//! scenario. [`check_trace`] evaluates safety and liveness properties on a
//! finished trace and [`campaign`] runs seed matrices.

pub mod campaign;
mod check;
mod placement;
mod run;
mod scenario;
mod trace;

use std::io::BufRead;

use thiserror::Error;

pub use check::{check_trace, supporters, CheckReport, Property, PropertyViolation};
pub use placement::{max_tolerated, place_adversaries};
pub use run::run;
pub use scenario::{AdversarySpec, ByzantineBehavior, CommitteeSize, PreGstModel, Scenario};
pub use trace::{
    CommitRecord, EpochRobustness, FinalState, LogEntry, ProposalRecord, QcRecord, RunStats, StepKind, Trace, TraceHeader,
    TraceSummary, VoteRecord,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Engine(#[from] crate::engine::EngineError),
    #[error(transparent)]
    Overlay(#[from] crate::overlay::OverlayError),
}

/// Outcome of re-executing a recorded trace.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub digest_matches: bool,
    pub commits_match: bool,
    pub final_states_match: bool,
    pub log_matches: bool,
    /// Nodes whose final state differs.
    pub differing_nodes: Vec<crate::overlay::NodeId>,
}

impl ReplayReport {
    pub fn identical(&self) -> bool {
        self.digest_matches && self.commits_match && self.final_states_match && self.log_matches
    }
}

/// Re-runs the scenario recorded in a trace and compares the outcome.
pub fn replay(recorded: &Trace) -> Result<ReplayReport, SimError> {
    let fresh = run(&recorded.header.scenario)?;
    let differing_nodes = recorded
        .summary
        .final_states
        .iter()
        .filter(|(id, s)| fresh.summary.final_states.get(id) != Some(s))
        .map(|(id, _)| *id)
        .collect::<Vec<_>>();
    Ok(ReplayReport {
        digest_matches: fresh.summary.log_digest == recorded.summary.log_digest,
        commits_match: fresh.summary.commits == recorded.summary.commits,
        final_states_match: differing_nodes.is_empty()
            && fresh.summary.final_states.len() == recorded.summary.final_states.len(),
        log_matches: fresh.log == recorded.log,
        differing_nodes,
    })
}

/// Reads a JSON-lines trace and replays it.
pub fn replay_jsonl<R: BufRead>(reader: R) -> Result<ReplayReport, SimError> {
    replay(&Trace::read_jsonl(reader)?)
}
