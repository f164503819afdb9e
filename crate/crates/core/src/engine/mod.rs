//! Per-node consensus state machine.
//!
//! A [`Node`] is a pure transition system: it consumes delivered messages and
//! timer expirations and returns an [`EngineOutput`] describing what to send,
//! which blocks were committed and whether the node moved to a new view. It
//! never touches a clock or a socket.

mod node;

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

pub use node::{Mutation, Node, NodeConfig, NodeStats, Quorum};

use crate::messages::{BlockId, Message, View, Violation};
use crate::overlay::{form_overlay, CommitteeTree, NodeId, OverlayError, OverlayParams};
use crate::rng::{hash_parts, Seed};

/// Where an outbound message goes. Recipient lists are resolved against the
/// overlay the sender used.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "nodes", rename_all = "snake_case")]
pub enum Destination {
    ParentCommittee(Vec<NodeId>),
    RootCommittee(Vec<NodeId>),
    Leader(NodeId),
    Broadcast,
}

impl Destination {
    /// Concrete recipients; `Broadcast` expands to `all`.
    pub fn recipients(&self, all: &[NodeId]) -> Vec<NodeId> {
        match self {
            Destination::ParentCommittee(v) | Destination::RootCommittee(v) => v.clone(),
            Destination::Leader(l) => vec![*l],
            Destination::Broadcast => all.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outbound {
    pub msg: Message,
    pub to: Destination,
}

/// Observations emitted for trace checking. They do not influence protocol
/// behaviour.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EngineEvent {
    /// The node voted for `block`; `children` are the child votes it relied on.
    Approved { view: View, block: BlockId, voter: NodeId, children: Vec<NodeId> },
    /// A leader-level certificate was assembled.
    QcFormed { view: View, block: BlockId, voters: Vec<NodeId> },
    TimeoutQcFormed { view: View, senders: usize },
    NewViewSent { view: View, high_qc_view: View },
    OverlayRebuilt { epoch: View },
    /// A message failed validation and was dropped.
    Rejected { kind: String, violations: Vec<Violation> },
    /// The commit rule selected a block that does not extend the committed chain.
    CommitConflict { block: BlockId },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EngineOutput {
    pub outbound: Vec<Outbound>,
    pub commits: Vec<BlockId>,
    pub view_change: Option<View>,
    /// Request to arm the view timer for this view.
    pub timer: Option<View>,
    pub events: Vec<EngineEvent>,
}

impl EngineOutput {
    pub fn is_empty(&self) -> bool {
        self.outbound.is_empty() && self.commits.is_empty() && self.view_change.is_none() && self.events.is_empty()
    }

    pub fn extend(&mut self, other: EngineOutput) {
        self.outbound.extend(other.outbound);
        self.commits.extend(other.commits);
        if other.view_change.is_some() {
            self.view_change = other.view_change;
        }
        if other.timer.is_some() {
            self.timer = other.timer;
        }
        self.events.extend(other.events);
    }

    fn send(&mut self, msg: Message, to: Destination) {
        self.outbound.push(Outbound { msg, to });
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EngineError {
    #[error("quorum below threshold: have {have}, need {need}")]
    BelowThreshold { have: usize, need: usize },
    #[error("quorum mixes votes and new-views")]
    MixedQuorum,
    #[error("messages span several views")]
    MixedViews,
    #[error("node {node} is not the leader of view {view}")]
    NotLeader { node: NodeId, view: View },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Overlay(#[from] OverlayError),
}

/// Overlay per epoch, shared by every node of a deployment. Epoch 0 uses the
/// initial seed; after a timeout certificate for view `v` the epoch becomes
/// `v` and the seed is `H(initial seed || v)`, so all nodes that see any
/// certificate for `v` derive the same tree.
#[derive(Debug)]
pub struct Overlays {
    nodes: Vec<NodeId>,
    n: usize,
    xi: Seed,
    cache: Mutex<BTreeMap<View, Arc<CommitteeTree>>>,
}

impl Overlays {
    pub fn new(nodes: &[NodeId], n: usize, xi: Seed) -> Result<Self, OverlayError> {
        let initial = Arc::new(form_overlay(nodes, OverlayParams { n, xi })?);
        let nodes = initial.nodes().to_vec();
        Ok(Overlays { nodes, n, xi, cache: Mutex::new(BTreeMap::from([(0, initial)])) })
    }

    pub fn seed_for_epoch(&self, epoch: View) -> Seed {
        if epoch == 0 {
            return self.xi;
        }
        Seed(hash_parts(&[b"carnot/reseed", &self.xi.0, &epoch.to_be_bytes()]))
    }

    pub fn epoch(&self, epoch: View) -> Arc<CommitteeTree> {
        let mut cache = self.cache.lock().expect("overlay cache lock");
        cache
            .entry(epoch)
            .or_insert_with(|| {
                let params = OverlayParams { n: self.n, xi: self.seed_for_epoch(epoch) };
                Arc::new(form_overlay(&self.nodes, params).expect("node set already validated"))
            })
            .clone()
    }

    /// Sorted node set.
    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn committee_size(&self) -> usize {
        self.n
    }
}
