use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{ByzantineBehavior, Scenario, SimError};
use crate::engine::NodeStats;
use crate::messages::{BlockId, View};
use crate::overlay::NodeId;

/// What happened at one step of the event loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Deliver,
    Timer,
    /// A proposal lost before stabilization.
    Drop,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub time: u64,
    pub seq: u64,
    pub node: NodeId,
    pub step: StepKind,
    /// Message kind, or `timer`.
    pub kind: String,
    pub view: View,
    /// First 8 bytes of the message digest, hex.
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitRecord {
    pub time: u64,
    pub block: BlockId,
    pub view: View,
}

/// A vote emitted by a node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub time: u64,
    pub node: NodeId,
    pub view: View,
    pub block: BlockId,
    /// Child votes the voter relied on; empty for leaves and forged votes.
    pub children: Vec<NodeId>,
    /// Produced by a Byzantine node outside the engine.
    pub forged: bool,
}

/// A leader-level certificate assembled by some node's engine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QcRecord {
    pub time: u64,
    pub leader: NodeId,
    pub view: View,
    pub block: BlockId,
    pub epoch: View,
    pub voters: Vec<NodeId>,
}

/// Placement quality for one overlay epoch.
/// A proposal a leader actually sent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub time: u64,
    pub leader: NodeId,
    pub view: View,
    pub block: BlockId,
    pub qc_view: View,
    /// Carries an aggregated certificate, i.e. follows a failed view.
    pub aggregated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochRobustness {
    pub epoch: View,
    /// Every sibling pair is at least two-thirds honest.
    pub children_robust: bool,
    pub root_subtree_honest: usize,
    pub leader_threshold: usize,
}

impl EpochRobustness {
    /// Honest nodes alone can complete every threshold.
    pub fn sound(&self) -> bool {
        self.children_robust && self.root_subtree_honest >= self.leader_threshold
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalState {
    pub current_view: View,
    pub highest_voted_view: View,
    pub high_qc_view: View,
    pub committed: usize,
    pub committed_tip: BlockId,
    pub overlay_epoch: View,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub events: u64,
    pub deliveries: u64,
    pub messages_sent: u64,
    pub dropped: u64,
    pub timeout_qcs: u64,
    pub end_time: u64,
    pub max_view: View,
    /// Largest delay of a message sent at or after stabilization.
    pub max_post_gst_delay: u64,
    pub truncated: bool,
    pub per_node: BTreeMap<NodeId, NodeStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub scenario: Scenario,
    pub committee_size: usize,
    pub committees: usize,
    pub view_timeout: u64,
    pub byzantine: BTreeMap<NodeId, ByzantineBehavior>,
    /// Leader of view `v` at index `v - 1`.
    pub leaders: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub log_digest: String,
    pub commits: BTreeMap<NodeId, Vec<CommitRecord>>,
    pub votes: Vec<VoteRecord>,
    pub qcs: Vec<QcRecord>,
    pub proposals: Vec<ProposalRecord>,
    /// First time any honest node entered each view.
    pub view_entries: BTreeMap<View, u64>,
    pub robustness: Vec<EpochRobustness>,
    pub stats: RunStats,
    pub final_states: BTreeMap<NodeId, FinalState>,
}

/// Complete record of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub header: TraceHeader,
    pub log: Vec<LogEntry>,
    pub summary: TraceSummary,
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Line {
    Header(TraceHeader),
    Event(LogEntry),
    Summary(TraceSummary),
}

impl Trace {
    pub fn is_honest(&self, node: NodeId) -> bool {
        !self.header.byzantine.contains_key(&node)
    }

    pub fn leader(&self, view: View) -> Option<NodeId> {
        (view as usize).checked_sub(1).and_then(|i| self.header.leaders.get(i)).copied()
    }

    /// JSON lines: one header, one line per logged event, one summary.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), SimError> {
        let header = Line::Header(self.header.clone());
        writeln!(w, "{}", serde_json::to_string(&header)?)?;
        for e in &self.log {
            writeln!(w, "{}", serde_json::to_string(&Line::Event(e.clone()))?)?;
        }
        writeln!(w, "{}", serde_json::to_string(&Line::Summary(self.summary.clone()))?)?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Trace, SimError> {
        let mut header = None;
        let mut log = Vec::new();
        let mut summary = None;
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            // Dispatch by hand: serde's buffered tagged-enum path cannot
            // read integer map keys back from their string form.
            let mut value: serde_json::Value = serde_json::from_str(&line)?;
            let kind = value
                .as_object_mut()
                .and_then(|o| o.remove("type"))
                .and_then(|t| t.as_str().map(str::to_owned))
                .ok_or_else(|| SimError::InvalidTrace("line without a type".into()))?;
            match kind.as_str() {
                "header" => header = Some(serde_json::from_value(value)?),
                "event" => log.push(serde_json::from_value(value)?),
                "summary" => summary = Some(serde_json::from_value(value)?),
                other => return Err(SimError::InvalidTrace(format!("unknown line type {other:?}"))),
            }
        }
        match (header, summary) {
            (Some(header), Some(summary)) => Ok(Trace { header, log, summary }),
            _ => Err(SimError::InvalidTrace("missing header or summary line".into())),
        }
    }
}
