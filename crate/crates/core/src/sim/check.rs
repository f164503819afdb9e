use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{QcRecord, SimError, Trace};
use crate::messages::{BlockId, View};
use crate::overlay::NodeId;

/// Properties evaluated on a finished trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Property {
    /// Honest committed chains are prefixes of one another.
    CommitPrefix,
    /// No honest node votes twice in one view.
    DoubleVote,
    /// Every leader-level certificate formed under a sound placement is
    /// transitively supported by more than two thirds of all nodes.
    QcSupport,
    /// At most one block is certified per view.
    UniqueQc,
    /// A commit of view `v` or later before any honest node enters `v + 4`
    /// whenever views `v..=v+2` have honest leaders and views `v-1` and `v`
    /// start after stabilization; one commit per view in all-honest
    /// synchronous runs.
    Liveness,
    /// No message sent after stabilization took longer than delta.
    DelayBound,
}

impl Property {
    pub const ALL: [Property; 6] = [
        Property::CommitPrefix,
        Property::DoubleVote,
        Property::QcSupport,
        Property::UniqueQc,
        Property::Liveness,
        Property::DelayBound,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Property::CommitPrefix => "commit-prefix",
            Property::DoubleVote => "double-vote",
            Property::QcSupport => "qc-support",
            Property::UniqueQc => "unique-qc",
            Property::Liveness => "liveness",
            Property::DelayBound => "delay-bound",
        }
    }

    /// Safety properties; a violation means the protocol misbehaved.
    pub fn is_safety(self) -> bool {
        matches!(self, Property::CommitPrefix | Property::DoubleVote | Property::UniqueQc)
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Property {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Property::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| SimError::InvalidScenario(format!("unknown property {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyViolation {
    pub property: Property,
    pub view: Option<View>,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckReport {
    /// Number of individual checks performed per property.
    pub checked: BTreeMap<Property, usize>,
    pub violations: Vec<PropertyViolation>,
    /// Smallest transitive supporter count among checked certificates.
    pub min_qc_support: Option<usize>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, property: Property) -> usize {
        self.violations.iter().filter(|v| v.property == property).count()
    }

    pub fn merge(&mut self, other: CheckReport) {
        for (p, c) in other.checked {
            *self.checked.entry(p).or_default() += c;
        }
        self.violations.extend(other.violations);
        self.min_qc_support = match (self.min_qc_support, other.min_qc_support) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
    }

    fn fail(&mut self, property: Property, view: Option<View>, detail: String) {
        self.violations.push(PropertyViolation { property, view, detail });
    }

    fn tick(&mut self, property: Property, n: usize) {
        *self.checked.entry(property).or_default() += n;
    }
}

/// Evaluates `properties` on a trace. Violations are report entries, never errors.
pub fn check_trace(trace: &Trace, properties: &[Property]) -> CheckReport {
    let mut report = CheckReport::default();
    for p in properties {
        match p {
            Property::CommitPrefix => commit_prefix(trace, &mut report),
            Property::DoubleVote => double_vote(trace, &mut report),
            Property::QcSupport => qc_support(trace, &mut report),
            Property::UniqueQc => unique_qc(trace, &mut report),
            Property::Liveness => liveness(trace, &mut report),
            Property::DelayBound => delay_bound(trace, &mut report),
        }
    }
    report
}

fn honest_chains(trace: &Trace) -> Vec<(NodeId, Vec<BlockId>)> {
    trace
        .summary
        .final_states
        .keys()
        .filter(|n| trace.is_honest(**n))
        .map(|n| {
            let chain = trace.summary.commits.get(n).map(|c| c.iter().map(|r| r.block).collect()).unwrap_or_default();
            (*n, chain)
        })
        .collect()
}

fn commit_prefix(trace: &Trace, report: &mut CheckReport) {
    let chains = honest_chains(trace);
    let Some((longest_node, longest)) = chains.iter().max_by_key(|(_, c)| c.len()) else { return };
    report.tick(Property::CommitPrefix, chains.len());
    for (node, chain) in &chains {
        if let Some(i) = chain.iter().zip(longest).position(|(a, b)| a != b) {
            report.fail(
                Property::CommitPrefix,
                None,
                format!("{node} and {longest_node} disagree at height {}: {} vs {}", i + 1, chain[i].short(), longest[i].short()),
            );
        }
    }
}

fn double_vote(trace: &Trace, report: &mut CheckReport) {
    let mut seen: BTreeMap<(NodeId, View), usize> = BTreeMap::new();
    for v in trace.summary.votes.iter().filter(|v| trace.is_honest(v.node)) {
        *seen.entry((v.node, v.view)).or_default() += 1;
    }
    report.tick(Property::DoubleVote, seen.len());
    for ((node, view), count) in seen {
        if count > 1 {
            report.fail(Property::DoubleVote, Some(view), format!("{node} voted {count} times in view {view}"));
        }
    }
}

/// Nodes whose votes for the certified block transitively back a
/// certificate: its signers plus, recursively, the child votes each voter
/// relied on. A forged vote counts its sender but relies on nothing.
pub fn supporters(trace: &Trace, qc: &QcRecord) -> BTreeSet<NodeId> {
    let mut children: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
    for v in trace.summary.votes.iter().filter(|v| v.view == qc.view && v.block == qc.block) {
        children.entry(v.node).or_default().extend(v.children.iter().copied());
    }
    let mut out = BTreeSet::new();
    let mut stack: Vec<NodeId> = qc.voters.clone();
    while let Some(n) = stack.pop() {
        let Some(kids) = children.get(&n) else { continue };
        if out.insert(n) {
            stack.extend(kids.iter().copied());
        }
    }
    out
}

fn qc_support(trace: &Trace, report: &mut CheckReport) {
    let sound: BTreeMap<View, bool> = trace.summary.robustness.iter().map(|r| (r.epoch, r.sound())).collect();
    let need = 2 * trace.header.scenario.n_nodes / 3 + 1;
    for qc in &trace.summary.qcs {
        if !sound.get(&qc.epoch).copied().unwrap_or(false) {
            continue;
        }
        report.tick(Property::QcSupport, 1);
        let count = supporters(trace, qc).len();
        report.min_qc_support = Some(report.min_qc_support.map_or(count, |m| m.min(count)));
        if count < need {
            report.fail(
                Property::QcSupport,
                Some(qc.view),
                format!("certificate for {} in view {} has {count} supporters, need {need}", qc.block.short(), qc.view),
            );
        }
    }
}

fn unique_qc(trace: &Trace, report: &mut CheckReport) {
    let mut blocks: BTreeMap<View, BTreeSet<BlockId>> = BTreeMap::new();
    for qc in &trace.summary.qcs {
        blocks.entry(qc.view).or_default().insert(qc.block);
    }
    report.tick(Property::UniqueQc, blocks.len());
    for (view, set) in blocks {
        if set.len() > 1 {
            report.fail(Property::UniqueQc, Some(view), format!("{} distinct blocks certified in view {view}", set.len()));
        }
    }
}

fn liveness(trace: &Trace, report: &mut CheckReport) {
    let sc = &trace.header.scenario;
    if trace.summary.stats.truncated || !trace.summary.robustness.iter().all(|r| r.sound()) {
        return;
    }
    let last = sc.views_to_run;
    let silent: BTreeSet<View> = sc.silent_leader_views.iter().copied().collect();
    let good_leader = |v: View| !silent.contains(&v) && trace.leader(v).is_some_and(|l| trace.is_honest(l));

    if trace.header.byzantine.is_empty() && silent.is_empty() && sc.gst == 0 && sc.drop_probability == 0.0 {
        let expected: Vec<View> = (1..=last.saturating_sub(2)).collect();
        for node in trace.summary.final_states.keys() {
            report.tick(Property::Liveness, 1);
            let views: Vec<View> =
                trace.summary.commits.get(node).map(|c| c.iter().map(|r| r.view).collect()).unwrap_or_default();
            if views != expected {
                report.fail(
                    Property::Liveness,
                    None,
                    format!("{node} committed views {views:?}, expected 1..={}", last.saturating_sub(2)),
                );
            }
        }
    }

    let entries = &trace.summary.view_entries;
    let end = trace.summary.stats.end_time;
    for v in 1..=last.saturating_sub(3) {
        // View v-1 must also have run after stabilization: a timeout
        // certificate for it that races its QC reseeds the overlay under
        // view v's votes.
        let Some(&start) = entries.get(&v) else { continue };
        let prev = if v > 1 { entries.get(&(v - 1)).copied() } else { Some(start) };
        if prev.is_none_or(|p| p < sc.gst) || start < sc.gst || !(v..v + 3).all(good_leader) {
            continue;
        }
        report.tick(Property::Liveness, 1);
        let deadline = entries.get(&(v + 4)).copied().unwrap_or(end);
        let committed = trace
            .summary
            .commits
            .iter()
            .filter(|(n, _)| trace.is_honest(**n))
            .any(|(_, c)| c.iter().any(|r| r.view >= v && r.time <= deadline));
        if !committed {
            report.fail(Property::Liveness, Some(v), format!("no honest commit of a view >= {v} by time {deadline}"));
        }
    }
}

fn delay_bound(trace: &Trace, report: &mut CheckReport) {
    report.tick(Property::DelayBound, 1);
    let max = trace.summary.stats.max_post_gst_delay;
    if max > trace.header.scenario.delta {
        report.fail(Property::DelayBound, None, format!("post-stabilization delay {max} exceeds {}", trace.header.scenario.delta));
    }
}
