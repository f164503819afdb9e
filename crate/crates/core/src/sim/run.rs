use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashSet};
use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::placement::place_adversaries;
use super::trace::*;
use super::{ByzantineBehavior, PreGstModel, Scenario, SimError};
use crate::engine::{Destination, EngineEvent, EngineOutput, Node, NodeConfig, Overlays};
use crate::messages::{Block, BlockId, Message, View};
use crate::overlay::{node_range, Beacon, NodeId};
use crate::rng::DetRng;
use crate::sigs::{KeyedHashScheme, SignatureScheme};

/// Orphan buffer per node.
const ORPHAN_LIMIT: usize = 1024;

enum EventKind {
    Deliver { to: usize, msg: Arc<Message>, digest: [u8; 8] },
    Timer { node: usize, view: View },
}

struct Event {
    time: u64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    /// Reversed so that `BinaryHeap` pops the earliest `(time, seq)`.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

struct Sim {
    sc: Scenario,
    timeout: u64,
    nodes: Vec<Node>,
    all: Vec<NodeId>,
    behavior: Vec<Option<ByzantineBehavior>>,
    silent_views: BTreeSet<View>,
    queue: BinaryHeap<Event>,
    net: DetRng,
    now: u64,
    seq: u64,
    pending: u64,
    forged: HashSet<(usize, BlockId)>,
    hasher: Sha256,
    log: Vec<LogEntry>,
    commits: BTreeMap<NodeId, Vec<CommitRecord>>,
    votes: Vec<VoteRecord>,
    qcs: Vec<QcRecord>,
    proposals: Vec<ProposalRecord>,
    view_entries: BTreeMap<View, u64>,
    epochs: BTreeSet<View>,
    stats: RunStats,
}

/// Runs a scenario to completion and returns its trace. The trace is a pure
/// function of the scenario.
pub fn run(scenario: &Scenario) -> Result<Trace, SimError> {
    scenario.validate()?;
    let n = scenario.resolved_committee_size()?;
    let ids = node_range(scenario.n_nodes);
    let overlays = Arc::new(Overlays::new(&ids, n, scenario.seed("overlay"))?);
    let beacon = Arc::new(Beacon::new(scenario.seed("beacon")));
    let (scheme, keys) = KeyedHashScheme::generate(&scenario.seed("keys"), &ids);
    let scheme: Arc<dyn SignatureScheme> = Arc::new(scheme);
    let tree = overlays.epoch(0);
    let timeout = scenario.timeout_for_depth(tree.depth());

    let byzantine = place_adversaries(scenario, &tree);
    let mut behavior = vec![None; ids.len()];
    let mut byz_map = BTreeMap::new();
    for (i, node) in byzantine.iter().enumerate() {
        let b = scenario.behaviors[i % scenario.behaviors.len()];
        behavior[node.0 as usize] = Some(b);
        byz_map.insert(*node, b);
    }

    let mut nodes = Vec::with_capacity(ids.len());
    for kp in keys {
        nodes.push(Node::new(NodeConfig {
            keypair: kp,
            overlays: overlays.clone(),
            beacon: beacon.clone(),
            scheme: scheme.clone(),
            txs_per_block: scenario.txs_per_block,
            orphan_limit: ORPHAN_LIMIT,
            mutation: scenario.mutation,
        })?);
    }
    let leaders: Vec<NodeId> = (1..=scenario.views_to_run + 4).map(|v| beacon.leader(v, overlays.nodes())).collect();

    let mut sim = Sim {
        sc: scenario.clone(),
        timeout,
        nodes,
        all: ids.clone(),
        behavior,
        silent_views: scenario.silent_leader_views.iter().copied().collect(),
        queue: BinaryHeap::new(),
        net: DetRng::new(&scenario.seed("network")),
        now: 0,
        seq: 0,
        pending: 0,
        forged: HashSet::new(),
        hasher: Sha256::new(),
        log: Vec::new(),
        commits: BTreeMap::new(),
        votes: Vec::new(),
        qcs: Vec::new(),
        proposals: Vec::new(),
        view_entries: BTreeMap::new(),
        epochs: BTreeSet::from([0]),
        stats: RunStats::default(),
    };
    sim.view_entries.insert(1, 0);
    sim.main_loop();

    let robustness = sim
        .epochs
        .iter()
        .map(|&epoch| {
            let t = overlays.epoch(epoch);
            let faulty = |x: NodeId| byzantine.contains(&x);
            EpochRobustness {
                epoch,
                children_robust: t.children_robust(&faulty),
                root_subtree_honest: t.root_subtree_members().iter().filter(|x| !faulty(**x)).count(),
                leader_threshold: t.leader_supermajority_threshold(),
            }
        })
        .collect();
    let mut final_states = BTreeMap::new();
    for node in &sim.nodes {
        sim.stats.per_node.insert(node.id(), node.stats());
        final_states.insert(
            node.id(),
            FinalState {
                current_view: node.current_view(),
                highest_voted_view: node.highest_voted_view(),
                high_qc_view: node.local_high_qc().view,
                committed: node.committed().len(),
                committed_tip: *node.committed().last().expect("genesis is committed"),
                overlay_epoch: node.overlay_epoch(),
            },
        );
    }
    sim.stats.end_time = sim.now;
    sim.stats.max_view = sim
        .nodes
        .iter()
        .filter(|x| sim.behavior[x.id().0 as usize].is_none())
        .map(|x| x.current_view())
        .max()
        .unwrap_or(0);

    Ok(Trace {
        header: TraceHeader {
            scenario: scenario.clone(),
            committee_size: n,
            committees: tree.k(),
            view_timeout: timeout,
            byzantine: byz_map,
            leaders,
        },
        log: sim.log,
        summary: TraceSummary {
            log_digest: hex::encode(sim.hasher.finalize()),
            commits: sim.commits,
            votes: sim.votes,
            qcs: sim.qcs,
            proposals: sim.proposals,
            view_entries: sim.view_entries,
            robustness,
            stats: sim.stats,
            final_states,
        },
    })
}

impl Sim {
    fn honest(&self, i: usize) -> bool {
        self.behavior[i].is_none()
    }

    fn done(&self) -> bool {
        self.pending == 0
            && self.nodes.iter().enumerate().all(|(i, n)| !self.honest(i) || n.current_view() >= self.sc.views_to_run)
    }

    fn main_loop(&mut self) {
        for i in 0..self.nodes.len() {
            if self.behavior[i] != Some(ByzantineBehavior::Silent) {
                let out = self.nodes[i].start();
                self.apply(i, out);
            }
        }
        while !self.done() {
            if self.stats.events >= self.sc.event_budget {
                self.stats.truncated = true;
                break;
            }
            let Some(ev) = self.queue.pop() else { break };
            self.now = ev.time;
            self.stats.events += 1;
            match ev.kind {
                EventKind::Deliver { to, msg, digest } => {
                    self.pending -= 1;
                    self.stats.deliveries += 1;
                    self.record(ev.seq, to, StepKind::Deliver, msg.kind(), msg.view(), &digest);
                    if self.behavior[to] == Some(ByzantineBehavior::Silent) {
                        continue;
                    }
                    self.before_handle(to, &msg);
                    let out = self.nodes[to].handle((*msg).clone());
                    self.apply(to, out);
                }
                EventKind::Timer { node, view } => {
                    self.record(ev.seq, node, StepKind::Timer, "timer", view, &[0; 8]);
                    let out = self.nodes[node].on_timer(view);
                    self.apply(node, out);
                }
            }
        }
    }

    fn record(&mut self, seq: u64, node: usize, step: StepKind, kind: &str, view: View, digest: &[u8; 8]) {
        self.hasher.update(self.now.to_be_bytes());
        self.hasher.update(seq.to_be_bytes());
        self.hasher.update((node as u64).to_be_bytes());
        self.hasher.update([step as u8]);
        self.hasher.update(kind.as_bytes());
        self.hasher.update(view.to_be_bytes());
        self.hasher.update(digest);
        if self.sc.record_log {
            self.log.push(LogEntry {
                time: self.now,
                seq,
                node: self.all[node],
                step,
                kind: kind.to_string(),
                view,
                digest: hex::encode(digest),
            });
        }
    }

    fn push(&mut self, time: u64, kind: EventKind) {
        self.seq += 1;
        self.queue.push(Event { time, seq: self.seq, kind });
    }

    /// Byzantine reactions to an incoming message, before the engine sees it.
    fn before_handle(&mut self, i: usize, msg: &Message) {
        let Message::Proposal(block) = msg else { return };
        if !matches!(self.behavior[i], Some(ByzantineBehavior::RushApprove | ByzantineBehavior::EquivocateLeader)) {
            return;
        }
        if !self.forged.insert((i, block.id)) {
            return;
        }
        let (vote, to) = self.nodes[i].forge_vote(block);
        self.votes.push(VoteRecord {
            time: self.now,
            node: self.all[i],
            view: block.view,
            block: block.id,
            children: Vec::new(),
            forged: true,
        });
        self.send(i, vote, &to);
    }

    fn apply(&mut self, i: usize, out: EngineOutput) {
        let behavior = self.behavior[i];
        if let Some(v) = out.view_change {
            if behavior.is_none() {
                self.view_entries.entry(v).or_insert(self.now);
            }
        }
        if let Some(v) = out.timer {
            if v <= self.sc.views_to_run {
                self.push(self.now + self.timeout, EventKind::Timer { node: i, view: v });
            }
        }
        let node_id = self.all[i];
        for id in out.commits {
            let view = self.nodes[i].block(&id).map(|b| b.view).unwrap_or(0);
            self.commits.entry(node_id).or_default().push(CommitRecord { time: self.now, block: id, view });
        }
        let own_votes_sent = matches!(behavior, None | Some(ByzantineBehavior::DelayMax | ByzantineBehavior::EquivocateLeader));
        for ev in out.events {
            match ev {
                EngineEvent::Approved { view, block, children, .. } if own_votes_sent => {
                    self.votes.push(VoteRecord { time: self.now, node: node_id, view, block, children, forged: false });
                }
                EngineEvent::QcFormed { view, block, voters } => {
                    let epoch = self.nodes[i].overlay_epoch();
                    self.qcs.push(QcRecord { time: self.now, leader: node_id, view, block, epoch, voters });
                }
                EngineEvent::TimeoutQcFormed { .. } => self.stats.timeout_qcs += 1,
                EngineEvent::OverlayRebuilt { epoch } => {
                    self.epochs.insert(epoch);
                }
                _ => {}
            }
        }
        for ob in out.outbound {
            if let Message::Proposal(b) = &ob.msg {
                if b.view > self.sc.views_to_run || self.silent_views.contains(&b.view) {
                    continue;
                }
            }
            match behavior {
                Some(ByzantineBehavior::Silent) => continue,
                Some(ByzantineBehavior::WithholdVotes) if matches!(ob.msg, Message::Vote(_)) => continue,
                Some(ByzantineBehavior::RushApprove) if matches!(&ob.msg, Message::Vote(v) if v.voter == node_id) => continue,
                Some(ByzantineBehavior::EquivocateLeader) => {
                    if let Message::Proposal(b) = &ob.msg {
                        self.equivocate(i, b);
                        continue;
                    }
                }
                _ => {}
            }
            if let Message::Proposal(b) = &ob.msg {
                let (view, block, qc_view, aggregated) = (b.view, b.id, b.qc.view, b.agg_qc.is_some());
                self.proposals.push(ProposalRecord { time: self.now, leader: node_id, view, block, qc_view, aggregated });
            }
            self.send(i, ob.msg, &ob.to);
        }
    }

    /// Sends the proposal to the lower half of the nodes and a conflicting
    /// variant to the upper half.
    fn equivocate(&mut self, i: usize, block: &Block) {
        let mut txs = block.txs.clone();
        txs.push(b"equivocation".to_vec());
        let twin = Block::new(block.view, block.qc.clone(), block.agg_qc.clone(), txs);
        let half = self.all.len() / 2;
        let (low, high) = self.all.split_at(half);
        let (low, high) = (low.to_vec(), high.to_vec());
        self.send_to(i, Message::Proposal(block.clone()), &low);
        self.send_to(i, Message::Proposal(twin), &high);
    }

    fn send(&mut self, from: usize, msg: Message, to: &Destination) {
        let recipients = match to {
            Destination::Broadcast => self.all.clone(),
            other => other.recipients(&[]),
        };
        self.send_to(from, msg, &recipients);
    }

    fn send_to(&mut self, from: usize, msg: Message, recipients: &[NodeId]) {
        self.stats.messages_sent += 1;
        let is_proposal = matches!(msg, Message::Proposal(_));
        let full = msg.digest();
        let mut digest = [0u8; 8];
        digest.copy_from_slice(&full[..8]);
        let msg = Arc::new(msg);
        let slow = self.behavior[from] == Some(ByzantineBehavior::DelayMax);
        for r in recipients {
            let to = r.0 as usize;
            match self.delay(is_proposal, slow) {
                Some(d) => {
                    self.pending += 1;
                    self.push(self.now + d, EventKind::Deliver { to, msg: msg.clone(), digest });
                }
                None => {
                    self.stats.dropped += 1;
                    self.seq += 1;
                    let (seq, kind, view) = (self.seq, msg.kind(), msg.view());
                    self.record(seq, to, StepKind::Drop, kind, view, &digest);
                }
            }
        }
    }

    /// Delivery delay, or `None` when a pre-stabilization proposal is lost.
    /// After stabilization every delay lies in `[1, delta]`; earlier sends
    /// arrive no later than `gst + delta`.
    fn delay(&mut self, is_proposal: bool, slow: bool) -> Option<u64> {
        let (now, d, gst) = (self.now, self.sc.delta, self.sc.gst);
        if now >= gst {
            let delay = if slow { d } else { self.net.range_inclusive(1, d) };
            assert!(delay <= d, "post-stabilization delay exceeds delta");
            self.stats.max_post_gst_delay = self.stats.max_post_gst_delay.max(delay);
            return Some(delay);
        }
        if is_proposal && self.sc.drop_probability > 0.0 && self.net.bernoulli(self.sc.drop_probability) {
            return None;
        }
        let hi = self.sc.pre_gst_factor * d;
        let raw = if slow {
            hi
        } else {
            match self.sc.pre_gst_model {
                PreGstModel::BoundedRandom => self.net.range_inclusive(1, hi),
                PreGstModel::AdversarialReorder => {
                    if self.net.bernoulli(0.5) {
                        1
                    } else {
                        hi
                    }
                }
            }
        };
        Some(raw.min(gst + d - now).max(1))
    }
}
