use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Destination, EngineError, EngineEvent, EngineOutput, Overlays};
use crate::messages::{
    new_view_payload, timeout_payload, vote_payload, AggregatedQc, Block, BlockId, Message, NewView, Qc, Timeout,
    TimeoutQc, ValidationContext, View, Violation, Vote,
};
use crate::overlay::{Beacon, CommitteeTree, NodeId};
use crate::sigs::{CountingScheme, KeyPair, Signature, SignatureScheme};

/// A leader's quorum: either votes for one block or new-views after one
/// failed view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Quorum {
    Votes(Vec<Vote>),
    NewViews(Vec<NewView>),
}

impl Quorum {
    pub fn from_messages(msgs: Vec<Message>) -> Result<Quorum, EngineError> {
        let mut votes = Vec::new();
        let mut new_views = Vec::new();
        for m in msgs {
            match m {
                Message::Vote(v) => votes.push(v),
                Message::NewView(n) => new_views.push(n),
                _ => return Err(EngineError::MixedQuorum),
            }
        }
        match (votes.is_empty(), new_views.is_empty()) {
            (false, true) => Ok(Quorum::Votes(votes)),
            (true, false) => Ok(Quorum::NewViews(new_views)),
            (true, true) => Err(EngineError::BelowThreshold { have: 0, need: 1 }),
            (false, false) => Err(EngineError::MixedQuorum),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeStats {
    pub verified: u64,
    pub votes_cast: u64,
    pub timeouts_sent: u64,
    pub new_views_sent: u64,
    pub proposals: u64,
    pub rejected: u64,
}

/// Messages from child committees in arrival order.
#[derive(Debug, Clone)]
struct Pending<T> {
    order: Vec<T>,
    senders: BTreeSet<NodeId>,
}

impl<T> Default for Pending<T> {
    fn default() -> Self {
        Pending { order: Vec::new(), senders: BTreeSet::new() }
    }
}

#[derive(Debug, Clone)]
struct LeaderNewViews {
    /// signer index -> (reported high_qc view, signature)
    entries: BTreeMap<usize, (View, Signature)>,
    best: Qc,
}

/// One consensus participant.
pub struct Node {
    id: NodeId,
    keypair: KeyPair,
    overlays: Arc<Overlays>,
    beacon: Arc<Beacon>,
    scheme: CountingScheme,
    txs_per_block: usize,
    orphan_limit: usize,
    mutation: Option<Mutation>,

    current_view: View,
    highest_voted_view: View,
    local_high_qc: Qc,
    last_view_timeout_qc: Option<TimeoutQc>,
    epoch: View,
    tree: Arc<CommitteeTree>,
    genesis: BlockId,
    blocks: HashMap<BlockId, Block>,
    committed: Vec<BlockId>,
    committed_set: HashSet<BlockId>,
    orphans: BTreeMap<BlockId, Vec<Block>>,
    orphan_count: usize,

    child_votes: BTreeMap<(View, BlockId), Pending<Vote>>,
    voted_views: BTreeSet<View>,
    forwarded_votes: BTreeSet<(View, NodeId, BlockId)>,
    leader_votes: BTreeMap<(View, BlockId), BTreeMap<usize, Signature>>,
    proposed: BTreeSet<View>,
    timeouts: BTreeMap<View, Pending<Timeout>>,
    tqc_built: BTreeSet<View>,
    timed_out: Option<View>,
    child_new_views: BTreeMap<View, Pending<NewView>>,
    last_new_view_sent: View,
    forwarded_new_views: BTreeSet<(View, NodeId)>,
    leader_new_views: BTreeMap<View, LeaderNewViews>,
    stats: NodeStats,
}

impl std::fmt::Debug for Node {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Node")
            .field("id", &self.id)
            .field("current_view", &self.current_view)
            .field("highest_voted_view", &self.highest_voted_view)
            .field("high_qc_view", &self.local_high_qc.view)
            .field("committed", &self.committed.len())
            .finish()
    }
}

/// Everything a node needs at construction.
pub struct NodeConfig {
    pub keypair: KeyPair,
    pub overlays: Arc<Overlays>,
    pub beacon: Arc<Beacon>,
    pub scheme: Arc<dyn SignatureScheme>,
    pub txs_per_block: usize,
    pub orphan_limit: usize,
    /// Deliberate fault, only for exercising trace checkers.
    pub mutation: Option<Mutation>,
}

/// Deliberate deviations from the protocol used to show that trace checks
/// detect them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutation {
    /// Voting does not advance `highest_voted_view`.
    SkipVotedViewUpdate,
}

impl Node {
    pub fn new(config: NodeConfig) -> Result<Node, EngineError> {
        let id = config.keypair.owner;
        let tree = config.overlays.epoch(0);
        if !tree.contains(id) {
            return Err(crate::overlay::OverlayError::UnknownNode(id).into());
        }
        let width = tree.node_count();
        let genesis = Block::genesis(width);
        let genesis_id = genesis.id;
        Ok(Node {
            id,
            keypair: config.keypair,
            overlays: config.overlays,
            beacon: config.beacon,
            scheme: CountingScheme::new(config.scheme),
            txs_per_block: config.txs_per_block,
            orphan_limit: config.orphan_limit,
            mutation: config.mutation,
            current_view: 1,
            highest_voted_view: 0,
            local_high_qc: Qc::genesis(genesis_id, width),
            last_view_timeout_qc: None,
            epoch: 0,
            tree,
            genesis: genesis_id,
            blocks: HashMap::from([(genesis_id, genesis)]),
            committed: vec![genesis_id],
            committed_set: HashSet::from([genesis_id]),
            orphans: BTreeMap::new(),
            orphan_count: 0,
            child_votes: BTreeMap::new(),
            voted_views: BTreeSet::new(),
            forwarded_votes: BTreeSet::new(),
            leader_votes: BTreeMap::new(),
            proposed: BTreeSet::new(),
            timeouts: BTreeMap::new(),
            tqc_built: BTreeSet::new(),
            timed_out: None,
            child_new_views: BTreeMap::new(),
            last_new_view_sent: 0,
            forwarded_new_views: BTreeSet::new(),
            leader_new_views: BTreeMap::new(),
            stats: NodeStats::default(),
        })
    }

    // -- accessors ---------------------------------------------------------

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn current_view(&self) -> View {
        self.current_view
    }

    pub fn highest_voted_view(&self) -> View {
        self.highest_voted_view
    }

    pub fn local_high_qc(&self) -> &Qc {
        &self.local_high_qc
    }

    pub fn last_view_timeout_qc(&self) -> Option<&TimeoutQc> {
        self.last_view_timeout_qc.as_ref()
    }

    /// Committed block ids, genesis first.
    pub fn committed(&self) -> &[BlockId] {
        &self.committed
    }

    pub fn block(&self, id: &BlockId) -> Option<&Block> {
        self.blocks.get(id)
    }

    pub fn genesis_id(&self) -> BlockId {
        self.genesis
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn orphan_count(&self) -> usize {
        self.orphan_count
    }

    pub fn tree(&self) -> &CommitteeTree {
        &self.tree
    }

    pub fn overlay_epoch(&self) -> View {
        self.epoch
    }

    pub fn stats(&self) -> NodeStats {
        NodeStats { verified: self.scheme.verified(), ..self.stats }
    }

    pub fn leader_of(&self, view: View) -> NodeId {
        self.beacon.leader(view, self.overlays.nodes())
    }

    fn my_committee(&self) -> usize {
        self.tree.committee_of(self.id).expect("node belongs to its overlay")
    }

    fn parent_members(&self) -> Vec<NodeId> {
        let mu = self.my_committee();
        self.tree.committee(mu / 2).map(|c| c.to_vec()).unwrap_or_default()
    }

    fn root_members(&self) -> Vec<NodeId> {
        self.tree.committee(1).expect("root committee exists").to_vec()
    }

    /// True iff `sender` sits in a child committee of this node's committee.
    fn is_child(&self, sender: NodeId) -> bool {
        match self.tree.committee_of(sender) {
            Ok(c) => c > 1 && c / 2 == self.my_committee(),
            Err(_) => false,
        }
    }

    fn signer_index(&self, node: NodeId) -> usize {
        self.tree.index_of(node).expect("known node")
    }

    fn node_at(&self, index: usize) -> NodeId {
        self.tree.nodes()[index]
    }

    fn ctx(&self) -> ValidationContext<'_> {
        ValidationContext { tree: &self.tree, scheme: &self.scheme, genesis: self.genesis }
    }

    fn reject(&mut self, out: &mut EngineOutput, kind: &str, violations: Vec<Violation>) {
        self.stats.rejected += 1;
        out.events.push(EngineEvent::Rejected { kind: kind.to_string(), violations });
    }

    fn make_txs(&self, view: View) -> Vec<Vec<u8>> {
        (0..self.txs_per_block).map(|i| format!("{}:{}:{}", self.id.0, view, i).into_bytes()).collect()
    }

    fn sign(&self, payload: &[u8]) -> Signature {
        self.scheme.sign(&self.keypair, payload)
    }

    // -- lifecycle -------------------------------------------------------------

    /// Arms the first view timer and, for the first leader, proposes on top
    /// of genesis.
    pub fn start(&mut self) -> EngineOutput {
        let mut out = EngineOutput { timer: Some(self.current_view), ..Default::default() };
        if self.leader_of(1) == self.id && self.proposed.insert(1) {
            let qc = self.local_high_qc.clone();
            let block = Block::new(1, qc, None, self.make_txs(1));
            self.stats.proposals += 1;
            out.send(Message::Proposal(block), Destination::Broadcast);
        }
        out
    }

    pub fn handle(&mut self, msg: Message) -> EngineOutput {
        match msg {
            Message::Proposal(b) => self.receive_block(b),
            Message::Vote(v) => self.on_vote(v),
            Message::Timeout(t) => self.on_timeout(t),
            Message::TimeoutQc(t) => self.on_timeout_qc(t),
            Message::NewView(n) => self.on_new_view(n),
        }
    }

    /// View timer expiry. Stale timers are ignored.
    pub fn on_timer(&mut self, view: View) -> EngineOutput {
        if view == self.current_view {
            self.local_timeout()
        } else {
            EngineOutput::default()
        }
    }

    fn enter_view(&mut self, view: View, out: &mut EngineOutput) {
        if view > self.current_view {
            self.current_view = view;
            out.view_change = Some(view);
            out.timer = Some(view);
            self.prune();
        }
    }

    fn rebuild_overlay(&mut self, epoch: View, out: &mut EngineOutput) {
        if epoch > self.epoch {
            self.epoch = epoch;
            self.tree = self.overlays.epoch(epoch);
            out.events.push(EngineEvent::OverlayRebuilt { epoch });
        }
    }

    fn update_high_qc(&mut self, qc: &Qc) {
        if qc.view > self.local_high_qc.view {
            self.local_high_qc = qc.clone();
        }
    }

    fn prune(&mut self) {
        let keep = self.current_view.saturating_sub(3);
        self.child_votes.retain(|(v, _), _| *v >= keep);
        self.leader_votes.retain(|(v, _), _| *v >= keep);
        self.forwarded_votes.retain(|(v, _, _)| *v >= keep);
        self.voted_views.retain(|v| *v >= keep);
        self.timeouts.retain(|v, _| *v >= keep);
        self.child_new_views.retain(|v, _| *v >= keep);
        self.forwarded_new_views.retain(|(v, _)| *v >= keep);
        self.leader_new_views.retain(|v, _| *v >= keep);
    }

    // -- blocks ----------------------------------------------------------------

    fn structurally_safe(block: &Block) -> bool {
        block.view == block.qc.view + 1
            || block.agg_qc.as_ref().is_some_and(|agg| block.view == agg.view + 1 && block.qc == agg.high_qc)
    }

    /// Safe-block rule plus the requirement that the block is not from a past view.
    pub fn is_safe_block(&self, block: &Block) -> bool {
        Self::structurally_safe(block) && block.view >= self.current_view
    }

    /// Ingests a proposal: validates it, buffers it if its parent is
    /// unknown, otherwise stores it, applies the commit rule and votes when
    /// possible.
    pub fn receive_block(&mut self, block: Block) -> EngineOutput {
        let mut out = EngineOutput::default();
        if self.blocks.contains_key(&block.id)
            || self.orphans.get(&block.parent()).is_some_and(|v| v.iter().any(|b| b.id == block.id))
        {
            return out;
        }
        let violations = self.ctx().validate_block(&block);
        if !violations.is_empty() {
            self.reject(&mut out, "proposal", violations);
            return out;
        }
        if let Some(agg) = &block.agg_qc {
            self.rebuild_overlay(agg.view, &mut out);
        }
        self.enter_view(block.view, &mut out);
        if !self.blocks.contains_key(&block.parent()) {
            self.buffer_orphan(block);
            return out;
        }
        self.insert_block(block, &mut out);
        out
    }

    fn buffer_orphan(&mut self, block: Block) {
        self.orphans.entry(block.parent()).or_default().push(block);
        self.orphan_count += 1;
        while self.orphan_count > self.orphan_limit {
            let lowest = self
                .orphans
                .iter()
                .flat_map(|(p, v)| v.iter().map(move |b| (b.view, *p, b.id)))
                .min()
                .expect("non-empty orphan buffer");
            let bucket = self.orphans.get_mut(&lowest.1).expect("bucket exists");
            bucket.retain(|b| b.id != lowest.2);
            if bucket.is_empty() {
                self.orphans.remove(&lowest.1);
            }
            self.orphan_count -= 1;
        }
    }

    fn insert_block(&mut self, block: Block, out: &mut EngineOutput) {
        let id = block.id;
        self.update_high_qc(&block.qc);
        self.blocks.insert(id, block);
        let commits = self.try_commit_from(id, out);
        out.commits.extend(commits);
        self.try_approve(id, out);
        if let Some(mut children) = self.orphans.remove(&id) {
            self.orphan_count -= children.len();
            children.sort_by_key(|b| (b.view, b.id));
            for child in children {
                self.insert_block(child, out);
            }
        }
    }

    /// Evaluates the commit rule over every stored block.
    pub fn try_commit(&mut self) -> Vec<BlockId> {
        let mut tips: Vec<(View, BlockId)> = self.blocks.values().map(|b| (b.view, b.id)).collect();
        tips.sort();
        let mut out = EngineOutput::default();
        let mut commits = Vec::new();
        for (_, id) in tips {
            commits.extend(self.try_commit_from(id, &mut out));
        }
        commits
    }

    /// Commit rule with `b2` as the newest block of a chain `b0 <- b1 <- b2`:
    /// `b0` and its uncommitted ancestors commit when `b1.view == b0.view + 1`.
    fn try_commit_from(&mut self, b2: BlockId, out: &mut EngineOutput) -> Vec<BlockId> {
        let Some(b1) = self.blocks.get(&b2).filter(|b| !b.is_genesis()).map(|b| b.parent()) else {
            return Vec::new();
        };
        let Some(b1_block) = self.blocks.get(&b1).filter(|b| !b.is_genesis()) else {
            return Vec::new();
        };
        let b0 = b1_block.parent();
        let b1_view = b1_block.view;
        let Some(b0_block) = self.blocks.get(&b0) else {
            return Vec::new();
        };
        if b1_view != b0_block.view + 1 || self.committed_set.contains(&b0) {
            return Vec::new();
        }
        let mut path = Vec::new();
        let mut cur = b0;
        while !self.committed_set.contains(&cur) {
            path.push(cur);
            cur = self.blocks[&cur].parent();
        }
        if Some(&cur) != self.committed.last() {
            out.events.push(EngineEvent::CommitConflict { block: b0 });
            return Vec::new();
        }
        path.reverse();
        for id in &path {
            self.committed.push(*id);
            self.committed_set.insert(*id);
        }
        path
    }

    // -- voting ----------------------------------------------------------------

    fn child_threshold(&self) -> usize {
        self.tree.child_supermajority_threshold(self.my_committee())
    }

    /// Votes for `id` once it is safe, current and backed by enough child votes.
    fn try_approve(&mut self, id: BlockId, out: &mut EngineOutput) {
        let Some(block) = self.blocks.get(&id) else { return };
        if !self.is_safe_block(block) || block.view <= self.highest_voted_view {
            return;
        }
        let threshold = self.child_threshold();
        let votes: Vec<Vote> = if threshold == 0 {
            Vec::new()
        } else {
            let Some(pending) = self.child_votes.get(&(block.view, id)) else { return };
            let eligible: Vec<Vote> = pending.order.iter().filter(|v| self.is_child(v.voter)).cloned().collect();
            if eligible.len() < threshold {
                return;
            }
            eligible[..threshold].to_vec()
        };
        let block = block.clone();
        self.cast_vote(&block, votes, out);
    }

    /// Votes for a stored safe block given exactly the child threshold of
    /// distinct child votes for it. Fails without side effects otherwise.
    pub fn approve_block(&mut self, block: &Block, votes: &[Vote]) -> Result<EngineOutput, EngineError> {
        if !self.blocks.contains_key(&block.id) {
            return Err(EngineError::Precondition("block is not a stored safe block".into()));
        }
        if !self.is_safe_block(block) {
            return Err(EngineError::Precondition("block is not safe".into()));
        }
        if block.view <= self.highest_voted_view {
            return Err(EngineError::Precondition(format!(
                "block.view {} <= highest_voted_view {}",
                block.view, self.highest_voted_view
            )));
        }
        let need = self.child_threshold();
        if votes.len() != need {
            return Err(EngineError::BelowThreshold { have: votes.len(), need });
        }
        let voters: BTreeSet<NodeId> = votes.iter().map(|v| v.voter).collect();
        if voters.len() != votes.len() {
            return Err(EngineError::Precondition("duplicate voter".into()));
        }
        if let Some(v) = votes.iter().find(|v| !self.is_child(v.voter)) {
            return Err(EngineError::Precondition(format!("{} is not a child-committee member", v.voter)));
        }
        if votes.iter().any(|v| v.view != block.view || v.block != block.id) {
            return Err(EngineError::Precondition("vote references another block".into()));
        }
        let mut out = EngineOutput::default();
        self.cast_vote(block, votes.to_vec(), &mut out);
        Ok(out)
    }

    fn cast_vote(&mut self, block: &Block, votes: Vec<Vote>, out: &mut EngineOutput) {
        let mu = self.my_committee();
        let sig = self.sign(&vote_payload(block.view, block.id));
        out.events.push(EngineEvent::Approved {
            view: block.view,
            block: block.id,
            voter: self.id,
            children: votes.iter().map(|v| v.voter).collect(),
        });
        if self.mutation != Some(Mutation::SkipVotedViewUpdate) {
            self.highest_voted_view = block.view;
        }
        self.voted_views.insert(block.view);
        self.stats.votes_cast += 1;
        self.update_high_qc(&block.qc);
        if mu == 1 {
            let qc = (!votes.is_empty()).then(|| {
                let parts: Vec<(Signature, usize)> =
                    votes.iter().map(|v| (v.sig, self.signer_index(v.voter))).collect();
                self.build_qc(block.view, block.id, &parts)
            });
            let used: BTreeSet<NodeId> = votes.iter().map(|v| v.voter).collect();
            let vote = Vote { view: block.view, block: block.id, voter: self.id, qc, sig };
            out.send(Message::Vote(vote), Destination::Leader(self.leader_of(block.view + 1)));
            for (_, pending) in self.child_votes.range((block.view, BlockId::ZERO)..=(block.view, BlockId([0xff; 32]))) {
                for v in &pending.order {
                    if !used.contains(&v.voter) && self.forwarded_votes.insert((v.view, v.voter, v.block)) {
                        out.send(Message::Vote(v.clone()), Destination::Leader(self.leader_of(v.view + 1)));
                    }
                }
            }
        } else {
            let vote = Vote { view: block.view, block: block.id, voter: self.id, qc: None, sig };
            out.send(Message::Vote(vote), Destination::ParentCommittee(self.parent_members()));
        }
    }

    fn build_qc(&self, view: View, block: BlockId, parts: &[(Signature, usize)]) -> Qc {
        let agg_sig = self.scheme.aggregate(parts).expect("distinct signers");
        Qc { view, block, voters: agg_sig.signers.clone(), agg_sig }
    }

    /// A vote as a Byzantine node would cast it on receipt, ignoring every
    /// precondition. Does not change state.
    pub fn forge_vote(&self, block: &Block) -> (Message, Destination) {
        let sig = self.sign(&vote_payload(block.view, block.id));
        let vote = Vote { view: block.view, block: block.id, voter: self.id, qc: None, sig };
        let to = if self.my_committee() == 1 {
            Destination::Leader(self.leader_of(block.view + 1))
        } else {
            Destination::ParentCommittee(self.parent_members())
        };
        (Message::Vote(vote), to)
    }

    fn on_vote(&mut self, vote: Vote) -> EngineOutput {
        let mut out = EngineOutput::default();
        let Some(voter_idx) = self.tree.index_of(vote.voter) else { return out };

        let leader_role = self.leader_of(vote.view + 1) == self.id
            && self.tree.in_root_subtree(vote.voter)
            && !self.proposed.contains(&(vote.view + 1))
            && self.leader_votes.get(&(vote.view, vote.block)).is_none_or(|e| {
                !e.contains_key(&voter_idx) || vote.qc.as_ref().is_some_and(|qc| qc.voters.ones().any(|i| !e.contains_key(&i)))
            });
        let is_child = self.is_child(vote.voter);
        let forward_role = is_child
            && self.my_committee() == 1
            && self.voted_views.contains(&vote.view)
            && !self.forwarded_votes.contains(&(vote.view, vote.voter, vote.block));
        let collect_role = is_child
            && vote.view > self.highest_voted_view
            && vote.view >= self.current_view
            && !self.child_votes.get(&(vote.view, vote.block)).is_some_and(|p| p.senders.contains(&vote.voter));
        if !(leader_role || forward_role || collect_role) {
            return out;
        }

        let violations = self.ctx().validate_vote(&vote);
        if !violations.is_empty() {
            self.reject(&mut out, "vote", violations);
            return out;
        }

        if forward_role {
            self.forward_extra_root_votes_into(&vote, &mut out);
        }
        if collect_role {
            let pending = self.child_votes.entry((vote.view, vote.block)).or_default();
            pending.senders.insert(vote.voter);
            pending.order.push(vote.clone());
            self.try_approve(vote.block, &mut out);
        }
        if leader_role {
            let entries = self.leader_votes.entry((vote.view, vote.block)).or_default();
            entries.insert(voter_idx, vote.sig);
            if let Some(qc) = &vote.qc {
                for (i, tag) in qc.agg_sig.entries() {
                    entries.insert(i, *tag);
                }
            }
            if entries.len() >= self.tree.leader_supermajority_threshold() {
                let parts: Vec<(Signature, usize)> = entries.iter().map(|(&i, &s)| (s, i)).collect();
                self.propose_from_votes(vote.view, vote.block, &parts, &mut out);
            }
        }
        out
    }

    /// Relays a child vote received after this root member already voted.
    /// Exact duplicates are dropped.
    pub fn forward_extra_root_votes(&mut self, vote: &Vote) -> EngineOutput {
        let mut out = EngineOutput::default();
        if self.my_committee() == 1 && self.voted_views.contains(&vote.view) && self.is_child(vote.voter) {
            self.forward_extra_root_votes_into(vote, &mut out);
        }
        out
    }

    fn forward_extra_root_votes_into(&mut self, vote: &Vote, out: &mut EngineOutput) {
        if self.forwarded_votes.insert((vote.view, vote.voter, vote.block)) {
            out.send(Message::Vote(vote.clone()), Destination::Leader(self.leader_of(vote.view + 1)));
        }
    }

    fn propose_from_votes(&mut self, view: View, block: BlockId, parts: &[(Signature, usize)], out: &mut EngineOutput) {
        if !self.proposed.insert(view + 1) {
            return;
        }
        let qc = self.build_qc(view, block, parts);
        out.events.push(EngineEvent::QcFormed { view, block, voters: qc.voters.ones().map(|i| self.node_at(i)).collect() });
        let proposal = Block::new(view + 1, qc, None, self.make_txs(view + 1));
        self.stats.proposals += 1;
        out.send(Message::Proposal(proposal), Destination::Broadcast);
    }

    /// Builds the block for `view` from a leader quorum. Signatures are
    /// assumed verified; thresholds and shape are checked here.
    pub fn propose_block(&mut self, view: View, quorum: Quorum) -> Result<(Block, EngineOutput), EngineError> {
        if self.leader_of(view) != self.id {
            return Err(EngineError::NotLeader { node: self.id, view });
        }
        let need = self.tree.leader_supermajority_threshold();
        let mut out = EngineOutput::default();
        match quorum {
            Quorum::Votes(votes) => {
                let first = votes.first().ok_or(EngineError::BelowThreshold { have: 0, need })?;
                let (qc_view, block) = (first.view, first.block);
                if qc_view + 1 != view || votes.iter().any(|v| v.view != qc_view || v.block != block) {
                    return Err(EngineError::Precondition("votes must all certify one block of view - 1".into()));
                }
                let mut entries = BTreeMap::new();
                for v in &votes {
                    entries.insert(self.signer_index(v.voter), v.sig);
                    if let Some(qc) = &v.qc {
                        entries.extend(qc.agg_sig.entries().map(|(i, s)| (i, *s)));
                    }
                }
                if entries.len() < need {
                    return Err(EngineError::BelowThreshold { have: entries.len(), need });
                }
                if self.proposed.contains(&view) {
                    return Err(EngineError::Precondition(format!("already proposed in view {view}")));
                }
                let parts: Vec<(Signature, usize)> = entries.iter().map(|(&i, &s)| (s, i)).collect();
                self.propose_from_votes(qc_view, block, &parts, &mut out);
            }
            Quorum::NewViews(nvs) => {
                let first = nvs.first().ok_or(EngineError::BelowThreshold { have: 0, need })?;
                if nvs.iter().any(|n| n.view != view || n.timeout_qc.view + 1 != view) {
                    return Err(EngineError::Precondition("new-views must all target the proposal view".into()));
                }
                let mut acc = LeaderNewViews { entries: BTreeMap::new(), best: first.high_qc.clone() };
                for nv in &nvs {
                    self.absorb_new_view(&mut acc, nv);
                }
                if acc.entries.len() < need {
                    return Err(EngineError::BelowThreshold { have: acc.entries.len(), need });
                }
                if self.proposed.contains(&view) {
                    return Err(EngineError::Precondition(format!("already proposed in view {view}")));
                }
                self.propose_from_new_views(view, &acc, &mut out);
            }
        }
        let block = match &out.outbound.last().expect("proposal emitted").msg {
            Message::Proposal(b) => b.clone(),
            _ => unreachable!("proposal is the last output"),
        };
        Ok((block, out))
    }

    // -- timeouts --------------------------------------------------------------

    /// Stops voting in the current view and, for root-subtree members, reports
    /// the local high certificate to the root committee. Idempotent per view.
    pub fn local_timeout(&mut self) -> EngineOutput {
        let mut out = EngineOutput::default();
        let view = self.current_view;
        if self.timed_out == Some(view) {
            return out;
        }
        self.timed_out = Some(view);
        self.highest_voted_view = self.highest_voted_view.max(view);
        if self.tree.in_root_subtree(self.id) {
            let high_qc = self.local_high_qc.clone();
            let sig = self.sign(&timeout_payload(view, high_qc.view));
            let t = Timeout { view, high_qc, sender: self.id, sig };
            self.stats.timeouts_sent += 1;
            out.send(Message::Timeout(t), Destination::RootCommittee(self.root_members()));
        }
        out
    }

    fn on_timeout(&mut self, t: Timeout) -> EngineOutput {
        let mut out = EngineOutput::default();
        if self.my_committee() != 1
            || t.view < self.current_view
            || self.tqc_built.contains(&t.view)
            || !self.tree.in_root_subtree(t.sender)
            || self.timeouts.get(&t.view).is_some_and(|p| p.senders.contains(&t.sender))
        {
            return out;
        }
        let violations = self.ctx().validate_timeout(&t);
        if !violations.is_empty() {
            self.reject(&mut out, "timeout", violations);
            return out;
        }
        let view = t.view;
        let pending = self.timeouts.entry(view).or_default();
        pending.senders.insert(t.sender);
        pending.order.push(t);
        if pending.order.len() >= self.tree.leader_supermajority_threshold() {
            let msgs = pending.order.clone();
            if let Ok(tqc) = self.timeout_detected(&msgs) {
                self.tqc_built.insert(view);
                out.events.push(EngineEvent::TimeoutQcFormed { view, senders: tqc.senders.count_ones() });
                out.send(Message::TimeoutQc(tqc), Destination::Broadcast);
            }
        }
        out
    }

    /// Builds a timeout certificate from at least the leader threshold of
    /// timeouts for one view.
    pub fn timeout_detected(&self, msgs: &[Timeout]) -> Result<TimeoutQc, EngineError> {
        if self.my_committee() != 1 {
            return Err(EngineError::Precondition("only root-committee members build timeout certificates".into()));
        }
        let need = self.tree.leader_supermajority_threshold();
        let first = msgs.first().ok_or(EngineError::BelowThreshold { have: 0, need })?;
        if msgs.iter().any(|m| m.view != first.view) {
            return Err(EngineError::MixedViews);
        }
        let by_signer: BTreeMap<usize, &Timeout> = msgs.iter().map(|m| (self.signer_index(m.sender), m)).collect();
        if by_signer.len() < need {
            return Err(EngineError::BelowThreshold { have: by_signer.len(), need });
        }
        if first.view < self.current_view {
            return Err(EngineError::Precondition("timeouts are for a past view".into()));
        }
        let high_qc = by_signer.values().map(|m| &m.high_qc).max_by_key(|q| q.view).expect("non-empty").clone();
        let parts: Vec<(Signature, usize)> = by_signer.iter().map(|(&i, m)| (m.sig, i)).collect();
        let agg_sig = self.scheme.aggregate(&parts).expect("distinct signers");
        Ok(TimeoutQc {
            view: first.view,
            high_qc,
            senders: agg_sig.signers.clone(),
            qc_views: by_signer.values().map(|m| m.high_qc.view).collect(),
            agg_sig,
        })
    }

    fn on_timeout_qc(&mut self, tqc: TimeoutQc) -> EngineOutput {
        let mut out = EngineOutput::default();
        // A late certificate still moves the overlay forward, so nodes that
        // saw it before and after leaving its view agree on the tree.
        let late = tqc.view < self.current_view;
        if late && tqc.view <= self.epoch {
            return out;
        }
        let violations = self.ctx().validate_timeout_qc(&tqc);
        if !violations.is_empty() {
            self.reject(&mut out, "timeout_qc", violations);
            return out;
        }
        if late {
            self.update_high_qc(&tqc.high_qc);
            self.rebuild_overlay(tqc.view, &mut out);
            return out;
        }
        self.receive_timeout_qc(tqc)
    }

    /// Moves to the view after a validated timeout certificate, rebuilds the
    /// overlay and, where possible, sends the new-view message. Stale
    /// certificates are ignored.
    pub fn receive_timeout_qc(&mut self, tqc: TimeoutQc) -> EngineOutput {
        let mut out = EngineOutput::default();
        if tqc.view < self.current_view {
            return out;
        }
        self.update_high_qc(&tqc.high_qc);
        let view = tqc.view;
        self.last_view_timeout_qc = Some(tqc);
        self.rebuild_overlay(view, &mut out);
        self.enter_view(view + 1, &mut out);
        self.try_new_view(&mut out);
        out
    }

    fn try_new_view(&mut self, out: &mut EngineOutput) {
        let Some(tqc) = self.last_view_timeout_qc.clone() else { return };
        let view = tqc.view + 1;
        if view != self.current_view || self.last_new_view_sent >= view || self.highest_voted_view >= view {
            return;
        }
        let threshold = self.child_threshold();
        let nvs: Vec<NewView> = if threshold == 0 {
            Vec::new()
        } else {
            let Some(pending) = self.child_new_views.get(&view) else { return };
            let eligible: Vec<NewView> = pending.order.iter().filter(|n| self.is_child(n.sender)).cloned().collect();
            if eligible.len() < threshold {
                return;
            }
            eligible[..threshold].to_vec()
        };
        self.send_new_view(tqc, nvs, out);
    }

    /// Sends this node's new-view for `tqc.view + 1` given exactly the child
    /// threshold of child new-views. Fails without side effects otherwise.
    pub fn approve_new_view(&mut self, tqc: &TimeoutQc, new_views: &[NewView]) -> Result<EngineOutput, EngineError> {
        let view = tqc.view + 1;
        if let Some(n) = new_views.iter().find(|n| n.view != view) {
            return Err(EngineError::Precondition(format!(
                "new_view.view {} != timeout_qc.view + 1 = {view}",
                n.view
            )));
        }
        if self.highest_voted_view >= view {
            return Err(EngineError::Precondition("already voted in the new view".into()));
        }
        if self.last_view_timeout_qc.as_ref().is_some_and(|last| last.view >= view) {
            return Err(EngineError::Precondition("new view is not after the last timeout certificate".into()));
        }
        let need = self.child_threshold();
        if new_views.len() != need {
            return Err(EngineError::BelowThreshold { have: new_views.len(), need });
        }
        let senders: BTreeSet<NodeId> = new_views.iter().map(|n| n.sender).collect();
        if senders.len() != new_views.len() || new_views.iter().any(|n| !self.is_child(n.sender)) {
            return Err(EngineError::Precondition("senders must be distinct child-committee members".into()));
        }
        let mut out = EngineOutput::default();
        self.send_new_view(tqc.clone(), new_views.to_vec(), &mut out);
        Ok(out)
    }

    fn send_new_view(&mut self, tqc: TimeoutQc, nvs: Vec<NewView>, out: &mut EngineOutput) {
        let view = tqc.view + 1;
        self.update_high_qc(&tqc.high_qc);
        for nv in &nvs {
            self.update_high_qc(&nv.high_qc);
        }
        self.highest_voted_view = self.highest_voted_view.max(tqc.view);
        self.last_new_view_sent = view;
        let root = self.my_committee() == 1;
        let agg_qc = (root && !nvs.is_empty()).then(|| {
            let mut acc = LeaderNewViews { entries: BTreeMap::new(), best: nvs[0].high_qc.clone() };
            for nv in &nvs {
                acc.entries.insert(self.signer_index(nv.sender), (nv.high_qc.view, nv.sig));
                if nv.high_qc.view > acc.best.view {
                    acc.best = nv.high_qc.clone();
                }
            }
            self.build_agg_qc(tqc.view, &acc)
        });
        let high_qc = self.local_high_qc.clone();
        let sig = self.sign(&new_view_payload(view, high_qc.view));
        out.events.push(EngineEvent::NewViewSent { view, high_qc_view: high_qc.view });
        let nv = NewView { view, high_qc, sender: self.id, timeout_qc: tqc, agg_qc, sig };
        self.stats.new_views_sent += 1;
        if root {
            let leader = self.leader_of(view);
            out.send(Message::NewView(nv), Destination::Leader(leader));
            let used: BTreeSet<NodeId> = nvs.iter().map(|n| n.sender).collect();
            if let Some(pending) = self.child_new_views.get(&view) {
                for extra in pending.order.iter().filter(|n| !used.contains(&n.sender)) {
                    if self.forwarded_new_views.insert((view, extra.sender)) {
                        out.send(Message::NewView(extra.clone()), Destination::Leader(leader));
                    }
                }
            }
        } else {
            out.send(Message::NewView(nv), Destination::ParentCommittee(self.parent_members()));
        }
    }

    fn build_agg_qc(&self, failed_view: View, acc: &LeaderNewViews) -> AggregatedQc {
        let parts: Vec<(Signature, usize)> = acc.entries.iter().map(|(&i, &(_, s))| (s, i)).collect();
        let agg_sig = self.scheme.aggregate(&parts).expect("distinct signers");
        AggregatedQc {
            view: failed_view,
            qc_views: acc.entries.values().map(|&(v, _)| v).collect(),
            senders: agg_sig.signers.clone(),
            high_qc: acc.best.clone(),
            agg_sig,
        }
    }

    fn absorb_new_view(&self, acc: &mut LeaderNewViews, nv: &NewView) {
        acc.entries.insert(self.signer_index(nv.sender), (nv.high_qc.view, nv.sig));
        if nv.high_qc.view > acc.best.view {
            acc.best = nv.high_qc.clone();
        }
        if let Some(agg) = &nv.agg_qc {
            for ((i, tag), &v) in agg.agg_sig.entries().zip(agg.qc_views.iter()) {
                acc.entries.insert(i, (v, *tag));
            }
            if agg.high_qc.view > acc.best.view {
                acc.best = agg.high_qc.clone();
            }
        }
    }

    fn propose_from_new_views(&mut self, view: View, acc: &LeaderNewViews, out: &mut EngineOutput) {
        if !self.proposed.insert(view) {
            return;
        }
        let agg = self.build_agg_qc(view - 1, acc);
        let block = Block::new(view, acc.best.clone(), Some(agg), self.make_txs(view));
        self.stats.proposals += 1;
        out.send(Message::Proposal(block), Destination::Broadcast);
    }

    fn on_new_view(&mut self, nv: NewView) -> EngineOutput {
        let mut out = EngineOutput::default();
        if nv.view != nv.timeout_qc.view + 1 {
            self.reject(&mut out, "new_view", vec![Violation::ViewArithmetic("new_view.view != timeout_qc.view + 1".into())]);
            return out;
        }
        // The embedded certificate lets a node that missed the broadcast catch up.
        let known = self.last_view_timeout_qc.as_ref().is_some_and(|t| t.view == nv.timeout_qc.view);
        if !known && nv.timeout_qc.view >= self.current_view {
            out.extend(self.on_timeout_qc(nv.timeout_qc.clone()));
        }
        let known = self.last_view_timeout_qc.as_ref().is_some_and(|t| t.view == nv.timeout_qc.view);
        let Some(sender_idx) = self.tree.index_of(nv.sender) else { return out };

        let leader_role = self.leader_of(nv.view) == self.id
            && self.tree.in_root_subtree(nv.sender)
            && !self.proposed.contains(&nv.view)
            && self.leader_new_views.get(&nv.view).is_none_or(|acc| {
                !acc.entries.contains_key(&sender_idx)
                    || nv.agg_qc.as_ref().is_some_and(|a| a.senders.ones().any(|i| !acc.entries.contains_key(&i)))
            });
        let is_child = self.is_child(nv.sender);
        let forward_role = is_child
            && self.my_committee() == 1
            && self.last_new_view_sent >= nv.view
            && !self.forwarded_new_views.contains(&(nv.view, nv.sender));
        let collect_role = is_child
            && nv.view == self.current_view
            && self.last_new_view_sent < nv.view
            && !self.child_new_views.get(&nv.view).is_some_and(|p| p.senders.contains(&nv.sender));
        if !(leader_role || forward_role || collect_role) {
            return out;
        }

        let violations = if known {
            self.ctx().validate_new_view_known_tqc(&nv)
        } else {
            self.ctx().validate_new_view(&nv)
        };
        if !violations.is_empty() {
            self.reject(&mut out, "new_view", violations);
            return out;
        }
        self.update_high_qc(&nv.high_qc);

        if forward_role && self.forwarded_new_views.insert((nv.view, nv.sender)) {
            out.send(Message::NewView(nv.clone()), Destination::Leader(self.leader_of(nv.view)));
        }
        if collect_role {
            let pending = self.child_new_views.entry(nv.view).or_default();
            pending.senders.insert(nv.sender);
            pending.order.push(nv.clone());
            self.try_new_view(&mut out);
        }
        if leader_role {
            let mut acc = self
                .leader_new_views
                .remove(&nv.view)
                .unwrap_or_else(|| LeaderNewViews { entries: BTreeMap::new(), best: nv.high_qc.clone() });
            self.absorb_new_view(&mut acc, &nv);
            if acc.entries.len() >= self.tree.leader_supermajority_threshold() {
                self.propose_from_new_views(nv.view, &acc, &mut out);
            }
            self.leader_new_views.insert(nv.view, acc);
        }
        out
    }
}
