//! Committee-tree overlay.
//!
//! The node set is sorted, shuffled with a seeded Fisher-Yates pass and cut
//! into `K = floor(N / n)` committees. The `r = N mod n` leftover nodes go one
//! each to the highest-indexed committees (wrapping round when `r >= K`),
//! so committee sizes differ by at most one. Committees are 1-indexed; committee `μ` has children `2μ` and
//! `2μ + 1` when those exist, and committee 1 is the root.

use std::collections::HashMap;
use std::fmt;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::rng::{hash_parts, DetRng, Seed};

/// Opaque, totally ordered node identifier.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// `NodeId(0) .. NodeId(count - 1)`.
pub fn node_range(count: usize) -> Vec<NodeId> {
    (0..count as u64).map(NodeId).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OverlayError {
    #[error("node set is empty")]
    EmptyNodeSet,
    #[error("node {0} appears more than once")]
    DuplicateNode(NodeId),
    #[error("committee size {size} is invalid for {nodes} nodes")]
    InvalidCommitteeSize { size: usize, nodes: usize },
    #[error("committee index {index} is outside 1..={k}")]
    IndexOutOfRange { index: usize, k: usize },
    #[error("node {0} is not part of the overlay")]
    UnknownNode(NodeId),
    #[error("malformed tree: {0}")]
    Malformed(String),
}

/// Inputs to overlay formation besides the node set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlayParams {
    /// Base committee size.
    pub n: usize,
    /// Shuffle seed.
    pub xi: Seed,
}

/// Sorts and checks a node set for duplicates.
fn canonical_nodes(nodes: &[NodeId]) -> Result<Vec<NodeId>, OverlayError> {
    if nodes.is_empty() {
        return Err(OverlayError::EmptyNodeSet);
    }
    let mut sorted = nodes.to_vec();
    sorted.sort_unstable();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(OverlayError::DuplicateNode(w[0]));
    }
    Ok(sorted)
}

/// Seeded Fisher-Yates permutation of `nodes`.
///
/// The input is sorted first, so the output depends only on the node set and
/// the seed, never on the order the caller supplied.
pub fn shuffle(nodes: &[NodeId], xi: &Seed) -> Result<Vec<NodeId>, OverlayError> {
    let mut sorted = canonical_nodes(nodes)?;
    let mut rng = DetRng::derived(xi, "overlay/shuffle", 0);
    rng.shuffle(&mut sorted);
    Ok(sorted)
}

/// Binary tree of committees with index arithmetic and vote thresholds.
#[derive(Debug, Clone)]
pub struct CommitteeTree {
    committees: Vec<Vec<NodeId>>,
    n: usize,
    r: usize,
    seed: Seed,
    /// Sorted node set; bit positions in signer arrays refer to this order.
    nodes: Vec<NodeId>,
    membership: HashMap<NodeId, usize>,
}

impl PartialEq for CommitteeTree {
    fn eq(&self, other: &Self) -> bool {
        self.committees == other.committees
            && self.n == other.n
            && self.r == other.r
            && self.seed == other.seed
    }
}

impl Eq for CommitteeTree {}

/// Builds the overlay tree.
pub fn form_overlay(nodes: &[NodeId], params: OverlayParams) -> Result<CommitteeTree, OverlayError> {
    let total = nodes.len();
    if params.n == 0 || params.n > total {
        if total == 0 {
            return Err(OverlayError::EmptyNodeSet);
        }
        return Err(OverlayError::InvalidCommitteeSize { size: params.n, nodes: total });
    }
    let shuffled = shuffle(nodes, &params.xi)?;
    let k = total / params.n;
    let r = total % params.n;

    // Fill from C_K down to C_1; the highest-indexed committees take the
    // extra nodes. When r >= K the extras wrap, so sizes stay within one.
    let (base, extra) = (total / k, total % k);
    let mut committees = vec![Vec::new(); k];
    let mut cursor = 0;
    for mu in (1..=k).rev() {
        let size = if mu > k - extra { base + 1 } else { base };
        committees[mu - 1] = shuffled[cursor..cursor + size].to_vec();
        cursor += size;
    }
    debug_assert_eq!(cursor, total);

    CommitteeTree::from_parts(committees, params.n, r, params.xi)
}

impl CommitteeTree {
    fn from_parts(
        mut committees: Vec<Vec<NodeId>>,
        n: usize,
        r: usize,
        seed: Seed,
    ) -> Result<Self, OverlayError> {
        if committees.is_empty() {
            return Err(OverlayError::EmptyNodeSet);
        }
        let mut membership = HashMap::new();
        for (idx, committee) in committees.iter_mut().enumerate() {
            committee.sort_unstable();
            for &node in committee.iter() {
                if membership.insert(node, idx + 1).is_some() {
                    return Err(OverlayError::DuplicateNode(node));
                }
            }
        }
        let mut nodes: Vec<NodeId> = membership.keys().copied().collect();
        nodes.sort_unstable();
        Ok(CommitteeTree { committees, n, r, seed, nodes, membership })
    }

    /// Number of committees `K`.
    pub fn k(&self) -> usize {
        self.committees.len()
    }

    pub fn base_size(&self) -> usize {
        self.n
    }

    pub fn remainder(&self) -> usize {
        self.r
    }

    pub fn seed(&self) -> &Seed {
        &self.seed
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Sorted node set.
    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn committees(&self) -> &[Vec<NodeId>] {
        &self.committees
    }

    fn check_index(&self, mu: usize) -> Result<(), OverlayError> {
        if mu == 0 || mu > self.k() {
            Err(OverlayError::IndexOutOfRange { index: mu, k: self.k() })
        } else {
            Ok(())
        }
    }

    /// Members of committee `mu` (sorted).
    pub fn committee(&self, mu: usize) -> Result<&[NodeId], OverlayError> {
        self.check_index(mu)?;
        Ok(&self.committees[mu - 1])
    }

    /// Size of committee `mu`, or 0 if it does not exist.
    pub fn size_of(&self, mu: usize) -> usize {
        if mu == 0 || mu > self.k() {
            0
        } else {
            self.committees[mu - 1].len()
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.committees.iter().map(Vec::len).collect()
    }

    pub fn parent(&self, mu: usize) -> Result<Option<usize>, OverlayError> {
        self.check_index(mu)?;
        Ok(if mu == 1 { None } else { Some(mu / 2) })
    }

    pub fn children(&self, mu: usize) -> Result<Vec<usize>, OverlayError> {
        self.check_index(mu)?;
        Ok([2 * mu, 2 * mu + 1].into_iter().filter(|&c| c <= self.k()).collect())
    }

    pub fn is_leaf(&self, mu: usize) -> Result<bool, OverlayError> {
        self.check_index(mu)?;
        Ok(2 * mu > self.k())
    }

    pub fn is_root(&self, mu: usize) -> Result<bool, OverlayError> {
        self.check_index(mu)?;
        Ok(mu == 1)
    }

    /// Depth of the tree (a single committee has depth 1).
    pub fn depth(&self) -> usize {
        (usize::BITS - self.k().leading_zeros()) as usize
    }

    /// Index of the committee holding `node`.
    pub fn committee_of(&self, node: NodeId) -> Result<usize, OverlayError> {
        self.membership.get(&node).copied().ok_or(OverlayError::UnknownNode(node))
    }

    /// Position of `node` in the sorted node set.
    pub fn index_of(&self, node: NodeId) -> Option<usize> {
        self.nodes.binary_search(&node).ok()
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.membership.contains_key(&node)
    }

    /// Combined membership of the existing children of `mu`.
    pub fn child_members(&self, mu: usize) -> Vec<NodeId> {
        [2 * mu, 2 * mu + 1]
            .into_iter()
            .filter(|&c| c <= self.k())
            .flat_map(|c| self.committees[c - 1].iter().copied())
            .collect()
    }

    /// Members of committees 1, 2 and 3 (those that exist).
    pub fn root_subtree_members(&self) -> Vec<NodeId> {
        (1..=self.k().min(3)).flat_map(|c| self.committees[c - 1].iter().copied()).collect()
    }

    pub fn in_root_subtree(&self, node: NodeId) -> bool {
        matches!(self.membership.get(&node), Some(&c) if c <= 3)
    }

    /// Votes a member of `mu` needs from its children before voting:
    /// `ceil(2S/3)` with `S` the combined size of the existing children, 0 for
    /// a leaf.
    pub fn child_supermajority_threshold(&self, mu: usize) -> usize {
        let s: usize = [2 * mu, 2 * mu + 1].into_iter().map(|c| self.size_of(c)).sum();
        (2 * s).div_ceil(3)
    }

    /// Votes the leader needs from committees 1..=3: `floor(2S/3) + 1`.
    pub fn leader_supermajority_threshold(&self) -> usize {
        let s: usize = (1..=3).map(|c| self.size_of(c)).sum();
        2 * s / 3 + 1
    }

    /// Child-robustness of every sibling pair given a set of faulty nodes: at
    /// least `2S/3` of each pair's combined membership is correct.
    pub fn children_robust(&self, faulty: &dyn Fn(NodeId) -> bool) -> bool {
        (1..=self.k()).all(|mu| {
            let members = self.child_members(mu);
            if members.is_empty() {
                return true;
            }
            let correct = members.iter().filter(|&&m| !faulty(m)).count();
            3 * correct >= 2 * members.len()
        })
    }

    pub fn to_canonical(&self) -> CanonicalTree {
        CanonicalTree {
            n_nodes: self.node_count(),
            k: self.k(),
            n: self.n,
            r: self.r,
            xi: self.seed,
            nodes: self.nodes.clone(),
            committees: self.committees.clone(),
            edges: (1..=self.k())
                .flat_map(|mu| {
                    [2 * mu, 2 * mu + 1]
                        .into_iter()
                        .filter(|&c| c <= self.k())
                        .map(move |c| [mu, c])
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_canonical()).expect("tree serializes")
    }
}

/// Canonical JSON form of a tree. Field order is fixed; ids within each
/// committee are sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalTree {
    pub n_nodes: usize,
    pub k: usize,
    pub n: usize,
    pub r: usize,
    pub xi: Seed,
    pub nodes: Vec<NodeId>,
    pub committees: Vec<Vec<NodeId>>,
    pub edges: Vec<[usize; 2]>,
}

impl TryFrom<CanonicalTree> for CommitteeTree {
    type Error = OverlayError;

    fn try_from(c: CanonicalTree) -> Result<Self, Self::Error> {
        if c.committees.len() != c.k {
            return Err(OverlayError::Malformed(format!(
                "k = {} but {} committees listed",
                c.k,
                c.committees.len()
            )));
        }
        let tree = CommitteeTree::from_parts(c.committees, c.n, c.r, c.xi)?;
        let mut nodes = c.nodes;
        nodes.sort_unstable();
        if tree.nodes != nodes || tree.node_count() != c.n_nodes {
            return Err(OverlayError::Malformed("node list does not match committees".into()));
        }
        if tree.to_canonical().edges != c.edges {
            return Err(OverlayError::Malformed("edge list does not match index arithmetic".into()));
        }
        Ok(tree)
    }
}

/// Leader election through a hash chain: `s_0` is the beacon seed and
/// `s_v = H(s_{v-1} || v)`. The leader of view `v` is drawn uniformly from the
/// sorted node set using `s_v`.
#[derive(Debug)]
pub struct Beacon {
    chain: Mutex<Vec<Seed>>,
}

impl Beacon {
    pub fn new(seed: Seed) -> Self {
        Beacon { chain: Mutex::new(vec![seed]) }
    }

    pub fn genesis(&self) -> Seed {
        self.chain.lock().expect("beacon lock")[0]
    }

    /// `s_view`.
    pub fn seed_for(&self, view: u64) -> Seed {
        let mut chain = self.chain.lock().expect("beacon lock");
        while (chain.len() as u64) <= view {
            let v = chain.len() as u64;
            let prev = chain[chain.len() - 1];
            chain.push(Seed(hash_parts(&[b"carnot/beacon", &prev.0, &v.to_be_bytes()])));
        }
        chain[view as usize]
    }

    /// Leader for `view` among `nodes` (which must be sorted and non-empty).
    pub fn leader(&self, view: u64, nodes: &[NodeId]) -> NodeId {
        let seed = self.seed_for(view);
        let mut rng = DetRng::derived(&seed, "leader", 0);
        nodes[rng.below(nodes.len() as u64) as usize]
    }
}

/// One-shot leader selection; see [`Beacon`].
pub fn leader_for_view(view: u64, beacon: &Seed, nodes: &[NodeId]) -> Result<NodeId, OverlayError> {
    let sorted = canonical_nodes(nodes)?;
    Ok(Beacon::new(*beacon).leader(view, &sorted))
}
