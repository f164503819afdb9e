//! Protocol objects, their canonical byte encoding, signing payloads and
//! structural validation.
//!
//! Encoding layout: integers are big-endian (`u64` for views and node ids,
//! `u32` for lengths and counts), options are a `0`/`1` byte followed by the
//! value, bit arrays are `len: u32` then `ceil(len/8)` bytes, aggregates are
//! the signer bit array then `count: u32` and the 32-byte tags. Every
//! top-level message starts with a one-byte type tag.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::overlay::{CommitteeTree, NodeId};
use crate::rng::sha256;
use crate::sigs::{AggSignature, BitArray, Signature, SignatureScheme};

pub type View = u64;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct BlockId(pub [u8; 32]);

impl BlockId {
    pub const ZERO: BlockId = BlockId([0; 32]);

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl fmt::Debug for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.short())
    }
}

impl Serialize for BlockId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for BlockId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        let raw = hex::decode(&s).map_err(serde::de::Error::custom)?;
        let bytes: [u8; 32] = raw.try_into().map_err(|_| serde::de::Error::custom("expected 32 bytes"))?;
        Ok(BlockId(bytes))
    }
}

/// Certificate that a threshold of nodes voted for `(view, block)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Qc {
    pub view: View,
    pub block: BlockId,
    pub voters: BitArray,
    pub agg_sig: AggSignature,
}

impl Qc {
    /// The certificate every node holds for the genesis block.
    pub fn genesis(genesis: BlockId, width: usize) -> Qc {
        Qc { view: 0, block: genesis, voters: BitArray::new(width), agg_sig: AggSignature::empty(width) }
    }

    pub fn is_genesis_for(&self, genesis: BlockId) -> bool {
        self.view == 0 && self.block == genesis && self.voters.count_ones() == 0
    }
}

/// Collection of new-view messages proving the highest certificate known to
/// a supermajority after a failed view. `view` is the failed view; the block
/// carrying it belongs to `view + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregatedQc {
    pub view: View,
    /// `high_qc.view` reported by each sender, in ascending sender order.
    pub qc_views: Vec<View>,
    pub senders: BitArray,
    pub high_qc: Qc,
    pub agg_sig: AggSignature,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub view: View,
    pub qc: Qc,
    pub agg_qc: Option<AggregatedQc>,
    pub txs: Vec<Vec<u8>>,
    pub id: BlockId,
}

impl Block {
    /// Builds a block and computes its id.
    pub fn new(view: View, qc: Qc, agg_qc: Option<AggregatedQc>, txs: Vec<Vec<u8>>) -> Block {
        let mut block = Block { view, qc, agg_qc, txs, id: BlockId::ZERO };
        block.id = block.compute_id();
        block
    }

    pub fn genesis(width: usize) -> Block {
        Block::new(0, Qc::genesis(BlockId::ZERO, width), None, Vec::new())
    }

    /// Content hash over `(view, qc, agg_qc, txs)`.
    pub fn compute_id(&self) -> BlockId {
        let mut out = Vec::new();
        out.extend_from_slice(b"carnot/block");
        self.view.encode_into(&mut out);
        self.qc.encode_into(&mut out);
        self.agg_qc.encode_into(&mut out);
        self.txs.encode_into(&mut out);
        BlockId(sha256(&out))
    }

    pub fn parent(&self) -> BlockId {
        self.qc.block
    }

    pub fn is_genesis(&self) -> bool {
        self.view == 0 && self.qc.block == BlockId::ZERO
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub view: View,
    pub block: BlockId,
    pub voter: NodeId,
    /// Child-level certificate, attached by root-committee members only.
    pub qc: Option<Qc>,
    pub sig: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timeout {
    pub view: View,
    pub high_qc: Qc,
    pub sender: NodeId,
    pub sig: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeoutQc {
    pub view: View,
    /// Highest certificate among the contributing timeouts.
    pub high_qc: Qc,
    pub senders: BitArray,
    /// `high_qc.view` of each contributing timeout, in ascending sender order.
    pub qc_views: Vec<View>,
    pub agg_sig: AggSignature,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewView {
    pub view: View,
    pub high_qc: Qc,
    pub sender: NodeId,
    pub timeout_qc: TimeoutQc,
    /// Built from child new-views, attached by root-committee members only.
    pub agg_qc: Option<AggregatedQc>,
    pub sig: Signature,
}

// Messages are moved once per delivery; boxing blocks buys nothing here.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "body", rename_all = "snake_case")]
pub enum Message {
    Proposal(Block),
    Vote(Vote),
    Timeout(Timeout),
    TimeoutQc(TimeoutQc),
    NewView(NewView),
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Proposal(_) => "proposal",
            Message::Vote(_) => "vote",
            Message::Timeout(_) => "timeout",
            Message::TimeoutQc(_) => "timeout_qc",
            Message::NewView(_) => "new_view",
        }
    }

    pub fn view(&self) -> View {
        match self {
            Message::Proposal(b) => b.view,
            Message::Vote(v) => v.view,
            Message::Timeout(t) => t.view,
            Message::TimeoutQc(t) => t.view,
            Message::NewView(n) => n.view,
        }
    }

    /// SHA-256 of the canonical encoding.
    pub fn digest(&self) -> [u8; 32] {
        sha256(&self.encode())
    }
}

// ---------------------------------------------------------------------------
// Signing payloads

pub fn vote_payload(view: View, block: BlockId) -> Vec<u8> {
    let mut out = b"carnot/vote".to_vec();
    out.extend_from_slice(&view.to_be_bytes());
    out.extend_from_slice(&block.0);
    out
}

pub fn timeout_payload(view: View, high_qc_view: View) -> Vec<u8> {
    let mut out = b"carnot/timeout".to_vec();
    out.extend_from_slice(&view.to_be_bytes());
    out.extend_from_slice(&high_qc_view.to_be_bytes());
    out
}

pub fn new_view_payload(view: View, high_qc_view: View) -> Vec<u8> {
    let mut out = b"carnot/new-view".to_vec();
    out.extend_from_slice(&view.to_be_bytes());
    out.extend_from_slice(&high_qc_view.to_be_bytes());
    out
}

// ---------------------------------------------------------------------------
// Canonical encoding

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("unexpected end of input")]
    Truncated,
    #[error("unknown tag {0}")]
    BadTag(u8),
    #[error("invalid bit array")]
    BadBits,
    #[error("{0} trailing bytes")]
    Trailing(usize),
    #[error("block id does not match content")]
    BadBlockId,
}

pub struct Reader<'a> {
    data: &'a [u8],
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Reader { data }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.data.len() < n {
            return Err(CodecError::Truncated);
        }
        let (head, tail) = self.data.split_at(n);
        self.data = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn bytes32(&mut self) -> Result<[u8; 32], CodecError> {
        Ok(self.take(32)?.try_into().expect("32 bytes"))
    }

    pub fn remaining(&self) -> usize {
        self.data.len()
    }
}

/// Deterministic, injective byte encoding.
pub trait Canonical: Sized {
    fn encode_into(&self, out: &mut Vec<u8>);
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError>;

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_into(&mut out);
        out
    }

    fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes);
        let value = Self::decode_from(&mut r)?;
        match r.remaining() {
            0 => Ok(value),
            n => Err(CodecError::Trailing(n)),
        }
    }
}

impl Canonical for u64 {
    fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_be_bytes());
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(u64::from_be_bytes(r.take(8)?.try_into().expect("8 bytes")))
    }
}

impl Canonical for NodeId {
    fn encode_into(&self, out: &mut Vec<u8>) {
        self.0.encode_into(out);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(NodeId(u64::decode_from(r)?))
    }
}

impl Canonical for BlockId {
    fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.0);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(BlockId(r.bytes32()?))
    }
}

impl Canonical for Signature {
    fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.0);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Signature(r.bytes32()?))
    }
}

impl Canonical for Vec<u8> {
    fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.len() as u32).to_be_bytes());
        out.extend_from_slice(self);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let len = r.u32()? as usize;
        Ok(r.take(len)?.to_vec())
    }
}

impl<T: Canonical> Canonical for Option<T> {
    fn encode_into(&self, out: &mut Vec<u8>) {
        match self {
            None => out.push(0),
            Some(v) => {
                out.push(1);
                v.encode_into(out);
            }
        }
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        match r.u8()? {
            0 => Ok(None),
            1 => Ok(Some(T::decode_from(r)?)),
            t => Err(CodecError::BadTag(t)),
        }
    }
}

macro_rules! canonical_list {
    ($t:ty) => {
        impl Canonical for Vec<$t> {
            fn encode_into(&self, out: &mut Vec<u8>) {
                out.extend_from_slice(&(self.len() as u32).to_be_bytes());
                for item in self {
                    item.encode_into(out);
                }
            }
            fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
                let count = r.u32()? as usize;
                // Every element takes at least one byte.
                if count > r.remaining() {
                    return Err(CodecError::Truncated);
                }
                (0..count).map(|_| <$t>::decode_from(r)).collect()
            }
        }
    };
}

canonical_list!(Vec<u8>);
canonical_list!(u64);
canonical_list!(Signature);

impl Canonical for BitArray {
    fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.len() as u32).to_be_bytes());
        out.extend_from_slice(self.as_bytes());
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let len = r.u32()? as usize;
        let bytes = r.take(len.div_ceil(8))?.to_vec();
        BitArray::from_bytes(len, bytes).ok_or(CodecError::BadBits)
    }
}

impl Canonical for AggSignature {
    fn encode_into(&self, out: &mut Vec<u8>) {
        self.signers.encode_into(out);
        self.tags.encode_into(out);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(AggSignature { signers: BitArray::decode_from(r)?, tags: Vec::<Signature>::decode_from(r)? })
    }
}

impl Canonical for Qc {
    fn encode_into(&self, out: &mut Vec<u8>) {
        self.view.encode_into(out);
        self.block.encode_into(out);
        self.voters.encode_into(out);
        self.agg_sig.encode_into(out);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Qc {
            view: u64::decode_from(r)?,
            block: BlockId::decode_from(r)?,
            voters: BitArray::decode_from(r)?,
            agg_sig: AggSignature::decode_from(r)?,
        })
    }
}

impl Canonical for AggregatedQc {
    fn encode_into(&self, out: &mut Vec<u8>) {
        self.view.encode_into(out);
        self.qc_views.encode_into(out);
        self.senders.encode_into(out);
        self.high_qc.encode_into(out);
        self.agg_sig.encode_into(out);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(AggregatedQc {
            view: u64::decode_from(r)?,
            qc_views: Vec::<u64>::decode_from(r)?,
            senders: BitArray::decode_from(r)?,
            high_qc: Qc::decode_from(r)?,
            agg_sig: AggSignature::decode_from(r)?,
        })
    }
}

impl Canonical for Block {
    fn encode_into(&self, out: &mut Vec<u8>) {
        self.view.encode_into(out);
        self.qc.encode_into(out);
        self.agg_qc.encode_into(out);
        self.txs.encode_into(out);
        self.id.encode_into(out);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let block = Block {
            view: u64::decode_from(r)?,
            qc: Qc::decode_from(r)?,
            agg_qc: Option::<AggregatedQc>::decode_from(r)?,
            txs: Vec::<Vec<u8>>::decode_from(r)?,
            id: BlockId::decode_from(r)?,
        };
        Ok(block)
    }
}

impl Canonical for Vote {
    fn encode_into(&self, out: &mut Vec<u8>) {
        self.view.encode_into(out);
        self.block.encode_into(out);
        self.voter.encode_into(out);
        self.qc.encode_into(out);
        self.sig.encode_into(out);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Vote {
            view: u64::decode_from(r)?,
            block: BlockId::decode_from(r)?,
            voter: NodeId::decode_from(r)?,
            qc: Option::<Qc>::decode_from(r)?,
            sig: Signature::decode_from(r)?,
        })
    }
}

impl Canonical for Timeout {
    fn encode_into(&self, out: &mut Vec<u8>) {
        self.view.encode_into(out);
        self.high_qc.encode_into(out);
        self.sender.encode_into(out);
        self.sig.encode_into(out);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Timeout {
            view: u64::decode_from(r)?,
            high_qc: Qc::decode_from(r)?,
            sender: NodeId::decode_from(r)?,
            sig: Signature::decode_from(r)?,
        })
    }
}

impl Canonical for TimeoutQc {
    fn encode_into(&self, out: &mut Vec<u8>) {
        self.view.encode_into(out);
        self.high_qc.encode_into(out);
        self.senders.encode_into(out);
        self.qc_views.encode_into(out);
        self.agg_sig.encode_into(out);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(TimeoutQc {
            view: u64::decode_from(r)?,
            high_qc: Qc::decode_from(r)?,
            senders: BitArray::decode_from(r)?,
            qc_views: Vec::<u64>::decode_from(r)?,
            agg_sig: AggSignature::decode_from(r)?,
        })
    }
}

impl Canonical for NewView {
    fn encode_into(&self, out: &mut Vec<u8>) {
        self.view.encode_into(out);
        self.high_qc.encode_into(out);
        self.sender.encode_into(out);
        self.timeout_qc.encode_into(out);
        self.agg_qc.encode_into(out);
        self.sig.encode_into(out);
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(NewView {
            view: u64::decode_from(r)?,
            high_qc: Qc::decode_from(r)?,
            sender: NodeId::decode_from(r)?,
            timeout_qc: TimeoutQc::decode_from(r)?,
            agg_qc: Option::<AggregatedQc>::decode_from(r)?,
            sig: Signature::decode_from(r)?,
        })
    }
}

impl Canonical for Message {
    fn encode_into(&self, out: &mut Vec<u8>) {
        match self {
            Message::Proposal(b) => {
                out.push(1);
                b.encode_into(out);
            }
            Message::Vote(v) => {
                out.push(2);
                v.encode_into(out);
            }
            Message::Timeout(t) => {
                out.push(3);
                t.encode_into(out);
            }
            Message::TimeoutQc(t) => {
                out.push(4);
                t.encode_into(out);
            }
            Message::NewView(n) => {
                out.push(5);
                n.encode_into(out);
            }
        }
    }
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(match r.u8()? {
            1 => Message::Proposal(Block::decode_from(r)?),
            2 => Message::Vote(Vote::decode_from(r)?),
            3 => Message::Timeout(Timeout::decode_from(r)?),
            4 => Message::TimeoutQc(TimeoutQc::decode_from(r)?),
            5 => Message::NewView(NewView::decode_from(r)?),
            t => return Err(CodecError::BadTag(t)),
        })
    }
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum Violation {
    Signature(String),
    Threshold { what: String, have: usize, need: usize },
    ViewArithmetic(String),
    Membership(String),
    Structure(String),
}

/// Which threshold a certificate must meet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QcLevel {
    /// Built by the leader from committees 1..=3.
    Leader,
    /// Built by a member of committee `mu` from its children's votes.
    Child(usize),
}

/// Everything needed to check an object: the overlay it was produced under,
/// the signature scheme (which also fixes signer indices) and the genesis id.
pub struct ValidationContext<'a> {
    pub tree: &'a CommitteeTree,
    pub scheme: &'a dyn SignatureScheme,
    pub genesis: BlockId,
}

impl ValidationContext<'_> {
    fn node_at(&self, index: usize) -> Option<NodeId> {
        self.tree.nodes().get(index).copied()
    }

    fn signer_index(&self, node: NodeId) -> Option<usize> {
        self.tree.index_of(node)
    }

    fn check_single(&self, out: &mut Vec<Violation>, what: &str, node: NodeId, payload: &[u8], sig: &Signature) {
        let ok = self
            .signer_index(node)
            .and_then(|i| self.scheme.public_key(i))
            .is_some_and(|pk| self.scheme.verify(pk, payload, sig));
        if !ok {
            out.push(Violation::Signature(format!("{what} signature by {node} does not verify")));
        }
    }

    fn check_threshold(&self, out: &mut Vec<Violation>, what: &str, have: usize, level: QcLevel) {
        let need = match level {
            QcLevel::Leader => self.tree.leader_supermajority_threshold(),
            QcLevel::Child(mu) => self.tree.child_supermajority_threshold(mu),
        };
        if have < need {
            out.push(Violation::Threshold { what: what.to_string(), have, need });
        }
    }

    fn check_signer_scope(&self, out: &mut Vec<Violation>, what: &str, signers: &BitArray, level: QcLevel) {
        // Leader-level certificates may predate the current overlay; only
        // their size and signatures are checked.
        let QcLevel::Child(mu) = level else { return };
        let members = self.tree.child_members(mu);
        let allowed = |n: NodeId| members.contains(&n);
        for i in signers.ones() {
            match self.node_at(i) {
                Some(node) if allowed(node) => {}
                Some(node) => out.push(Violation::Membership(format!("{what} signer {node} is outside the expected committees"))),
                None => out.push(Violation::Membership(format!("{what} signer index {i} out of range"))),
            }
        }
    }

    pub fn validate_qc(&self, qc: &Qc, level: QcLevel) -> Vec<Violation> {
        let mut out = Vec::new();
        if qc.is_genesis_for(self.genesis) {
            return out;
        }
        if qc.voters != qc.agg_sig.signers {
            out.push(Violation::Structure("qc voters differ from aggregate signers".into()));
        }
        if qc.voters.len() != self.tree.node_count() {
            out.push(Violation::Structure("qc voter array has the wrong width".into()));
        }
        self.check_threshold(&mut out, "qc voters", qc.voters.count_ones(), level);
        self.check_signer_scope(&mut out, "qc", &qc.voters, level);
        let payload = vote_payload(qc.view, qc.block);
        if !self.scheme.verify_aggregate(&qc.agg_sig, &|_| Some(payload.clone())) {
            out.push(Violation::Signature("qc aggregate does not verify".into()));
        }
        out
    }

    pub fn validate_vote(&self, vote: &Vote) -> Vec<Violation> {
        let mut out = Vec::new();
        self.check_single(&mut out, "vote", vote.voter, &vote_payload(vote.view, vote.block), &vote.sig);
        if let Some(qc) = &vote.qc {
            if qc.view != vote.view || qc.block != vote.block {
                out.push(Violation::ViewArithmetic("vote qc refers to a different (view, block)".into()));
            }
            let mu = self.tree.committee_of(vote.voter).unwrap_or(0);
            if mu != 1 {
                out.push(Violation::Membership(format!("non-root voter {} attached a qc", vote.voter)));
            } else {
                out.extend(self.validate_qc(qc, QcLevel::Child(1)));
            }
        }
        out
    }

    pub fn validate_timeout(&self, t: &Timeout) -> Vec<Violation> {
        let mut out = Vec::new();
        self.check_single(&mut out, "timeout", t.sender, &timeout_payload(t.view, t.high_qc.view), &t.sig);
        if t.high_qc.view >= t.view {
            out.push(Violation::ViewArithmetic("timeout high_qc is not older than the timed-out view".into()));
        }
        out.extend(self.validate_qc(&t.high_qc, QcLevel::Leader));
        out
    }

    pub fn validate_timeout_qc(&self, tqc: &TimeoutQc) -> Vec<Violation> {
        let mut out = Vec::new();
        if tqc.senders != tqc.agg_sig.signers {
            out.push(Violation::Structure("timeout qc senders differ from aggregate signers".into()));
        }
        let count = tqc.senders.count_ones();
        self.check_threshold(&mut out, "timeout qc senders", count, QcLevel::Leader);
        self.check_signer_scope(&mut out, "timeout qc", &tqc.senders, QcLevel::Leader);
        if tqc.qc_views.len() != count {
            out.push(Violation::Structure("timeout qc has one qc view per sender".into()));
        } else {
            if tqc.qc_views.iter().max().copied() != Some(tqc.high_qc.view) {
                out.push(Violation::ViewArithmetic("timeout qc high_qc is not the highest contributed".into()));
            }
            let positions: Vec<usize> = tqc.senders.ones().collect();
            let view = tqc.view;
            let views = tqc.qc_views.clone();
            let payload_of = move |i: usize| positions.iter().position(|&p| p == i).map(|k| timeout_payload(view, views[k]));
            if !self.scheme.verify_aggregate(&tqc.agg_sig, &payload_of) {
                out.push(Violation::Signature("timeout qc aggregate does not verify".into()));
            }
        }
        if tqc.high_qc.view >= tqc.view {
            out.push(Violation::ViewArithmetic("timeout qc high_qc is not older than its view".into()));
        }
        out.extend(self.validate_qc(&tqc.high_qc, QcLevel::Leader));
        out
    }

    pub fn validate_agg_qc(&self, agg: &AggregatedQc, level: QcLevel) -> Vec<Violation> {
        let mut out = Vec::new();
        if agg.senders != agg.agg_sig.signers {
            out.push(Violation::Structure("aggregated qc senders differ from aggregate signers".into()));
        }
        let count = agg.senders.count_ones();
        self.check_threshold(&mut out, "aggregated qc senders", count, level);
        self.check_signer_scope(&mut out, "aggregated qc", &agg.senders, level);
        if agg.qc_views.len() != count {
            out.push(Violation::Structure("aggregated qc has one qc view per sender".into()));
        } else {
            if agg.qc_views.iter().max().copied() != Some(agg.high_qc.view) {
                out.push(Violation::ViewArithmetic("aggregated qc high_qc is not max(qc_views)".into()));
            }
            let positions: Vec<usize> = agg.senders.ones().collect();
            let new_view = agg.view + 1;
            let views = agg.qc_views.clone();
            let payload_of =
                move |i: usize| positions.iter().position(|&p| p == i).map(|k| new_view_payload(new_view, views[k]));
            if !self.scheme.verify_aggregate(&agg.agg_sig, &payload_of) {
                out.push(Violation::Signature("aggregated qc aggregate does not verify".into()));
            }
        }
        out.extend(self.validate_qc(&agg.high_qc, QcLevel::Leader));
        out
    }

    pub fn validate_new_view(&self, nv: &NewView) -> Vec<Violation> {
        self.validate_new_view_parts(nv, true)
    }

    /// Like [`Self::validate_new_view`] but trusts the embedded timeout
    /// certificate, for receivers that already validated it.
    pub fn validate_new_view_known_tqc(&self, nv: &NewView) -> Vec<Violation> {
        self.validate_new_view_parts(nv, false)
    }

    fn validate_new_view_parts(&self, nv: &NewView, check_tqc: bool) -> Vec<Violation> {
        let mut out = Vec::new();
        if nv.view != nv.timeout_qc.view + 1 {
            out.push(Violation::ViewArithmetic(format!(
                "new_view.view {} != timeout_qc.view + 1 = {}",
                nv.view,
                nv.timeout_qc.view + 1
            )));
        }
        self.check_single(&mut out, "new_view", nv.sender, &new_view_payload(nv.view, nv.high_qc.view), &nv.sig);
        if nv.high_qc.view < nv.timeout_qc.high_qc.view {
            out.push(Violation::ViewArithmetic("new_view high_qc is older than the timeout qc's".into()));
        }
        out.extend(self.validate_qc(&nv.high_qc, QcLevel::Leader));
        if check_tqc {
            out.extend(self.validate_timeout_qc(&nv.timeout_qc));
        }
        if let Some(agg) = &nv.agg_qc {
            if self.tree.committee_of(nv.sender).ok() != Some(1) {
                out.push(Violation::Membership(format!("non-root sender {} attached an aggregated qc", nv.sender)));
            } else {
                if agg.view + 1 != nv.view {
                    out.push(Violation::ViewArithmetic("aggregated qc view does not precede the new view".into()));
                }
                out.extend(self.validate_agg_qc(agg, QcLevel::Child(1)));
            }
        }
        out
    }

    pub fn validate_block(&self, block: &Block) -> Vec<Violation> {
        let mut out = Vec::new();
        if block.id != block.compute_id() {
            out.push(Violation::Structure("block id does not match its content".into()));
        }
        if block.is_genesis() {
            return out;
        }
        out.extend(self.validate_qc(&block.qc, QcLevel::Leader));
        match &block.agg_qc {
            None => {
                if block.view != block.qc.view + 1 {
                    out.push(Violation::ViewArithmetic(format!(
                        "block.view {} != qc.view + 1 = {}",
                        block.view,
                        block.qc.view + 1
                    )));
                }
            }
            Some(agg) => {
                out.extend(self.validate_agg_qc(agg, QcLevel::Leader));
                if block.view != agg.view + 1 {
                    out.push(Violation::ViewArithmetic("block.view != agg_qc.view + 1".into()));
                }
                if block.qc != agg.high_qc {
                    out.push(Violation::Structure("block.qc differs from agg_qc.high_qc".into()));
                }
            }
        }
        out
    }

    pub fn validate_message(&self, msg: &Message) -> Vec<Violation> {
        match msg {
            Message::Proposal(b) => self.validate_block(b),
            Message::Vote(v) => self.validate_vote(v),
            Message::Timeout(t) => self.validate_timeout(t),
            Message::TimeoutQc(t) => self.validate_timeout_qc(t),
            Message::NewView(n) => self.validate_new_view(n),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_block() -> Block {
        let genesis = Block::genesis(4);
        Block::new(1, Qc::genesis(genesis.id, 4), None, vec![b"tx-1".to_vec(), b"tx-2".to_vec()])
    }

    #[test]
    fn encoding_is_deterministic_and_round_trips() {
        let block = sample_block();
        assert_eq!(block.encode(), block.encode());
        let msg = Message::Proposal(block.clone());
        assert_eq!(Message::decode(&msg.encode()).unwrap(), msg);
    }

    #[test]
    fn ids_differ_on_one_tx() {
        let a = sample_block();
        let mut txs = a.txs.clone();
        txs[1] = b"tx-3".to_vec();
        let b = Block::new(a.view, a.qc.clone(), None, txs);
        assert_ne!(a.id, b.id);
    }

    #[test]
    fn decode_rejects_garbage() {
        assert_eq!(Message::decode(&[9]), Err(CodecError::BadTag(9)));
        assert_eq!(Message::decode(&[]), Err(CodecError::Truncated));
        let mut bytes = Message::Proposal(sample_block()).encode();
        bytes.push(0);
        assert_eq!(Message::decode(&bytes), Err(CodecError::Trailing(1)));
    }

    #[test]
    fn payloads_are_domain_separated() {
        assert_ne!(timeout_payload(3, 2), new_view_payload(3, 2));
        assert_ne!(vote_payload(1, BlockId::ZERO), vote_payload(2, BlockId::ZERO));
    }
}
