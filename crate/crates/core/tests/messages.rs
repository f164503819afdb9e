use carnot::messages::*;
use carnot::overlay::{form_overlay, node_range, CommitteeTree, NodeId, OverlayParams};
use carnot::rng::Seed;
use carnot::sigs::{BitArray, KeyPair, KeyedHashScheme, SignatureScheme};
use proptest::prelude::*;

struct Fixture {
    tree: CommitteeTree,
    scheme: KeyedHashScheme,
    keys: Vec<KeyPair>,
    genesis: Block,
}

impl Fixture {
    fn new() -> Fixture {
        let tree = form_overlay(&node_range(9), OverlayParams { n: 3, xi: Seed::from_u64(4) }).unwrap();
        let (scheme, keys) = KeyedHashScheme::generate(&Seed::from_u64(8), tree.nodes());
        Fixture { tree, scheme, keys, genesis: Block::genesis(9) }
    }

    fn ctx(&self) -> ValidationContext<'_> {
        ValidationContext { tree: &self.tree, scheme: &self.scheme, genesis: self.genesis.id }
    }

    fn qc(&self, view: View, block: BlockId, signers: &[usize]) -> Qc {
        let payload = vote_payload(view, block);
        let parts: Vec<_> = signers.iter().map(|&i| (self.scheme.sign(&self.keys[i], &payload), i)).collect();
        let agg_sig = self.scheme.aggregate(&parts).unwrap();
        Qc { view, block, voters: agg_sig.signers.clone(), agg_sig }
    }

    fn block(&self, view: View) -> Block {
        let parent = Block::new(view - 1, Qc::genesis(self.genesis.id, 9), None, vec![]);
        Block::new(view, self.qc(view - 1, parent.id, &[0, 1, 2, 3, 4, 5, 6]), None, vec![b"tx".to_vec()])
    }

    fn vote(&self, signer: usize, view: View, block: BlockId) -> Vote {
        let voter = self.tree.nodes()[signer];
        Vote { view, block, voter, qc: None, sig: self.scheme.sign(&self.keys[signer], &vote_payload(view, block)) }
    }

    fn timeout(&self, signer: usize, view: View) -> Timeout {
        let high_qc = Qc::genesis(self.genesis.id, 9);
        let sig = self.scheme.sign(&self.keys[signer], &timeout_payload(view, 0));
        Timeout { view, high_qc, sender: self.tree.nodes()[signer], sig }
    }

    fn timeout_qc(&self, view: View, signers: &[usize]) -> TimeoutQc {
        let payload = timeout_payload(view, 0);
        let parts: Vec<_> = signers.iter().map(|&i| (self.scheme.sign(&self.keys[i], &payload), i)).collect();
        let agg_sig = self.scheme.aggregate(&parts).unwrap();
        TimeoutQc {
            view,
            high_qc: Qc::genesis(self.genesis.id, 9),
            senders: agg_sig.signers.clone(),
            qc_views: vec![0; signers.len()],
            agg_sig,
        }
    }

    fn new_view(&self, signer: usize, view: View) -> NewView {
        let sig = self.scheme.sign(&self.keys[signer], &new_view_payload(view, 0));
        NewView {
            view,
            high_qc: Qc::genesis(self.genesis.id, 9),
            sender: self.tree.nodes()[signer],
            timeout_qc: self.timeout_qc(view - 1, &[0, 1, 2, 3, 4, 5, 6]),
            agg_qc: None,
            sig,
        }
    }
}

#[test]
fn qc_at_leader_threshold_is_valid() {
    let f = Fixture::new();
    assert_eq!(f.tree.leader_supermajority_threshold(), 7);
    let qc = f.qc(3, BlockId([7; 32]), &[0, 2, 3, 4, 5, 7, 8]);
    assert!(f.ctx().validate_qc(&qc, QcLevel::Leader).is_empty());
}

#[test]
fn qc_one_below_threshold_is_reported() {
    let f = Fixture::new();
    let qc = f.qc(3, BlockId([7; 32]), &[0, 1, 2, 3, 4, 5]);
    let v = f.ctx().validate_qc(&qc, QcLevel::Leader);
    assert!(matches!(v.as_slice(), [Violation::Threshold { have: 6, need: 7, .. }]), "{v:?}");
}

#[test]
fn new_view_with_wrong_view_is_reported() {
    let f = Fixture::new();
    let mut nv = f.new_view(2, 5);
    assert!(f.ctx().validate_new_view(&nv).is_empty());
    nv.view = 6;
    let v = f.ctx().validate_new_view(&nv);
    assert!(v.iter().any(|x| matches!(x, Violation::ViewArithmetic(_))), "{v:?}");
}

#[test]
fn all_violations_are_reported_together() {
    let f = Fixture::new();
    let mut block = f.block(4);
    block.view = 9;
    block.qc.voters.set(6, false);
    let v = f.ctx().validate_block(&block);
    // Stale id, mismatched voters, short threshold, view arithmetic.
    assert!(v.len() >= 3, "{v:?}");
}

#[test]
fn aggregated_qc_must_match_block_qc() {
    let f = Fixture::new();
    let high = f.qc(2, BlockId([1; 32]), &[0, 1, 2, 3, 4, 5, 6]);
    let senders = [0usize, 1, 2, 3, 4, 5, 6];
    let parts: Vec<_> = senders
        .iter()
        .map(|&i| {
            let view = if i == 0 { 2 } else { 1 };
            (f.scheme.sign(&f.keys[i], &new_view_payload(4, view)), i)
        })
        .collect();
    let agg_sig = f.scheme.aggregate(&parts).unwrap();
    let agg = AggregatedQc {
        view: 3,
        qc_views: vec![2, 1, 1, 1, 1, 1, 1],
        senders: agg_sig.signers.clone(),
        high_qc: high.clone(),
        agg_sig,
    };
    let good = Block::new(4, high, Some(agg.clone()), vec![]);
    assert!(f.ctx().validate_block(&good).is_empty(), "{:?}", f.ctx().validate_block(&good));
    let bad = Block::new(4, f.qc(1, BlockId([2; 32]), &senders), Some(agg), vec![]);
    let v = f.ctx().validate_block(&bad);
    assert!(v.iter().any(|x| matches!(x, Violation::Structure(_))), "{v:?}");
}

#[test]
fn genesis_needs_no_signatures() {
    let f = Fixture::new();
    assert!(f.genesis.is_genesis());
    assert!(f.ctx().validate_block(&f.genesis).is_empty());
}

#[test]
fn non_root_vote_cannot_carry_a_qc() {
    let f = Fixture::new();
    let block = BlockId([3; 32]);
    let outside = (0..9).find(|&i| f.tree.committee_of(f.tree.nodes()[i]).unwrap() != 1).unwrap();
    let mut vote = f.vote(outside, 2, block);
    assert!(f.ctx().validate_vote(&vote).is_empty());
    vote.qc = Some(f.qc(2, block, &[0, 1, 2, 3, 4, 5, 6]));
    assert!(f.ctx().validate_vote(&vote).iter().any(|x| matches!(x, Violation::Membership(_))));
}

fn messages(f: &Fixture) -> Vec<Message> {
    vec![
        Message::Proposal(f.block(3)),
        Message::Vote(f.vote(1, 3, f.block(3).id)),
        Message::Timeout(f.timeout(4, 5)),
        Message::TimeoutQc(f.timeout_qc(5, &[1, 2, 3, 4, 5, 6, 7])),
        Message::NewView(f.new_view(3, 6)),
    ]
}

#[test]
fn fixture_messages_are_valid() {
    let f = Fixture::new();
    for m in messages(&f) {
        assert!(f.ctx().validate_message(&m).is_empty(), "{}: {:?}", m.kind(), f.ctx().validate_message(&m));
    }
}

fn arb_bits(width: usize) -> impl Strategy<Value = BitArray> {
    proptest::collection::vec(any::<bool>(), width)
        .prop_map(move |bits| BitArray::from_indices(width, bits.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i)))
}

fn arb_qc() -> impl Strategy<Value = Qc> {
    (any::<u64>(), any::<[u8; 32]>(), 1usize..40).prop_flat_map(|(view, block, width)| {
        arb_bits(width).prop_flat_map(move |voters| {
            let n = voters.count_ones();
            proptest::collection::vec(any::<[u8; 32]>(), n).prop_map(move |tags| Qc {
                view,
                block: BlockId(block),
                voters: voters.clone(),
                agg_sig: carnot::sigs::AggSignature {
                    signers: voters.clone(),
                    tags: tags.into_iter().map(carnot::sigs::Signature).collect(),
                },
            })
        })
    })
}

fn arb_message() -> impl Strategy<Value = Message> {
    let txs = proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..20), 0..4);
    prop_oneof![
        (any::<u64>(), arb_qc(), txs).prop_map(|(v, qc, txs)| Message::Proposal(Block::new(v, qc, None, txs))),
        (any::<u64>(), any::<[u8; 32]>(), any::<u64>(), proptest::option::of(arb_qc()), any::<[u8; 32]>()).prop_map(
            |(view, b, voter, qc, sig)| Message::Vote(Vote {
                view,
                block: BlockId(b),
                voter: NodeId(voter),
                qc,
                sig: carnot::sigs::Signature(sig)
            })
        ),
        (any::<u64>(), arb_qc(), any::<u64>(), any::<[u8; 32]>()).prop_map(|(view, high_qc, s, sig)| Message::Timeout(
            Timeout { view, high_qc, sender: NodeId(s), sig: carnot::sigs::Signature(sig) }
        )),
        (any::<u64>(), arb_qc(), arb_qc()).prop_map(|(view, high_qc, carrier)| {
            let n = carrier.voters.count_ones();
            Message::TimeoutQc(TimeoutQc {
                view,
                high_qc,
                senders: carrier.voters,
                qc_views: (0..n as u64).collect(),
                agg_sig: carrier.agg_sig,
            })
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn encoding_round_trips(msg in arb_message()) {
        let bytes = msg.encode();
        prop_assert_eq!(&bytes, &msg.encode());
        prop_assert_eq!(Message::decode(&bytes).unwrap(), msg);
    }

    #[test]
    fn truncated_encoding_is_rejected(msg in arb_message(), cut in any::<prop::sample::Index>()) {
        let bytes = msg.encode();
        let cut = cut.index(bytes.len());
        prop_assert!(Message::decode(&bytes[..cut]).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    /// Changing any single field of a valid message yields a violation.
    #[test]
    fn one_field_mutation_is_detected(which in 0usize..5, field in 0usize..4, delta in 1u64..5, byte in 0usize..32) {
        let f = Fixture::new();
        let mut msg = messages(&f).swap_remove(which);
        match (&mut msg, field) {
            (Message::Proposal(b), 0) => b.view += delta,
            (Message::Proposal(b), 1) => b.txs.push(vec![delta as u8]),
            (Message::Proposal(b), 2) => b.qc.view += delta,
            (Message::Proposal(b), _) => b.qc.agg_sig.tags[0].0[byte] ^= 1,
            (Message::Vote(v), 0) => v.view += delta,
            (Message::Vote(v), 1) => v.block.0[byte] ^= 1,
            (Message::Vote(v), 2) => v.voter = NodeId((v.voter.0 + delta) % 9),
            (Message::Vote(v), _) => v.sig.0[byte] ^= 1,
            (Message::Timeout(t), 0) => t.view += delta,
            (Message::Timeout(t), 1) => t.sender = NodeId((t.sender.0 + delta) % 9),
            (Message::Timeout(t), 2) => t.high_qc.view += 5 + delta,
            (Message::Timeout(t), _) => t.sig.0[byte] ^= 1,
            (Message::TimeoutQc(t), 0) => t.view += delta,
            (Message::TimeoutQc(t), 1) => t.senders.set(1, false),
            (Message::TimeoutQc(t), 2) => t.qc_views[0] += delta,
            (Message::TimeoutQc(t), _) => t.agg_sig.tags[2].0[byte] ^= 1,
            (Message::NewView(n), 0) => n.view += delta,
            (Message::NewView(n), 1) => n.sender = NodeId((n.sender.0 + delta) % 9),
            (Message::NewView(n), 2) => n.timeout_qc.view += delta,
            (Message::NewView(n), _) => n.sig.0[byte] ^= 1,
        }
        prop_assert!(!f.ctx().validate_message(&msg).is_empty(), "{:?}", msg.kind());
    }
}
