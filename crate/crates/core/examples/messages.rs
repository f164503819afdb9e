//! Builds a certified block, round-trips it through the canonical codec and
//! runs the validator on an honest and a short-signed certificate.

use carnot::messages::{vote_payload, Block, Canonical, Message, Qc, QcLevel, ValidationContext};
use carnot::overlay::{form_overlay, node_range, OverlayParams};
use carnot::rng::Seed;
use carnot::sigs::{KeyedHashScheme, SignatureScheme};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tree = form_overlay(&node_range(9), OverlayParams { n: 3, xi: Seed::from_u64(4) })?;
    let (scheme, keys) = KeyedHashScheme::generate(&Seed::from_u64(8), tree.nodes());
    let genesis = Block::genesis(tree.node_count());
    let ctx = ValidationContext { tree: &tree, scheme: &scheme, genesis: genesis.id };

    // A certificate for genesis signed by the given signer indices.
    let certify = |signers: &[usize]| -> Result<Qc, Box<dyn std::error::Error>> {
        let payload = vote_payload(1, genesis.id);
        let parts: Vec<_> = signers.iter().map(|&i| (scheme.sign(&keys[i], &payload), i)).collect();
        let agg_sig = scheme.aggregate(&parts)?;
        Ok(Qc { view: 1, block: genesis.id, voters: agg_sig.signers.clone(), agg_sig })
    };

    let block = Block::new(2, certify(&[0, 1, 2, 3, 4, 5, 6])?, None, vec![b"tx-1".to_vec()]);
    let bytes = Message::Proposal(block.clone()).encode();
    let decoded = Message::decode(&bytes)?;
    println!("proposal {} encodes to {} bytes; round trip equal: {}", block.id.short(), bytes.len(), decoded == Message::Proposal(block.clone()));
    println!("truncated decode: {:?}", Message::decode(&bytes[..bytes.len() - 1]).err());

    println!("honest block violations: {:?}", ctx.validate_block(&block));
    let short = certify(&[0, 1, 2, 3, 4, 5])?;
    println!("six-signer certificate: {:?}", ctx.validate_qc(&short, QcLevel::Leader));
    let mut forged = block.clone();
    forged.txs.push(b"smuggled".to_vec());
    println!("block with altered payload: {:?}", ctx.validate_block(&forged));
    Ok(())
}
