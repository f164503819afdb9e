//! Signs, aggregates and merges with the keyed-hash scheme, and shows which
//! tampering the aggregate check catches.

use std::sync::Arc;

use carnot::overlay::node_range;
use carnot::rng::Seed;
use carnot::sigs::{CountingScheme, KeyedHashScheme, SignatureScheme};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (scheme, keys) = KeyedHashScheme::generate(&Seed::from_u64(1), &node_range(7));
    let scheme = CountingScheme::new(Arc::new(scheme));
    let payload = b"vote view=4".to_vec();

    let sig = scheme.sign(&keys[0], &payload);
    println!("single signature verifies: {}", scheme.verify(&keys[0].public, &payload, &sig));
    println!("under another key: {}", scheme.verify(&keys[1].public, &payload, &sig));

    let left = scheme.aggregate(&[0, 1, 2].map(|i| (scheme.sign(&keys[i], &payload), i)))?;
    let right = scheme.aggregate(&[2, 3, 4].map(|i| (scheme.sign(&keys[i], &payload), i)))?;
    let merged = scheme.merge(&[&left, &right])?;
    let same = |_: usize| Some(payload.clone());
    println!("merged signers {} verify: {}", merged.signers.to_hex(), scheme.verify_aggregate(&merged, &same));

    let mut dropped = merged.clone();
    dropped.signers.set(3, false);
    println!("after clearing a signer bit: {}", scheme.verify_aggregate(&dropped, &same));
    println!("against another payload: {}", scheme.verify_aggregate(&merged, &|_| Some(b"vote view=5".to_vec())));
    println!("verifications performed: {}", scheme.verified());
    Ok(())
}
