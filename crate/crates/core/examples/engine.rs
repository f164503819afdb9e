//! Drives consensus nodes by hand: every outbound message is delivered
//! instantly in FIFO order and no timer ever fires.
//!
//! `cargo run --example engine -- [N] [n] [views]`

use std::collections::VecDeque;
use std::sync::Arc;

use carnot::engine::{Node, NodeConfig, Overlays};
use carnot::messages::Message;
use carnot::overlay::{node_range, Beacon};
use carnot::rng::Seed;
use carnot::sigs::{KeyedHashScheme, SignatureScheme};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let get = |i: usize, d: usize| args.get(i).copied().unwrap_or(d);
    let (n_nodes, n, views) = (get(0, 9), get(1, 3), get(2, 10) as u64);

    let ids = node_range(n_nodes);
    let overlays = Arc::new(Overlays::new(&ids, n, Seed::from_u64(1))?);
    let beacon = Arc::new(Beacon::new(Seed::from_u64(2)));
    let (scheme, keys) = KeyedHashScheme::generate(&Seed::from_u64(3), &ids);
    let scheme: Arc<dyn SignatureScheme> = Arc::new(scheme);
    let mut nodes = keys
        .into_iter()
        .map(|keypair| {
            Node::new(NodeConfig {
                keypair,
                overlays: overlays.clone(),
                beacon: beacon.clone(),
                scheme: scheme.clone(),
                txs_per_block: 1,
                orphan_limit: 64,
                mutation: None,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut queue: VecDeque<(usize, Message)> = VecDeque::new();
    let mut delivered = 0usize;
    let enqueue = |queue: &mut VecDeque<(usize, Message)>, out: carnot::engine::EngineOutput| {
        for ob in out.outbound {
            // Stop feeding the pipeline once the last view has been proposed.
            if ob.msg.view() > views {
                continue;
            }
            for to in ob.to.recipients(&ids) {
                queue.push_back((to.0 as usize, ob.msg.clone()));
            }
        }
    };
    for node in &mut nodes {
        let out = node.start();
        enqueue(&mut queue, out);
    }
    while let Some((to, msg)) = queue.pop_front() {
        delivered += 1;
        let out = nodes[to].handle(msg);
        enqueue(&mut queue, out);
    }

    println!("delivered {delivered} messages over {views} views");
    for node in &nodes {
        let stats = node.stats();
        println!(
            "{}: view={} committed={} votes={} proposals={} verified={}",
            node.id(),
            node.current_view(),
            node.committed().len(),
            stats.votes_cast,
            stats.proposals,
            stats.verified
        );
    }
    Ok(())
}
