//! Forms a committee tree, walks it, and prints its canonical JSON.
//!
//! `cargo run --example overlay -- [N] [n] [seed]`

use carnot::overlay::{form_overlay, node_range, Beacon, OverlayParams};
use carnot::rng::Seed;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let get = |i: usize, d: u64| args.get(i).copied().unwrap_or(d);
    let (n_nodes, n, seed) = (get(0, 22) as usize, get(1, 3) as usize, get(2, 7));

    let tree = form_overlay(&node_range(n_nodes), OverlayParams { n, xi: Seed::from_u64(seed) })?;
    println!("N={n_nodes} n={} K={} r={} depth={}", tree.base_size(), tree.k(), tree.remainder(), tree.depth());
    for mu in 1..=tree.k() {
        let members: Vec<String> = tree.committee(mu)?.iter().map(|m| m.to_string()).collect();
        println!(
            "C{mu:<3} parent={:<8} children={:<10} child threshold={:<3} members=[{}]",
            format!("{:?}", tree.parent(mu)?),
            format!("{:?}", tree.children(mu)?),
            tree.child_supermajority_threshold(mu),
            members.join(" "),
        );
    }
    println!("leader threshold over committees 1..=3: {}", tree.leader_supermajority_threshold());

    let beacon = Beacon::new(Seed::from_u64(seed));
    let leaders: Vec<String> = (1..=8).map(|v| beacon.leader(v, tree.nodes()).to_string()).collect();
    println!("leaders for views 1..=8: {}", leaders.join(" "));
    println!("{}", tree.to_json());
    Ok(())
}
