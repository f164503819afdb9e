use std::collections::BTreeSet;

use super::{AdversarySpec, Scenario};
use crate::overlay::{CommitteeTree, NodeId};
use crate::rng::DetRng;

/// Largest `M` with `3M < N`.
pub fn max_tolerated(n_nodes: usize) -> usize {
    n_nodes.saturating_sub(1) / 3
}

/// Byzantine node set for a scenario. `Exact(M)` draws a uniform `M`-subset;
/// `Fraction` corrupts each node independently and, with `clamp`, keeps at
/// most `max_tolerated(N)` of them.
pub fn place_adversaries(scenario: &Scenario, tree: &CommitteeTree) -> BTreeSet<NodeId> {
    let mut rng = DetRng::new(&scenario.placement_seed());
    let nodes = tree.nodes();
    match scenario.adversaries {
        AdversarySpec::Exact(0) => BTreeSet::new(),
        AdversarySpec::Exact(m) => {
            let mut shuffled = nodes.to_vec();
            rng.shuffle(&mut shuffled);
            shuffled.into_iter().take(m).collect()
        }
        AdversarySpec::Fraction { p, clamp } => {
            let mut chosen: Vec<NodeId> = nodes.iter().copied().filter(|_| rng.bernoulli(p)).collect();
            if clamp && chosen.len() > max_tolerated(nodes.len()) {
                rng.shuffle(&mut chosen);
                chosen.truncate(max_tolerated(nodes.len()));
            }
            chosen.into_iter().collect()
        }
    }
}
