use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::analysis::{committee_size_solver, Fraction, SizingParams};
use crate::engine::Mutation;
use crate::messages::View;
use crate::rng::Seed;

/// Deviations available to Byzantine nodes. None of them can produce an
/// honest node's signature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ByzantineBehavior {
    /// Sends nothing.
    Silent,
    /// As leader, proposes two different blocks to the two halves of the
    /// network; votes for every proposal it sees.
    EquivocateLeader,
    /// Follows the protocol but never sends a vote.
    WithholdVotes,
    /// Votes on receipt of any proposal without waiting for child votes.
    RushApprove,
    /// Follows the protocol with every message held for the maximum delay.
    DelayMax,
}

impl ByzantineBehavior {
    pub const ALL: [ByzantineBehavior; 5] = [
        ByzantineBehavior::Silent,
        ByzantineBehavior::EquivocateLeader,
        ByzantineBehavior::WithholdVotes,
        ByzantineBehavior::RushApprove,
        ByzantineBehavior::DelayMax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ByzantineBehavior::Silent => "silent",
            ByzantineBehavior::EquivocateLeader => "equivocate-leader",
            ByzantineBehavior::WithholdVotes => "withhold-votes",
            ByzantineBehavior::RushApprove => "rush-approve",
            ByzantineBehavior::DelayMax => "delay-max",
        }
    }
}

impl fmt::Display for ByzantineBehavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ByzantineBehavior {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ByzantineBehavior::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| SimError::InvalidScenario(format!("unknown behavior {s:?}")))
    }
}

/// Committee size, given directly or chosen by the sizing solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CommitteeSize {
    Fixed(usize),
    Solver { delta: f64, p: f64, a: Fraction },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarySpec {
    /// Exactly this many Byzantine nodes, placed uniformly.
    Exact(usize),
    /// Each node Byzantine with probability `p`; with `clamp` the count is
    /// capped below `N/3`.
    Fraction { p: f64, clamp: bool },
}

/// Delivery delays before stabilization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PreGstModel {
    /// Uniform in `[1, factor * delta]`.
    BoundedRandom,
    /// Each message is either fast (1 tick) or held for `factor * delta`,
    /// by a seeded coin, so later messages regularly overtake earlier ones.
    AdversarialReorder,
}

fn default_delta() -> u64 {
    10
}
fn default_factor() -> u64 {
    4
}
fn default_pre_gst() -> PreGstModel {
    PreGstModel::BoundedRandom
}
fn default_views() -> View {
    20
}
fn default_budget() -> u64 {
    50_000_000
}
fn default_behaviors() -> Vec<ByzantineBehavior> {
    vec![ByzantineBehavior::Silent]
}
fn default_adversaries() -> AdversarySpec {
    AdversarySpec::Exact(0)
}
fn default_txs() -> usize {
    1
}

/// Everything that determines a run. All randomness flows from `master_seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub n_nodes: usize,
    pub committee_size: CommitteeSize,
    #[serde(default = "default_adversaries")]
    pub adversaries: AdversarySpec,
    /// Behaviors assigned round-robin over the sorted Byzantine set.
    #[serde(default = "default_behaviors")]
    pub behaviors: Vec<ByzantineBehavior>,
    #[serde(default)]
    pub placement_seed: Option<u64>,
    /// Post-stabilization delay bound, in ticks.
    #[serde(default = "default_delta")]
    pub delta: u64,
    /// Stabilization time.
    #[serde(default)]
    pub gst: u64,
    #[serde(default = "default_pre_gst")]
    pub pre_gst_model: PreGstModel,
    /// Pre-stabilization delays reach `factor * delta`.
    #[serde(default = "default_factor")]
    pub pre_gst_factor: u64,
    /// Loss probability for proposals sent before stabilization.
    #[serde(default)]
    pub drop_probability: f64,
    /// View timer; defaults to `max(4, depth + 3) * delta`.
    #[serde(default)]
    pub view_timeout: Option<u64>,
    #[serde(default = "default_views")]
    pub views_to_run: View,
    #[serde(default = "default_budget")]
    pub event_budget: u64,
    pub master_seed: u64,
    /// Views whose leader withholds its proposal while otherwise honest.
    #[serde(default)]
    pub silent_leader_views: Vec<View>,
    #[serde(default = "default_txs")]
    pub txs_per_block: usize,
    /// Keep the per-event log in the trace (the running digest is always kept).
    #[serde(default)]
    pub record_log: bool,
    #[serde(default)]
    pub mutation: Option<Mutation>,
}

impl Scenario {
    /// A scenario with defaults for everything but size and seed.
    pub fn new(n_nodes: usize, committee_size: usize, master_seed: u64) -> Scenario {
        Scenario {
            n_nodes,
            committee_size: CommitteeSize::Fixed(committee_size),
            adversaries: default_adversaries(),
            behaviors: default_behaviors(),
            placement_seed: None,
            delta: default_delta(),
            gst: 0,
            pre_gst_model: default_pre_gst(),
            pre_gst_factor: default_factor(),
            drop_probability: 0.0,
            view_timeout: None,
            views_to_run: default_views(),
            event_budget: default_budget(),
            master_seed,
            silent_leader_views: Vec::new(),
            txs_per_block: default_txs(),
            record_log: false,
            mutation: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Scenario, SimError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| SimError::InvalidScenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        if self.n_nodes == 0 {
            return bad("n_nodes must be positive".into());
        }
        if self.delta == 0 {
            return bad("delta must be positive".into());
        }
        if self.pre_gst_factor == 0 {
            return bad("pre_gst_factor must be positive".into());
        }
        if !(0.0..1.0).contains(&self.drop_probability) {
            return bad(format!("drop_probability {} must lie in [0, 1)", self.drop_probability));
        }
        if self.views_to_run == 0 {
            return bad("views_to_run must be positive".into());
        }
        if self.behaviors.is_empty() {
            return bad("behaviors must not be empty".into());
        }
        match self.adversaries {
            AdversarySpec::Exact(m) if m >= self.n_nodes => return bad(format!("M = {m} must be below N = {}", self.n_nodes)),
            AdversarySpec::Fraction { p, .. } if !(0.0..1.0).contains(&p) => return bad(format!("p = {p} must lie in [0, 1)")),
            _ => {}
        }
        if self.view_timeout == Some(0) {
            return bad("view_timeout must be positive".into());
        }
        self.resolved_committee_size()?;
        Ok(())
    }

    /// Committee size after running the solver when requested.
    pub fn resolved_committee_size(&self) -> Result<usize, SimError> {
        match self.committee_size {
            CommitteeSize::Fixed(0) => Err(SimError::InvalidScenario("committee_size must be positive".into())),
            CommitteeSize::Fixed(n) => Ok(n),
            CommitteeSize::Solver { delta, p, a } => {
                let r = committee_size_solver(SizingParams { n_nodes: self.n_nodes, p, a, delta })
                    .map_err(|e| SimError::InvalidScenario(e.to_string()))?;
                Ok(r.n)
            }
        }
    }

    /// View timer for a tree of the given depth.
    pub fn timeout_for_depth(&self, depth: usize) -> u64 {
        self.view_timeout.unwrap_or_else(|| (depth as u64 + 3).max(4) * self.delta)
    }

    /// Seed of the named random stream.
    pub fn seed(&self, label: &str) -> Seed {
        Seed::from_u64(self.master_seed).derive(label, 0)
    }

    pub fn placement_seed(&self) -> Seed {
        match self.placement_seed {
            Some(s) => Seed::from_u64(s).derive("placement", 0),
            None => self.seed("placement"),
        }
    }
}
