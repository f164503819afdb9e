use carnot::engine::Mutation;
use carnot::overlay::{form_overlay, node_range, OverlayParams};
use carnot::rng::Seed;
use carnot::sim::*;
use proptest::prelude::*;

fn honest(n_nodes: usize, n: usize, views: u64, seed: u64) -> Scenario {
    let mut sc = Scenario::new(n_nodes, n, seed);
    sc.views_to_run = views;
    sc
}

#[test]
fn four_nodes_commit_every_view_after_warm_up() {
    let trace = run(&honest(4, 4, 20, 1)).unwrap();
    assert_eq!(trace.header.committees, 1);
    assert_eq!(trace.summary.stats.timeout_qcs, 0);
    for (node, commits) in &trace.summary.commits {
        let views: Vec<u64> = commits.iter().map(|c| c.view).collect();
        assert_eq!(views, (1..=18).collect::<Vec<_>>(), "node {node}");
    }
    assert_eq!(trace.summary.commits.len(), 4);
    assert!(check_trace(&trace, &Property::ALL).passed());
}

#[test]
fn silent_leader_view_goes_through_the_timeout_path() {
    let mut sc = honest(10, 3, 8, 3);
    sc.silent_leader_views = vec![3];
    let trace = run(&sc).unwrap();
    let s = &trace.summary;
    assert!(s.stats.timeout_qcs >= 1);
    assert!(s.proposals.iter().all(|p| p.view != 3));
    let four: Vec<_> = s.proposals.iter().filter(|p| p.view == 4).collect();
    assert_eq!(four.len(), 1);
    assert!(four[0].aggregated);
    // Only the silent leader saw the certificate for view 2, so the highest
    // certificate the new-view round can surface is the one for view 1.
    assert_eq!(four[0].qc_view, 1);
    assert!(s.proposals.iter().filter(|p| p.view != 4).all(|p| !p.aggregated));
    // The overlay moved to a new epoch after the failed view.
    assert!(s.final_states.values().all(|f| f.overlay_epoch == 3));
    let report = check_trace(&trace, &Property::ALL);
    assert!(report.passed(), "{:?}", report.violations);
    // Block 4 extends block 1, abandoning block 2.
    let committed: Vec<u64> = s.commits.values().next().unwrap().iter().map(|c| c.view).collect();
    assert_eq!(committed, vec![1, 4, 5, 6]);
}

#[test]
fn skipping_the_voted_view_update_is_caught() {
    let mut sc = honest(10, 3, 12, 5);
    sc.mutation = Some(Mutation::SkipVotedViewUpdate);
    let trace = run(&sc).unwrap();
    let report = check_trace(&trace, &[Property::DoubleVote]);
    assert!(report.count(Property::DoubleVote) > 0, "{:?}", report);
}

#[test]
fn traces_are_byte_identical_and_replayable() {
    let mut sc = honest(31, 10, 15, 9);
    sc.adversaries = AdversarySpec::Exact(9);
    sc.behaviors = ByzantineBehavior::ALL.to_vec();
    sc.gst = 60;
    sc.pre_gst_model = PreGstModel::AdversarialReorder;
    sc.drop_probability = 0.1;
    sc.record_log = true;
    let a = run(&sc).unwrap().to_jsonl();
    let b = run(&sc).unwrap().to_jsonl();
    assert_eq!(a, b);
    let report = replay_jsonl(a.as_bytes()).unwrap();
    assert!(report.identical(), "{report:?}");

    let mut other = sc.clone();
    other.master_seed += 1;
    assert_ne!(run(&other).unwrap().summary.log_digest, run(&sc).unwrap().summary.log_digest);
}

#[test]
fn replay_detects_a_tampered_trace() {
    let mut trace = run(&honest(10, 3, 8, 2)).unwrap();
    trace.summary.commits.values_mut().next().unwrap().pop();
    let report = replay(&trace).unwrap();
    assert!(!report.commits_match && !report.identical());
}

#[test]
fn inclusion_frequency_is_one_third() {
    let tree = form_overlay(&node_range(9), OverlayParams { n: 3, xi: Seed::ZERO }).unwrap();
    let mut sc = Scenario::new(9, 3, 0);
    sc.adversaries = AdversarySpec::Exact(3);
    let draws = 100_000u64;
    let mut counts = [0u64; 9];
    for s in 0..draws {
        sc.placement_seed = Some(s);
        let set = place_adversaries(&sc, &tree);
        assert_eq!(set.len(), 3);
        for n in set {
            counts[n.0 as usize] += 1;
        }
    }
    let sigma = (draws as f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
    for c in counts {
        assert!((c as f64 - draws as f64 / 3.0).abs() <= 3.0 * sigma, "{counts:?}");
    }
}

#[test]
fn fraction_placement_mean_and_clamp() {
    let tree = form_overlay(&node_range(1000), OverlayParams { n: 10, xi: Seed::ZERO }).unwrap();
    let mut sc = Scenario::new(1000, 10, 0);
    sc.adversaries = AdversarySpec::Fraction { p: 0.25, clamp: false };
    let seeds = 400u64;
    let mut total = 0usize;
    for s in 0..seeds {
        sc.placement_seed = Some(s);
        total += place_adversaries(&sc, &tree).len();
    }
    let mean = total as f64 / seeds as f64;
    // sigma of the mean: sqrt(1000 * 0.25 * 0.75 / 400) ~ 0.68.
    assert!((mean - 250.0).abs() < 3.0, "{mean}");

    sc.adversaries = AdversarySpec::Fraction { p: 0.9, clamp: true };
    assert_eq!(place_adversaries(&sc, &tree).len(), max_tolerated(1000));
    sc.adversaries = AdversarySpec::Exact(0);
    assert!(place_adversaries(&sc, &tree).is_empty());
}

#[test]
fn invalid_scenarios_are_refused() {
    let mut sc = Scenario::new(4, 4, 0);
    sc.adversaries = AdversarySpec::Exact(4);
    assert!(run(&sc).is_err());
    assert!(Scenario::from_json(r#"{"n_nodes": 4, "committee_size": 0, "master_seed": 1}"#).is_err());
    assert!(Scenario::from_json(r#"{"n_nodes": 4, "committee_size": 4, "master_seed": 1, "bogus": 1}"#).is_err());
    let ok = Scenario::from_json(r#"{"n_nodes": 4, "committee_size": 4, "master_seed": 1}"#).unwrap();
    assert_eq!(ok.delta, 10);
}

#[test]
fn solver_sized_scenario() {
    let sc = Scenario::from_json(
        r#"{"n_nodes": 100, "committee_size": {"delta": 0.001, "p": 0.1, "a": "1/3"}, "master_seed": 4, "views_to_run": 6}"#,
    )
    .unwrap();
    assert_eq!(sc.resolved_committee_size().unwrap(), 33);
    let trace = run(&sc).unwrap();
    assert_eq!(trace.header.committees, 3);
    assert!(check_trace(&trace, &Property::ALL).passed());
}

#[test]
fn truncated_runs_are_flagged() {
    let mut sc = honest(10, 3, 20, 1);
    sc.event_budget = 50;
    let trace = run(&sc).unwrap();
    assert!(trace.summary.stats.truncated);
}

#[test]
fn delay_bound_holds_after_stabilization() {
    let mut sc = honest(31, 10, 20, 6);
    sc.gst = 150;
    sc.pre_gst_factor = 8;
    let trace = run(&sc).unwrap();
    assert!(trace.summary.stats.max_post_gst_delay <= sc.delta);
    assert!(check_trace(&trace, &[Property::DelayBound]).passed());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Safety holds for any small configuration with fewer than a third Byzantine.
    #[test]
    fn safety_under_random_adversaries(
        n_nodes in 4usize..24,
        n_frac in 0.1f64..1.0,
        seed in any::<u64>(),
        behavior in 0usize..5,
        gst in 0u64..120,
        reorder in any::<bool>(),
        drop in 0.0f64..0.3,
    ) {
        let n = 1 + ((n_nodes - 1) as f64 * n_frac) as usize;
        let mut sc = honest(n_nodes, n, 25, seed);
        sc.adversaries = AdversarySpec::Exact(max_tolerated(n_nodes));
        sc.behaviors = vec![ByzantineBehavior::ALL[behavior]];
        sc.gst = gst;
        sc.drop_probability = drop;
        sc.pre_gst_model = if reorder { PreGstModel::AdversarialReorder } else { PreGstModel::BoundedRandom };
        let trace = run(&sc).unwrap();
        let report = check_trace(&trace, &[Property::CommitPrefix, Property::DoubleVote, Property::UniqueQc, Property::DelayBound]);
        prop_assert!(report.passed(), "{:?}", report.violations);
        prop_assert!(!trace.summary.stats.truncated);
    }

    /// All-honest synchronous runs commit every view but the last two.
    #[test]
    fn honest_runs_are_live(n_nodes in 4usize..40, n in 2usize..12, seed in any::<u64>()) {
        prop_assume!(n <= n_nodes);
        let trace = run(&honest(n_nodes, n, 12, seed)).unwrap();
        let report = check_trace(&trace, &Property::ALL);
        prop_assert!(report.passed(), "{:?}", report.violations);
        prop_assert_eq!(trace.summary.stats.timeout_qcs, 0);
    }
}
