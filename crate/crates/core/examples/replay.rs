//! Records an adversarial run as JSONL, replays it, then replays a copy with
//! one commit removed to show the mismatch being reported.

use carnot::sim::{replay, replay_jsonl, run, AdversarySpec, ByzantineBehavior, PreGstModel, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut scenario = Scenario::new(31, 10, 42);
    scenario.views_to_run = 15;
    scenario.adversaries = AdversarySpec::Exact(10);
    scenario.behaviors = ByzantineBehavior::ALL.to_vec();
    scenario.gst = 80;
    scenario.pre_gst_model = PreGstModel::AdversarialReorder;
    scenario.record_log = true;

    let trace = run(&scenario)?;
    let jsonl = trace.to_jsonl();
    println!("trace: {} lines, {} bytes, digest {}", jsonl.lines().count(), jsonl.len(), &trace.summary.log_digest[..16]);
    println!("replay of recorded JSONL: {:?}", replay_jsonl(jsonl.as_bytes())?);

    let mut tampered = trace.clone();
    if let Some(commits) = tampered.summary.commits.values_mut().next() {
        commits.pop();
    }
    let report = replay(&tampered)?;
    println!("replay after dropping a commit: identical={} {report:?}", report.identical());
    Ok(())
}
