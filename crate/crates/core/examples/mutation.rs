//! Disables the highest-voted-view update in every node and shows the trace
//! checker reporting the resulting double votes.

use carnot::engine::Mutation;
use carnot::sim::{check_trace, run, Property, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut scenario = Scenario::new(10, 3, 5);
    scenario.views_to_run = 12;
    let clean = check_trace(&run(&scenario)?, &Property::ALL);
    println!("unmodified nodes: passed={}", clean.passed());

    scenario.mutation = Some(Mutation::SkipVotedViewUpdate);
    let report = check_trace(&run(&scenario)?, &Property::ALL);
    println!("mutated nodes: passed={} double votes={}", report.passed(), report.count(Property::DoubleVote));
    for v in report.violations.iter().take(5) {
        println!("  {}: {}", v.property, v.detail);
    }
    Ok(())
}
