//! Runs one simulation and checks its trace.
//!
//! `cargo run --release --example simulate -- [N] [n] [views] [seed]`

use carnot::sim::{check_trace, run, Property, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let get = |i: usize, d: u64| args.get(i).copied().unwrap_or(d);
    let mut scenario = Scenario::new(get(0, 10) as usize, get(1, 3) as usize, get(3, 1));
    scenario.views_to_run = get(2, 20);

    let start = std::time::Instant::now();
    let trace = run(&scenario)?;
    let report = check_trace(&trace, &Property::ALL);
    let s = &trace.summary;
    println!("N={} n={} K={} timeout={}", scenario.n_nodes, trace.header.committee_size, trace.header.committees, trace.header.view_timeout);
    println!("events={} messages={} end_time={} max_view={} timeout_qcs={}", s.stats.events, s.stats.messages_sent, s.stats.end_time, s.stats.max_view, s.stats.timeout_qcs);
    let commits: Vec<usize> = s.commits.values().map(|c| c.len()).collect();
    println!("commits per node: min={:?} max={:?}", commits.iter().min(), commits.iter().max());
    println!("qcs={} min_qc_support={:?} digest={}", s.qcs.len(), report.min_qc_support, &s.log_digest[..16]);
    for v in &report.violations {
        println!("violation {}: {}", v.property, v.detail);
    }
    println!("{} in {:.2?}", if report.passed() { "ok" } else { "FAILED" }, start.elapsed());
    Ok(())
}
