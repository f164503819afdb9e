//! Runs a built-in seed matrix and prints per-configuration totals.
//!
//! `cargo run --release --example campaign -- [adversarial|happy-path|authenticators] [seeds]`

use std::collections::BTreeMap;

use carnot::sim::campaign::{authenticator_report, builtin_campaign, run_campaign};

type Totals = (usize, usize, usize, u64, usize);

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "happy-path".into());
    let mut campaign = builtin_campaign(&name)?;
    if let Some(seeds) = std::env::args().nth(2) {
        campaign.seeds = seeds.parse()?;
    }
    let start = std::time::Instant::now();
    let report = run_campaign(&campaign)?;

    // (runs, safety violations, other violations, timeout certificates, sound runs)
    let mut groups: BTreeMap<(usize, String), Totals> = BTreeMap::new();
    for r in &report.rows {
        let g = groups.entry((r.n_nodes, r.behavior.clone())).or_default();
        g.0 += 1;
        g.1 += r.safety_violations;
        g.2 += r.other_violations;
        g.3 += r.timeout_qcs;
        g.4 += usize::from(r.sound);
    }
    println!("{:>5} {:<18} {:>5} {:>7} {:>6} {:>9} {:>6}", "N", "behavior", "runs", "safety", "other", "timeouts", "sound");
    for ((n, b), (runs, safety, other, tqc, sound)) in groups {
        println!("{n:>5} {b:<18} {runs:>5} {safety:>7} {other:>6} {tqc:>9} {sound:>6}");
    }
    for v in report.checks.violations.iter().take(10) {
        println!("violation {}: {}", v.property, v.detail);
    }
    if name == "authenticators" {
        let a = authenticator_report(&report.rows);
        println!("fit c={:.3} R^2={:.4} within 4n: {}", a.fit.c, a.fit.r_squared, a.within_band);
        for (n, k, max) in &a.per_size_max {
            println!("N={n} n={k} max per view={max:.1}");
        }
    }
    println!("{} runs in {:.2?}", report.rows.len(), start.elapsed());
    Ok(())
}
