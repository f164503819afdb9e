//! Failure events of a committee tree under both adversary models, plus the
//! derived certificate and safety bounds.
//!
//! `cargo run --example events -- [N] [K]`

use carnot::analysis::{delta, qc_necessary_condition_bound, safety_failure_bound, Adversary, FailureEvent, PartitionModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let get = |i: usize, d: usize| args.get(i).copied().unwrap_or(d);
    let (n_nodes, k) = (get(0, 2_000), get(1, 9));
    let events: Vec<FailureEvent> = ["E0", "E1(1/3)", "E1(1/2)", "E2(1/3)", "E3(1/3)", "E3(2/3)"]
        .iter()
        .map(|s| s.parse())
        .collect::<Result<_, _>>()?;

    for adversary in [Adversary::ExactCount(n_nodes / 10), Adversary::Fraction(0.1)] {
        let model = PartitionModel::split(n_nodes, k, adversary)?;
        println!("{} N={n_nodes} K={k} sizes={:?}", model.model_name(), model.sizes);
        for &event in &events {
            let v = delta(&model, event)?;
            let exact = v.exact.map_or("-".to_string(), |p| p.to_string());
            println!("  {:<9} exact={exact:<14} bound={}", event.to_string(), v.bound);
        }
        let qc = qc_necessary_condition_bound(&model)?;
        println!("  honest certificate probability >= {:.6}{}", qc.value, if qc.below_two_thirds { " (below 2/3)" } else { "" });
        println!("  safety failure <= {}", safety_failure_bound(&model)?);
    }
    Ok(())
}
