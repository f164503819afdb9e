//! One committee's tail probability next to its two closed-form bounds.
//!
//! `cargo run --example tails -- [N] [M] [committee size]`

use carnot::analysis::{binom_tail, binom_tail_bound, hoeffding_bound, hyper_tail, hyper_tail_bound, kl_divergence, Fraction};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let get = |i: usize, d: usize| args.get(i).copied().unwrap_or(d);
    let (n_total, m, size) = (get(0, 10_000), get(1, 2_500), get(2, 500));
    let p = m as f64 / n_total as f64;

    println!("N={n_total} M={m} committee={size} p={p}");
    println!("{:>6} {:>14} {:>14} {:>14} {:>14} {:>14}", "A", "hyper exact", "hyper bound", "binom exact", "chernoff", "hoeffding");
    for a in ["1/3", "1/2", "2/3"] {
        let a: Fraction = a.parse()?;
        let k = a.floor_mul(size) + 1;
        println!(
            "{:>6} {:>14} {:>14} {:>14} {:>14} {:>14}",
            a.to_string(),
            hyper_tail(n_total, m, size, k).to_string(),
            hyper_tail_bound(n_total, m, size, a)?.to_string(),
            binom_tail(size, p, k).to_string(),
            binom_tail_bound(size, p, a).to_string(),
            hoeffding_bound(size, p, a).to_string(),
        );
    }
    println!("D(1/3 || {p}) = {:.6}", kl_divergence(1.0 / 3.0, p)?);
    Ok(())
}
