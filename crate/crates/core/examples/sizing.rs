//! Picks the committee layout for a network size and failure target.
//!
//! `cargo run --release --example sizing -- [delta] [p]`

use carnot::analysis::{committee_size_solver, layout_upper_bound, Fraction, SizingParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let delta: f64 = std::env::args().nth(1).map_or(Ok(1e-4), |s| s.parse())?;
    let p: f64 = std::env::args().nth(2).map_or(Ok(0.1), |s| s.parse())?;
    let a = Fraction::third();
    println!("{:>8} {:>6} {:>6} {:>4} {:>14} {:>10}", "N", "K", "n", "r", "failure", "n bound");
    for n_nodes in [1_000, 3_000, 10_000, 30_000, 100_000] {
        let s = committee_size_solver(SizingParams { n_nodes, p, a, delta })?;
        let bound = layout_upper_bound(n_nodes, s.n, s.failure, p, a)?;
        println!("{n_nodes:>8} {:>6} {:>6} {:>4} {:>14.6e} {bound:>10.1}", s.k, s.n, s.r, s.failure);
    }
    Ok(())
}
