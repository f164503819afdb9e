//! Runs a built-in analysis preset and prints its table and checks.
//!
//! `cargo run --release --example presets -- [name]`

use carnot::analysis::{builtin_preset, preset_names, run_preset};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let Some(name) = std::env::args().nth(1) else {
        println!("presets: {}", preset_names().join(", "));
        return Ok(());
    };
    let preset = builtin_preset(&name)?;
    println!("{}: {}", preset.name, preset.description);
    let report = run_preset(&preset)?;
    println!("{}", report.header.join("\t"));
    for row in report.rows.iter().take(40) {
        println!("{}", row.join("\t"));
    }
    if report.rows.len() > 40 {
        println!("... {} more rows", report.rows.len() - 40);
    }
    for check in &report.checks {
        println!("check: {check}");
    }
    println!("{}", if report.passed() { "all checks passed" } else { "FAILED" });
    Ok(())
}
