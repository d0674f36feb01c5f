//! Finite-difference check of every differentiable building block.
//!
//! `cargo run --release --example gradcheck`

use slt_core::gradsuite::{gradient_suite, SuiteOptions};

fn main() -> slt_core::Result<()> {
    let cases = gradient_suite(SuiteOptions::default())?;
    for c in &cases {
        println!("{:<36} {:>5} probes  {:.2e}", c.name, c.report.checked, c.report.max_rel_error);
    }
    let worst = cases.iter().map(|c| c.report.max_rel_error).fold(0.0, f64::max);
    println!("worst relative error {worst:.2e}");
    Ok(())
}
