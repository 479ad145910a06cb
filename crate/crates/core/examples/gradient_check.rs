//! Compare reverse-mode gradients against central finite differences for
//! every layer type and both loss terms.
//!
//! ```text
//! cargo run --example gradient_check -- [seed]
//! ```

use unetdr::autodiff::gradcheck::{run_suite, GRADCHECK_TOLERANCE};

fn main() -> unetdr::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let checks = run_suite(seed)?;
    for c in &checks {
        println!("{:<32} {:.2e} {}", c.name, c.max_relative_error, if c.passed { "ok" } else { "FAIL" });
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} checks, {failed} above {GRADCHECK_TOLERANCE:e}", checks.len());
    if failed > 0 {
        std::process::exit(3);
    }
    Ok(())
}
