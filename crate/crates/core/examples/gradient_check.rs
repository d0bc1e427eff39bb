//! Finite-difference check of the complete training objective on a micro
//! model, then the same check with a deliberately broken convolution
//! backward pass to show that the failure is localized.
//!
//! cargo run --release --example gradient_check -- [seed]

use epireader::autodiff::FaultInjection;
use epireader::micro::micro_instance;

fn main() -> epireader::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let micro = micro_instance(seed)?;
    println!(
        "micro model: {} tensors, {} scalars",
        micro.params.len(),
        micro.params.num_scalars()
    );

    let report = micro.check(FaultInjection::None)?;
    for t in &report.tensors {
        println!(
            "{:<28} {:.2e} {}",
            t.name,
            t.max_rel_err,
            if t.passed { "ok" } else { "FAIL" }
        );
    }
    println!("all passed: {} (tolerance {:e})\n", report.passed(), report.tolerance);

    let broken = micro.check(FaultInjection::ConvFilters)?;
    let failed: Vec<&str> = broken.failures().map(|t| t.name.as_str()).collect();
    println!("with conv filter gradients doubled, failing tensors: {failed:?}");
    Ok(())
}
