//! Finite-difference check of every differentiable operation and model path.

use stag::autodiff::{gradcheck_suite, SUITE_EPS};

fn main() -> stag::Result<()> {
    let reports = gradcheck_suite(0)?;
    let mut worst = 0.0f64;
    for (name, r) in &reports {
        worst = worst.max(r.max_rel_error);
        println!(
            "{name:<40} {:>5} coords  {:.2e}",
            r.coordinates_checked, r.max_rel_error
        );
    }
    println!(
        "{} cases at eps {SUITE_EPS:e}, worst relative error {worst:.2e}",
        reports.len()
    );
    Ok(())
}
