//! Dirichlet energy of a smooth signal under repeated noisy aggregation.

use stag::analysis::EnergyScale;
use stag::experiments::{run_oversmooth, OversmoothConfig};

fn main() -> stag::Result<()> {
    for scale in [EnergyScale::Absolute, EnergyScale::Normalized] {
        let cfg = OversmoothConfig {
            layers: 16,
            runs: 5,
            scale,
            ..OversmoothConfig::default()
        };
        println!("{scale:?} energy");
        for (name, traj) in run_oversmooth(&cfg)? {
            let at = |l: usize| traj.mean[l];
            println!(
                "  {name:<14} layer 1 {:.3e}  layer 4 {:.3e}  layer 16 {:.3e}",
                at(1),
                at(4),
                at(16)
            );
        }
    }
    Ok(())
}
