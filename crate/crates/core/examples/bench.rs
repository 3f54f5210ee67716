//! Time per training step with and without a freshly sampled noise mask.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stag::data::{make_split, synthetic_citation_sized, SplitPolicy};
use stag::experiments::bench;
use stag::layers::{LayerKind, ModelConfig};
use stag::noise::{preset_spec, NoiseFamily, Preset};

fn main() -> stag::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let g = synthetic_citation_sized(1000, 2000, 500, 7, &mut rng)?;
    let split = make_split(&g, 70, 200, 400, SplitPolicy::PlanetoidLike, 0)?;
    let spec = preset_spec(Preset::StagFull, NoiseFamily::Normal { mu: 1.0, sigma: 0.8 })?;
    for kind in [LayerKind::Gcn, LayerKind::SageMean, LayerKind::Gin] {
        let mc = ModelConfig::new(kind, g.n_features(), g.num_classes(), 2).with_hidden(64);
        let r = bench(&g, &mc, &spec, &split.train, 6, 0)?;
        println!(
            "{:<9} deterministic {:>7.2} ms  stochastic {:>7.2} ms  ratio {:.2}",
            kind.name(),
            1e3 * r.deterministic,
            1e3 * r.stochastic,
            r.ratio()
        );
    }
    Ok(())
}
