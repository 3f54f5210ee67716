//! Trains a two-layer GCN on a generated citation-style graph with and
//! without aggregation noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stag::data::{make_split, synthetic_citation_sized, SplitPolicy};
use stag::layers::{LayerKind, ModelConfig};
use stag::noise::{preset_spec, NoiseFamily, NoiseSpec, Preset};
use stag::train::{train_node_classifier, Method, TrainConfig};

fn main() -> stag::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let g = synthetic_citation_sized(600, 1200, 200, 5, &mut rng)?;
    let split = make_split(&g, 50, 150, 300, SplitPolicy::PlanetoidLike, 0)?;
    let model_cfg = ModelConfig::new(LayerKind::Gcn, g.n_features(), g.num_classes(), 2).with_hidden(32);
    let cfg = TrainConfig {
        lr: 1e-2,
        epochs: 200,
        patience: Some(50),
        mc_samples: 16,
        ..TrainConfig::default()
    };

    let methods = [
        ("deterministic", NoiseSpec::delta()),
        (
            "dropout p=0.5",
            preset_spec(Preset::Dropout, NoiseFamily::Bernoulli { p_drop: 0.5 })?,
        ),
        (
            "dropedge p=0.3",
            preset_spec(Preset::DropEdge, NoiseFamily::Bernoulli { p_drop: 0.3 })?,
        ),
        (
            "stag_full Normal(1, 0.5)",
            preset_spec(Preset::StagFull, NoiseFamily::Normal { mu: 1.0, sigma: 0.5 })?,
        ),
    ];
    for (name, spec) in methods {
        let (report, _) = train_node_classifier(&cfg, &model_cfg, &g, &split, &Method::Noise(spec))?;
        println!(
            "{name:<26} best epoch {:>3}  val {:.3}  test {:.3}",
            report.best_epoch, report.val_accuracy, report.test_accuracy
        );
    }
    Ok(())
}
