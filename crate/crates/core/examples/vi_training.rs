//! Learns a posterior over aggregation noise at each granularity.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stag::data::{make_split, synthetic_citation_sized, SplitPolicy};
use stag::layers::{LayerKind, ModelConfig};
use stag::train::{train_node_classifier, Method, TrainConfig};
use stag::vi::{Granularity, ViConfig};

fn main() -> stag::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = synthetic_citation_sized(400, 800, 100, 4, &mut rng)?;
    let split = make_split(&g, 40, 100, 200, SplitPolicy::PlanetoidLike, 1)?;
    let model_cfg = ModelConfig::new(LayerKind::Gcn, g.n_features(), g.num_classes(), 2).with_hidden(32);
    let cfg = TrainConfig {
        lr: 1e-2,
        epochs: 150,
        patience: Some(40),
        mc_samples: 16,
        ..TrainConfig::default()
    };
    for granularity in Granularity::ALL {
        let vi = ViConfig::new(granularity);
        let (report, _) = train_node_classifier(&cfg, &model_cfg, &g, &split, &Method::Vi(vi))?;
        let last = report.history.last().map_or(f64::NAN, |e| e.train_loss);
        println!(
            "{:<22} -ELBO/n {:>8.4}  val {:.3}  test {:.3}",
            granularity.name(),
            last,
            report.val_accuracy,
            report.test_accuracy
        );
    }
    Ok(())
}
