//! Samples one mask per preset on a small ring and shows how the draws are shared.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stag::graph::Graph;
use stag::noise::{effective_adjacency, preset_spec, sample_mask, NoiseFamily, Preset};

fn main() -> stag::Result<()> {
    let n = 6;
    let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    let g = Graph::undirected(&edges, Array2::eye(n), None)?;
    let widths = [3, 3];
    let bernoulli = NoiseFamily::Bernoulli { p_drop: 0.5 };

    for preset in Preset::ALL {
        let spec = preset_spec(preset, bernoulli)?;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mask = sample_mask(&spec, &g, &widths, &mut rng)?;
        println!("{} ({:?})", preset.name(), spec.sharing);
        for (l, &w) in widths.iter().enumerate().take(mask.depth()) {
            for c in 0..w {
                let row: String = (0..g.augmented().nnz())
                    .map(|e| if mask.weight(l, c, e) == 0.0 { '.' } else { '1' })
                    .collect();
                println!("  layer {l} channel {c}: {row}");
            }
        }
        let eff = effective_adjacency(&g, &spec, &mask, 0, 0)?;
        let sums: Vec<String> = eff.row_sums().iter().map(|s| format!("{s:.2}")).collect();
        println!("  row sums of the layer-0 effective adjacency: {}", sums.join(" "));
    }
    Ok(())
}
