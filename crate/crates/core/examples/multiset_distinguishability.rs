//! Which aggregators separate the classic hard multiset pairs, and how the
//! expected stochastic sum compares with its closed form.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stag::analysis::{
    distinguishability_report, expected_stochastic_aggregate, table_pairs, uniform_exp_sum_closed_form, Aggregator,
    Multiset, Transform,
};
use stag::noise::NoiseFamily;

fn main() -> stag::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pairs = table_pairs();
    for row in distinguishability_report(&pairs, 200_000, 5.0, &mut rng)? {
        println!(
            "pair {} {:<8} {:>10.5} {:>10.5}  {}",
            row.pair_id,
            row.aggregator,
            row.value_x,
            row.value_y,
            if row.distinguished { "distinguished" } else { "-" }
        );
    }

    let x = Multiset::new(vec![0.5, -1.0, 2.0]);
    let q = NoiseFamily::Uniform { a: 0.0, b: 1.0 };
    let mc = expected_stochastic_aggregate(&x, Aggregator::Sum, Transform::Exp, &q, 1_000_000, &mut rng)?;
    println!(
        "E[exp(SUM)] for {x}: Monte Carlo {:.5} ± {:.5}, closed form {:.5}",
        mc.mean,
        mc.std_error,
        uniform_exp_sum_closed_form(&x)?
    );
    Ok(())
}
