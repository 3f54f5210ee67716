//! Central finite-difference check of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coordinates_checked: usize,
    /// `(param name, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Relative error with denominator `max(|a|, |b|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares tape gradients with central differences on a seeded random
/// subset (`fraction`, at least one per parameter) of `store`'s coordinates.
///
/// `build` must be deterministic: any sampling inside it has to be re-seeded
/// so both perturbed evaluations see the same draws.
pub fn finite_difference_check<F>(
    store: &mut ParamStore,
    eps: f64,
    fraction: f64,
    seed: u64,
    mut build: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = build(&mut tape, store)?;
    let grads = tape.backward(loss)?;

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = build(&mut tape, store)?;
        Ok(tape.scalar(loss))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coordinates_checked: 0,
        worst: None,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let len = store.value(id).len();
        let count = ((len as f64 * fraction).ceil() as usize).clamp(1, len);
        let analytic_all = grads.param(id).map(|g| g.as_standard_layout().into_owned());
        for flat in sample(&mut rng, len, count).into_iter() {
            let original = store.value(id).as_slice().expect("standard layout")[flat];
            store.value_mut(id).as_slice_mut().expect("standard layout")[flat] = original + eps;
            let plus = eval(store)?;
            store.value_mut(id).as_slice_mut().expect("standard layout")[flat] = original - eps;
            let minus = eval(store)?;
            store.value_mut(id).as_slice_mut().expect("standard layout")[flat] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = analytic_all
                .as_ref()
                .map_or(0.0, |g| g.as_slice().expect("standard layout")[flat]);
            if !numeric.is_finite() || !analytic.is_finite() {
                return Err(Error::NonFinite(format!("gradient check on '{}'", store.get(id).name)));
            }
            let err = relative_error(analytic, numeric);
            report.coordinates_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((store.get(id).name.clone(), flat, analytic, numeric));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn quadratic_loss_is_exact() {
        let mut store = ParamStore::new();
        let id = store.add("w", array![[0.3, -1.2, 2.0], [0.7, 0.0, -0.4]]);
        let report = finite_difference_check(&mut store, 1e-5, 1.0, 3, |t, s| {
            let w = t.param(s, id);
            let sq = t.mul(w, w)?;
            let l = t.scale(sq, 0.5);
            Ok(t.sum(l))
        })
        .unwrap();
        assert_eq!(report.coordinates_checked, 6);
        assert!(report.max_rel_error < 1e-8, "{report:?}");
    }
}
