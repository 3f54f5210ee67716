//! Training objectives recorded on a tape.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::Array2;

use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    /// Softmax outputs read as Poisson rates against one-hot counts.
    PoissonNll,
    Mse,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::PoissonNll => "poisson_nll",
            LossKind::Mse => "mse",
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross_entropy" => Ok(LossKind::CrossEntropy),
            "poisson_nll" => Ok(LossKind::PoissonNll),
            "mse" => Ok(LossKind::Mse),
            _ => Err(Error::Config(format!(
                "unknown loss '{s}' (cross_entropy, poisson_nll, mse)"
            ))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
pub enum Targets {
    /// Class id per row.
    Classes { labels: Vec<usize>, n_classes: usize },
    /// Dense regression targets, one row per prediction row.
    Values(Matrix),
}

impl Targets {
    pub fn classes(labels: &[usize], n_classes: usize) -> Self {
        Targets::Classes {
            labels: labels.to_vec(),
            n_classes,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Targets::Classes { labels, .. } => labels.len(),
            Targets::Values(m) => m.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Dense target matrix for the selected rows (one-hot for classes).
    fn dense(&self, rows: &[usize]) -> Matrix {
        match self {
            Targets::Classes { labels, n_classes } => {
                let mut m = Array2::zeros((rows.len(), *n_classes));
                for (i, &r) in rows.iter().enumerate() {
                    m[[i, labels[r]]] = 1.0;
                }
                m
            }
            Targets::Values(v) => Array2::from_shape_fn((rows.len(), v.ncols()), |(i, j)| v[[rows[i], j]]),
        }
    }
}

/// Mean loss over `rows` of `pred`.
pub fn loss(tape: &mut Tape, kind: LossKind, pred: Var, targets: &Targets, rows: &[usize]) -> Result<Var> {
    let (n, c) = tape.shape(pred);
    if targets.len() != n {
        return Err(Error::Shape {
            op: "loss targets",
            lhs: (n, c),
            rhs: (targets.len(), c),
        });
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument("loss over an empty row set".into()));
    }
    if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
        return Err(Error::InvalidArgument(format!(
            "row {bad} out of range for {n} predictions"
        )));
    }
    match (kind, targets) {
        (LossKind::Mse, Targets::Values(v)) if v.ncols() != c => {
            return Err(Error::Shape {
                op: "mse",
                lhs: (n, c),
                rhs: v.dim(),
            })
        }
        (LossKind::CrossEntropy | LossKind::PoissonNll, Targets::Classes { n_classes, labels }) => {
            if *n_classes != c || labels.iter().any(|&y| y >= c) {
                return Err(Error::Shape {
                    op: kind.name(),
                    lhs: (n, c),
                    rhs: (n, *n_classes),
                });
            }
        }
        (LossKind::CrossEntropy | LossKind::PoissonNll, Targets::Values(_)) => {
            return Err(Error::InvalidArgument(format!("{kind} needs class targets")))
        }
        _ => {}
    }

    let index: Arc<[usize]> = rows.into();
    if let (LossKind::CrossEntropy, Targets::Classes { labels, .. }) = (kind, targets) {
        let picked: Arc<[usize]> = rows.iter().map(|&r| labels[r]).collect();
        return tape.cross_entropy_rows(pred, &index, &picked);
    }
    let sel = if rows.len() == n && rows.iter().enumerate().all(|(i, &r)| i == r) {
        pred
    } else {
        tape.gather_rows(pred, &index)?
    };
    let y = tape.constant(targets.dense(rows));
    Ok(match kind {
        LossKind::CrossEntropy => unreachable!("class targets checked above"),
        LossKind::PoissonNll => {
            let ls = tape.log_softmax_rows(sel);
            let rate = tape.exp(ls);
            let ylog = tape.mul(y, ls)?;
            let per = tape.sub(rate, ylog)?;
            tape.mean(per)
        }
        LossKind::Mse => {
            let d = tape.sub(sel, y)?;
            let sq = tape.mul(d, d)?;
            tape.mean(sq)
        }
    })
}

/// Sum of per-example log-likelihoods implied by the mean loss.
pub fn log_likelihood(tape: &mut Tape, kind: LossKind, pred: Var, targets: &Targets, rows: &[usize]) -> Result<Var> {
    let l = loss(tape, kind, pred, targets, rows)?;
    Ok(tape.scale(l, -(rows.len() as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn uniform_seven_class_cross_entropy() {
        let mut t = Tape::new();
        let p = t.constant(Array2::zeros((4, 7)));
        let l = loss(
            &mut t,
            LossKind::CrossEntropy,
            p,
            &Targets::classes(&[0, 3, 6, 2], 7),
            &[0, 1, 2, 3],
        )
        .unwrap();
        assert_abs_diff_eq!(t.scalar(l), 7f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn confident_logits_drive_cross_entropy_to_zero() {
        let mut t = Tape::new();
        let p = t.constant(array![[1e3, 0.0], [0.0, 1e3]]);
        let l = loss(
            &mut t,
            LossKind::CrossEntropy,
            p,
            &Targets::classes(&[0, 1], 2),
            &[0, 1],
        )
        .unwrap();
        assert_eq!(t.scalar(l), 0.0);
    }

    #[test]
    fn mse_of_identical_is_zero() {
        let x = array![[1.0, -2.0], [0.5, 4.0]];
        let mut t = Tape::new();
        let p = t.constant(x.clone());
        let l = loss(&mut t, LossKind::Mse, p, &Targets::Values(x), &[1, 0]).unwrap();
        assert_eq!(t.scalar(l), 0.0);
    }

    #[test]
    fn poisson_nll_on_uniform_prediction() {
        let mut t = Tape::new();
        let p = t.constant(Array2::zeros((1, 4)));
        let l = loss(&mut t, LossKind::PoissonNll, p, &Targets::classes(&[2], 4), &[0]).unwrap();
        // rates 1/4 each; NLL = (4 * 1/4 - ln(1/4)) / 4
        assert_abs_diff_eq!(t.scalar(l), (1.0 + 4f64.ln()) / 4.0, epsilon = 1e-14);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut t = Tape::new();
        let p = t.constant(Array2::zeros((2, 3)));
        assert!(loss(&mut t, LossKind::CrossEntropy, p, &Targets::classes(&[0, 1], 4), &[0]).is_err());
        assert!(loss(&mut t, LossKind::CrossEntropy, p, &Targets::classes(&[0], 3), &[0]).is_err());
    }
}
