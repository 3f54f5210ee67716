//! Dense symmetric eigendecomposition by cyclic Jacobi rotations.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Eigenpairs sorted by ascending eigenvalue; `vectors` holds them as columns.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

fn off_diagonal_norm(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += a[[i, j]] * a[[i, j]];
            }
        }
    }
    sum.sqrt()
}

/// Cyclic Jacobi. Stops once the off-diagonal Frobenius norm drops below `tol`.
pub fn symmetric_eigen(matrix: &Array2<f64>, tol: f64, max_sweeps: usize) -> Result<SymmetricEigen> {
    let n = matrix.nrows();
    if matrix.ncols() != n {
        return Err(Error::Shape {
            op: "symmetric_eigen",
            lhs: matrix.dim(),
            rhs: (n, n),
        });
    }
    let mut a = matrix.clone();
    let mut v = Array2::<f64>::eye(n);

    let mut sweeps = 0;
    loop {
        let residual = off_diagonal_norm(&a);
        if residual < tol {
            break;
        }
        if sweeps == max_sweeps {
            return Err(Error::EigenNonConvergence { sweeps, residual });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                a[[p, q]] = 0.0;
                a[[q, p]] = 0.0;
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[i, i]].total_cmp(&a[[j, j]]));
    let values = order.iter().map(|&i| a[[i, i]]).collect();
    let vectors = Array2::from_shape_fn((n, n), |(r, c)| v[[r, order[c]]]);
    Ok(SymmetricEigen { values, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn diagonalizes_small_matrix() {
        let m = array![[2.0, 1.0, 0.0], [1.0, 2.0, 1.0], [0.0, 1.0, 2.0]];
        let eig = symmetric_eigen(&m, 1e-12, 50).unwrap();
        let s = 2f64.sqrt();
        assert_abs_diff_eq!(eig.values[0], 2.0 - s, epsilon = 1e-12);
        assert_abs_diff_eq!(eig.values[1], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eig.values[2], 2.0 + s, epsilon = 1e-12);
        let recon = eig.vectors.dot(&Array2::from_diag(&eig.values)).dot(&eig.vectors.t());
        for (x, y) in recon.iter().zip(m.iter()) {
            assert_abs_diff_eq!(*x, *y, epsilon = 1e-12);
        }
    }

    #[test]
    fn reports_non_convergence() {
        let m = array![[1.0, 0.5], [0.5, 3.0]];
        match symmetric_eigen(&m, 1e-12, 0) {
            Err(Error::EigenNonConvergence { residual, .. }) => assert!(residual > 0.0),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
