//! Dense symmetric positive-definite solves.

use ndarray::{Array2, ArrayView2, Axis};

use crate::{Error, Result};

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    lower: Array2<f64>,
}

impl Cholesky {
    /// Factors a symmetric matrix; only the lower triangle of `a` is read.
    pub fn factor(a: ArrayView2<'_, f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension {
                context: "cholesky (square)",
                expected: n,
                actual: a.ncols(),
            });
        }
        let mut l = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            let row_j = l.row(j);
            let mut d = a[[j, j]] - row_j.slice(ndarray::s![..j]).dot(&row_j.slice(ndarray::s![..j]));
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: j, value: d });
            }
            d = d.sqrt();
            l[[j, j]] = d;
            for i in j + 1..n {
                let s = a[[i, j]]
                    - l.row(i)
                        .slice(ndarray::s![..j])
                        .dot(&l.row(j).slice(ndarray::s![..j]));
                l[[i, j]] = s / d;
            }
        }
        Ok(Self { lower: l })
    }

    pub fn lower(&self) -> &Array2<f64> {
        &self.lower
    }

    pub fn min_diagonal(&self) -> f64 {
        self.lower.diag().iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Solves `A X = B` for every column of `b`.
    pub fn solve(&self, b: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let n = self.lower.nrows();
        if b.nrows() != n {
            return Err(Error::Dimension {
                context: "cholesky solve rhs",
                expected: n,
                actual: b.nrows(),
            });
        }
        let l = &self.lower;
        let mut x = b.to_owned();
        // forward: L Y = B, row by row so each update is a contiguous axpy
        for i in 0..n {
            for k in 0..i {
                let lik = l[[i, k]];
                if lik != 0.0 {
                    let (done, mut rest) = x.view_mut().split_at(Axis(0), i);
                    rest.row_mut(0).scaled_add(-lik, &done.row(k));
                }
            }
            let d = l[[i, i]];
            x.row_mut(i).mapv_inplace(|v| v / d);
        }
        // backward: Lᵀ X = Y
        for i in (0..n).rev() {
            for k in i + 1..n {
                let lki = l[[k, i]];
                if lki != 0.0 {
                    let (mut head, tail) = x.view_mut().split_at(Axis(0), i + 1);
                    head.row_mut(i).scaled_add(-lki, &tail.row(k - i - 1));
                }
            }
            let d = l[[i, i]];
            x.row_mut(i).mapv_inplace(|v| v / d);
        }
        Ok(x)
    }
}

/// Relative Frobenius distance `‖a - b‖ / max(‖b‖, tiny)`.
pub fn rel_frobenius(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    let diff = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / nb.max(f64::MIN_POSITIVE)
}
