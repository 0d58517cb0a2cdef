use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Minimum angular difference in degrees, in [0, 180].
pub fn angular_distance(a_deg: f64, b_deg: f64) -> f64 {
    let a = a_deg.rem_euclid(360.0);
    let b = b_deg.rem_euclid(360.0);
    180.0 - ((a - b).abs() - 180.0).abs()
}

/// `(MAE, ACC)` with ACC counting predictions within `tol_deg` (inclusive).
pub fn metrics(preds: &[f64], trues: &[f64], tol_deg: f64) -> Result<(f64, f64)> {
    if preds.len() != trues.len() {
        return Err(Error::Dimension {
            context: "metrics",
            expected: trues.len(),
            actual: preds.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::InvalidArgument("metrics over an empty set".into()));
    }
    let n = preds.len() as f64;
    let (sum, hits) = preds.iter().zip(trues).fold((0.0, 0usize), |(s, h), (&p, &t)| {
        let d = angular_distance(p, t);
        (s + d, h + usize::from(d <= tol_deg))
    });
    Ok((sum / n, hits as f64 / n))
}

/// Lower-triangular accuracy matrix: `rows[m][k]` is the accuracy on the
/// test set of task `k` after training task `m` (0-based, `k <= m`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn tasks(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, m: usize, k: usize) -> Option<f64> {
        self.rows.get(m).and_then(|r| r.get(k)).copied()
    }

    pub fn entry_count(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }
}

/// Backward transfer `(1/(T-1)) Σ_{k<T} (A[T,k] - A[k,k])`.
pub fn bwt(a: &AccuracyMatrix) -> Result<f64> {
    let t = a.tasks();
    if t < 2 {
        return Err(Error::InvalidArgument("BWT needs at least two tasks".into()));
    }
    for (m, row) in a.rows.iter().enumerate() {
        if row.len() != m + 1 {
            return Err(Error::InvalidArgument(format!(
                "accuracy row {} has {} entries, expected {}",
                m + 1,
                row.len(),
                m + 1
            )));
        }
    }
    let last = &a.rows[t - 1];
    let sum: f64 = (0..t - 1).map(|k| last[k] - a.rows[k][k]).sum();
    Ok(sum / (t - 1) as f64)
}
