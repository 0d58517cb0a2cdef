//! Analytic dynamic imbalance rectifier.
//!
//! Keeps per-class auto-correlation `A(c) = Σ h hᵀ`, cross-correlation
//! `C(c) = Σ h zᵀ` and counts `N(c)` for every class ever observed. The
//! classifier is the weighted ridge solution
//!
//! ```text
//! W = (Σ_c π_c A(c) + γ I)⁻¹ Σ_c π_c C(c),   π_c = 1 / N(c)
//! ```
//!
//! with `γ = γ0 · exp(α (gini - 0.5))` driven by the imbalance of the
//! current task. Because the statistics are sums, streaming samples in any
//! order and solving once equals the batch solve on the pooled data.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::linalg::Cholesky;
use crate::{Error, Result, N_BINS};

pub const DEFAULT_GAMMA0: f64 = 100.0;
pub const DEFAULT_REG_EXPONENT: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    /// `h × h` auto-correlation.
    pub auto: Array2<f64>,
    /// `h × 360` cross-correlation.
    pub cross: Array2<f64>,
    pub count: u64,
}

impl ClassStats {
    fn zeros(dim: usize) -> Self {
        Self {
            auto: Array2::zeros((dim, dim)),
            cross: Array2::zeros((dim, N_BINS)),
            count: 0,
        }
    }

    fn add(&mut self, other: &ClassStats) {
        self.auto += &other.auto;
        self.cross += &other.cross;
        self.count += other.count;
    }
}

/// Which parts of the rectifier are active. Both off gives plain
/// unweighted ridge with `γ = γ0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdirOptions {
    pub arm_reweight: bool,
    pub adaptive_gamma: bool,
}

impl Default for AdirOptions {
    fn default() -> Self {
        Self {
            arm_reweight: true,
            adaptive_gamma: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdirState {
    dim: usize,
    gamma0: f64,
    reg_exponent: f64,
    options: AdirOptions,
    stats: BTreeMap<usize, ClassStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierWeights {
    /// `h × 360`.
    pub weights: Array2<f64>,
    pub gamma_used: f64,
    pub gini_used: f64,
}

impl AdirState {
    pub fn new(dim: usize, gamma0: f64, reg_exponent: f64, options: AdirOptions) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("feature dimension must be positive".into()));
        }
        if !(gamma0 > 0.0) {
            return Err(Error::InvalidArgument(format!("gamma0 must be positive, got {gamma0}")));
        }
        Ok(Self {
            dim,
            gamma0,
            reg_exponent,
            options,
            stats: BTreeMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn gamma0(&self) -> f64 {
        self.gamma0
    }

    pub fn reg_exponent(&self) -> f64 {
        self.reg_exponent
    }

    pub fn options(&self) -> AdirOptions {
        self.options
    }

    pub fn class_stats(&self, class: usize) -> Option<&ClassStats> {
        self.stats.get(&class)
    }

    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.stats.keys().copied()
    }

    /// Cumulative per-class counts, in class order.
    pub fn counts(&self) -> Vec<(usize, u64)> {
        self.stats.iter().map(|(&c, s)| (c, s.count)).collect()
    }

    fn check_class(&self, class: usize) -> Result<()> {
        if class >= N_BINS {
            return Err(Error::DoaRange(class as i64));
        }
        Ok(())
    }

    /// Rank-one update with one embedded sample.
    pub fn accumulate(&mut self, h: ArrayView1<'_, f64>, class: usize, z: ArrayView1<'_, f64>) -> Result<()> {
        if h.len() != self.dim {
            return Err(Error::Dimension {
                context: "embedding",
                expected: self.dim,
                actual: h.len(),
            });
        }
        if z.len() != N_BINS {
            return Err(Error::Dimension {
                context: "target",
                expected: N_BINS,
                actual: z.len(),
            });
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite embedding".into()));
        }
        self.check_class(class)?;
        let dim = self.dim;
        let entry = self.stats.entry(class).or_insert_with(|| ClassStats::zeros(dim));
        let hc = h.view().insert_axis(Axis(1));
        ndarray::linalg::general_mat_mul(1.0, &hc, &hc.t(), 1.0, &mut entry.auto);
        ndarray::linalg::general_mat_mul(1.0, &hc, &z.view().insert_axis(Axis(0)), 1.0, &mut entry.cross);
        entry.count += 1;
        Ok(())
    }

    /// Adds a block of samples, grouped per class and folded in with one
    /// matrix product per class. `embeddings` is `n × h`, `targets` is `n × 360`.
    pub fn accumulate_batch(
        &mut self,
        embeddings: ArrayView2<'_, f64>,
        classes: &[usize],
        targets: ArrayView2<'_, f64>,
    ) -> Result<()> {
        let n = embeddings.nrows();
        if classes.len() != n || targets.nrows() != n {
            return Err(Error::Dimension {
                context: "batch rows",
                expected: n,
                actual: classes.len().min(targets.nrows()),
            });
        }
        if embeddings.ncols() != self.dim {
            return Err(Error::Dimension {
                context: "embedding",
                expected: self.dim,
                actual: embeddings.ncols(),
            });
        }
        if targets.ncols() != N_BINS {
            return Err(Error::Dimension {
                context: "target",
                expected: N_BINS,
                actual: targets.ncols(),
            });
        }
        if embeddings.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite embedding".into()));
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &c) in classes.iter().enumerate() {
            self.check_class(c)?;
            groups.entry(c).or_default().push(i);
        }
        let dim = self.dim;
        for (c, rows) in groups {
            let hc = embeddings.select(Axis(0), &rows);
            let zc = targets.select(Axis(0), &rows);
            let entry = self.stats.entry(c).or_insert_with(|| ClassStats::zeros(dim));
            ndarray::linalg::general_mat_mul(1.0, &hc.t(), &hc, 1.0, &mut entry.auto);
            ndarray::linalg::general_mat_mul(1.0, &hc.t(), &zc, 1.0, &mut entry.cross);
            entry.count += rows.len() as u64;
        }
        Ok(())
    }

    /// Folds another shard's statistics into this one.
    pub fn merge(&mut self, other: &AdirState) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::Dimension {
                context: "merge",
                expected: self.dim,
                actual: other.dim,
            });
        }
        let dim = self.dim;
        for (&c, s) in &other.stats {
            self.stats.entry(c).or_insert_with(|| ClassStats::zeros(dim)).add(s);
        }
        Ok(())
    }

    /// Regularization for a task with the given Gini coefficient, honoring
    /// the `adaptive_gamma` switch.
    pub fn gamma_for(&self, gini: f64) -> f64 {
        if self.options.adaptive_gamma {
            adaptive_gamma(gini, self.gamma0, self.reg_exponent)
        } else {
            self.gamma0
        }
    }

    pub fn solve(&self, gini: f64) -> Result<ClassifierWeights> {
        let gamma = self.gamma_for(gini);
        let mut w = self.solve_with_gamma(gamma)?;
        w.gini_used = gini;
        Ok(w)
    }

    /// Closed-form solve at an explicit `γ`.
    pub fn solve_with_gamma(&self, gamma: f64) -> Result<ClassifierWeights> {
        if self.stats.is_empty() {
            return Err(Error::InvalidArgument("no class has been accumulated".into()));
        }
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
        }
        let (a, c) = self.weighted_system(gamma);
        let weights = Cholesky::factor(a.view())?.solve(c.view())?;
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite classifier weights".into()));
        }
        Ok(ClassifierWeights {
            weights,
            gamma_used: gamma,
            gini_used: f64::NAN,
        })
    }

    /// `(Σ π_c A(c) + γ I, Σ π_c C(c))`.
    pub fn weighted_system(&self, gamma: f64) -> (Array2<f64>, Array2<f64>) {
        let mut a = Array2::<f64>::zeros((self.dim, self.dim));
        let mut c = Array2::<f64>::zeros((self.dim, N_BINS));
        for s in self.stats.values() {
            let pi = if self.options.arm_reweight {
                1.0 / s.count as f64
            } else {
                1.0
            };
            a.scaled_add(pi, &s.auto);
            c.scaled_add(pi, &s.cross);
        }
        for i in 0..self.dim {
            a[[i, i]] += gamma;
        }
        (a, c)
    }
}

/// Gini coefficient `Σ_i Σ_j |p_i - p_j| / (2 n Σ p)`.
pub fn gini(counts: &[f64]) -> Result<f64> {
    if counts.is_empty() {
        return Err(Error::InvalidArgument("gini of an empty count list".into()));
    }
    if counts.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvalidArgument("gini counts must be finite and non-negative".into()));
    }
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("gini counts sum to zero".into()));
    }
    let mut diff = 0.0;
    for &p in counts {
        for &q in counts {
            diff += (p - q).abs();
        }
    }
    Ok(diff / (2.0 * counts.len() as f64 * total))
}

/// `γ0 · exp(α (gini - 0.5))`.
pub fn adaptive_gamma(gini: f64, gamma0: f64, reg_exponent: f64) -> f64 {
    gamma0 * (reg_exponent * (gini - 0.5)).exp()
}

/// Index of the largest value; ties go to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl ClassifierWeights {
    pub fn dim(&self) -> usize {
        self.weights.nrows()
    }

    /// Logits `Wᵀ h`.
    pub fn predict(&self, h: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        if h.len() != self.dim() {
            return Err(Error::Dimension {
                context: "predict",
                expected: self.dim(),
                actual: h.len(),
            });
        }
        Ok(self.weights.t().dot(&h))
    }

    pub fn predict_doa(&self, h: ArrayView1<'_, f64>) -> Result<usize> {
        Ok(argmax(self.predict(h)?.as_slice().expect("owned logits are contiguous")))
    }

    /// Predicted DoA bin for every row of an `n × h` embedding matrix.
    pub fn predict_batch(&self, embeddings: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        if embeddings.ncols() != self.dim() {
            return Err(Error::Dimension {
                context: "predict",
                expected: self.dim(),
                actual: embeddings.ncols(),
            });
        }
        let logits = embeddings.dot(&self.weights);
        Ok(logits
            .rows()
            .into_iter()
            .map(|r| argmax(&r.to_vec()))
            .collect())
    }
}
