//! Sample, incremental and weighted first/second moments of feature sets.
//!
//! Two normalizations coexist on purpose:
//! - [`compute_stats`] and [`update_stats`] use the unbiased `n - 1`
//!   denominator. The rank-1 update only reproduces batch statistics under
//!   that convention.
//! - [`weighted_stats`] divides by the total weight, so with uniform weights
//!   its covariance is `(n - 1) / n` times the unbiased one.
//!
//! All accumulation happens in `f64`, whatever precision the features were
//! stored in.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance on covariance asymmetry accepted by [`GaussianStats::new`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// `n × d` matrix of feature vectors, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: DMatrix<f64>,
}

impl FeatureMatrix {
    /// Wraps a matrix, rejecting non-finite entries and zero-width rows.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() == 0 {
            return Err(Error::InvalidData(
                "feature dimension must be positive".into(),
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (row, col) = (pos % values.nrows(), pos / values.nrows());
            return Err(Error::InvalidData(format!(
                "non-finite feature value at row {row}, column {col}"
            )));
        }
        Ok(Self { values })
    }

    pub fn from_row_slice(rows: usize, dim: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values for a {rows}x{dim} matrix, got {}",
                rows * dim,
                data.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(rows, dim, data))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch(format!(
                "row {bad} has length {}, expected {dim}",
                rows[bad].len()
            )));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::from_row_slice(rows.len(), dim, &flat)
    }

    pub fn count(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.values
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.values.row(i).transpose()
    }

    /// New matrix made of the given rows, in order. Indices may repeat.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.count()) {
            return Err(Error::Precondition(format!(
                "row index {bad} out of range for {} rows",
                self.count()
            )));
        }
        Ok(Self {
            values: self.values.select_rows(indices),
        })
    }
}

/// Mean vector and covariance matrix of a feature set, plus the sample count
/// they were computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub count: usize,
}

impl GaussianStats {
    /// Validates and symmetrizes a mean/covariance pair.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, count: usize) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "mean has length {d} but covariance is {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidData(
                "non-finite mean or covariance entry".into(),
            ));
        }
        let asymmetry = max_asymmetry(&cov);
        let tolerance = SYMMETRY_TOLERANCE * cov.amax().max(f64::MIN_POSITIVE);
        if asymmetry > tolerance {
            return Err(Error::NotSymmetric {
                asymmetry,
                tolerance,
            });
        }
        Ok(Self {
            mean,
            cov: symmetrize(cov),
            count,
        })
    }

    /// Diagonal Gaussian with the given means and variances.
    pub fn diagonal(mean: &[f64], var: &[f64], count: usize) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::DimensionMismatch(format!(
                "mean has length {}, variances {}",
                mean.len(),
                var.len()
            )));
        }
        Self::new(
            DVector::from_column_slice(mean),
            DMatrix::from_diagonal(&DVector::from_column_slice(var)),
            count,
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Per-sample log-weights; the implied weights `exp(logw)` are always positive.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWeights {
    pub logw: DVector<f64>,
}

impl SampleWeights {
    pub fn new(logw: DVector<f64>) -> Result<Self> {
        if let Some(i) = logw.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite log-weight at index {i}"
            )));
        }
        Ok(Self { logw })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            logw: DVector::zeros(n),
        }
    }

    pub fn len(&self) -> usize {
        self.logw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logw.is_empty()
    }

    /// Weights rescaled so the largest is exactly one. The scale cancels in
    /// every normalized quantity.
    pub fn relative_weights(&self) -> DVector<f64> {
        let max = self.logw.max();
        self.logw.map(|l| (l - max).exp())
    }
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

pub(crate) fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Weighted column sums `Σ w_i f_i` accumulated in row order.
fn weighted_column_sums(values: &DMatrix<f64>, weights: Option<&DVector<f64>>) -> DVector<f64> {
    let (n, d) = values.shape();
    let mut sums = DVector::zeros(d);
    for j in 0..d {
        let col = values.column(j);
        let mut acc = 0.0;
        match weights {
            Some(w) => {
                for i in 0..n {
                    acc += w[i] * col[i];
                }
            }
            None => {
                for i in 0..n {
                    acc += col[i];
                }
            }
        }
        sums[j] = acc;
    }
    sums
}

fn centered(values: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut c = values.clone();
    for (j, mut col) in c.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    c
}

/// Sample mean and unbiased (`n - 1`) covariance, two-pass.
pub fn compute_stats(features: &FeatureMatrix) -> Result<GaussianStats> {
    let n = features.count();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let values = features.values();
    let mean = weighted_column_sums(values, None) / n as f64;
    let xc = centered(values, &mean);
    let cov = xc.tr_mul(&xc) / (n - 1) as f64;
    Ok(GaussianStats {
        mean,
        cov: symmetrize(cov),
        count: n,
    })
}

/// Statistics of the original set with `f` appended, where `new_count` is the
/// size of the updated set:
///
/// `μ' = (N-1)/N μ + f/N`, `Σ' = (N-2)/(N-1) Σ + (f-μ)(f-μ)ᵀ/N`.
pub fn update_stats(
    stats: &GaussianStats,
    f: &DVector<f64>,
    new_count: usize,
) -> Result<GaussianStats> {
    if new_count < 3 {
        return Err(Error::Precondition(format!(
            "updated set size must be at least 3, got {new_count}"
        )));
    }
    if stats.count + 1 != new_count {
        return Err(Error::Precondition(format!(
            "statistics were computed from {} samples, cannot update to {new_count}",
            stats.count
        )));
    }
    if f.len() != stats.dim() {
        return Err(Error::DimensionMismatch(format!(
            "feature has length {}, statistics have dimension {}",
            f.len(),
            stats.dim()
        )));
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("non-finite feature value".into()));
    }
    let big_n = new_count as f64;
    let delta = f - &stats.mean;
    let mean = &stats.mean * ((big_n - 1.0) / big_n) + f / big_n;
    let cov = &stats.cov * ((big_n - 2.0) / (big_n - 1.0)) + (&delta * delta.transpose()) / big_n;
    Ok(GaussianStats {
        mean,
        cov: symmetrize(cov),
        count: new_count,
    })
}

/// Inverse of [`update_stats`]: statistics of the set with `f` removed,
/// where `f` is one of the `stats.count` samples.
pub fn downdate_stats(stats: &GaussianStats, f: &DVector<f64>) -> Result<GaussianStats> {
    let big_n = stats.count;
    if big_n < 3 {
        return Err(Error::InsufficientSamples {
            needed: 3,
            got: big_n,
        });
    }
    if f.len() != stats.dim() {
        return Err(Error::DimensionMismatch(format!(
            "feature has length {}, statistics have dimension {}",
            f.len(),
            stats.dim()
        )));
    }
    let n = big_n as f64;
    let mean = (&stats.mean * n - f) / (n - 1.0);
    let delta = f - &mean;
    let cov = (&stats.cov - (&delta * delta.transpose()) / n) * ((n - 1.0) / (n - 2.0));
    Ok(GaussianStats {
        mean,
        cov: symmetrize(cov),
        count: big_n - 1,
    })
}

/// Weighted mean and covariance normalized by the total weight.
pub fn weighted_stats(features: &FeatureMatrix, weights: &SampleWeights) -> Result<GaussianStats> {
    weighted_moments(features, weights).map(|m| m.stats)
}

/// Weighted statistics together with the centered feature matrix and the
/// normalized weights they were built from.
pub(crate) struct WeightedMoments {
    pub stats: GaussianStats,
    pub centered: DMatrix<f64>,
    pub probabilities: DVector<f64>,
}

pub(crate) fn weighted_moments(
    features: &FeatureMatrix,
    weights: &SampleWeights,
) -> Result<WeightedMoments> {
    let n = features.count();
    if weights.len() != n {
        return Err(Error::Precondition(format!(
            "{} weights supplied for {n} samples",
            weights.len()
        )));
    }
    if n == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let w = weights.relative_weights();
    let total: f64 = w.iter().sum();
    let values = features.values();
    let mean = weighted_column_sums(values, Some(&w)) / total;
    let xc = centered(values, &mean);
    let mut scaled = xc.clone();
    for mut col in scaled.column_iter_mut() {
        col.component_mul_assign(&w);
    }
    let cov = xc.tr_mul(&scaled) / total;
    Ok(WeightedMoments {
        stats: GaussianStats {
            mean,
            cov: symmetrize(cov),
            count: n,
        },
        centered: xc,
        probabilities: w / total,
    })
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Explicit-loop reference moments, independent of the matrix routines above.

    pub fn two_pass(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = rows.len();
        let d = rows[0].len();
        let mut mean = vec![0.0; d];
        for r in rows {
            for j in 0..d {
                mean[j] += r[j];
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut cov = vec![vec![0.0; d]; d];
        for r in rows {
            for a in 0..d {
                for b in 0..d {
                    cov[a][b] += (r[a] - mean[a]) * (r[b] - mean[b]);
                }
            }
        }
        for row in &mut cov {
            for v in row.iter_mut() {
                *v /= (n - 1) as f64;
            }
        }
        (mean, cov)
    }

    pub fn weighted_loop(rows: &[Vec<f64>], w: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let d = rows[0].len();
        let total: f64 = w.iter().sum();
        let mut mean = vec![0.0; d];
        for (r, wi) in rows.iter().zip(w) {
            for j in 0..d {
                mean[j] += wi * r[j];
            }
        }
        for m in &mut mean {
            *m /= total;
        }
        let mut cov = vec![vec![0.0; d]; d];
        for (r, wi) in rows.iter().zip(w) {
            for a in 0..d {
                for b in 0..d {
                    cov[a][b] += wi * (r[a] - mean[a]) * (r[b] - mean[b]);
                }
            }
        }
        for row in &mut cov {
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        (mean, cov)
    }
}
