//! Fréchet distance between Gaussian summaries and its analytic derivatives.
//!
//! `FD = ‖μr − μg‖² + Tr(Σr + Σg − 2 (Σr Σg)^{1/2})`
//!
//! The trace of the non-symmetric product's square root is evaluated through
//! the similar symmetric matrix `S = Σr^{1/2} Σg Σr^{1/2}`, so every
//! eigendecomposition here is of a real symmetric matrix.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::stats::{max_asymmetry, symmetrize, update_stats, GaussianStats};

/// Eigenvalues in `[-CLAMP_RELATIVE · λmax, 0)` are treated as round-off and
/// clamped to zero; anything more negative is rejected.
pub const CLAMP_RELATIVE: f64 = 1e-10;

/// Floor for the eigenvalues of `S` when inverting its square root, relative
/// to `Tr(S) / d`.
pub const REGULARIZATION_RELATIVE: f64 = 1e-12;

/// Relative asymmetry accepted by [`sqrtm_psd`] before it refuses the input.
pub const SQRTM_SYMMETRY_TOLERANCE: f64 = 1e-8;

/// `∂FD/∂μg` and `∂FD/∂Σg` (the latter as a symmetric matrix).
#[derive(Debug, Clone, PartialEq)]
pub struct FrechetGradients {
    pub d_mean: DVector<f64>,
    pub d_cov: DMatrix<f64>,
}

/// Eigendecomposition of a PSD matrix with round-off negatives clamped to 0.
struct PsdEigen {
    values: DVector<f64>,
    vectors: DMatrix<f64>,
}

impl PsdEigen {
    fn new(m: DMatrix<f64>) -> Result<Self> {
        let eig = SymmetricEigen::new(m);
        let largest = eig.eigenvalues.amax();
        if !largest.is_finite() {
            return Err(Error::InvalidData("non-finite eigenvalue".into()));
        }
        let tolerance = CLAMP_RELATIVE * largest;
        let mut values = eig.eigenvalues;
        for v in values.iter_mut() {
            if *v < -tolerance {
                return Err(Error::NotPositiveSemidefinite {
                    eigenvalue: *v,
                    tolerance,
                });
            }
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        Ok(Self {
            values,
            vectors: eig.eigenvectors,
        })
    }

    /// `V diag(g(λ)) Vᵀ`, symmetrized.
    fn reconstruct(&self, g: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= g(self.values[j]);
        }
        symmetrize(&scaled * self.vectors.transpose())
    }

    fn trace_sqrt(&self) -> f64 {
        self.values.iter().map(|v| v.sqrt()).sum()
    }
}

fn check_square_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("non-finite matrix entry".into()));
    }
    let asymmetry = max_asymmetry(m);
    let tolerance = SQRTM_SYMMETRY_TOLERANCE * m.amax().max(f64::MIN_POSITIVE);
    if asymmetry > tolerance {
        return Err(Error::NotSymmetric {
            asymmetry,
            tolerance,
        });
    }
    Ok(())
}

/// Symmetric PSD square root via eigendecomposition.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square_symmetric(m)?;
    Ok(PsdEigen::new(symmetrize(m.clone()))?.reconstruct(f64::sqrt))
}

fn check_pair(real: &GaussianStats, gen: &GaussianStats) -> Result<()> {
    if real.dim() != gen.dim() {
        return Err(Error::DimensionMismatch(format!(
            "real statistics have dimension {}, generated {}",
            real.dim(),
            gen.dim()
        )));
    }
    check_square_symmetric(&real.cov)?;
    check_square_symmetric(&gen.cov)
}

/// Shared pieces of the distance and its gradient.
struct Decomposition {
    sqrt_real: DMatrix<f64>,
    s_eigen: PsdEigen,
}

fn decompose(real: &GaussianStats, gen: &GaussianStats) -> Result<Decomposition> {
    check_pair(real, gen)?;
    let sqrt_real = PsdEigen::new(symmetrize(real.cov.clone()))?.reconstruct(f64::sqrt);
    let s = symmetrize(&sqrt_real * &gen.cov * &sqrt_real);
    Ok(Decomposition {
        sqrt_real,
        s_eigen: PsdEigen::new(s)?,
    })
}

fn distance_from(real: &GaussianStats, gen: &GaussianStats, dec: &Decomposition) -> f64 {
    let mean_term = (&real.mean - &gen.mean).norm_squared();
    let value = mean_term + real.cov.trace() + gen.cov.trace() - 2.0 * dec.s_eigen.trace_sqrt();
    value.max(0.0)
}

fn gradients_from(
    real: &GaussianStats,
    gen: &GaussianStats,
    dec: &Decomposition,
) -> Result<FrechetGradients> {
    let d = real.dim();
    let s_trace: f64 = dec.s_eigen.values.sum();
    if s_trace.is_nan() || s_trace <= 0.0 {
        return Err(Error::Singular {
            eigenvalue: dec.s_eigen.values.max(),
            context:
                "Σr^1/2 Σg Σr^1/2 has no positive eigenvalue, its inverse square root is undefined"
                    .into(),
        });
    }
    let floor = REGULARIZATION_RELATIVE * s_trace / d as f64;
    let inv_sqrt_s = dec.s_eigen.reconstruct(|v| 1.0 / v.max(floor).sqrt());
    let d_cov = symmetrize(DMatrix::identity(d, d) - &dec.sqrt_real * inv_sqrt_s * &dec.sqrt_real);
    let d_mean = (&gen.mean - &real.mean) * 2.0;
    if d_cov.iter().chain(d_mean.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Singular {
            eigenvalue: dec.s_eigen.values.min(),
            context: "gradient is not finite after regularization".into(),
        });
    }
    Ok(FrechetGradients { d_mean, d_cov })
}

/// Fréchet distance between two Gaussians, clamped at zero.
pub fn frechet_distance(real: &GaussianStats, gen: &GaussianStats) -> Result<f64> {
    let dec = decompose(real, gen)?;
    Ok(distance_from(real, gen, &dec))
}

/// Gradients of [`frechet_distance`] with respect to the generated mean and
/// covariance; the real side is held constant.
pub fn fid_gradients(real: &GaussianStats, gen: &GaussianStats) -> Result<FrechetGradients> {
    let dec = decompose(real, gen)?;
    gradients_from(real, gen, &dec)
}

/// Distance and gradients from a single pair of eigendecompositions.
pub fn fid_with_gradients(
    real: &GaussianStats,
    gen: &GaussianStats,
) -> Result<(f64, FrechetGradients)> {
    let dec = decompose(real, gen)?;
    Ok((
        distance_from(real, gen, &dec),
        gradients_from(real, gen, &dec)?,
    ))
}

/// Closed-form distance between diagonal Gaussians.
pub fn frechet_diagonal(mu1: &[f64], var1: &[f64], mu2: &[f64], var2: &[f64]) -> Result<f64> {
    let d = mu1.len();
    if var1.len() != d || mu2.len() != d || var2.len() != d {
        return Err(Error::DimensionMismatch(
            "diagonal Gaussian parameters differ in length".into(),
        ));
    }
    if let Some(v) = var1.iter().chain(var2).find(|v| v.is_nan() || **v < 0.0) {
        return Err(Error::Precondition(format!(
            "variance must be nonnegative, got {v}"
        )));
    }
    let mean_term: f64 = mu1.iter().zip(mu2).map(|(a, b)| (a - b) * (a - b)).sum();
    let cov_term: f64 = var1
        .iter()
        .zip(var2)
        .map(|(a, b)| a + b - 2.0 * (a * b).sqrt())
        .sum();
    Ok(mean_term + cov_term)
}

/// Gradient of the distance with respect to a feature vector `f` appended to
/// the generated set, i.e. of `FD(real, update(gen_base, f, n))`.
///
/// With `δ = f − μg` the update gives `∂μ'/∂f = I/N` and
/// `∂Σ' = (df δᵀ + δ dfᵀ)/N`, so the result is `(∂μ + 2 ∂Σ δ) / N`.
pub fn fid_grad_sample(
    real: &GaussianStats,
    gen_base: &GaussianStats,
    f: &DVector<f64>,
    n: usize,
) -> Result<DVector<f64>> {
    let updated = update_stats(gen_base, f, n)?;
    let grads = fid_gradients(real, &updated)?;
    let delta = f - &gen_base.mean;
    Ok((grads.d_mean + grads.d_cov * delta * 2.0) / n as f64)
}
