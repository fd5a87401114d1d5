//! Unbiased squared-MMD estimators over random subsets: KID with the cubic
//! polynomial kernel `(xᵀy/d + 1)³` and the Gaussian-kernel variant
//! `exp(−γ‖x − y‖²)`.
//!
//! Kernel sums are streamed row by row and never stored as a Gram matrix.
//! Rows are processed in fixed-size chunks whose partial sums are reduced in
//! chunk order, so results do not depend on the worker count.

use rand::seq::index;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng;
use crate::stats::FeatureMatrix;

const ROW_CHUNK: usize = 64;

/// Subset protocol shared by both estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KidConfig {
    pub subset_size: usize,
    pub subsets: usize,
    pub seed: u64,
}

impl Default for KidConfig {
    fn default() -> Self {
        Self {
            subset_size: 1000,
            subsets: 100,
            seed: 0,
        }
    }
}

/// Kernel function on two equal-length rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    /// `(xᵀy / d + 1)³`
    Polynomial,
    /// `exp(−γ ‖x − y‖²)`
    Rbf { gamma: f64 },
}

impl Kernel {
    #[inline]
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            Kernel::Polynomial => {
                let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
                let base = dot / x.len() as f64 + 1.0;
                base * base * base
            }
            Kernel::Rbf { gamma } => {
                let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-gamma * sq).exp()
            }
        }
    }
}

/// Row-major copy of selected rows.
fn gather(features: &FeatureMatrix, rows: &[usize]) -> Vec<f64> {
    let d = features.dim();
    let v = features.values();
    let mut out = Vec::with_capacity(rows.len() * d);
    for &r in rows {
        out.extend((0..d).map(|j| v[(r, j)]));
    }
    out
}

/// `Σ_{i,j} k(a_i, b_j)`, skipping `i == j` when `skip_diagonal`.
fn kernel_sum(kernel: Kernel, a: &[f64], b: &[f64], d: usize, skip_diagonal: bool) -> f64 {
    let na = a.len() / d;
    let nb = b.len() / d;
    let partials: Vec<f64> = (0..na)
        .collect::<Vec<_>>()
        .par_chunks(ROW_CHUNK)
        .map(|chunk| {
            let mut acc = 0.0;
            for &i in chunk {
                let x = &a[i * d..(i + 1) * d];
                for j in 0..nb {
                    if skip_diagonal && i == j {
                        continue;
                    }
                    acc += kernel.eval(x, &b[j * d..(j + 1) * d]);
                }
            }
            acc
        })
        .collect();
    partials.iter().sum()
}

/// Unbiased squared MMD between two equal-size row sets (row-major, width `d`).
pub fn mmd_unbiased(kernel: Kernel, x: &[f64], y: &[f64], d: usize) -> f64 {
    let m = (x.len() / d) as f64;
    let kxx = kernel_sum(kernel, x, x, d, true) / (m * (m - 1.0));
    let kyy = kernel_sum(kernel, y, y, d, true) / (m * (m - 1.0));
    let kxy = kernel_sum(kernel, x, y, d, false) / (m * m);
    kxx + kyy - 2.0 * kxy
}

fn check_inputs(real: &FeatureMatrix, gen: &FeatureMatrix, cfg: &KidConfig) -> Result<()> {
    if real.dim() != gen.dim() {
        return Err(Error::DimensionMismatch(format!(
            "real features have dimension {}, generated {}",
            real.dim(),
            gen.dim()
        )));
    }
    if cfg.subset_size < 2 {
        return Err(Error::Precondition(format!(
            "subset size must be at least 2, got {}",
            cfg.subset_size
        )));
    }
    if cfg.subsets == 0 {
        return Err(Error::Precondition(
            "at least one subset is required".into(),
        ));
    }
    let smallest = real.count().min(gen.count());
    if cfg.subset_size > smallest {
        return Err(Error::Precondition(format!(
            "subset size {} exceeds the smaller input ({smallest} rows)",
            cfg.subset_size
        )));
    }
    Ok(())
}

/// Draws the `(real, gen)` row subsets used for each MMD term.
pub fn draw_subsets(
    real_rows: usize,
    gen_rows: usize,
    cfg: &KidConfig,
) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut rng = rng::seeded(cfg.seed);
    (0..cfg.subsets)
        .map(|_| {
            let x = index::sample(&mut rng, real_rows, cfg.subset_size).into_vec();
            let y = index::sample(&mut rng, gen_rows, cfg.subset_size).into_vec();
            (x, y)
        })
        .collect()
}

/// Average unbiased MMD over explicit subset pairs.
pub fn kid_with_subsets(
    kernel: Kernel,
    real: &FeatureMatrix,
    gen: &FeatureMatrix,
    subsets: &[(Vec<usize>, Vec<usize>)],
) -> Result<f64> {
    if subsets.is_empty() {
        return Err(Error::Precondition(
            "at least one subset is required".into(),
        ));
    }
    let d = real.dim();
    let mut total = 0.0;
    for (xs, ys) in subsets {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(Error::Precondition(
                "subset pairs must have equal size of at least 2".into(),
            ));
        }
        let x = gather(real, xs);
        let y = gather(gen, ys);
        total += mmd_unbiased(kernel, &x, &y, d);
    }
    Ok(total / subsets.len() as f64)
}

fn kid(kernel: Kernel, real: &FeatureMatrix, gen: &FeatureMatrix, cfg: &KidConfig) -> Result<f64> {
    check_inputs(real, gen, cfg)?;
    let subsets = draw_subsets(real.count(), gen.count(), cfg);
    kid_with_subsets(kernel, real, gen, &subsets)
}

/// KID with the cubic polynomial kernel. Can be negative.
pub fn kid_polynomial(real: &FeatureMatrix, gen: &FeatureMatrix, cfg: &KidConfig) -> Result<f64> {
    kid(Kernel::Polynomial, real, gen, cfg)
}

/// KID with the Gaussian kernel `exp(−γ‖x−y‖²)`; `gamma = None` means `1/d`.
pub fn kid_rbf(
    real: &FeatureMatrix,
    gen: &FeatureMatrix,
    gamma: Option<f64>,
    cfg: &KidConfig,
) -> Result<f64> {
    let gamma = gamma.unwrap_or(1.0 / real.dim() as f64);
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Precondition(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    kid(Kernel::Rbf { gamma }, real, gen, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_points() -> FeatureMatrix {
        FeatureMatrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap()
    }

    fn full(seed: u64) -> KidConfig {
        KidConfig {
            subset_size: 2,
            subsets: 1,
            seed,
        }
    }

    #[test]
    fn polynomial_two_point_value() {
        let x = two_points();
        let v = kid_polynomial(&x, &x, &full(3)).unwrap();
        assert!((v + 3.5).abs() < 1e-14, "{v}");
    }

    #[test]
    fn rbf_two_point_value() {
        let x = two_points();
        let v = kid_rbf(&x, &x, Some(1.0), &full(3)).unwrap();
        assert!((v - ((-1.0f64).exp() - 1.0)).abs() < 1e-14, "{v}");
    }

    #[test]
    fn rbf_constant_rows_is_zero() {
        let x = FeatureMatrix::from_rows(&vec![vec![0.3, -1.2]; 5]).unwrap();
        let cfg = KidConfig {
            subset_size: 5,
            subsets: 2,
            seed: 1,
        };
        assert_eq!(kid_rbf(&x, &x, None, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn rejects_oversized_subsets() {
        let x = two_points();
        let cfg = KidConfig {
            subset_size: 3,
            subsets: 1,
            seed: 0,
        };
        assert!(matches!(
            kid_polynomial(&x, &x, &cfg),
            Err(Error::Precondition(_))
        ));
        let bad_gamma = kid_rbf(&x, &x, Some(0.0), &full(0));
        assert!(matches!(bad_gamma, Err(Error::Precondition(_))));
    }

    #[test]
    fn chunked_sum_matches_plain_loop() {
        let rows: Vec<Vec<f64>> = (0..150)
            .map(|i| vec![(i as f64 * 0.37).sin(), (i as f64).cos()])
            .collect();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let k = Kernel::Rbf { gamma: 0.5 };
        let mut plain = 0.0;
        for i in 0..150 {
            for j in 0..150 {
                if i != j {
                    plain += k.eval(&rows[i], &rows[j]);
                }
            }
        }
        let chunked = kernel_sum(k, &flat, &flat, 2, true);
        assert!((plain - chunked).abs() <= 1e-12 * plain);
    }
}
