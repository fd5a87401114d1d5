#![allow(dead_code)]

use fidlens::GaussianStats;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_spd(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a: DMatrix<f64> = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let m = &a * a.transpose() / d as f64 + DMatrix::identity(d, d) * 0.2;
    (&m + m.transpose()) * 0.5
}

pub fn random_stats(d: usize, count: usize, rng: &mut ChaCha8Rng) -> GaussianStats {
    let mean = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
    let cov = random_spd(d, rng);
    GaussianStats::new(mean, cov, count).unwrap()
}

/// Error of `approx` against `exact`, relative to `|exact|` but never to less
/// than a thousandth of the largest exact component.
pub fn max_rel_err(exact: &[f64], approx: &[f64]) -> f64 {
    let scale = exact.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    exact
        .iter()
        .zip(approx)
        .map(|(e, a)| (e - a).abs() / e.abs().max(1e-3 * scale).max(1e-300))
        .fold(0.0, f64::max)
}

pub fn rel_err(exact: f64, approx: f64) -> f64 {
    (exact - approx).abs() / exact.abs().max(1e-300)
}

pub const FD_STEP: f64 = 1e-5;

fn fid(real: &GaussianStats, mean: DVector<f64>, cov: DMatrix<f64>) -> f64 {
    fidlens::frechet_distance(real, &GaussianStats::new(mean, cov, 1000).unwrap()).unwrap()
}

/// Worst relative error of `fid_gradients` against central differences in
/// the generated mean and in symmetric covariance perturbations.
pub fn fid_gradient_fd_error(real: &GaussianStats, gen: &GaussianStats) -> f64 {
    let g = fidlens::fid_gradients(real, gen).unwrap();
    let d = gen.dim();
    let h = FD_STEP;
    let mut fd_mean = vec![0.0; d];
    for i in 0..d {
        let mut up = gen.mean.clone();
        let mut down = gen.mean.clone();
        up[i] += h;
        down[i] -= h;
        fd_mean[i] =
            (fid(real, up, gen.cov.clone()) - fid(real, down, gen.cov.clone())) / (2.0 * h);
    }
    let mut exact_cov = Vec::new();
    let mut fd_cov = Vec::new();
    for i in 0..d {
        for j in i..d {
            let mut e = DMatrix::zeros(d, d);
            e[(i, j)] += h;
            if i != j {
                e[(j, i)] += h;
            }
            let plus = fid(real, gen.mean.clone(), &gen.cov + &e);
            let minus = fid(real, gen.mean.clone(), &gen.cov - &e);
            fd_cov.push((plus - minus) / (2.0 * h));
            exact_cov.push(if i == j {
                g.d_cov[(i, i)]
            } else {
                2.0 * g.d_cov[(i, j)]
            });
        }
    }
    max_rel_err(g.d_mean.as_slice(), &fd_mean).max(max_rel_err(&exact_cov, &fd_cov))
}

/// Worst relative error of `fid_grad_sample` against central differences in `f`.
pub fn sample_gradient_fd_error(
    real: &GaussianStats,
    gen_base: &GaussianStats,
    f: &DVector<f64>,
) -> f64 {
    let n = gen_base.count + 1;
    let exact = fidlens::fid_grad_sample(real, gen_base, f, n).unwrap();
    let eval = |x: &DVector<f64>| {
        fidlens::frechet_distance(real, &fidlens::update_stats(gen_base, x, n).unwrap()).unwrap()
    };
    let fd: Vec<f64> = (0..f.len())
        .map(|i| {
            let mut up = f.clone();
            let mut down = f.clone();
            up[i] += FD_STEP;
            down[i] -= FD_STEP;
            (eval(&up) - eval(&down)) / (2.0 * FD_STEP)
        })
        .collect();
    max_rel_err(exact.as_slice(), &fd)
}

/// Builds an image whose distance gradient lives almost entirely in channel
/// 0 and whose channel-0 activation sits in one random cell of an 8×8 grid.
/// Returns the heatmap argmax and the planted cell.
pub fn localization_trial(seed: u64) -> ((usize, usize), (usize, usize)) {
    use fidlens::sensitivity::{heatmap_for_image, ActivationTensor};
    let mut rng = rng(seed);
    let (k, s) = (6, 8);
    let cell = (rng.random_range(0..s), rng.random_range(0..s));
    let mut values = vec![0.0; k * s * s];
    values[cell.0 * s + cell.1] = (s * s) as f64;
    for ch in 1..k {
        for v in &mut values[ch * s * s..(ch + 1) * s * s] {
            *v = rng.random_range(0.0..0.2);
        }
    }
    let acts = ActivationTensor::new(k, s, values).unwrap();
    let f = acts.spatial_means();
    let mut real_mean = f.clone();
    real_mean[0] += 6.0;
    let real = GaussianStats::new(real_mean, DMatrix::identity(k, k), 1000).unwrap();
    let gen_base = GaussianStats::new(f.clone(), DMatrix::identity(k, k), 99).unwrap();
    let heat = heatmap_for_image(&real, &gen_base, &f, &acts, 100, 64, 64).unwrap();
    (heat.argmax(), cell)
}
