mod common;

use common::*;
use fidlens::sensitivity::*;
use fidlens::GaussianStats;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

#[test]
fn heatmap_argmax_lands_in_planted_cell() {
    for seed in 0..10 {
        let ((y, x), (r, c)) = localization_trial(seed);
        assert_eq!((y / 8, x / 8), (r, c), "seed {seed}");
    }
}

#[test]
fn zero_gradient_gives_flat_zero_heatmap() {
    let mut rng = rng(4);
    let k = 5;
    let acts = ActivationTensor::new(
        k,
        4,
        (0..k * 16).map(|_| rng.random_range(0.0..2.0)).collect(),
    )
    .unwrap();
    let f = acts.spatial_means();
    let stats = GaussianStats::new(f.clone(), DMatrix::identity(k, k), 49).unwrap();
    let heat = heatmap_for_image(&stats, &stats, &f, &acts, 50, 32, 32).unwrap();
    let scale = acts.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let max = heat.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(max <= 1e-6 * scale, "{max:e}");
}

#[test]
fn heatmap_is_linear_and_sign_preserving() {
    let mut rng = rng(8);
    let acts = ActivationTensor::new(
        3,
        8,
        (0..192).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let alpha = DVector::from_vec(vec![0.3, 1.2, 0.05]);
    let base = sensitivity_map(&acts, &alpha).unwrap();
    for factor in [2.0, -1.0, rng.random_range(0.1..5.0)] {
        let scaled = sensitivity_map(&acts.scaled(factor), &alpha).unwrap();
        for (a, b) in scaled.values.iter().zip(&base.values) {
            assert!((a - factor * b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        let alpha_scaled = sensitivity_map(&acts, &(&alpha * factor)).unwrap();
        for (a, b) in alpha_scaled.values.iter().zip(&base.values) {
            assert!((a - factor * b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
    let up = lanczos_upsample(&base, 32, 32).unwrap();
    let neg = lanczos_upsample(
        &sensitivity_map(&acts.scaled(-1.0), &alpha).unwrap(),
        32,
        32,
    )
    .unwrap();
    assert!(up.values.iter().zip(&neg.values).all(|(a, b)| *a == -*b));
}

#[test]
fn mismatched_activations_are_rejected() {
    let acts = ActivationTensor::uniform(&[1.0, 2.0], 4).unwrap();
    let f = DVector::from_vec(vec![1.0, 2.5]);
    let stats = GaussianStats::new(f.clone(), DMatrix::identity(2, 2), 9).unwrap();
    assert!(matches!(
        heatmap_for_image(&stats, &stats, &f, &acts, 10, 16, 16),
        Err(fidlens::Error::Precondition(_))
    ));
}

#[test]
fn masks_partition_every_pixel() {
    let mut rng = rng(21);
    let map =
        ImportanceMap::new(8, 8, (0..64).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let heat = lanczos_upsample(&map, 33, 17).unwrap();
    for region in [NoiseRegion::Important, NoiseRegion::Unimportant] {
        assert_eq!(
            region.mask(&heat).count(),
            33 * 17 / 2
                + if region == NoiseRegion::Unimportant {
                    1
                } else {
                    0
                }
        );
    }
    let (a, b) = importance_masks(&heat);
    assert!(a.bits.iter().zip(&b.bits).all(|(x, y)| x ^ y));
    assert_eq!(NoiseRegion::Everywhere.mask(&heat).count(), 33 * 17);
}
