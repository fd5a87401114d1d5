//! Per-image sensitivity heatmaps for the Fréchet distance.
//!
//! An image's pooled feature vector is appended to precomputed generated
//! statistics, the distance gradient with respect to that vector is pushed
//! back through spatial average pooling onto the `k × s × s` activations, and
//! the per-channel importances
//!
//! `α_k = (1/s²) Σ_ij |∂FD/∂A^k_ij|²`
//!
//! weight a signed sum of the activation maps. The map is never rectified:
//! regions that lower the distance stay negative. The `s × s` map is then
//! upsampled to image resolution with a separable Lanczos-3 filter.
//!
//! The mask and noise helpers support the validation experiment where noise
//! is added either to the most or the least important half of each image.

use nalgebra::DVector;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::frechet::fid_grad_sample;
use crate::rng;
use crate::stats::GaussianStats;

/// Lanczos kernel support.
pub const LANCZOS_SUPPORT: usize = 3;

/// Allowed relative deviation between channel spatial means and pooled features.
pub const POOLING_TOLERANCE: f64 = 1e-5;

/// Feature magnitudes below this are compared in absolute terms.
pub const POOLING_ABSOLUTE_FLOOR: f64 = 1e-6;

/// `k × s × s` grid of per-channel spatial values (activations or gradients).
/// Stored channel-major, then row-major within each `s × s` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTensor {
    channels: usize,
    size: usize,
    values: Vec<f64>,
}

impl ActivationTensor {
    pub fn new(channels: usize, size: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || size == 0 {
            return Err(Error::InvalidData(
                "activation tensors need at least one channel and cell".into(),
            ));
        }
        if values.len() != channels * size * size {
            return Err(Error::DimensionMismatch(format!(
                "expected {} activation values for {channels}x{size}x{size}, got {}",
                channels * size * size,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite activation at flat index {i}"
            )));
        }
        Ok(Self {
            channels,
            size,
            values,
        })
    }

    /// Every channel's grid filled with the corresponding entry of `per_channel`.
    pub fn uniform(per_channel: &[f64], size: usize) -> Result<Self> {
        let cells = size * size;
        let values = per_channel
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, cells))
            .collect();
        Self::new(per_channel.len(), size, values)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn channel(&self, k: usize) -> &[f64] {
        let cells = self.size * self.size;
        &self.values[k * cells..(k + 1) * cells]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    /// Per-channel spatial averages, i.e. the pooled feature vector.
    pub fn spatial_means(&self) -> DVector<f64> {
        let cells = (self.size * self.size) as f64;
        DVector::from_fn(self.channels, |k, _| {
            self.channel(k).iter().sum::<f64>() / cells
        })
    }

    /// Largest relative deviation between the spatial means and `features`,
    /// with the channel where it occurs.
    pub fn pooling_deviation(&self, features: &[f64]) -> Result<(f64, usize)> {
        if features.len() != self.channels {
            return Err(Error::DimensionMismatch(format!(
                "{} channels but {} pooled features",
                self.channels,
                features.len()
            )));
        }
        let means = self.spatial_means();
        let mut worst = (0.0, 0);
        for (k, (&m, &f)) in means.iter().zip(features).enumerate() {
            let dev = (m - f).abs() / f.abs().max(POOLING_ABSOLUTE_FLOOR);
            if dev > worst.0 {
                worst = (dev, k);
            }
        }
        Ok(worst)
    }
}

/// Signed `rows × cols` importance map.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMap {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl ImportanceMap {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols || rows == 0 || cols == 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} values do not form a nonempty {rows}x{cols} map",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite importance value".into()));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }
}

/// Importance map resampled to image resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub source: ImportanceMap,
}

impl Heatmap {
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Row-major position of the largest value.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }
}

/// Per-channel mean of squared spatial gradients.
pub fn importance_weights(spatial_grad: &ActivationTensor) -> DVector<f64> {
    let cells = (spatial_grad.size * spatial_grad.size) as f64;
    DVector::from_fn(spatial_grad.channels, |k, _| {
        spatial_grad.channel(k).iter().map(|g| g * g).sum::<f64>() / cells
    })
}

/// Gradient with respect to the activations when features are their spatial
/// averages: every cell of channel `k` receives `g_k / s²`.
pub fn pooled_spatial_gradient(
    feature_grad: &DVector<f64>,
    size: usize,
) -> Result<ActivationTensor> {
    let cells = (size * size) as f64;
    let per_channel: Vec<f64> = feature_grad.iter().map(|g| g / cells).collect();
    ActivationTensor::uniform(&per_channel, size)
}

/// `Σ_k α_k A^k`, without rectification.
pub fn sensitivity_map(
    activations: &ActivationTensor,
    alpha: &DVector<f64>,
) -> Result<ImportanceMap> {
    if alpha.len() != activations.channels {
        return Err(Error::DimensionMismatch(format!(
            "{} importance weights for {} channels",
            alpha.len(),
            activations.channels
        )));
    }
    let s = activations.size;
    let mut values = vec![0.0; s * s];
    for (k, &a) in alpha.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        for (out, v) in values.iter_mut().zip(activations.channel(k)) {
            *out += a * v;
        }
    }
    ImportanceMap::new(s, s, values)
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else if x.fract() == 0.0 {
        0.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

fn lanczos(x: f64) -> f64 {
    let a = LANCZOS_SUPPORT as f64;
    if x.abs() >= a {
        0.0
    } else {
        sinc(x) * sinc(x / a)
    }
}

/// For each output sample, `(source index, weight)` pairs summing to one.
/// Pixel centers are aligned and out-of-range taps are clamped to the edge.
fn resample_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let a = LANCZOS_SUPPORT as isize;
    (0..dst)
        .map(|o| {
            let u = (o as f64 + 0.5) * src as f64 / dst as f64 - 0.5;
            let base = u.floor() as isize;
            let mut taps: Vec<(usize, f64)> = Vec::with_capacity(2 * LANCZOS_SUPPORT);
            for j in (base - a + 1)..=(base + a) {
                let w = lanczos(u - j as f64);
                if w == 0.0 {
                    continue;
                }
                let idx = j.clamp(0, src as isize - 1) as usize;
                match taps.iter_mut().find(|t| t.0 == idx) {
                    Some(t) => t.1 += w,
                    None => taps.push((idx, w)),
                }
            }
            let total: f64 = taps.iter().map(|t| t.1).sum();
            for t in &mut taps {
                t.1 /= total;
            }
            taps
        })
        .collect()
}

/// Separable Lanczos-3 upsampling to `target_h × target_w`.
pub fn lanczos_upsample(map: &ImportanceMap, target_h: usize, target_w: usize) -> Result<Heatmap> {
    if target_h < map.rows || target_w < map.cols {
        return Err(Error::Precondition(format!(
            "target {target_h}x{target_w} is smaller than the {}x{} map",
            map.rows, map.cols
        )));
    }
    let horizontal = resample_weights(map.cols, target_w);
    let vertical = resample_weights(map.rows, target_h);

    let mut wide = vec![0.0; map.rows * target_w];
    for r in 0..map.rows {
        for (x, taps) in horizontal.iter().enumerate() {
            wide[r * target_w + x] = taps.iter().map(|&(c, w)| w * map.at(r, c)).sum();
        }
    }
    let mut values = vec![0.0; target_h * target_w];
    for (y, taps) in vertical.iter().enumerate() {
        for x in 0..target_w {
            values[y * target_w + x] = taps.iter().map(|&(r, w)| w * wide[r * target_w + x]).sum();
        }
    }
    Ok(Heatmap {
        height: target_h,
        width: target_w,
        values,
        source: map.clone(),
    })
}

/// Heatmap for one image whose pooled features `features` and activations
/// `activations` are added to generated statistics built from `n − 1` images.
pub fn heatmap_for_image(
    real: &GaussianStats,
    gen_base: &GaussianStats,
    features: &DVector<f64>,
    activations: &ActivationTensor,
    n: usize,
    target_h: usize,
    target_w: usize,
) -> Result<Heatmap> {
    let (dev, channel) = activations.pooling_deviation(features.as_slice())?;
    if dev > POOLING_TOLERANCE {
        return Err(Error::Precondition(format!(
            "activations do not average to the features (channel {channel}, relative deviation {dev:e})"
        )));
    }
    let grad = fid_grad_sample(real, gen_base, features, n)?;
    let spatial = pooled_spatial_gradient(&grad, activations.size)?;
    let alpha = importance_weights(&spatial);
    let map = sensitivity_map(activations, &alpha)?;
    lanczos_upsample(&map, target_h, target_w)
}

/// Boolean pixel mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self {
            height,
            width,
            bits: vec![value; height * width],
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn complement(&self) -> Self {
        Self {
            bits: self.bits.iter().map(|b| !b).collect(),
            ..self.clone()
        }
    }
}

/// Splits pixels into the half with the largest `|value|` and the rest.
/// Ties are broken in row-major order; with an odd pixel count the
/// important half gets `⌊HW/2⌋` pixels.
pub fn importance_masks(heatmap: &Heatmap) -> (Mask, Mask) {
    let total = heatmap.values.len();
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&a, &b| {
        heatmap.values[b]
            .abs()
            .total_cmp(&heatmap.values[a].abs())
            .then(a.cmp(&b))
    });
    let mut important = Mask::filled(heatmap.height, heatmap.width, false);
    for &i in &order[..total / 2] {
        important.bits[i] = true;
    }
    let unimportant = important.complement();
    (important, unimportant)
}

/// Which pixels receive noise in the masked-noise experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseRegion {
    Important,
    Unimportant,
    Everywhere,
}

impl NoiseRegion {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseRegion::Important => "important",
            NoiseRegion::Unimportant => "unimportant",
            NoiseRegion::Everywhere => "everywhere",
        }
    }

    pub fn mask(&self, heatmap: &Heatmap) -> Mask {
        match self {
            NoiseRegion::Everywhere => Mask::filled(heatmap.height, heatmap.width, true),
            NoiseRegion::Important => importance_masks(heatmap).0,
            NoiseRegion::Unimportant => importance_masks(heatmap).1,
        }
    }
}

impl std::str::FromStr for NoiseRegion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "important" => Ok(NoiseRegion::Important),
            "unimportant" => Ok(NoiseRegion::Unimportant),
            "everywhere" => Ok(NoiseRegion::Everywhere),
            other => Err(Error::InvalidData(format!(
                "unknown noise region '{other}'"
            ))),
        }
    }
}

/// `H × W × 3` image with channel values in `[0, 1]`, row-major, interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelBuffer {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl PixelBuffer {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::DimensionMismatch(format!(
                "{} values do not form a {height}x{width}x3 image",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }
}

/// Adds i.i.d. `N(0, σ²)` noise to every channel of the masked pixels and
/// clips to `[0, 1]`. Draws are taken in row-major order over masked pixels
/// only, so the result depends on nothing but `(image, mask, sigma, seed)`.
pub fn add_masked_noise(
    image: &PixelBuffer,
    mask: &Mask,
    sigma: f64,
    seed: u64,
) -> Result<PixelBuffer> {
    if mask.height != image.height || mask.width != image.width {
        return Err(Error::DimensionMismatch(format!(
            "mask is {}x{}, image is {}x{}",
            mask.height, mask.width, image.height, image.width
        )));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Precondition(format!(
            "noise level must be nonnegative, got {sigma}"
        )));
    }
    let mut out = image.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is positive and finite");
    let mut rng = rng::seeded(seed);
    for (p, &on) in mask.bits.iter().enumerate() {
        if !on {
            continue;
        }
        for v in &mut out.data[3 * p..3 * p + 3] {
            let noisy = *v as f64 + normal.sample(&mut rng);
            *v = noisy.clamp(0.0, 1.0) as f32;
        }
    }
    Ok(out)
}

/// RGB bytes for a heatmap: blue for negative, white at zero, red for
/// positive, saturating at the 99th percentile of `|value|`.
pub fn render_diverging(heatmap: &Heatmap) -> Vec<u8> {
    let mut mags: Vec<f64> = heatmap.values.iter().map(|v| v.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let idx = ((mags.len() as f64 - 1.0) * 0.99).round() as usize;
    let scale = mags.get(idx).copied().filter(|s| *s > 0.0).unwrap_or(1.0);
    let mut rgb = Vec::with_capacity(heatmap.values.len() * 3);
    for &v in &heatmap.values {
        let t = (v / scale).clamp(-1.0, 1.0);
        let fade = ((1.0 - t.abs()) * 255.0).round() as u8;
        if t >= 0.0 {
            rgb.extend_from_slice(&[255, fade, fade]);
        } else {
            rgb.extend_from_slice(&[fade, fade, 255]);
        }
    }
    rgb
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn map_from(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> ImportanceMap {
        let values = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        ImportanceMap::new(rows, cols, values).unwrap()
    }

    #[test]
    fn importance_weight_examples() {
        let g = ActivationTensor::uniform(&[0.5], 8).unwrap();
        assert_eq!(importance_weights(&g)[0], 0.25);
        let z = ActivationTensor::uniform(&[0.0, 0.0], 8).unwrap();
        assert_eq!(importance_weights(&z).as_slice(), &[0.0, 0.0]);
        let mut v = vec![0.0; 64];
        v[17] = 8.0;
        let one = ActivationTensor::new(1, 8, v).unwrap();
        assert_eq!(importance_weights(&one)[0], 1.0);
    }

    #[test]
    fn pooled_gradient_identity() {
        let g = DVector::from_vec(vec![0.3, -1.7, 2.5e-3, 11.0]);
        let alpha = importance_weights(&pooled_spatial_gradient(&g, 8).unwrap());
        for k in 0..4 {
            let expected = g[k] * g[k] / 4096.0;
            assert!((alpha[k] - expected).abs() <= 1e-12 * expected);
        }
    }

    #[test]
    fn sensitivity_map_linearity_and_sign() {
        let mut rng = crate::rng::seeded(3);
        let vals: Vec<f64> = (0..2 * 16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let act = ActivationTensor::new(2, 4, vals).unwrap();
        let one_hot = sensitivity_map(&act, &DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_eq!(one_hot.values, act.channel(0));
        let combo = sensitivity_map(&act, &DVector::from_vec(vec![1.0, 2.0])).unwrap();
        for i in 0..16 {
            assert_eq!(combo.values[i], act.channel(0)[i] + 2.0 * act.channel(1)[i]);
        }
        let neg = sensitivity_map(&act.scaled(-1.0), &DVector::from_vec(vec![1.0, 2.0])).unwrap();
        for i in 0..16 {
            assert_eq!(neg.values[i], -combo.values[i]);
        }
        assert!(matches!(
            sensitivity_map(&act, &DVector::from_vec(vec![1.0])),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn lanczos_preserves_constants() {
        let m = map_from(8, 8, |_, _| 0.7);
        let h = lanczos_upsample(&m, 299, 211).unwrap();
        assert!(h.values.iter().all(|v| (v - 0.7).abs() <= 1e-6));
    }

    #[test]
    fn lanczos_same_size_is_identity() {
        let mut rng = crate::rng::seeded(5);
        let m = map_from(8, 8, |_, _| rng.random_range(-1.0..1.0));
        let h = lanczos_upsample(&m, 8, 8).unwrap();
        for (a, b) in h.values.iter().zip(&m.values) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn lanczos_rejects_downsampling() {
        let m = map_from(8, 8, |_, _| 0.0);
        assert!(matches!(
            lanczos_upsample(&m, 4, 16),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn lanczos_ramp_is_monotone_with_bounded_overshoot() {
        let m = map_from(8, 8, |_, c| c as f64);
        let h = lanczos_upsample(&m, 64, 64).unwrap();
        let range = 7.0;
        for y in 0..64 {
            let row: Vec<f64> = (0..64).map(|x| h.at(y, x)).collect();
            let (lo, hi) = row.iter().enumerate().fold((0, 0), |(lo, hi), (i, v)| {
                (
                    if *v < row[lo] { i } else { lo },
                    if *v > row[hi] { i } else { hi },
                )
            });
            assert!(lo < hi);
            for x in lo..hi {
                assert!(row[x + 1] >= row[x], "row {y} not monotone at {x}");
            }
            assert!(row[hi] - 7.0 <= 0.15 * range);
            assert!(0.0 - row[lo] <= 0.15 * range);
        }
    }

    #[test]
    fn mask_halves() {
        let map = map_from(4, 4, |_, c| if c < 2 { 1.0 } else { 0.0 });
        let h = lanczos_upsample(&map, 4, 4).unwrap();
        let (imp, unimp) = importance_masks(&h);
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(imp.bits[y * 4 + x], x < 2);
                assert_eq!(unimp.bits[y * 4 + x], x >= 2);
            }
        }
    }

    #[test]
    fn constant_heatmap_splits_in_row_major_order() {
        let source = map_from(2, 2, |_, _| 3.0);
        let h = Heatmap {
            height: 6,
            width: 6,
            values: vec![3.0; 36],
            source,
        };
        let (imp, _) = importance_masks(&h);
        assert_eq!(imp.bits, (0..36).map(|i| i < 18).collect::<Vec<_>>());
    }

    #[test]
    fn random_heatmap_masks_are_balanced_and_ordered() {
        let mut rng = crate::rng::seeded(9);
        let m = map_from(8, 8, |_, _| rng.random_range(-1.0..1.0));
        let h = lanczos_upsample(&m, 40, 30).unwrap();
        let (imp, unimp) = importance_masks(&h);
        assert_eq!(imp.count(), 600);
        assert_eq!(unimp.count(), 600);
        let min_imp = h
            .values
            .iter()
            .zip(&imp.bits)
            .filter(|p| *p.1)
            .map(|p| p.0.abs())
            .fold(f64::INFINITY, f64::min);
        let max_unimp = h
            .values
            .iter()
            .zip(&unimp.bits)
            .filter(|p| *p.1)
            .map(|p| p.0.abs())
            .fold(0.0, f64::max);
        assert!(min_imp >= max_unimp);
        assert!(imp.bits.iter().zip(&unimp.bits).all(|(a, b)| a ^ b));
    }

    fn gray(h: usize, w: usize, v: f32) -> PixelBuffer {
        PixelBuffer::new(h, w, vec![v; h * w * 3]).unwrap()
    }

    #[test]
    fn noise_no_ops() {
        let img = gray(16, 16, 0.4);
        let full = Mask::filled(16, 16, true);
        assert_eq!(add_masked_noise(&img, &full, 0.0, 1).unwrap(), img);
        let empty = Mask::filled(16, 16, false);
        assert_eq!(add_masked_noise(&img, &empty, 0.3, 1).unwrap(), img);
        assert!(matches!(
            add_masked_noise(&img, &Mask::filled(8, 16, true), 0.1, 1),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn noise_level_matches_sigma() {
        let img = gray(256, 256, 0.5);
        let out = add_masked_noise(&img, &Mask::filled(256, 256, true), 0.1, 42).unwrap();
        for c in 0..3 {
            let diffs: Vec<f64> = out
                .data
                .iter()
                .skip(c)
                .step_by(3)
                .map(|v| *v as f64 - 0.5)
                .filter(|d| d.abs() < 0.5)
                .collect();
            let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
            let sd =
                (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / diffs.len() as f64).sqrt();
            assert!((0.085..=0.115).contains(&sd), "channel {c}: {sd}");
        }
        let again = add_masked_noise(&img, &Mask::filled(256, 256, true), 0.1, 42).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn noise_only_touches_masked_pixels() {
        let img = gray(10, 10, 0.5);
        let mut mask = Mask::filled(10, 10, false);
        mask.bits[37] = true;
        let out = add_masked_noise(&img, &mask, 0.2, 7).unwrap();
        for p in 0..100 {
            let changed = out.data[3 * p..3 * p + 3] != img.data[3 * p..3 * p + 3];
            assert_eq!(changed, p == 37);
        }
    }

    #[test]
    fn diverging_colormap_endpoints() {
        let h = lanczos_upsample(&map_from(1, 3, |_, c| c as f64 - 1.0), 1, 3).unwrap();
        let rgb = render_diverging(&h);
        assert_eq!(&rgb[0..3], &[0, 0, 255]);
        assert_eq!(&rgb[3..6], &[255, 255, 255]);
        assert_eq!(&rgb[6..9], &[255, 0, 0]);
    }
}
