//! Resampling attacks on the Fréchet distance.
//!
//! A candidate pool of generated features is reweighted so that its weighted
//! moments match the real statistics, then subsampled with replacement. The
//! same machinery runs on pre-logits, logits or binarized Top-N/middle-N
//! class indicators. Plain Top-1 histogram matching is provided as the
//! non-optimizing baseline.

use std::cmp::Ordering;

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::frechet::{fid_with_gradients, frechet_distance};
use crate::rng;
use crate::stats::{
    compute_stats, weighted_moments, FeatureMatrix, GaussianStats, SampleWeights, WeightedMoments,
};

/// Learning rate for pre-logit features.
pub const PRE_LOGITS_LEARNING_RATE: f64 = 10.0;
/// Learning rate for logits and binarized class indicators.
pub const LOGITS_LEARNING_RATE: f64 = 5.0;

/// Row sums of class probabilities must be within this of one.
pub const PROBABILITY_ROW_TOLERANCE: f64 = 1e-4;

/// `n × C` matrix of per-image class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbabilities {
    values: DMatrix<f64>,
}

impl ClassProbabilities {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() == 0 {
            return Err(Error::InvalidData("class count must be positive".into()));
        }
        for (i, row) in values.row_iter().enumerate() {
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::InvalidData(format!(
                    "probability {v} outside [0, 1] in row {i}"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PROBABILITY_ROW_TOLERANCE {
                return Err(Error::InvalidData(format!(
                    "row {i} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::DimensionMismatch(
                "probability rows differ in length".into(),
            ));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(DMatrix::from_row_slice(rows.len(), c, &flat))
    }

    pub fn count(&self) -> usize {
        self.values.nrows()
    }

    pub fn classes(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Index of the most probable class per row; ties go to the lower index.
    pub fn top1(&self) -> Vec<usize> {
        self.values
            .row_iter()
            .map(|row| {
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }

    /// Per-row class indices sorted by descending probability, ties by index.
    fn ranked_row(&self, i: usize) -> Vec<usize> {
        let row = self.values.row(i);
        let mut order: Vec<usize> = (0..self.classes()).collect();
        order.sort_by(|&a, &b| {
            row[b]
                .partial_cmp(&row[a])
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        });
        order
    }
}

/// Binary class-indicator matrix; every row has the same number of ones.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorMatrix {
    values: DMatrix<f64>,
    per_row: usize,
}

impl IndicatorMatrix {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn per_row(&self) -> usize {
        self.per_row
    }

    pub fn to_features(&self) -> FeatureMatrix {
        FeatureMatrix::new(self.values.clone()).expect("indicator entries are finite")
    }
}

/// Which probability ranks are marked by a binarization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinarizeMode {
    Top,
    Middle,
}

fn indicator_from_ranks(probs: &ClassProbabilities, n: usize, start: usize) -> IndicatorMatrix {
    let mut values = DMatrix::zeros(probs.count(), probs.classes());
    for i in 0..probs.count() {
        for &c in &probs.ranked_row(i)[start..start + n] {
            values[(i, c)] = 1.0;
        }
    }
    IndicatorMatrix { values, per_row: n }
}

/// Marks each row's `n` most probable classes.
pub fn binarize_top_n(probs: &ClassProbabilities, n: usize) -> Result<IndicatorMatrix> {
    if n == 0 || n > probs.classes() {
        return Err(Error::Precondition(format!(
            "top-N requires 1 <= N <= {}, got {n}",
            probs.classes()
        )));
    }
    Ok(indicator_from_ranks(probs, n, 0))
}

/// Marks `n` classes from the middle of each row's ranking: ranks
/// `⌊C/2⌋ − ⌊n/2⌋ ..= ⌊C/2⌋ − ⌊n/2⌋ + n − 1`.
pub fn binarize_middle_n(probs: &ClassProbabilities, n: usize) -> Result<IndicatorMatrix> {
    let c = probs.classes();
    if n == 0 || n > c / 2 {
        return Err(Error::Precondition(format!(
            "middle-N requires 1 <= N <= {}, got {n}",
            c / 2
        )));
    }
    Ok(indicator_from_ranks(probs, n, c / 2 - n / 2))
}

pub fn binarize(
    probs: &ClassProbabilities,
    n: usize,
    mode: BinarizeMode,
) -> Result<IndicatorMatrix> {
    match mode {
        BinarizeMode::Top => binarize_top_n(probs, n),
        BinarizeMode::Middle => binarize_middle_n(probs, n),
    }
}

/// Softmax of the log-weights.
pub fn weights_to_probabilities(weights: &SampleWeights) -> DVector<f64> {
    let w = weights.relative_weights();
    let total: f64 = w.iter().sum();
    w / total
}

/// `m` i.i.d. categorical draws.
pub fn sample_with_replacement(probabilities: &[f64], m: usize, seed: u64) -> Result<Vec<usize>> {
    if probabilities.is_empty() {
        return Err(Error::Precondition("empty probability vector".into()));
    }
    if let Some(p) = probabilities
        .iter()
        .find(|p| !(p.is_finite() && **p >= 0.0))
    {
        return Err(Error::Precondition(format!("invalid probability {p}")));
    }
    let total: f64 = probabilities.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Precondition(format!(
            "probabilities sum to {total}, expected 1"
        )));
    }
    let dist = WeightedIndex::new(probabilities).map_err(|e| Error::Precondition(e.to_string()))?;
    let mut rng = rng::seeded(seed);
    Ok((0..m).map(|_| dist.sample(&mut rng)).collect())
}

/// Gradient-descent settings for [`optimize_resampling_weights`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Checkpoint cadence; each checkpoint resamples and scores the weights.
    pub eval_every: usize,
    /// Rows drawn at each checkpoint; `None` means the real row count.
    pub sample_size: Option<usize>,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: PRE_LOGITS_LEARNING_RATE,
            max_iters: 100_000,
            eval_every: 1000,
            sample_size: None,
            seed: 0,
        }
    }
}

/// Objective value recorded at each iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizationTrace {
    pub points: Vec<(usize, f64)>,
}

impl OptimizationTrace {
    /// `iteration<TAB>objective` lines under a header.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("iteration\tobjective\n");
        for (it, obj) in &self.points {
            out.push_str(&format!("{it}\t{obj}\n"));
        }
        out
    }

    pub fn initial(&self) -> Option<f64> {
        self.points.first().map(|p| p.1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: usize,
    pub objective: f64,
    pub sampled_fid: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizationResult {
    /// Weights of the selected checkpoint.
    pub weights: SampleWeights,
    pub selected: Checkpoint,
    pub checkpoints: Vec<Checkpoint>,
    pub trace: OptimizationTrace,
}

/// Objective `FD(real, weighted(gen, w))` and its gradient in log-weight space.
///
/// With `p = softmax(logw)`, `δ_i = f_i − μ(w)` and the distance gradients
/// `Gμ`, `GΣ`, the per-sample derivative on the simplex is
/// `g_i = Gμ·δ_i + δ_iᵀ GΣ δ_i`; the softmax chain gives
/// `∂/∂logw_i = p_i (g_i − Σ_j p_j g_j)`.
pub fn objective_and_gradient(
    real: &GaussianStats,
    gen: &FeatureMatrix,
    weights: &SampleWeights,
) -> Result<(f64, DVector<f64>)> {
    let WeightedMoments {
        stats,
        centered,
        probabilities: p,
    } = weighted_moments(gen, weights)?;
    let (value, grads) = fid_with_gradients(real, &stats)?;
    let projected = &centered * &grads.d_cov;
    let mut g = &centered * &grads.d_mean;
    for (xc, pr) in centered.column_iter().zip(projected.column_iter()) {
        g += xc.component_mul(&pr);
    }
    let expected = p.dot(&g);
    g.add_scalar_mut(-expected);
    Ok((value, p.component_mul(&g)))
}

fn check_dims(real: &FeatureMatrix, gen: &FeatureMatrix) -> Result<()> {
    if real.dim() != gen.dim() {
        return Err(Error::DimensionMismatch(format!(
            "real features have dimension {}, generated {}",
            real.dim(),
            gen.dim()
        )));
    }
    Ok(())
}

fn sampled_fid(
    real_stats: &GaussianStats,
    gen: &FeatureMatrix,
    weights: &SampleWeights,
    m: usize,
    seed: u64,
) -> Result<f64> {
    let p = weights_to_probabilities(weights);
    let idx = sample_with_replacement(p.as_slice(), m, seed)?;
    let sample = gen.select_rows(&idx)?;
    frechet_distance(real_stats, &compute_stats(&sample)?)
}

/// Full-batch gradient descent on log-weights starting from uniform weights.
///
/// Every `eval_every` iterations (and at the first and last iteration) the
/// current weights are resampled and scored; the returned weights belong to
/// the checkpoint with the smallest sampled distance among those whose
/// objective does not exceed the initial objective.
pub fn optimize_resampling_weights(
    real: &FeatureMatrix,
    gen: &FeatureMatrix,
    cfg: &OptimizerConfig,
) -> Result<OptimizationResult> {
    check_dims(real, gen)?;
    if cfg.eval_every == 0 {
        return Err(Error::Precondition("eval_every must be positive".into()));
    }
    if !(cfg.learning_rate.is_finite() && cfg.learning_rate >= 0.0) {
        return Err(Error::Precondition(format!(
            "invalid learning rate {}",
            cfg.learning_rate
        )));
    }
    let real_stats = compute_stats(real)?;
    let m = cfg.sample_size.unwrap_or(real.count());
    let mut weights = SampleWeights::uniform(gen.count());
    let mut trace = OptimizationTrace::default();
    let mut checkpoints = Vec::new();
    let mut best: Option<(Checkpoint, SampleWeights)> = None;
    let mut initial = f64::INFINITY;

    for iteration in 0..=cfg.max_iters {
        let (objective, grad) =
            objective_and_gradient(&real_stats, gen, &weights).map_err(|e| Error::Divergence {
                iteration,
                what: e.to_string(),
            })?;
        if !objective.is_finite() {
            return Err(Error::Divergence {
                iteration,
                what: format!("objective is {objective}"),
            });
        }
        if iteration == 0 {
            initial = objective;
        }
        trace.points.push((iteration, objective));

        if iteration % cfg.eval_every == 0 || iteration == cfg.max_iters {
            let fid = sampled_fid(&real_stats, gen, &weights, m, cfg.seed)?;
            let cp = Checkpoint {
                iteration,
                objective,
                sampled_fid: fid,
            };
            info!("iteration {iteration}: objective {objective:.6}, sampled FID {fid:.6}");
            let improves = best.as_ref().is_none_or(|(b, _)| fid < b.sampled_fid);
            if objective <= initial && improves {
                best = Some((cp.clone(), weights.clone()));
            }
            checkpoints.push(cp);
        }
        if iteration == cfg.max_iters {
            break;
        }

        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                iteration,
                what: format!("non-finite gradient for sample {i}"),
            });
        }
        weights.logw.axpy(-cfg.learning_rate, &grad, 1.0);
        if iteration % 100 == 0 {
            debug!("iteration {iteration}: objective {objective:.6}");
        }
    }

    let (selected, weights) = best.expect("iteration 0 is always a checkpoint");
    Ok(OptimizationResult {
        weights,
        selected,
        checkpoints,
        trace,
    })
}

/// What to do when a class runs out of candidates during Top-1 matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShortfallPolicy {
    #[default]
    Error,
    /// Fill the missing slots from the classes with the most unused
    /// candidates, in proportion to those remaining counts.
    Fill,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Top1Match {
    /// Selected candidate rows, in selection order.
    pub indices: Vec<usize>,
    /// Per-class `selected − target` after any filling; all zero on an exact match.
    pub deviation: Vec<i64>,
}

fn histogram(labels: &[usize], classes: usize) -> Vec<usize> {
    let mut h = vec![0; classes];
    for &l in labels {
        h[l] += 1;
    }
    h
}

/// Picks generated rows so their Top-1 class histogram equals the real one.
///
/// Candidates are scanned in a seeded random order; a candidate is kept when
/// its class bin still has room and discarded otherwise.
pub fn top1_histogram_match(
    real: &ClassProbabilities,
    gen: &ClassProbabilities,
    seed: u64,
    policy: ShortfallPolicy,
) -> Result<Top1Match> {
    if real.classes() != gen.classes() {
        return Err(Error::DimensionMismatch(format!(
            "real probabilities have {} classes, generated {}",
            real.classes(),
            gen.classes()
        )));
    }
    let classes = real.classes();
    let target = histogram(&real.top1(), classes);
    let gen_labels = gen.top1();
    let mut order: Vec<usize> = (0..gen.count()).collect();
    order.shuffle(&mut rng::seeded(seed));

    let mut filled = vec![0usize; classes];
    let mut indices = Vec::with_capacity(real.count());
    let mut leftovers: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for &i in &order {
        let c = gen_labels[i];
        if filled[c] < target[c] {
            filled[c] += 1;
            indices.push(i);
        } else {
            leftovers[c].push(i);
        }
    }

    let deficits: Vec<(usize, usize)> = (0..classes)
        .filter(|&c| filled[c] < target[c])
        .map(|c| (c, target[c] - filled[c]))
        .collect();
    if !deficits.is_empty() {
        match policy {
            ShortfallPolicy::Error => return Err(Error::Shortfall { deficits }),
            ShortfallPolicy::Fill => {
                let missing: usize = deficits.iter().map(|d| d.1).sum();
                let available: usize = leftovers.iter().map(Vec::len).sum();
                if available < missing {
                    return Err(Error::Shortfall { deficits });
                }
                let quota = apportion(&leftovers.iter().map(Vec::len).collect::<Vec<_>>(), missing);
                for (c, q) in quota.into_iter().enumerate() {
                    indices.extend_from_slice(&leftovers[c][..q]);
                    filled[c] += q;
                }
            }
        }
    }
    let deviation = (0..classes)
        .map(|c| filled[c] as i64 - target[c] as i64)
        .collect();
    Ok(Top1Match { indices, deviation })
}

/// Largest-remainder split of `total` proportional to `sizes`, capped by them.
fn apportion(sizes: &[usize], total: usize) -> Vec<usize> {
    let sum: usize = sizes.iter().sum();
    if sum == 0 {
        return vec![0; sizes.len()];
    }
    let mut quota: Vec<usize> = sizes.iter().map(|&s| s * total / sum).collect();
    let mut rest = total - quota.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = (sizes[a] * total) % sum;
        let rb = (sizes[b] * total) % sum;
        rb.cmp(&ra).then(sizes[b].cmp(&sizes[a])).then(a.cmp(&b))
    });
    while rest > 0 {
        let mut progressed = false;
        for &c in &order {
            if rest == 0 {
                break;
            }
            if quota[c] < sizes[c] {
                quota[c] += 1;
                rest -= 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    quota
}

/// Inputs of a Top-N sweep; probabilities and features are row-aligned.
#[derive(Debug, Clone, Copy)]
pub struct SweepInputs<'a> {
    pub real_probs: &'a ClassProbabilities,
    pub gen_probs: &'a ClassProbabilities,
    pub real_features: &'a FeatureMatrix,
    pub gen_features: &'a FeatureMatrix,
}

/// For each `N`: binarize, optimize weights on the indicators, resample once
/// and report the distance in the original feature space.
pub fn top_n_sweep(
    inputs: SweepInputs<'_>,
    ns: &[usize],
    mode: BinarizeMode,
    cfg: &OptimizerConfig,
) -> Result<Vec<(usize, f64)>> {
    let SweepInputs {
        real_probs,
        gen_probs,
        real_features,
        gen_features,
    } = inputs;
    if real_probs.count() != real_features.count() || gen_probs.count() != gen_features.count() {
        return Err(Error::Precondition(
            "probabilities and features must be row-aligned".into(),
        ));
    }
    check_dims(real_features, gen_features)?;
    let real_stats = compute_stats(real_features)?;
    let m = cfg.sample_size.unwrap_or(real_features.count());
    let mut curve = Vec::with_capacity(ns.len());
    for &n in ns {
        let real_ind = binarize(real_probs, n, mode)?.to_features();
        let gen_ind = binarize(gen_probs, n, mode)?.to_features();
        let result = optimize_resampling_weights(&real_ind, &gen_ind, cfg)?;
        let fid = sampled_fid(&real_stats, gen_features, &result.weights, m, cfg.seed)?;
        info!("{mode:?}-{n}: resampled FID {fid:.6}");
        curve.push((n, fid));
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs(rows: &[Vec<f64>]) -> ClassProbabilities {
        ClassProbabilities::from_rows(rows).unwrap()
    }

    fn one_hot(c: usize, classes: usize) -> Vec<f64> {
        let mut v = vec![0.0; classes];
        v[c] = 1.0;
        v
    }

    #[test]
    fn top_n_examples() {
        let p = probs(&[vec![0.5, 0.3, 0.2]]);
        assert_eq!(
            binarize_top_n(&p, 2).unwrap().values().as_slice(),
            &[1.0, 1.0, 0.0]
        );
        let tie = probs(&[vec![0.4, 0.4, 0.2]]);
        assert_eq!(
            binarize_top_n(&tie, 1).unwrap().values().as_slice(),
            &[1.0, 0.0, 0.0]
        );
        assert_eq!(
            binarize_top_n(&p, 3).unwrap().values().as_slice(),
            &[1.0, 1.0, 1.0]
        );
        assert!(matches!(binarize_top_n(&p, 0), Err(Error::Precondition(_))));
        assert!(matches!(binarize_top_n(&p, 4), Err(Error::Precondition(_))));
    }

    #[test]
    fn middle_n_examples() {
        let p = probs(&[vec![0.4, 0.3, 0.2, 0.1]]);
        let m = binarize_middle_n(&p, 2).unwrap();
        assert_eq!(m.values().transpose().as_slice(), &[0.0, 1.0, 1.0, 0.0]);
        assert!(matches!(
            binarize_middle_n(&p, 3),
            Err(Error::Precondition(_))
        ));
        let p8 = probs(&[vec![0.3, 0.2, 0.15, 0.1, 0.1, 0.08, 0.05, 0.02]]);
        for n in 1..=3 {
            let m = binarize_middle_n(&p8, n).unwrap();
            assert_eq!(
                m.values()[(0, 0)],
                0.0,
                "middle-{n} must not include the top class"
            );
            assert_eq!(m.values().row(0).sum(), n as f64);
        }
    }

    #[test]
    fn softmax_examples() {
        let p = weights_to_probabilities(&SampleWeights::uniform(2));
        assert_eq!(p.as_slice(), &[0.5, 0.5]);
        let w = SampleWeights::new(DVector::from_vec(vec![3f64.ln(), 0.0])).unwrap();
        let p = weights_to_probabilities(&w);
        assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
        let shifted = SampleWeights::new(w.logw.add_scalar(123.4)).unwrap();
        let q = weights_to_probabilities(&shifted);
        assert!((p - q).amax() <= 1e-14);
    }

    #[test]
    fn sampling_examples() {
        let idx = sample_with_replacement(&[0.0, 0.0, 1.0, 0.0], 50, 1).unwrap();
        assert!(idx.iter().all(|&i| i == 2));
        let a = sample_with_replacement(&[0.25; 4], 40_000, 9).unwrap();
        let b = sample_with_replacement(&[0.25; 4], 40_000, 9).unwrap();
        assert_eq!(a, b);
        for k in 0..4 {
            let freq = a.iter().filter(|&&i| i == k).count() as f64 / 40_000.0;
            assert!((0.24..=0.26).contains(&freq), "index {k} frequency {freq}");
        }
        assert!(matches!(
            sample_with_replacement(&[0.5, 0.2], 3, 0),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            sample_with_replacement(&[1.5, -0.5], 3, 0),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn top1_small_example() {
        let real = probs(&[one_hot(0, 2), one_hot(0, 2), one_hot(1, 2)]);
        let gen = probs(&[
            one_hot(0, 2),
            one_hot(0, 2),
            one_hot(0, 2),
            one_hot(1, 2),
            one_hot(1, 2),
        ]);
        let m = top1_histogram_match(&real, &gen, 4, ShortfallPolicy::Error).unwrap();
        assert_eq!(m.indices.len(), 3);
        let labels = gen.top1();
        let chosen: Vec<usize> = m.indices.iter().map(|&i| labels[i]).collect();
        assert_eq!(histogram(&chosen, 2), vec![2, 1]);
        assert_eq!(m.deviation, vec![0, 0]);
    }

    #[test]
    fn top1_exact_pool_selects_everything() {
        let rows: Vec<Vec<f64>> = (0..12).map(|i| one_hot(i % 3, 3)).collect();
        let real = probs(&rows);
        let m = top1_histogram_match(&real, &real, 2, ShortfallPolicy::Error).unwrap();
        let mut idx = m.indices.clone();
        idx.sort_unstable();
        assert_eq!(idx, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn top1_shortfall_error_and_fill() {
        let real = probs(&[one_hot(0, 3), one_hot(1, 3), one_hot(1, 3), one_hot(1, 3)]);
        let gen = probs(&[
            one_hot(0, 3),
            one_hot(0, 3),
            one_hot(1, 3),
            one_hot(2, 3),
            one_hot(2, 3),
            one_hot(2, 3),
        ]);
        match top1_histogram_match(&real, &gen, 0, ShortfallPolicy::Error) {
            Err(Error::Shortfall { deficits }) => assert_eq!(deficits, vec![(1, 2)]),
            other => panic!("expected shortfall, got {other:?}"),
        }
        let m = top1_histogram_match(&real, &gen, 0, ShortfallPolicy::Fill).unwrap();
        assert_eq!(m.indices.len(), 4);
        // leftovers: one of class 0, three of class 2
        assert_eq!(m.deviation, vec![0, -2, 2]);
    }

    #[test]
    fn apportion_is_proportional_and_capped() {
        assert_eq!(apportion(&[1, 3], 2), vec![0, 2]);
        assert_eq!(apportion(&[2, 2], 3).iter().sum::<usize>(), 3);
        assert_eq!(apportion(&[1, 0], 1), vec![1, 0]);
    }

    #[test]
    fn zero_iterations_keep_uniform_weights() {
        let real = FeatureMatrix::from_rows(&[
            vec![0.0, 1.0],
            vec![1.0, 0.5],
            vec![2.0, 2.0],
            vec![0.5, 0.0],
        ])
        .unwrap();
        let gen = FeatureMatrix::from_rows(&[
            vec![1.0, 1.0],
            vec![3.0, 0.5],
            vec![2.0, 2.5],
            vec![0.0, 0.0],
            vec![1.0, 2.0],
        ])
        .unwrap();
        let cfg = OptimizerConfig {
            max_iters: 0,
            ..Default::default()
        };
        let r = optimize_resampling_weights(&real, &gen, &cfg).unwrap();
        assert_eq!(r.weights, SampleWeights::uniform(5));
        let direct = crate::frechet::frechet_distance(
            &compute_stats(&real).unwrap(),
            &crate::stats::weighted_stats(&gen, &SampleWeights::uniform(5)).unwrap(),
        )
        .unwrap();
        assert_eq!(r.trace.points, vec![(0, direct)]);
        assert_eq!(
            r.trace.to_tsv(),
            format!("iteration\tobjective\n0\t{direct}\n")
        );
    }
}
