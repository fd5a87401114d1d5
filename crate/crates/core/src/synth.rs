//! Class-structured synthetic feature distributions.
//!
//! A [`MixtureSpec`] is a set of diagonal Gaussian components, each tied to a
//! class label. Components with zero weight are never sampled but still act
//! as class prototypes, which gives the class probabilities more classes than
//! there are active components (the analog of incidental "fringe" classes).
//!
//! Class probabilities for a row `x` are
//! `softmax_c((−‖x − μ_c‖²/2 + η·G_c) / τ)` summed per label, where `τ` is the
//! temperature, `η` the label-noise scale and `G_c` i.i.d. standard Gumbel
//! draws. With `η = 0` the argmax is the nearest prototype.
//!
//! Text format, one directive per line, `#` starts a comment:
//!
//! ```text
//! dim = 2
//! temperature = 1.0
//! label_noise = 0.0
//! component label=0 weight=0.5 mean=0,0 var=1,1
//! component label=1 weight=0.5 mean=3,4 var=1,1
//! ```

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use rand_distr::{Gumbel, StandardNormal};

use crate::error::{Error, Result};
use crate::frechet::{frechet_diagonal, frechet_distance};
use crate::resampling::ClassProbabilities;
use crate::rng::{self, derive_seed};
use crate::stats::{compute_stats, FeatureMatrix, GaussianStats};

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub label: usize,
    pub weight: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub dim: usize,
    pub temperature: f64,
    pub label_noise: f64,
    pub components: Vec<Component>,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Precondition(m));
        if self.dim == 0 {
            return bad("dimension must be positive".into());
        }
        if self.components.is_empty() {
            return bad("at least one component is required".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!(
                "temperature must be positive, got {}",
                self.temperature
            ));
        }
        if !(self.label_noise >= 0.0 && self.label_noise.is_finite()) {
            return bad(format!(
                "label noise must be nonnegative, got {}",
                self.label_noise
            ));
        }
        for (k, c) in self.components.iter().enumerate() {
            if c.mean.len() != self.dim || c.var.len() != self.dim {
                return bad(format!(
                    "component {k} does not have dimension {}",
                    self.dim
                ));
            }
            if !(c.weight >= 0.0 && c.weight.is_finite()) {
                return bad(format!("component {k} has invalid weight {}", c.weight));
            }
            if c.mean.iter().any(|v| !v.is_finite())
                || c.var.iter().any(|v| !(*v >= 0.0 && v.is_finite()))
            {
                return bad(format!("component {k} has invalid mean or variance"));
            }
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("component weights sum to {total}, expected 1"));
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.components
            .iter()
            .map(|c| c.label)
            .max()
            .map_or(0, |m| m + 1)
    }

    fn active(&self) -> Vec<&Component> {
        self.components.iter().filter(|c| c.weight > 0.0).collect()
    }

    /// Same components with new mixture weights (normalized).
    pub fn with_weights(&self, weights: &[f64]) -> Result<Self> {
        if weights.len() != self.components.len() {
            return Err(Error::Precondition(format!(
                "{} weights for {} components",
                weights.len(),
                self.components.len()
            )));
        }
        let total: f64 = weights.iter().sum();
        let mut out = self.clone();
        for (c, w) in out.components.iter_mut().zip(weights) {
            c.weight = w / total;
        }
        out.validate()?;
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut dim = None;
        let mut temperature = 1.0;
        let mut label_noise = 0.0;
        let mut components = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: &str| Error::InvalidData(format!("spec line {}: {m}", lineno + 1));
            if let Some(rest) = line.strip_prefix("component") {
                let mut label = None;
                let mut weight = None;
                let mut mean = None;
                let mut var = None;
                for field in rest.split_whitespace() {
                    let (k, v) = field
                        .split_once('=')
                        .ok_or_else(|| err("expected key=value"))?;
                    match k {
                        "label" => label = Some(v.parse::<usize>().map_err(|_| err("bad label"))?),
                        "weight" => weight = Some(v.parse::<f64>().map_err(|_| err("bad weight"))?),
                        "mean" => mean = Some(parse_list(v).ok_or_else(|| err("bad mean"))?),
                        "var" => var = Some(parse_list(v).ok_or_else(|| err("bad var"))?),
                        other => return Err(err(&format!("unknown component field '{other}'"))),
                    }
                }
                components.push(Component {
                    label: label.ok_or_else(|| err("missing label"))?,
                    weight: weight.ok_or_else(|| err("missing weight"))?,
                    mean: mean.ok_or_else(|| err("missing mean"))?,
                    var: var.ok_or_else(|| err("missing var"))?,
                });
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err("expected key = value"))?;
            let v = v.trim();
            match k.trim() {
                "dim" => dim = Some(v.parse::<usize>().map_err(|_| err("bad dim"))?),
                "temperature" => {
                    temperature = v.parse::<f64>().map_err(|_| err("bad temperature"))?
                }
                "label_noise" => {
                    label_noise = v.parse::<f64>().map_err(|_| err("bad label_noise"))?
                }
                other => return Err(err(&format!("unknown key '{other}'"))),
            }
        }
        let spec = Self {
            dim: dim.ok_or_else(|| Error::InvalidData("spec is missing 'dim'".into()))?,
            temperature,
            label_noise,
            components,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Inverse of [`MixtureSpec::parse`]; numbers use the shortest
    /// round-tripping representation.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dim = {}", self.dim);
        let _ = writeln!(out, "temperature = {:?}", self.temperature);
        let _ = writeln!(out, "label_noise = {:?}", self.label_noise);
        for c in &self.components {
            let _ = writeln!(
                out,
                "component label={} weight={:?} mean={} var={}",
                c.label,
                c.weight,
                join(&c.mean),
                join(&c.var)
            );
        }
        out
    }
}

fn parse_list(s: &str) -> Option<Vec<f64>> {
    s.split(',').map(|t| t.trim().parse::<f64>().ok()).collect()
}

fn join(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:?}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// Output of [`synth_generate`].
#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub features: FeatureMatrix,
    pub probabilities: ClassProbabilities,
    /// Generating component of each row.
    pub components: Vec<usize>,
}

/// Draws `n` rows. Rows are generated sequentially from a single seeded
/// stream, so the output is a pure function of `(spec, n, seed)`.
pub fn synth_generate(spec: &MixtureSpec, n: usize, seed: u64) -> Result<SyntheticSample> {
    spec.validate()?;
    let d = spec.dim;
    let classes = spec.classes();
    let weights: Vec<f64> = spec.components.iter().map(|c| c.weight).collect();
    let picker = WeightedIndex::new(&weights).map_err(|e| Error::Precondition(e.to_string()))?;
    let gumbel = Gumbel::new(0.0, 1.0).expect("unit Gumbel is valid");
    let sd: Vec<Vec<f64>> = spec
        .components
        .iter()
        .map(|c| c.var.iter().map(|v| v.sqrt()).collect())
        .collect();
    let mut rng = rng::seeded(seed);

    let mut feats = Vec::with_capacity(n * d);
    let mut probs = Vec::with_capacity(n * classes);
    let mut which = Vec::with_capacity(n);
    let mut x = vec![0.0; d];
    let mut logits = vec![0.0; spec.components.len()];
    for _ in 0..n {
        let k = picker.sample(&mut rng);
        let comp = &spec.components[k];
        for j in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            x[j] = comp.mean[j] + sd[k][j] * z;
        }
        for (c, proto) in spec.components.iter().enumerate() {
            let dist2: f64 = x
                .iter()
                .zip(&proto.mean)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let noise = if spec.label_noise > 0.0 {
                spec.label_noise * gumbel.sample(&mut rng)
            } else {
                0.0
            };
            logits[c] = (-0.5 * dist2 + noise) / spec.temperature;
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut row = vec![0.0; classes];
        let mut total = 0.0;
        for (c, proto) in spec.components.iter().enumerate() {
            let e = (logits[c] - max).exp();
            row[proto.label] += e;
            total += e;
        }
        probs.extend(row.iter().map(|v| v / total));
        feats.extend_from_slice(&x);
        which.push(k);
    }
    Ok(SyntheticSample {
        features: FeatureMatrix::from_row_slice(n, d, &feats)?,
        probabilities: ClassProbabilities::new(DMatrix::from_row_slice(n, classes, &probs))?,
        components: which,
    })
}

/// Closed-form distance between two single-component specs.
pub fn oracle_frechet(a: &MixtureSpec, b: &MixtureSpec) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let (ca, cb) = (a.active(), b.active());
    if ca.len() != 1 || cb.len() != 1 {
        return Err(Error::Unsupported(
            "closed-form distance exists only for single-component specs".into(),
        ));
    }
    frechet_diagonal(&ca[0].mean, &ca[0].var, &cb[0].mean, &cb[0].var)
}

/// Mean distance between independent same-spec draws, per sample size.
pub fn bias_probe(
    spec: &MixtureSpec,
    sizes: &[usize],
    repeats: usize,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    if let Some(&s) = sizes.iter().find(|&&s| s < 2) {
        return Err(Error::Precondition(format!(
            "sample sizes must be at least 2, got {s}"
        )));
    }
    if repeats == 0 {
        return Err(Error::Precondition("repeats must be positive".into()));
    }
    let mut table = Vec::with_capacity(sizes.len());
    for (si, &size) in sizes.iter().enumerate() {
        let mut total = 0.0;
        for r in 0..repeats {
            let stream = 2 * (si * repeats + r) as u64;
            let a = synth_generate(spec, size, derive_seed(seed, stream))?;
            let b = synth_generate(spec, size, derive_seed(seed, stream + 1))?;
            total += frechet_distance(&compute_stats(&a.features)?, &compute_stats(&b.features)?)?;
        }
        table.push((size, total / repeats as f64));
    }
    Ok(table)
}

/// `x ↦ W x + b` from feature space to a `C`-dimensional space.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl AffineMap {
    pub fn identity(d: usize) -> Self {
        Self {
            weight: DMatrix::identity(d, d),
            bias: DVector::zeros(d),
        }
    }

    /// Random `C × d` map whose nonzero singular values are spread evenly
    /// over `[1/condition, 1]`.
    pub fn random_well_conditioned(
        out_dim: usize,
        in_dim: usize,
        condition: f64,
        seed: u64,
    ) -> Self {
        let mut rng = rng::seeded(seed);
        let mut gauss = |r: usize, c: usize| {
            DMatrix::<f64>::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng))
        };
        let u = gauss(out_dim, out_dim).qr().q();
        let v = gauss(in_dim, in_dim).qr().q();
        let k = out_dim.min(in_dim);
        let mut sigma = DMatrix::zeros(out_dim, in_dim);
        for i in 0..k {
            let t = if k == 1 {
                0.0
            } else {
                i as f64 / (k - 1) as f64
            };
            sigma[(i, i)] = 1.0 + t * (1.0 / condition - 1.0);
        }
        let bias = DVector::from_fn(out_dim, |_, _| rng.random_range(-1.0..1.0));
        Self {
            weight: u * sigma * v.transpose(),
            bias,
        }
    }

    pub fn apply(&self, features: &FeatureMatrix) -> Result<FeatureMatrix> {
        if self.weight.ncols() != features.dim() {
            return Err(Error::DimensionMismatch(format!(
                "map expects dimension {}, features have {}",
                self.weight.ncols(),
                features.dim()
            )));
        }
        let mut out = features.values() * self.weight.transpose();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.bias[j]);
        }
        FeatureMatrix::new(out)
    }

    pub fn rank(&self) -> usize {
        let sv = self.weight.clone().singular_values();
        let max = sv.max();
        sv.iter().filter(|&&s| s > 1e-10 * max).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub pearson: f64,
    pub feature_fids: Vec<f64>,
    pub mapped_fids: Vec<f64>,
    pub map_rank: usize,
    /// The map drops dimensions (rank below the feature dimension).
    pub low_rank: bool,
}

/// Copies of `base` with shifted means and rescaled variances; member `i`
/// is shifted by `scale · (i + 1) / members` along a random direction.
pub fn perturbed_ensemble(
    base: &MixtureSpec,
    members: usize,
    scale: f64,
    seed: u64,
) -> Vec<MixtureSpec> {
    let mut rng = rng::seeded(seed);
    (0..members)
        .map(|i| {
            let magnitude = scale * (i + 1) as f64 / members as f64;
            let mut spec = base.clone();
            for comp in &mut spec.components {
                let dir: Vec<f64> = (0..base.dim)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                for (m, u) in comp.mean.iter_mut().zip(&dir) {
                    *m += magnitude * u / norm;
                }
                for v in &mut comp.var {
                    *v *= rng.random_range(0.7..1.3);
                }
            }
            spec
        })
        .collect()
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "a distance series has zero variance".into(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Pearson correlation between distances computed in feature space and
/// after mapping every feature through `map`, over an ensemble of
/// generated specs compared against one real spec.
pub fn affine_correlation_probe(
    real: &MixtureSpec,
    ensemble: &[MixtureSpec],
    map: &AffineMap,
    samples: usize,
    seed: u64,
) -> Result<CorrelationReport> {
    if ensemble.len() < 10 {
        return Err(Error::Precondition(format!(
            "ensemble needs at least 10 members, got {}",
            ensemble.len()
        )));
    }
    let real_draw = synth_generate(real, samples, derive_seed(seed, 0))?.features;
    let real_stats = compute_stats(&real_draw)?;
    let real_mapped = compute_stats(&map.apply(&real_draw)?)?;
    let mut feature_fids = Vec::with_capacity(ensemble.len());
    let mut mapped_fids = Vec::with_capacity(ensemble.len());
    for (i, spec) in ensemble.iter().enumerate() {
        let draw = synth_generate(spec, samples, derive_seed(seed, i as u64 + 1))?.features;
        feature_fids.push(frechet_distance(&real_stats, &compute_stats(&draw)?)?);
        let mapped: GaussianStats = compute_stats(&map.apply(&draw)?)?;
        mapped_fids.push(frechet_distance(&real_mapped, &mapped)?);
    }
    let map_rank = map.rank();
    Ok(CorrelationReport {
        pearson: pearson(&feature_fids, &mapped_fids)?,
        feature_fids,
        mapped_fids,
        map_rank,
        low_rank: map_rank < real.dim,
    })
}

/// Real and generated specs of the standard desk-scale attack instance:
/// eight active unit-variance components plus `fringe` zero-weight
/// prototypes in 16 dimensions; the real mixture is uniform over the active
/// components and the generated one is skewed.
#[derive(Debug, Clone)]
pub struct StandardInstance {
    pub real: MixtureSpec,
    pub gen: MixtureSpec,
}

pub const STANDARD_DIM: usize = 16;
pub const STANDARD_ACTIVE: usize = 8;
pub const STANDARD_FRINGE: usize = 8;
pub const STANDARD_GEN_WEIGHTS: [f64; STANDARD_ACTIVE] = [3.0, 2.5, 2.0, 1.5, 1.0, 0.75, 0.6, 0.5];
/// Gumbel scale giving roughly 40% Top-1 label accuracy on the standard instance.
pub const STANDARD_LABEL_NOISE: f64 = 20.0;

pub fn standard_instance(label_noise: f64, seed: u64) -> StandardInstance {
    let mut rng = rng::seeded(seed);
    let d = STANDARD_DIM;
    let mut components = Vec::new();
    for label in 0..STANDARD_ACTIVE + STANDARD_FRINGE {
        let mean: Vec<f64> = (0..d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                2.0 * z
            })
            .collect();
        components.push(Component {
            label,
            weight: if label < STANDARD_ACTIVE {
                1.0 / STANDARD_ACTIVE as f64
            } else {
                0.0
            },
            mean,
            var: vec![1.0; d],
        });
    }
    let real = MixtureSpec {
        dim: d,
        temperature: 1.0,
        label_noise,
        components,
    };
    let mut gen_weights = vec![0.0; real.components.len()];
    gen_weights[..STANDARD_ACTIVE].copy_from_slice(&STANDARD_GEN_WEIGHTS);
    let gen = real
        .with_weights(&gen_weights)
        .expect("standard weights are valid");
    StandardInstance { real, gen }
}
