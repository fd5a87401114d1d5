use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use fidlens::feature_io::{self, FeatureFile, FeatureKind, STATS_MAGIC};
use fidlens::resampling::ClassProbabilities;
use fidlens::{compute_stats, FeatureMatrix, GaussianStats};

/// Statistics from either a stats file or a feature file, plus the kind tag
/// when it came from a feature file.
pub struct StatsInput {
    pub stats: GaussianStats,
    pub kind: Option<FeatureKind>,
}

pub fn is_stats_file(path: &Path) -> Result<bool> {
    let mut magic = [0u8; 4];
    let mut f = fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    use std::io::Read;
    Ok(f.read_exact(&mut magic).is_ok() && magic == STATS_MAGIC)
}

pub fn load_stats(path: &Path) -> Result<StatsInput> {
    if is_stats_file(path)? {
        let stats =
            feature_io::read_stats(path).with_context(|| format!("reading {}", path.display()))?;
        return Ok(StatsInput { stats, kind: None });
    }
    let file = load_features(path)?;
    let stats = compute_stats(&file.features)
        .with_context(|| format!("statistics of {}", path.display()))?;
    Ok(StatsInput {
        stats,
        kind: Some(file.kind),
    })
}

pub fn load_features(path: &Path) -> Result<FeatureFile> {
    feature_io::read_feature_file(path).with_context(|| format!("reading {}", path.display()))
}

pub fn probabilities<'a>(file: &'a FeatureFile, path: &Path) -> Result<&'a ClassProbabilities> {
    match &file.probabilities {
        Some(p) => Ok(p),
        None => bail!("{} has no class probabilities block", path.display()),
    }
}

pub fn write_indices(path: &Path, indices: &[usize]) -> Result<()> {
    let mut text = String::with_capacity(indices.len() * 7);
    for i in indices {
        text.push_str(&i.to_string());
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn select(file: &FeatureFile, indices: &[usize]) -> Result<FeatureMatrix> {
    Ok(file.features.select_rows(indices)?)
}
