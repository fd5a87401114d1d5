//! The `FIDL` feature-file container and the `FIDS` statistics file.
//!
//! Layout of a feature file (all integers little-endian):
//!
//! ```text
//! [0..4)   magic "FIDL"
//! [4..8)   version u32 = 1
//! [8..16)  kind u64 (0 pre-logits, 1 logits, 2 probabilities, 3 binarized, 4 generic)
//! [16..24) n      [24..32) d      [32..40) C (0 if absent)
//! [40..48) k      [48..56) s      (k = s = 0 if absent)
//! [56..64) flags  (bit0 probabilities, bit1 activations, bit2 image ids)
//! ```
//!
//! The features block follows the header, then each flagged block in bit
//! order. Every block starts with its u64 byte length. Numeric blocks hold
//! f32 values in row-major order; activations are `n` consecutive
//! `k × s × s` chunks so they can be streamed one image at a time. The ids
//! block is a sequence of u64 length-prefixed UTF-8 strings.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::resampling::ClassProbabilities;
use crate::sensitivity::{ActivationTensor, POOLING_TOLERANCE};
use crate::stats::{FeatureMatrix, GaussianStats};

pub const MAGIC: [u8; 4] = *b"FIDL";
pub const STATS_MAGIC: [u8; 4] = *b"FIDS";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 64;

pub const FLAG_PROBABILITIES: u64 = 1;
pub const FLAG_ACTIVATIONS: u64 = 1 << 1;
pub const FLAG_IDS: u64 = 1 << 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    PreLogits,
    Logits,
    Probabilities,
    Binarized,
    Generic,
}

impl FeatureKind {
    pub fn code(self) -> u64 {
        match self {
            FeatureKind::PreLogits => 0,
            FeatureKind::Logits => 1,
            FeatureKind::Probabilities => 2,
            FeatureKind::Binarized => 3,
            FeatureKind::Generic => 4,
        }
    }

    pub fn from_code(code: u64) -> Option<Self> {
        Some(match code {
            0 => FeatureKind::PreLogits,
            1 => FeatureKind::Logits,
            2 => FeatureKind::Probabilities,
            3 => FeatureKind::Binarized,
            4 => FeatureKind::Generic,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::PreLogits => "pre-logits",
            FeatureKind::Logits => "logits",
            FeatureKind::Probabilities => "probabilities",
            FeatureKind::Binarized => "binarized",
            FeatureKind::Generic => "generic",
        }
    }
}

impl std::fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            FeatureKind::PreLogits,
            FeatureKind::Logits,
            FeatureKind::Probabilities,
            FeatureKind::Binarized,
            FeatureKind::Generic,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| Error::InvalidData(format!("unknown feature kind '{s}'")))
    }
}

/// Decoded fixed-size header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub kind: FeatureKind,
    pub n: u64,
    pub d: u64,
    pub classes: u64,
    pub channels: u64,
    pub spatial: u64,
    pub flags: u64,
}

impl Header {
    pub fn has(&self, flag: u64) -> bool {
        self.flags & flag != 0
    }

    fn to_bytes(self) -> [u8; HEADER_LEN as usize] {
        let mut out = [0u8; HEADER_LEN as usize];
        out[0..4].copy_from_slice(&MAGIC);
        out[4..8].copy_from_slice(&VERSION.to_le_bytes());
        let fields = [
            self.kind.code(),
            self.n,
            self.d,
            self.classes,
            self.channels,
            self.spatial,
            self.flags,
        ];
        for (i, v) in fields.iter().enumerate() {
            out[8 + 8 * i..16 + 8 * i].copy_from_slice(&v.to_le_bytes());
        }
        out
    }

    fn parse(bytes: &[u8; HEADER_LEN as usize]) -> Result<Self> {
        if bytes[0..4] != MAGIC {
            return Err(format_err(0, format!("bad magic {:?}", &bytes[0..4])));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(format_err(4, format!("unsupported version {version}")));
        }
        let field = |i: usize| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap());
        let kind = FeatureKind::from_code(field(0))
            .ok_or_else(|| format_err(8, format!("unknown kind {}", field(0))))?;
        let header = Header {
            kind,
            n: field(1),
            d: field(2),
            classes: field(3),
            channels: field(4),
            spatial: field(5),
            flags: field(6),
        };
        if header.flags & !(FLAG_PROBABILITIES | FLAG_ACTIVATIONS | FLAG_IDS) != 0 {
            return Err(format_err(
                56,
                format!("unknown flag bits {:#x}", header.flags),
            ));
        }
        if header.d == 0 {
            return Err(format_err(24, "feature dimension is zero".into()));
        }
        if header.has(FLAG_PROBABILITIES) != (header.classes > 0) {
            return Err(format_err(
                32,
                "class count disagrees with the probabilities flag".into(),
            ));
        }
        let has_shape = header.channels > 0 && header.spatial > 0;
        let no_shape = header.channels == 0 && header.spatial == 0;
        if (header.has(FLAG_ACTIVATIONS) && !has_shape)
            || (!header.has(FLAG_ACTIVATIONS) && !no_shape)
        {
            return Err(format_err(
                40,
                "activation shape disagrees with the activations flag".into(),
            ));
        }
        Ok(header)
    }

    fn activation_values(&self) -> u64 {
        self.channels * self.spatial * self.spatial
    }
}

fn format_err(offset: u64, message: String) -> Error {
    Error::Format { offset, message }
}

fn validation(block: &'static str, message: impl Into<String>) -> Error {
    Error::Validation {
        block,
        message: message.into(),
    }
}

/// In-memory contents of a feature file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub kind: FeatureKind,
    pub features: FeatureMatrix,
    pub probabilities: Option<ClassProbabilities>,
    pub activations: Option<Vec<ActivationTensor>>,
    pub image_ids: Option<Vec<String>>,
}

impl FeatureFile {
    pub fn new(kind: FeatureKind, features: FeatureMatrix) -> Self {
        Self {
            kind,
            features,
            probabilities: None,
            activations: None,
            image_ids: None,
        }
    }

    pub fn count(&self) -> usize {
        self.features.count()
    }

    pub fn header(&self) -> Header {
        let (channels, spatial) = match &self.activations {
            Some(a) => a
                .first()
                .map_or((0, 0), |t| (t.channels() as u64, t.size() as u64)),
            None => (0, 0),
        };
        let mut flags = 0;
        if self.probabilities.is_some() {
            flags |= FLAG_PROBABILITIES;
        }
        if self.activations.is_some() {
            flags |= FLAG_ACTIVATIONS;
        }
        if self.image_ids.is_some() {
            flags |= FLAG_IDS;
        }
        Header {
            kind: self.kind,
            n: self.count() as u64,
            d: self.features.dim() as u64,
            classes: self
                .probabilities
                .as_ref()
                .map_or(0, |p| p.classes() as u64),
            channels,
            spatial,
            flags,
        }
    }

    /// Checks every container invariant.
    pub fn validate(&self) -> Result<()> {
        let n = self.count();
        if let Some(p) = &self.probabilities {
            if p.count() != n {
                return Err(validation(
                    "probabilities",
                    format!("count mismatch: {} rows for n = {n}", p.count()),
                ));
            }
        }
        if let Some(acts) = &self.activations {
            if acts.len() != n {
                return Err(validation(
                    "activations",
                    format!("count mismatch: {} tensors for n = {n}", acts.len()),
                ));
            }
            if n == 0 {
                return Err(validation(
                    "activations",
                    "activation shape is undefined without images",
                ));
            }
            let (k, s) = (acts[0].channels(), acts[0].size());
            if let Some(i) = acts.iter().position(|a| a.channels() != k || a.size() != s) {
                return Err(validation(
                    "activations",
                    format!("tensor {i} has a different shape"),
                ));
            }
            if self.kind == FeatureKind::PreLogits {
                let report = validate_activation_consistency(self)?;
                if let Some(bad) = report.worst() {
                    return Err(validation(
                        "activations",
                        format!(
                            "image {} channel {} deviates from its pooled feature by {:e}",
                            bad.index, bad.channel, bad.deviation
                        ),
                    ));
                }
            }
        }
        if let Some(ids) = &self.image_ids {
            if ids.len() != n {
                return Err(validation(
                    "ids",
                    format!("count mismatch: {} ids for n = {n}", ids.len()),
                ));
            }
        }
        Ok(())
    }

    /// Serialized bytes; values are rounded to f32.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let header = self.header();
        let mut out = Vec::new();
        out.extend_from_slice(&header.to_bytes());
        push_matrix(&mut out, self.features.values(), "features")?;
        if let Some(p) = &self.probabilities {
            push_matrix(&mut out, p.values(), "probabilities")?;
        }
        if let Some(acts) = &self.activations {
            let len = header.n * header.activation_values() * 4;
            out.extend_from_slice(&len.to_le_bytes());
            for a in acts {
                push_f32s(&mut out, a.values().iter().copied(), "activations")?;
            }
        }
        if let Some(ids) = &self.image_ids {
            let len: u64 = ids.iter().map(|s| 8 + s.len() as u64).sum();
            out.extend_from_slice(&len.to_le_bytes());
            for id in ids {
                out.extend_from_slice(&(id.len() as u64).to_le_bytes());
                out.extend_from_slice(id.as_bytes());
            }
        }
        Ok(out)
    }
}

fn push_f32s(
    out: &mut Vec<u8>,
    values: impl Iterator<Item = f64>,
    block: &'static str,
) -> Result<()> {
    for v in values {
        let x = v as f32;
        if !x.is_finite() {
            return Err(validation(
                block,
                format!("value {v} is not representable as f32"),
            ));
        }
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(())
}

fn push_matrix(out: &mut Vec<u8>, m: &DMatrix<f64>, block: &'static str) -> Result<()> {
    let len = (m.nrows() * m.ncols() * 4) as u64;
    out.extend_from_slice(&len.to_le_bytes());
    push_f32s(out, m.transpose().iter().copied(), block)
}

pub fn write_feature_file(path: impl AsRef<Path>, file: &FeatureFile) -> Result<()> {
    let bytes = file.to_bytes()?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// Offset-tracking reader over a seekable source of known length.
struct Source<R> {
    inner: R,
    offset: u64,
    len: u64,
}

impl<R: Read + Seek> Source<R> {
    fn new(mut inner: R) -> Result<Self> {
        let len = inner.seek(SeekFrom::End(0))?;
        inner.seek(SeekFrom::Start(0))?;
        Ok(Self {
            inner,
            offset: 0,
            len,
        })
    }

    fn bytes(&mut self, count: u64, what: &str) -> Result<Vec<u8>> {
        if self.len - self.offset < count {
            return Err(format_err(
                self.offset,
                format!(
                    "truncated {what}: need {count} bytes, {} remain",
                    self.len - self.offset
                ),
            ));
        }
        let mut buf = vec![0u8; count as usize];
        self.inner.read_exact(&mut buf)?;
        self.offset += count;
        Ok(buf)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.bytes(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f32s(&mut self, count: u64, what: &str) -> Result<Vec<f64>> {
        let b = self.bytes(count * 4, what)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    fn skip(&mut self, count: u64, what: &str) -> Result<()> {
        if self.len - self.offset < count {
            return Err(format_err(self.offset, format!("truncated {what}")));
        }
        self.offset += count;
        self.inner.seek(SeekFrom::Start(self.offset))?;
        Ok(())
    }

    fn block_len(&mut self, expected: u64, what: &str) -> Result<u64> {
        let at = self.offset;
        let len = self.u64(what)?;
        if len != expected {
            return Err(format_err(
                at,
                format!("{what} block length {len} does not match the declared {expected}"),
            ));
        }
        Ok(len)
    }
}

/// Streaming reader: header, features, probabilities and ids are loaded on
/// open; activations are read one image at a time.
pub struct FeatureFileReader<R> {
    source: Source<R>,
    header: Header,
    features: FeatureMatrix,
    probabilities: Option<ClassProbabilities>,
    image_ids: Option<Vec<String>>,
    activations_start: u64,
    next_image: u64,
}

impl FeatureFileReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(BufReader::new(File::open(path)?))
    }
}

impl<R: Read + Seek> FeatureFileReader<R> {
    pub fn from_reader(reader: R) -> Result<Self> {
        let mut source = Source::new(reader)?;
        let raw: [u8; HEADER_LEN as usize] =
            source.bytes(HEADER_LEN, "header")?.try_into().unwrap();
        let header = Header::parse(&raw)?;
        let mul = |a: u64, b: u64, at: u64| {
            a.checked_mul(b)
                .ok_or_else(|| format_err(at, "declared sizes overflow".into()))
        };

        let feat_count = mul(header.n, header.d, 16)?;
        source.block_len(mul(feat_count, 4, 16)?, "features")?;
        let values = source.f32s(feat_count, "features")?;
        let features = FeatureMatrix::from_row_slice(header.n as usize, header.d as usize, &values)
            .map_err(|e| validation("features", e.to_string()))?;

        let probabilities = if header.has(FLAG_PROBABILITIES) {
            let count = mul(header.n, header.classes, 32)?;
            source.block_len(mul(count, 4, 32)?, "probabilities")?;
            let values = source.f32s(count, "probabilities")?;
            let m = DMatrix::from_row_slice(header.n as usize, header.classes as usize, &values);
            Some(
                ClassProbabilities::new(m)
                    .map_err(|e| validation("probabilities", e.to_string()))?,
            )
        } else {
            None
        };

        let mut activations_start = source.offset;
        if header.has(FLAG_ACTIVATIONS) {
            let per_image = mul(header.activation_values(), 4, 40)?;
            let len = source.block_len(mul(per_image, header.n, 40)?, "activations")?;
            activations_start = source.offset;
            source.skip(len, "activations")?;
        }

        let image_ids = if header.has(FLAG_IDS) {
            let len = source.u64("ids length")?;
            let end = source.offset.checked_add(len).filter(|e| *e <= source.len);
            let Some(end) = end else {
                return Err(format_err(
                    source.offset - 8,
                    format!("ids block length {len} exceeds the file"),
                ));
            };
            let mut ids = Vec::with_capacity(header.n as usize);
            for _ in 0..header.n {
                let at = source.offset;
                let l = source.u64("id length")?;
                if source.offset + l > end {
                    return Err(format_err(at, "id overruns the ids block".into()));
                }
                let b = source.bytes(l, "id")?;
                ids.push(
                    String::from_utf8(b)
                        .map_err(|_| validation("ids", format!("id at byte {at} is not UTF-8")))?,
                );
            }
            if source.offset != end {
                return Err(format_err(
                    source.offset,
                    "ids block length disagrees with its contents".into(),
                ));
            }
            Some(ids)
        } else {
            None
        };

        if source.offset != source.len {
            return Err(format_err(
                source.offset,
                format!("{} trailing bytes", source.len - source.offset),
            ));
        }
        source.inner.seek(SeekFrom::Start(activations_start))?;
        source.offset = activations_start;
        Ok(Self {
            source,
            header,
            features,
            probabilities,
            image_ids,
            activations_start,
            next_image: 0,
        })
    }

    pub fn header(&self) -> &Header {
        &self.header
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn probabilities(&self) -> Option<&ClassProbabilities> {
        self.probabilities.as_ref()
    }

    pub fn image_ids(&self) -> Option<&[String]> {
        self.image_ids.as_deref()
    }

    /// Next activation tensor, or `None` once every image has been read or
    /// the file has no activations.
    pub fn next_activation(&mut self) -> Result<Option<ActivationTensor>> {
        if !self.header.has(FLAG_ACTIVATIONS) || self.next_image == self.header.n {
            return Ok(None);
        }
        let values = self
            .source
            .f32s(self.header.activation_values(), "activations")?;
        self.next_image += 1;
        ActivationTensor::new(
            self.header.channels as usize,
            self.header.spatial as usize,
            values,
        )
        .map(Some)
        .map_err(|e| validation("activations", e.to_string()))
    }

    /// Restarts activation streaming from the first image.
    pub fn rewind_activations(&mut self) -> Result<()> {
        self.source
            .inner
            .seek(SeekFrom::Start(self.activations_start))?;
        self.source.offset = self.activations_start;
        self.next_image = 0;
        Ok(())
    }

    pub fn into_feature_file(mut self) -> Result<FeatureFile> {
        self.rewind_activations()?;
        let activations = if self.header.has(FLAG_ACTIVATIONS) {
            let mut acts = Vec::with_capacity(self.header.n as usize);
            while let Some(a) = self.next_activation()? {
                acts.push(a);
            }
            Some(acts)
        } else {
            None
        };
        let file = FeatureFile {
            kind: self.header.kind,
            features: self.features,
            probabilities: self.probabilities,
            activations,
            image_ids: self.image_ids,
        };
        file.validate()?;
        Ok(file)
    }
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureFile> {
    FeatureFileReader::open(path)?.into_feature_file()
}

pub fn feature_file_from_bytes(bytes: &[u8]) -> Result<FeatureFile> {
    FeatureFileReader::from_reader(std::io::Cursor::new(bytes))?.into_feature_file()
}

/// Worst pooling deviation for one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageDeviation {
    pub index: usize,
    pub channel: usize,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    pub images: Vec<ImageDeviation>,
    pub tolerance: f64,
}

impl ConsistencyReport {
    pub fn flagged(&self) -> Vec<ImageDeviation> {
        self.images
            .iter()
            .filter(|i| i.deviation > self.tolerance)
            .copied()
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.images.iter().all(|i| i.deviation <= self.tolerance)
    }

    /// The image with the largest deviation above tolerance, if any.
    pub fn worst(&self) -> Option<ImageDeviation> {
        self.flagged()
            .into_iter()
            .max_by(|a, b| a.deviation.total_cmp(&b.deviation))
    }
}

/// Compares each image's channel spatial means with its feature row.
pub fn validate_activation_consistency(file: &FeatureFile) -> Result<ConsistencyReport> {
    let acts = file
        .activations
        .as_ref()
        .ok_or_else(|| Error::Precondition("no activations block".into()))?;
    if acts.len() != file.count() {
        return Err(validation("activations", "count mismatch"));
    }
    let mut images = Vec::with_capacity(acts.len());
    for (i, a) in acts.iter().enumerate() {
        let row: Vec<f64> = file.features.row(i).iter().copied().collect();
        let (deviation, channel) = a.pooling_deviation(&row)?;
        images.push(ImageDeviation {
            index: i,
            channel,
            deviation,
        });
    }
    Ok(ConsistencyReport {
        images,
        tolerance: POOLING_TOLERANCE,
    })
}

/// Generic feature file holding `grids.len()` consecutive `height × width`
/// grids as rows of a `(count·height) × width` matrix.
pub fn grids_to_feature_file(
    grids: &[Vec<f64>],
    height: usize,
    width: usize,
    ids: Option<Vec<String>>,
) -> Result<FeatureFile> {
    if let Some(i) = grids.iter().position(|g| g.len() != height * width) {
        return Err(Error::DimensionMismatch(format!(
            "grid {i} is not {height}x{width}"
        )));
    }
    let flat: Vec<f64> = grids.iter().flatten().copied().collect();
    let mut file = FeatureFile::new(
        FeatureKind::Generic,
        FeatureMatrix::from_row_slice(grids.len() * height, width, &flat)?,
    );
    file.image_ids = ids.filter(|v| v.len() == grids.len() * height);
    Ok(file)
}

/// `FIDS` layout: magic, version u32, count u64, d u64, then the mean and
/// the row-major covariance as f64.
pub fn stats_to_bytes(stats: &GaussianStats) -> Vec<u8> {
    let d = stats.dim();
    let mut out = Vec::with_capacity(24 + 8 * (d + d * d));
    out.extend_from_slice(&STATS_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(stats.count as u64).to_le_bytes());
    out.extend_from_slice(&(d as u64).to_le_bytes());
    for v in stats.mean.iter().chain(stats.cov.transpose().iter()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn stats_from_bytes(bytes: &[u8]) -> Result<GaussianStats> {
    if bytes.len() < 24 {
        return Err(format_err(
            bytes.len() as u64,
            "truncated stats header".into(),
        ));
    }
    if bytes[0..4] != STATS_MAGIC {
        return Err(format_err(0, "bad stats magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(format_err(
            4,
            format!("unsupported stats version {version}"),
        ));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let d = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let expected = d
        .checked_mul(d)
        .and_then(|dd| dd.checked_add(d))
        .and_then(|v| v.checked_mul(8))
        .and_then(|v| v.checked_add(24));
    if expected != Some(bytes.len() as u64) {
        return Err(format_err(
            16,
            format!("dimension {d} does not match the file size {}", bytes.len()),
        ));
    }
    let d = d as usize;
    let vals: Vec<f64> = bytes[24..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mean = DVector::from_column_slice(&vals[..d]);
    let cov = DMatrix::from_row_slice(d, d, &vals[d..]);
    GaussianStats::new(mean, cov, count).map_err(|e| validation("stats", e.to_string()))
}

pub fn write_stats(path: impl AsRef<Path>, stats: &GaussianStats) -> Result<()> {
    std::fs::write(path, stats_to_bytes(stats))?;
    Ok(())
}

pub fn read_stats(path: impl AsRef<Path>) -> Result<GaussianStats> {
    stats_from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> FeatureFile {
        let f = FeatureMatrix::from_rows(&[vec![1.0, 2.0], vec![-0.5, 0.25]]).unwrap();
        FeatureFile::new(FeatureKind::Logits, f)
    }

    #[test]
    fn header_layout() {
        let bytes = small().to_bytes().unwrap();
        assert_eq!(&bytes[0..4], b"FIDL");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[64..72].try_into().unwrap()), 16);
        assert_eq!(bytes.len(), 64 + 8 + 16);
        assert_eq!(f32::from_le_bytes(bytes[76..80].try_into().unwrap()), 2.0);
    }

    #[test]
    fn roundtrip_in_memory() {
        let mut file = small();
        file.image_ids = Some(vec!["a.png".into(), "ß/b.png".into()]);
        let back = feature_file_from_bytes(&file.to_bytes().unwrap()).unwrap();
        assert_eq!(back, file);
    }

    #[test]
    fn truncation_is_reported_with_offset() {
        let bytes = small().to_bytes().unwrap();
        for cut in [0, 3, 63, 70, bytes.len() - 1] {
            match feature_file_from_bytes(&bytes[..cut]) {
                Err(Error::Format { offset, .. }) => assert!(offset <= cut as u64),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn header_errors() {
        let good = small().to_bytes().unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(
            feature_file_from_bytes(&bad),
            Err(Error::Format { offset: 0, .. })
        ));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(
            feature_file_from_bytes(&bad),
            Err(Error::Format { offset: 4, .. })
        ));
        let mut bad = good.clone();
        bad[8] = 9;
        assert!(matches!(
            feature_file_from_bytes(&bad),
            Err(Error::Format { offset: 8, .. })
        ));
        let mut bad = good.clone();
        bad.push(0);
        assert!(matches!(
            feature_file_from_bytes(&bad),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn stats_roundtrip() {
        let s = GaussianStats::new(
            DVector::from_vec(vec![0.1, -3.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
            17,
        )
        .unwrap();
        let back = stats_from_bytes(&stats_to_bytes(&s)).unwrap();
        assert_eq!(back, s);
        assert!(matches!(
            stats_from_bytes(&stats_to_bytes(&s)[..40]),
            Err(Error::Format { .. })
        ));
    }
}
