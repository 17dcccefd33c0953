//! Corpus-level evaluation of perceptual similarity.
//!
//! Perceptual difference (PD) between two images is the normalized Hamming
//! distance of their digests under a chosen metric algorithm, and perceptual
//! similarity is `(1 - PD) * 100`. Tables aggregate mean and max similarity
//! per labelled pair set and metric; histograms bin the raw scores.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::imaging::{apply_transform, resize_box, to_luminance, ImageBuffer, ImagingError, TransformSpec};
use crate::phash::{hamming, Algorithm, MatchPolicy};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("score {0} outside [0, 100]")]
    InvalidScore(f64),
    #[error("bin count must be at least 1")]
    ZeroBins,
    #[error("semantic threshold {0} outside (0, 1)")]
    InvalidEpsilon(f64),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityScore {
    pub metric: Algorithm,
    /// Differing bits.
    pub raw_distance: u32,
    /// Perceptual difference in `[0, 1]`.
    pub pd: f64,
    /// `(1 - pd) * 100`.
    pub similarity_percent: f64,
}

impl SimilarityScore {
    fn from_raw(metric: Algorithm, raw: u32) -> Self {
        let pd = f64::from(raw) / metric.bits() as f64;
        Self {
            metric,
            raw_distance: raw,
            pd,
            similarity_percent: (1.0 - pd) * 100.0,
        }
    }
}

pub fn perceptual_similarity(a: &ImageBuffer, b: &ImageBuffer, metric: Algorithm) -> SimilarityScore {
    let d = hamming(&metric.hash(a), &metric.hash(b)).expect("same metric on both sides");
    SimilarityScore::from_raw(metric, d.raw)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub mean: f64,
    pub max: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub label: String,
    /// One cell per metric, in table metric order.
    pub cells: Vec<Cell>,
    /// Mean of the row's per-metric means.
    pub average_mean: f64,
    /// Mean of the row's per-metric maxima.
    pub average_max: f64,
}

/// Mean/max similarity per label and metric. Rows are sorted by label.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityTable {
    pub metrics: Vec<Algorithm>,
    pub rows: Vec<TableRow>,
    scores: Vec<(String, Vec<SimilarityScore>)>,
}

impl SimilarityTable {
    /// All scores for `metric`, in input pair order.
    pub fn scores(&self, metric: Algorithm) -> Vec<f64> {
        let Some(col) = self.metrics.iter().position(|&m| m == metric) else {
            return Vec::new();
        };
        self.scores.iter().map(|(_, s)| s[col].similarity_percent).collect()
    }

    /// Scores for one label and metric, in input pair order.
    pub fn label_scores(&self, label: &str, metric: Algorithm) -> Vec<f64> {
        let Some(col) = self.metrics.iter().position(|&m| m == metric) else {
            return Vec::new();
        };
        self.scores
            .iter()
            .filter(|(l, _)| l == label)
            .map(|(_, s)| s[col].similarity_percent)
            .collect()
    }
}

/// Scores every pair under every metric and aggregates per label.
///
/// Pairs are hashed in parallel; aggregation works on integer distance sums
/// so the table does not depend on pair order.
pub fn evaluate_pairs(
    pairs: &[(String, ImageBuffer, ImageBuffer)],
    metrics: &[Algorithm],
) -> Result<SimilarityTable, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput("no pairs"));
    }
    if metrics.is_empty() {
        return Err(EvalError::EmptyInput("no metrics"));
    }
    let scores: Vec<(String, Vec<SimilarityScore>)> = pairs
        .par_iter()
        .map(|(label, a, b)| {
            let s = metrics.iter().map(|&m| perceptual_similarity(a, b, m)).collect();
            (label.clone(), s)
        })
        .collect();

    // label -> per metric (sum of raw distances, min raw distance, count)
    let mut agg: BTreeMap<&str, Vec<(u64, u32, usize)>> = BTreeMap::new();
    for (label, row) in &scores {
        let entry = agg
            .entry(label.as_str())
            .or_insert_with(|| vec![(0, u32::MAX, 0); metrics.len()]);
        for (slot, s) in entry.iter_mut().zip(row) {
            slot.0 += u64::from(s.raw_distance);
            slot.1 = slot.1.min(s.raw_distance);
            slot.2 += 1;
        }
    }
    let rows = agg
        .into_iter()
        .map(|(label, per_metric)| {
            let cells: Vec<Cell> = per_metric
                .iter()
                .zip(metrics)
                .map(|(&(sum, min, count), m)| {
                    let bits = m.bits() as f64;
                    Cell {
                        mean: (1.0 - sum as f64 / (count as f64 * bits)) * 100.0,
                        max: SimilarityScore::from_raw(*m, min).similarity_percent,
                        count,
                    }
                })
                .collect();
            let n = cells.len() as f64;
            TableRow {
                label: label.to_owned(),
                average_mean: cells.iter().map(|c| c.mean).sum::<f64>() / n,
                average_max: cells.iter().map(|c| c.max).sum::<f64>() / n,
                cells,
            }
        })
        .collect();
    Ok(SimilarityTable {
        metrics: metrics.to_vec(),
        rows,
        scores,
    })
}

/// Uniform bins over `[0, 100]`; every bin is `[lo, hi)` except the last, which is closed.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn bin_count(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

pub fn histogram(scores: &[f64], bins: usize) -> Result<Histogram, EvalError> {
    if bins == 0 {
        return Err(EvalError::ZeroBins);
    }
    let mut counts = vec![0; bins];
    for &s in scores {
        if !(0.0..=100.0).contains(&s) {
            return Err(EvalError::InvalidScore(s));
        }
        let bin = ((s * bins as f64 / 100.0).floor() as usize).min(bins - 1);
        counts[bin] += 1;
    }
    let edges = (0..=bins).map(|i| 100.0 * i as f64 / bins as f64).collect();
    Ok(Histogram { edges, counts })
}

/// Summary of one transform's effect on the hash, as normalized distances.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformStats {
    pub transform: TransformSpec,
    pub count: usize,
    pub min: f64,
    pub median: f64,
    pub mean: f64,
    pub max: f64,
}

fn summarize(transform: TransformSpec, mut values: Vec<f64>) -> TransformStats {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let median = if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    };
    TransformStats {
        transform,
        count: n,
        min: values[0],
        median,
        mean: values.iter().sum::<f64>() / n as f64,
        max: values[n - 1],
    }
}

/// `δ(H(x), H(t(x)))` statistics for every transform over the corpus.
pub fn robustness_report(
    corpus: &[ImageBuffer],
    transforms: &[TransformSpec],
    algorithm: Algorithm,
) -> Result<Vec<TransformStats>, EvalError> {
    if corpus.is_empty() {
        return Err(EvalError::EmptyInput("empty corpus"));
    }
    let originals: Vec<_> = corpus.par_iter().map(|img| algorithm.hash(img)).collect();
    transforms
        .iter()
        .map(|t| {
            let distances = corpus
                .par_iter()
                .zip(&originals)
                .map(|(img, h)| {
                    let edited = algorithm.hash(&apply_transform(img, t)?);
                    Ok(hamming(h, &edited).expect("same algorithm").normalized())
                })
                .collect::<Result<Vec<f64>, EvalError>>()?;
            Ok(summarize(*t, distances))
        })
        .collect()
}

/// Stand-in semantic distance: mean absolute luma difference at 64x64, over 255.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemanticDistanceConfig {
    pub epsilon: f64,
}

impl Default for SemanticDistanceConfig {
    fn default() -> Self {
        Self { epsilon: 0.25 }
    }
}

const SEMANTIC_SIDE: usize = 64;

fn semantic_view(img: &ImageBuffer) -> ImageBuffer {
    resize_box(&to_luminance(img), SEMANTIC_SIDE, SEMANTIC_SIDE).expect("valid target size")
}

fn l1_views(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    let total: u64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| u64::from(x.abs_diff(y)))
        .sum();
    total as f64 / (a.data().len() as f64 * 255.0)
}

/// Normalized L1 distance in `[0, 1]`.
pub fn semantic_distance(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    l1_views(&semantic_view(a), &semantic_view(b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistinctnessReport {
    /// Unordered pairs with semantic distance above epsilon.
    pub qualifying_pairs: usize,
    /// Qualifying pairs whose hashes match under the policy.
    pub collisions: usize,
    /// `collisions / qualifying_pairs`, or 0 when nothing qualifies.
    pub rate: f64,
}

/// Collision rate over semantically distinct pairs of the corpus.
pub fn distinctness_report(
    corpus: &[ImageBuffer],
    algorithm: Algorithm,
    policy: &MatchPolicy,
    semantic: &SemanticDistanceConfig,
) -> Result<DistinctnessReport, EvalError> {
    if corpus.len() < 2 {
        return Err(EvalError::EmptyInput("need at least two images"));
    }
    if !(semantic.epsilon > 0.0 && semantic.epsilon < 1.0) {
        return Err(EvalError::InvalidEpsilon(semantic.epsilon));
    }
    let prepared: Vec<_> = corpus
        .par_iter()
        .map(|img| (algorithm.hash(img), semantic_view(img)))
        .collect();
    let threshold = policy.threshold(algorithm);
    let (mut qualifying, mut collisions) = (0, 0);
    for i in 0..prepared.len() {
        for j in i + 1..prepared.len() {
            if l1_views(&prepared[i].1, &prepared[j].1) <= semantic.epsilon {
                continue;
            }
            qualifying += 1;
            let d = hamming(&prepared[i].0, &prepared[j].0).expect("same algorithm");
            if threshold.admits(&d) {
                collisions += 1;
            }
        }
    }
    Ok(DistinctnessReport {
        qualifying_pairs: qualifying,
        collisions,
        rate: if qualifying == 0 {
            0.0
        } else {
            collisions as f64 / qualifying as f64
        },
    })
}

/// Two decimals, ties rounded up.
fn pct(v: f64) -> String {
    let cents = (v * 100.0).round() as i64;
    format!("{}.{:02}", cents / 100, cents % 100)
}

/// `label,<metric>_mean,<metric>_max,...,avg_mean,avg_max`
pub fn table_to_csv(table: &SimilarityTable) -> Result<Vec<u8>, EvalError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["label".to_owned()];
    for m in &table.metrics {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_max"));
    }
    header.push("avg_mean".into());
    header.push("avg_max".into());
    w.write_record(&header)?;
    for row in &table.rows {
        let mut rec = vec![row.label.clone()];
        for c in &row.cells {
            rec.push(pct(c.mean));
            rec.push(pct(c.max));
        }
        rec.push(pct(row.average_mean));
        rec.push(pct(row.average_max));
        w.write_record(&rec)?;
    }
    Ok(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?)
}

/// `bin_start,bin_end,count`
pub fn histogram_to_csv(hist: &Histogram) -> Result<Vec<u8>, EvalError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["bin_start", "bin_end", "count"])?;
    for (i, count) in hist.counts.iter().enumerate() {
        w.write_record([pct(hist.edges[i]), pct(hist.edges[i + 1]), count.to_string()])?;
    }
    Ok(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?)
}

/// One `label,pathA,pathB` entry of a pair manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub label: String,
    pub a: PathBuf,
    pub b: PathBuf,
}

/// Parses a pair manifest. Relative paths resolve against `base`; blank
/// lines and `#` comments are skipped.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>, EvalError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if rec.len() != 3 {
            return Err(EvalError::Manifest {
                line,
                reason: format!("expected 3 fields, found {}", rec.len()),
            });
        }
        out.push(ManifestEntry {
            label: rec[0].to_owned(),
            a: base.join(&rec[1]),
            b: base.join(&rec[2]),
        });
    }
    Ok(out)
}
