//! Long-tailed dataset construction, procedural synthetic sources, class-aware
//! samplers, and the `LTDS1` on-disk format.
//!
//! The exponential profile follows the usual long-tailed benchmark recipe: class `i`
//! keeps `round(N_max * r^(-i / (|Y|-1)))` samples, so class 0 is the head and the
//! head/tail ratio recovers the requested imbalance factor.

use std::io::{Read, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::Image;

const LTDS_MAGIC: &[u8; 5] = b"LTDS1";

// Stream tags keep every consumer of a dataset seed on an independent ChaCha stream.
const STREAM_SUBSAMPLE_BASE: u64 = 0x5342_0000;
const STREAM_PATTERN_BASE: u64 = 0x5054_0000;
const STREAM_NOISE_TRAIN: u64 = 0x4e54_0001;
const STREAM_NOISE_VAL: u64 = 0x4e56_0002;

/// Independent substream of the master seed; used so that (say) sampler draws and
/// model init cannot perturb each other's sequences.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

// ── Class census ──────────────────────────────────────────────────────────

/// Per-class sample counts. Invariant: non-empty and every count >= 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCensus {
    counts: Vec<usize>,
}

impl ClassCensus {
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::EmptyInput("census must cover at least one class".into()));
        }
        if let Some(class) = counts.iter().position(|&c| c == 0) {
            return Err(Error::EmptyClass { class });
        }
        Ok(Self { counts })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, class: usize) -> usize {
        self.counts[class]
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Head count over tail count.
    pub fn imbalance_factor(&self) -> f64 {
        let max = *self.counts.iter().max().expect("census is non-empty");
        let min = *self.counts.iter().min().expect("census is non-empty");
        max as f64 / min as f64
    }
}

// ── Dataset ───────────────────────────────────────────────────────────────

/// A labeled image set with uniform shape. `class_counts` may contain zeros
/// (validation splits are allowed to miss classes); call [`Dataset::census`] where a
/// strictly positive census is required.
#[derive(Debug, Clone)]
pub struct Dataset {
    width: usize,
    height: usize,
    channels: usize,
    num_classes: usize,
    images: Vec<Image>,
    labels: Vec<usize>,
    class_counts: Vec<usize>,
    class_indices: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn from_parts(num_classes: usize, images: Vec<Image>, labels: Vec<usize>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidConfig("dataset needs at least one class".into()));
        }
        if images.is_empty() {
            return Err(Error::EmptyInput("dataset has no samples".into()));
        }
        if images.len() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        let (width, height, channels) = images[0].shape();
        for img in &images {
            if img.shape() != (width, height, channels) {
                return Err(Error::ShapeMismatch(format!(
                    "image shape {:?} differs from dataset shape {:?}",
                    img.shape(),
                    (width, height, channels)
                )));
            }
        }
        let mut class_counts = vec![0usize; num_classes];
        let mut class_indices = vec![Vec::new(); num_classes];
        for (idx, &label) in labels.iter().enumerate() {
            if label >= num_classes {
                return Err(Error::ClassOutOfRange { class: label, num_classes });
            }
            class_counts[label] += 1;
            class_indices[label].push(idx);
        }
        Ok(Self { width, height, channels, num_classes, images, labels, class_counts, class_indices })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn image(&self, idx: usize) -> &Image {
        &self.images[idx]
    }

    pub fn label(&self, idx: usize) -> usize {
        self.labels[idx]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Raw per-class counts; zeros allowed.
    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    /// Indices of samples with the given label, ascending.
    pub fn class_indices(&self, class: usize) -> &[usize] {
        &self.class_indices[class]
    }

    /// Validated census; errors if any class has no samples.
    pub fn census(&self) -> Result<ClassCensus> {
        ClassCensus::new(self.class_counts.clone())
    }

    // ── LTDS1 binary format ──────────────────────────────────────────────
    //
    // magic "LTDS1", then little-endian u32 header: count, width, height, channels,
    // num_classes; then `count` records of (u32 label, width*height*channels f32
    // pixels in [0,1]).

    pub fn to_bytes(&self) -> Vec<u8> {
        let pixel_len = self.width * self.height * self.channels;
        let mut out = Vec::with_capacity(5 + 20 + self.len() * (4 + pixel_len * 4));
        out.extend_from_slice(LTDS_MAGIC);
        for v in [self.len(), self.width, self.height, self.channels, self.num_classes] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for (img, &label) in self.images.iter().zip(&self.labels) {
            out.extend_from_slice(&(label as u32).to_le_bytes());
            for &p in img.pixels() {
                out.extend_from_slice(&p.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let mut magic = [0u8; 5];
        read_exact(&mut cursor, &mut magic, "magic")?;
        if &magic != LTDS_MAGIC {
            return Err(Error::InvalidFormat(format!(
                "bad magic {:?}, expected {:?}",
                magic, LTDS_MAGIC
            )));
        }
        let count = read_u32(&mut cursor, "count")? as usize;
        let width = read_u32(&mut cursor, "width")? as usize;
        let height = read_u32(&mut cursor, "height")? as usize;
        let channels = read_u32(&mut cursor, "channels")? as usize;
        let num_classes = read_u32(&mut cursor, "num_classes")? as usize;
        if width == 0 || height == 0 || channels == 0 || num_classes == 0 || count == 0 {
            return Err(Error::InvalidFormat(
                "count, dimensions, and num_classes must all be positive".into(),
            ));
        }
        let pixel_len = width * height * channels;
        let mut images = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for rec in 0..count {
            let label = read_u32(&mut cursor, "label")? as usize;
            let mut pixels = vec![0f32; pixel_len];
            for (i, p) in pixels.iter_mut().enumerate() {
                let mut buf = [0u8; 4];
                read_exact(&mut cursor, &mut buf, "pixel data")?;
                let v = f32::from_le_bytes(buf);
                if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidFormat(format!(
                        "record {rec} pixel {i} is {v}, expected a finite value in [0, 1]"
                    )));
                }
                *p = v;
            }
            images.push(Image::new(width, height, channels, pixels)?);
            labels.push(label);
        }
        if !cursor.is_empty() {
            return Err(Error::InvalidFormat(format!(
                "{} trailing bytes after the last record",
                cursor.len()
            )));
        }
        Dataset::from_parts(num_classes, images, labels)
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// SHA-256 of the serialized `LTDS1` bytes, hex-encoded. Identifies a dataset
    /// across runs (grid cells record it to prove they trained on the same data).
    pub fn sha256_hex(&self) -> String {
        let digest = Sha256::digest(self.to_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn read_exact(cursor: &mut &[u8], buf: &mut [u8], what: &str) -> Result<()> {
    if cursor.len() < buf.len() {
        return Err(Error::InvalidFormat(format!("truncated file while reading {what}")));
    }
    buf.copy_from_slice(&cursor[..buf.len()]);
    *cursor = &cursor[buf.len()..];
    Ok(())
}

fn read_u32(cursor: &mut &[u8], what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(cursor, &mut buf, what)?;
    Ok(u32::from_le_bytes(buf))
}

// ── Long-tailed subsampling ───────────────────────────────────────────────

/// Per-class target counts for an exponential long-tail profile:
/// `n_i = round(N_max * r^(-i / (|Y|-1)))`, round half up, clamped to >= 1.
pub fn longtail_counts(head_count: usize, num_classes: usize, imbalance_factor: f64) -> Result<Vec<usize>> {
    if head_count == 0 || num_classes == 0 {
        return Err(Error::InvalidConfig("head count and class count must be positive".into()));
    }
    if !imbalance_factor.is_finite() || imbalance_factor < 1.0 {
        return Err(Error::InvalidConfig(format!(
            "imbalance factor must be a finite value >= 1, got {imbalance_factor}"
        )));
    }
    if imbalance_factor > head_count as f64 {
        return Err(Error::ImbalanceTooLarge { imbalance_factor, head_count });
    }
    if num_classes == 1 {
        return Ok(vec![head_count]);
    }
    let denom = (num_classes - 1) as f64;
    let counts = (0..num_classes)
        .map(|i| {
            let raw = head_count as f64 * imbalance_factor.powf(-(i as f64) / denom);
            ((raw + 0.5).floor() as usize).max(1)
        })
        .collect();
    Ok(counts)
}

/// Subsample a balanced source into an exponentially imbalanced training set.
///
/// Class 0 keeps the most samples. Within each class a seeded uniform subsample
/// decides which members survive; the same seed always keeps the same members.
/// Output samples are grouped by class ascending, source order preserved within
/// a class, pixels untouched.
pub fn build_longtailed(source: &Dataset, imbalance_factor: f64, seed: u64) -> Result<Dataset> {
    let census = source.census()?;
    let per_class = census.count(0);
    for class in 0..census.num_classes() {
        if census.count(class) != per_class {
            return Err(Error::UnbalancedSource {
                class,
                count: census.count(class),
                expected: per_class,
            });
        }
    }
    let targets = longtail_counts(per_class, census.num_classes(), imbalance_factor)?;

    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (class, &keep) in targets.iter().enumerate() {
        let pool = source.class_indices(class);
        let mut rng = stream_rng(seed, STREAM_SUBSAMPLE_BASE + class as u64);
        let mut chosen = rand::seq::index::sample(&mut rng, pool.len(), keep).into_vec();
        chosen.sort_unstable();
        for pick in chosen {
            images.push(source.image(pool[pick]).clone());
            labels.push(class);
        }
    }
    Dataset::from_parts(source.num_classes(), images, labels)
}

// ── Synthetic source ──────────────────────────────────────────────────────

/// Procedural image source: each class is a distinct mean color plus an oriented
/// sinusoidal grating, corrupted by Gaussian noise with standard deviation
/// `0.25 / class_separation`. Large separation makes classes trivially
/// distinguishable (a nearest-centroid classifier on raw pixels is exact).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub class_separation: f64,
    pub seed: u64,
}

struct ClassPattern {
    mean: Vec<f64>,
    amplitude: Vec<f64>,
    fx: f64,
    fy: f64,
    phase: f64,
}

impl ClassPattern {
    fn draw(spec: &SyntheticSpec, class: usize) -> Self {
        let mut rng = stream_rng(spec.seed, STREAM_PATTERN_BASE + class as u64);
        let mean: Vec<f64> = (0..spec.channels).map(|_| rng.random_range(0.25..0.75)).collect();
        let amplitude: Vec<f64> = (0..spec.channels)
            .map(|_| {
                let a = rng.random_range(0.08..0.2);
                if rng.random::<bool>() {
                    a
                } else {
                    -a
                }
            })
            .collect();
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let freq = rng.random_range(0.8..2.4);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        Self { mean, amplitude, fx: freq * angle.cos(), fy: freq * angle.sin(), phase }
    }

    fn value(&self, x: usize, y: usize, c: usize) -> f64 {
        let wave = (self.fx * x as f64 + self.fy * y as f64 + self.phase).sin();
        self.mean[c] + self.amplitude[c] * wave
    }
}

fn generate_synthetic(spec: &SyntheticSpec, per_class: usize, noise_stream: u64) -> Result<Dataset> {
    if spec.num_classes == 0 || per_class == 0 {
        return Err(Error::InvalidConfig("synthetic source needs classes and samples".into()));
    }
    if !spec.class_separation.is_finite() || spec.class_separation <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "class separation must be a finite value > 0, got {}",
            spec.class_separation
        )));
    }
    let patterns: Vec<ClassPattern> =
        (0..spec.num_classes).map(|class| ClassPattern::draw(spec, class)).collect();
    let sigma = 0.25 / spec.class_separation;
    let noise = Normal::new(0.0, sigma)
        .map_err(|e| Error::InvalidConfig(format!("invalid noise distribution: {e}")))?;
    let mut rng = stream_rng(spec.seed, noise_stream);

    let mut images = Vec::with_capacity(spec.num_classes * per_class);
    let mut labels = Vec::with_capacity(spec.num_classes * per_class);
    for (class, pattern) in patterns.iter().enumerate() {
        for _ in 0..per_class {
            let mut pixels = Vec::with_capacity(spec.width * spec.height * spec.channels);
            for y in 0..spec.height {
                for x in 0..spec.width {
                    for c in 0..spec.channels {
                        let v = pattern.value(x, y, c) + noise.sample(&mut rng);
                        pixels.push(v.clamp(0.0, 1.0) as f32);
                    }
                }
            }
            images.push(Image::new(spec.width, spec.height, spec.channels, pixels)?);
            labels.push(class);
        }
    }
    Dataset::from_parts(spec.num_classes, images, labels)
}

/// Balanced training source: `per_class` samples for every class. Deterministic
/// under `spec.seed` (same spec, bit-identical dataset).
pub fn make_synthetic_source(spec: &SyntheticSpec) -> Result<Dataset> {
    generate_synthetic(spec, spec.per_class, STREAM_NOISE_TRAIN)
}

/// Balanced validation split drawn from the same class patterns as
/// [`make_synthetic_source`] but from a disjoint noise stream.
pub fn make_synthetic_val(spec: &SyntheticSpec, per_class: usize) -> Result<Dataset> {
    generate_synthetic(spec, per_class, STREAM_NOISE_VAL)
}

// ── Samplers ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Every stored sample equiprobable: class probability proportional to its count.
    Random,
    /// Uniform over classes, then uniform within the class.
    Balanced,
    /// Class probability proportional to the reciprocal of its count.
    Reversed,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Random => "random",
            SamplerKind::Balanced => "balanced",
            SamplerKind::Reversed => "reversed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(SamplerKind::Random),
            "balanced" => Ok(SamplerKind::Balanced),
            "reversed" => Ok(SamplerKind::Reversed),
            other => Err(Error::InvalidConfig(format!(
                "unknown sampler '{other}' (expected random, balanced, or reversed)"
            ))),
        }
    }
}

/// Draws sample indices from a dataset under one of the three class-weighting
/// schemes. Requires every class to be populated.
pub struct Sampler {
    kind: SamplerKind,
    total: usize,
    class_indices: Vec<Vec<usize>>,
    reversed_weights: Option<WeightedIndex<f64>>,
}

impl Sampler {
    pub fn new(kind: SamplerKind, dataset: &Dataset) -> Result<Self> {
        let census = dataset.census()?;
        let class_indices: Vec<Vec<usize>> =
            (0..dataset.num_classes()).map(|c| dataset.class_indices(c).to_vec()).collect();
        let reversed_weights = match kind {
            SamplerKind::Reversed => {
                let weights: Vec<f64> =
                    census.counts().iter().map(|&n| 1.0 / n as f64).collect();
                Some(WeightedIndex::new(weights).map_err(|e| {
                    Error::InvalidConfig(format!("reversed sampler weights rejected: {e}"))
                })?)
            }
            _ => None,
        };
        Ok(Self { kind, total: dataset.len(), class_indices, reversed_weights })
    }

    pub fn kind(&self) -> SamplerKind {
        self.kind
    }

    /// Expected probability of drawing each class; useful for distribution checks.
    pub fn class_probabilities(&self) -> Vec<f64> {
        match self.kind {
            SamplerKind::Random => self
                .class_indices
                .iter()
                .map(|idx| idx.len() as f64 / self.total as f64)
                .collect(),
            SamplerKind::Balanced => {
                vec![1.0 / self.class_indices.len() as f64; self.class_indices.len()]
            }
            SamplerKind::Reversed => {
                let weights: Vec<f64> =
                    self.class_indices.iter().map(|idx| 1.0 / idx.len() as f64).collect();
                let total: f64 = weights.iter().sum();
                weights.into_iter().map(|w| w / total).collect()
            }
        }
    }

    pub fn next_index<R: Rng>(&self, rng: &mut R) -> usize {
        match self.kind {
            SamplerKind::Random => rng.random_range(0..self.total),
            SamplerKind::Balanced => {
                let class = rng.random_range(0..self.class_indices.len());
                let within = rng.random_range(0..self.class_indices[class].len());
                self.class_indices[class][within]
            }
            SamplerKind::Reversed => {
                let class = self
                    .reversed_weights
                    .as_ref()
                    .expect("reversed sampler always builds weights")
                    .sample(rng);
                let within = rng.random_range(0..self.class_indices[class].len());
                self.class_indices[class][within]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_image(value: f32) -> Image {
        Image::new(1, 1, 1, vec![value]).unwrap()
    }

    fn balanced_dataset(num_classes: usize, per_class: usize) -> Dataset {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for class in 0..num_classes {
            for i in 0..per_class {
                // Distinct pixel per (class, index) so selections are traceable.
                images.push(tiny_image((class * per_class + i) as f32 / 1e6));
                labels.push(class);
            }
        }
        Dataset::from_parts(num_classes, images, labels).unwrap()
    }

    fn dataset_with_counts(counts: &[usize]) -> Dataset {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for (class, &n) in counts.iter().enumerate() {
            for i in 0..n {
                images.push(tiny_image(i as f32 / 1e6));
                labels.push(class);
            }
        }
        Dataset::from_parts(counts.len(), images, labels).unwrap()
    }

    // Independent recomputation of the long-tail closed form, written as plain
    // per-class arithmetic rather than through the library path.
    fn longtail_oracle(head: usize, classes: usize, r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        for i in 0..classes {
            // The head class has exponent 0 by definition; computing it as
            // -0/(classes-1) would be 0/0 for a single class.
            let exponent = if i == 0 { 0.0 } else { -(i as f64) / ((classes - 1) as f64) };
            let raw = head as f64 * r.powf(exponent);
            let rounded = (raw + 0.5).floor();
            out.push(if rounded < 1.0 { 1 } else { rounded as usize });
        }
        out
    }

    #[test]
    fn longtail_counts_match_oracle_500_10_100() {
        let counts = longtail_counts(500, 10, 100.0).unwrap();
        assert_eq!(counts, longtail_oracle(500, 10, 100.0));
        assert_eq!(counts, vec![500, 300, 180, 108, 65, 39, 23, 14, 8, 5]);
    }

    #[test]
    fn longtail_counts_100_classes_recover_imbalance_factor() {
        let counts = longtail_counts(5000, 100, 100.0).unwrap();
        assert_eq!(counts, longtail_oracle(5000, 100, 100.0));
        assert_eq!(*counts.iter().max().unwrap(), 5000);
        assert_eq!(*counts.iter().min().unwrap(), 50);
        assert!((counts[0] as f64 / counts[99] as f64 - 100.0).abs() < 1e-12);
    }

    #[test]
    fn longtail_counts_identity_at_factor_one() {
        assert_eq!(longtail_counts(64, 7, 1.0).unwrap(), vec![64; 7]);
    }

    #[test]
    fn longtail_counts_non_increasing_under_fuzz() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..300 {
            let head = rng.random_range(1..2000usize);
            let classes = rng.random_range(1..40usize);
            let r = rng.random_range(1.0..=(head as f64));
            let counts = longtail_counts(head, classes, r).unwrap();
            assert_eq!(counts, longtail_oracle(head, classes, r));
            assert!(counts.windows(2).all(|w| w[0] >= w[1]), "counts must be non-increasing");
            assert!(counts.iter().all(|&c| c >= 1));
            assert_eq!(counts[0], head);
        }
    }

    #[test]
    fn longtail_rejects_factor_exceeding_head_count() {
        let err = longtail_counts(500, 10, 1000.0).unwrap_err();
        assert!(matches!(err, Error::ImbalanceTooLarge { .. }));
        assert!(longtail_counts(500, 10, 0.5).is_err());
        assert!(longtail_counts(500, 10, f64::NAN).is_err());
    }

    #[test]
    fn build_longtailed_counts_and_determinism() {
        let source = balanced_dataset(10, 500);
        let lt = build_longtailed(&source, 100.0, 7).unwrap();
        assert_eq!(lt.class_counts(), &[500, 300, 180, 108, 65, 39, 23, 14, 8, 5]);
        assert_eq!(lt.len(), 1242);

        let again = build_longtailed(&source, 100.0, 7).unwrap();
        assert_eq!(lt.labels(), again.labels());
        for i in 0..lt.len() {
            assert_eq!(lt.image(i).pixels(), again.image(i).pixels());
        }

        let other_seed = build_longtailed(&source, 100.0, 8).unwrap();
        assert_eq!(other_seed.class_counts(), lt.class_counts());
        let same_selection = (0..lt.len())
            .all(|i| lt.image(i).pixels() == other_seed.image(i).pixels());
        assert!(!same_selection, "different seeds should subsample differently");
    }

    #[test]
    fn build_longtailed_preserves_pixels() {
        let source = balanced_dataset(4, 20);
        let lt = build_longtailed(&source, 10.0, 3).unwrap();
        // Every surviving image must be byte-identical to some source image of
        // the same class.
        for i in 0..lt.len() {
            let class = lt.label(i);
            let found = source
                .class_indices(class)
                .iter()
                .any(|&j| source.image(j).pixels() == lt.image(i).pixels());
            assert!(found);
        }
    }

    #[test]
    fn build_longtailed_rejects_unbalanced_source() {
        let ds = dataset_with_counts(&[5, 4]);
        assert!(matches!(build_longtailed(&ds, 2.0, 0).unwrap_err(), Error::UnbalancedSource { .. }));
    }

    #[test]
    fn synthetic_source_is_deterministic_and_balanced() {
        let spec = SyntheticSpec {
            num_classes: 4,
            per_class: 6,
            width: 5,
            height: 4,
            channels: 3,
            class_separation: 2.0,
            seed: 99,
        };
        let a = make_synthetic_source(&spec).unwrap();
        let b = make_synthetic_source(&spec).unwrap();
        assert_eq!(a.len(), 24);
        assert_eq!(a.class_counts(), &[6, 6, 6, 6]);
        assert_eq!(a.shape(), (5, 4, 3));
        for i in 0..a.len() {
            assert_eq!(a.image(i).pixels(), b.image(i).pixels());
            assert_eq!(a.label(i), b.label(i));
            assert!(a.image(i).pixels().iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    /// Nearest-centroid oracle: with large separation (noise sigma 0.005) every
    /// training sample must sit closest to its own class centroid in raw pixel space.
    #[test]
    fn synthetic_high_separation_is_centroid_separable() {
        let spec = SyntheticSpec {
            num_classes: 5,
            per_class: 12,
            width: 6,
            height: 6,
            channels: 3,
            class_separation: 50.0,
            seed: 3,
        };
        let ds = make_synthetic_source(&spec).unwrap();
        let dim = 6 * 6 * 3;
        let mut centroids = vec![vec![0f64; dim]; 5];
        for i in 0..ds.len() {
            for (j, &p) in ds.image(i).pixels().iter().enumerate() {
                centroids[ds.label(i)][j] += p as f64;
            }
        }
        for c in &mut centroids {
            for v in c.iter_mut() {
                *v /= 12.0;
            }
        }
        let mut correct = 0;
        for i in 0..ds.len() {
            let mut best = (f64::INFINITY, usize::MAX);
            for (class, centroid) in centroids.iter().enumerate() {
                let d2: f64 = ds
                    .image(i)
                    .pixels()
                    .iter()
                    .zip(centroid)
                    .map(|(&p, &m)| (p as f64 - m).powi(2))
                    .sum();
                if d2 < best.0 {
                    best = (d2, class);
                }
            }
            if best.1 == ds.label(i) {
                correct += 1;
            }
        }
        assert_eq!(correct, ds.len(), "nearest-centroid must be exact at high separation");
    }

    #[test]
    fn synthetic_val_shares_patterns_but_not_noise() {
        let spec = SyntheticSpec {
            num_classes: 3,
            per_class: 10,
            width: 4,
            height: 4,
            channels: 2,
            class_separation: 50.0,
            seed: 17,
        };
        let train = make_synthetic_source(&spec).unwrap();
        let val = make_synthetic_val(&spec, 8).unwrap();
        assert_eq!(val.class_counts(), &[8, 8, 8]);
        assert_ne!(train.image(0).pixels(), val.image(0).pixels());

        // Val samples classify perfectly against train centroids at high separation,
        // which only holds if both splits draw from the same class patterns.
        let dim = 4 * 4 * 2;
        let mut centroids = vec![vec![0f64; dim]; 3];
        for i in 0..train.len() {
            for (j, &p) in train.image(i).pixels().iter().enumerate() {
                centroids[train.label(i)][j] += p as f64;
            }
        }
        for c in &mut centroids {
            for v in c.iter_mut() {
                *v /= 10.0;
            }
        }
        for i in 0..val.len() {
            let mut best = (f64::INFINITY, usize::MAX);
            for (class, centroid) in centroids.iter().enumerate() {
                let d2: f64 = val
                    .image(i)
                    .pixels()
                    .iter()
                    .zip(centroid)
                    .map(|(&p, &m)| (p as f64 - m).powi(2))
                    .sum();
                if d2 < best.0 {
                    best = (d2, class);
                }
            }
            assert_eq!(best.1, val.label(i));
        }
    }

    #[test]
    fn ltds_round_trip_is_bit_exact() {
        let spec = SyntheticSpec {
            num_classes: 3,
            per_class: 4,
            width: 3,
            height: 2,
            channels: 2,
            class_separation: 1.5,
            seed: 5,
        };
        let ds = make_synthetic_source(&spec).unwrap();
        let bytes = ds.to_bytes();
        let back = Dataset::from_bytes(&bytes).unwrap();
        assert_eq!(back.shape(), ds.shape());
        assert_eq!(back.num_classes(), ds.num_classes());
        assert_eq!(back.labels(), ds.labels());
        for i in 0..ds.len() {
            assert_eq!(back.image(i).pixels(), ds.image(i).pixels());
        }
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.sha256_hex(), ds.sha256_hex());
    }

    #[test]
    fn ltds_rejects_corrupt_input() {
        let ds = dataset_with_counts(&[2, 2]);
        let good = ds.to_bytes();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(Dataset::from_bytes(&bad_magic), Err(Error::InvalidFormat(_))));

        let truncated = &good[..good.len() - 3];
        assert!(matches!(Dataset::from_bytes(truncated), Err(Error::InvalidFormat(_))));

        let mut trailing = good.clone();
        trailing.push(0);
        assert!(matches!(Dataset::from_bytes(&trailing), Err(Error::InvalidFormat(_))));

        // Pixel out of range: patch the first pixel of the first record to 2.0.
        let mut out_of_range = good;
        let header = 5 + 5 * 4 + 4;
        out_of_range[header..header + 4].copy_from_slice(&2.0f32.to_le_bytes());
        assert!(matches!(Dataset::from_bytes(&out_of_range), Err(Error::InvalidFormat(_))));
    }

    #[test]
    fn census_rejects_empty_classes() {
        let ds = Dataset::from_parts(
            3,
            vec![tiny_image(0.0), tiny_image(0.1)],
            vec![0, 2],
        )
        .unwrap();
        assert_eq!(ds.class_counts(), &[1, 0, 1]);
        assert!(matches!(ds.census(), Err(Error::EmptyClass { class: 1 })));
    }

    #[test]
    fn sampler_analytic_probabilities() {
        let ds = dataset_with_counts(&[90, 10]);
        let random = Sampler::new(SamplerKind::Random, &ds).unwrap();
        let balanced = Sampler::new(SamplerKind::Balanced, &ds).unwrap();
        let reversed = Sampler::new(SamplerKind::Reversed, &ds).unwrap();
        assert_eq!(random.class_probabilities(), vec![0.9, 0.1]);
        assert_eq!(balanced.class_probabilities(), vec![0.5, 0.5]);
        let p = reversed.class_probabilities();
        assert!((p[0] - 0.1).abs() < 1e-12);
        assert!((p[1] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn sampler_empirical_frequencies_track_analytic() {
        let ds = dataset_with_counts(&[90, 10]);
        for kind in [SamplerKind::Random, SamplerKind::Balanced, SamplerKind::Reversed] {
            let sampler = Sampler::new(kind, &ds).unwrap();
            let expected = sampler.class_probabilities();
            let mut rng = ChaCha8Rng::seed_from_u64(123);
            let draws = 20_000;
            let mut counts = [0usize; 2];
            for _ in 0..draws {
                counts[ds.label(sampler.next_index(&mut rng))] += 1;
            }
            for class in 0..2 {
                let freq = counts[class] as f64 / draws as f64;
                assert!(
                    (freq - expected[class]).abs() < 0.02,
                    "{:?} class {class}: freq {freq} vs expected {}",
                    kind,
                    expected[class]
                );
            }
        }
    }

    #[test]
    fn sampler_is_deterministic_under_seed() {
        let ds = dataset_with_counts(&[7, 3, 2]);
        let sampler = Sampler::new(SamplerKind::Balanced, &ds).unwrap();
        let draw = |seed: u64| -> Vec<usize> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| sampler.next_index(&mut rng)).collect()
        };
        assert_eq!(draw(11), draw(11));
        assert_ne!(draw(11), draw(12));
    }

    #[test]
    fn sampler_rejects_empty_class() {
        let ds = Dataset::from_parts(2, vec![tiny_image(0.0)], vec![0]).unwrap();
        assert!(Sampler::new(SamplerKind::Balanced, &ds).is_err());
    }
}
