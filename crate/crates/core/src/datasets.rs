//! Labelled image collections: MNIST IDX files, `filename,label` manifests,
//! the minimum-images-per-class filter and seeded splits.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{geometry::resize, Image};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `[h, w, c]` with values in `[0, 1]` (before optional mean subtraction).
    pub features: Tensor<f32>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    samples: Vec<Sample>,
    classes: Vec<String>,
    pub provenance: String,
}

impl LabeledDataset {
    /// Checks that labels index `classes`, ids are unique and all feature
    /// tensors share one shape.
    pub fn new(samples: Vec<Sample>, classes: Vec<String>, provenance: impl Into<String>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if s.label >= classes.len() {
                return Err(Error::Validation(format!(
                    "sample {} has label {} but only {} classes",
                    s.id,
                    s.label,
                    classes.len()
                )));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Validation(format!("duplicate sample id {}", s.id)));
            }
            if s.features.shape() != samples[0].features.shape() {
                return Err(Error::dim("dataset features", samples[0].features.shape(), s.features.shape()));
            }
        }
        Ok(Self {
            samples,
            classes,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn feature_shape(&self) -> Option<&[usize]> {
        self.samples.first().map(|s| s.features.shape())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Stacks the selected samples into `[n, h, w, c]` with their labels.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let shape = self
            .feature_shape()
            .ok_or_else(|| Error::Validation("cannot batch an empty dataset".into()))?;
        let mut full = vec![indices.len()];
        full.extend_from_slice(shape);
        let mut data = Vec::with_capacity(full.iter().product());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = self.samples.get(i).ok_or_else(|| {
                Error::Validation(format!("sample index {i} out of range for {} samples", self.len()))
            })?;
            data.extend(s.features.data().iter().map(|&v| T::from_f64_lossy(v as f64)));
            labels.push(s.label);
        }
        Ok((Tensor::new(full, data)?, labels))
    }

    /// `[n, d]` matrix of flattened features in f64.
    pub fn feature_matrix(&self) -> Tensor<f64> {
        let d = self.feature_shape().map(|s| s.iter().product()).unwrap_or(0);
        let data = self
            .samples
            .iter()
            .flat_map(|s| s.features.data().iter().map(|&v| v as f64))
            .collect();
        Tensor::new([self.len(), d], data).expect("uniform feature shapes")
    }

    /// Samples at `indices` in that order, keeping the class table.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let samples = indices
            .iter()
            .map(|&i| {
                self.samples
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::Validation(format!("sample index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(samples, self.classes.clone(), self.provenance.clone())
    }

    /// Subtracts the per-pixel mean over all samples and returns it.
    pub fn subtract_mean(&mut self) -> Tensor<f32> {
        let Some(shape) = self.feature_shape().map(<[usize]>::to_vec) else {
            return Tensor::zeros([0]);
        };
        let mut mean = Tensor::<f64>::zeros(shape.clone());
        for s in &self.samples {
            for (m, &v) in mean.data_mut().iter_mut().zip(s.features.data()) {
                *m += v as f64;
            }
        }
        let n = self.len() as f64;
        let mean: Tensor<f32> = mean.map(|v| v / n).cast();
        for s in &mut self.samples {
            for (v, &m) in s.features.data_mut().iter_mut().zip(mean.data()) {
                *v -= m;
            }
        }
        mean
    }
}

// ---------------------------------------------------------------------------
// MNIST

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;

fn idx_err(reason: impl Into<String>) -> Error {
    Error::Format {
        format: "IDX",
        reason: reason.into(),
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| idx_err(format!("{}: truncated header", path.display())))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Parses an IDX image file into `(rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IMAGE_MAGIC {
        return Err(idx_err(format!(
            "{}: image magic {magic}, expected {IMAGE_MAGIC}",
            path.display()
        )));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let expected = 16 + n * rows * cols;
    if bytes.len() != expected {
        return Err(idx_err(format!(
            "{}: {} bytes for {n} images of {rows}x{cols}, expected {expected}",
            path.display(),
            bytes.len()
        )));
    }
    Ok((rows, cols, bytes[16..].to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != LABEL_MAGIC {
        return Err(idx_err(format!(
            "{}: label magic {magic}, expected {LABEL_MAGIC}",
            path.display()
        )));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    if bytes.len() != 8 + n {
        return Err(idx_err(format!(
            "{}: {} bytes for {n} labels, expected {}",
            path.display(),
            bytes.len(),
            8 + n
        )));
    }
    Ok(bytes[8..].to_vec())
}

/// Reads an IDX image/label pair; samples are `[rows, cols, 1]` in `[0, 1]`.
pub fn load_mnist(images: &Path, labels: &Path) -> Result<LabeledDataset> {
    let (rows, cols, pixels) = parse_idx_images(&read(images)?, images)?;
    let labels_raw = parse_idx_labels(&read(labels)?, labels)?;
    let per = rows * cols;
    let n_images = if per == 0 { 0 } else { pixels.len() / per };
    if n_images != labels_raw.len() {
        return Err(idx_err(format!(
            "{} holds {n_images} images but {} holds {} labels",
            images.display(),
            labels.display(),
            labels_raw.len()
        )));
    }
    if let Some((i, &l)) = labels_raw.iter().enumerate().find(|(_, &l)| l > 9) {
        return Err(idx_err(format!("{}: label {l} at index {i} is not a digit", labels.display())));
    }
    let stem = images.file_name().and_then(|s| s.to_str()).unwrap_or("idx");
    let samples = labels_raw
        .iter()
        .enumerate()
        .map(|(i, &l)| Sample {
            id: format!("{stem}#{i}"),
            features: Tensor::new(
                [rows, cols, 1],
                pixels[i * per..(i + 1) * per].iter().map(|&p| p as f32 / 255.0).collect(),
            )
            .expect("consistent extents"),
            label: l as usize,
        })
        .collect();
    LabeledDataset::new(
        samples,
        (0..10).map(|d| d.to_string()).collect(),
        format!("MNIST IDX {} + {}", images.display(), labels.display()),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MnistPart {
    Train,
    Test,
}

/// Loads the standard file names (`train-images-idx3-ubyte` etc.) from a
/// directory. Both `-idx3-ubyte` and `.idx3-ubyte` spellings are accepted.
pub fn load_mnist_dir(dir: &Path, part: MnistPart) -> Result<LabeledDataset> {
    let prefix = match part {
        MnistPart::Train => "train",
        MnistPart::Test => "t10k",
    };
    let find = |kind: &str, n: u8| -> Result<PathBuf> {
        [format!("{prefix}-{kind}-idx{n}-ubyte"), format!("{prefix}-{kind}.idx{n}-ubyte")]
            .into_iter()
            .map(|f| dir.join(f))
            .find(|p| p.is_file())
            .ok_or_else(|| {
                Error::io(
                    dir.join(format!("{prefix}-{kind}-idx{n}-ubyte")),
                    std::io::Error::new(std::io::ErrorKind::NotFound, "MNIST file not found"),
                )
            })
    };
    load_mnist(&find("images", 3)?, &find("labels", 1)?)
}

// ---------------------------------------------------------------------------
// Manifests

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// 1-based line number in the CSV.
    pub line: usize,
    pub filename: String,
    pub label: String,
}

/// A parsed `filename,label` manifest. Images are read on demand.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub path: PathBuf,
    pub root: Option<PathBuf>,
    pub entries: Vec<ManifestEntry>,
}

const HEADER_FIELDS: [&str; 4] = ["filename", "file", "image", "path"];

impl Manifest {
    /// Parses the CSV. With `root`, every referenced file must exist under it.
    pub fn read(csv: &Path, root: Option<&Path>) -> Result<Self> {
        let text = std::fs::read_to_string(csv).map_err(|e| Error::io(csv, e))?;
        let bad = |line: usize, reason: String| Error::Format {
            format: "manifest",
            reason: format!("{}:{line}: {reason}", csv.display()),
        };
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        let mut first = true;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let row = raw.trim();
            if row.is_empty() {
                continue;
            }
            let fields: Vec<&str> = row.split(',').map(str::trim).collect();
            if std::mem::take(&mut first) && HEADER_FIELDS.contains(&fields[0].to_ascii_lowercase().as_str()) {
                continue;
            }
            if fields.len() != 2 || fields[0].is_empty() || fields[1].is_empty() {
                return Err(bad(line, format!("expected `filename,label`, got {row:?}")));
            }
            if !seen.insert(fields[0].to_string()) {
                return Err(Error::Validation(format!(
                    "{}:{line}: duplicate filename {}",
                    csv.display(),
                    fields[0]
                )));
            }
            if let Some(root) = root {
                let p = root.join(fields[0]);
                if !p.is_file() {
                    return Err(Error::io(
                        p,
                        std::io::Error::new(
                            std::io::ErrorKind::NotFound,
                            format!("referenced by {}:{line}", csv.display()),
                        ),
                    ));
                }
            }
            entries.push(ManifestEntry {
                line,
                filename: fields[0].to_string(),
                label: fields[1].to_string(),
            });
        }
        Ok(Self {
            path: csv.to_path_buf(),
            root: root.map(Path::to_path_buf),
            entries,
        })
    }

    /// Sorted distinct labels; class ids index this table.
    pub fn classes(&self) -> Vec<String> {
        let set: std::collections::BTreeSet<&str> = self.entries.iter().map(|e| e.label.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn load_image(&self, index: usize) -> Result<Image> {
        let e = &self.entries[index];
        let root = self
            .root
            .as_deref()
            .ok_or_else(|| Error::State("manifest was read without an image root".into()))?;
        Image::load(&root.join(&e.filename))
    }

    /// Reads every image (optionally resized to `size = (h, w)`) into a dataset.
    pub fn load(&self, size: Option<(usize, usize)>) -> Result<LabeledDataset> {
        let classes = self.classes();
        let samples = (0..self.entries.len())
            .map(|i| {
                let img = self.load_image(i)?;
                let px = match size {
                    Some((h, w)) => resize(img.pixels(), h, w)?,
                    None => img.into_pixels(),
                };
                let e = &self.entries[i];
                Ok(Sample {
                    id: e.filename.clone(),
                    features: px.cast(),
                    label: classes.binary_search(&e.label).expect("label in table"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        LabeledDataset::new(samples, classes, format!("manifest {}", self.path.display()))
            .map_err(|e| match e {
                Error::Dimension { .. } => Error::Validation(format!(
                    "images in {} differ in size; pass a resize target",
                    self.path.display()
                )),
                other => other,
            })
    }

    /// Keeps entries whose label has at least `min_count` rows.
    pub fn alpha_filter(&self, min_count: usize) -> Result<(Self, FilterReport)> {
        let labels: Vec<&str> = self.entries.iter().map(|e| e.label.as_str()).collect();
        let report = FilterReport::build(&labels, min_count)?;
        let keep: HashSet<&str> = report.kept.iter().map(|(l, _)| l.as_str()).collect();
        let entries = self
            .entries
            .iter()
            .filter(|e| keep.contains(e.label.as_str()))
            .cloned()
            .collect();
        Ok((
            Self {
                entries,
                ..self.clone()
            },
            report,
        ))
    }
}

/// Reads a manifest, checks every file exists under `root` and loads all
/// images at their native size.
pub fn load_manifest(csv: &Path, root: &Path) -> Result<LabeledDataset> {
    Manifest::read(csv, Some(root))?.load(None)
}

// ---------------------------------------------------------------------------
// Filtering and splitting

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FilterReport {
    pub min_count: usize,
    /// `(label, count)` in label order.
    pub kept: Vec<(String, usize)>,
    pub dropped: Vec<(String, usize)>,
}

impl FilterReport {
    fn build(labels: &[&str], min_count: usize) -> Result<Self> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for l in labels {
            *counts.entry(l).or_default() += 1;
        }
        let (kept, dropped): (Vec<_>, Vec<_>) = counts
            .into_iter()
            .map(|(l, c)| (l.to_string(), c))
            .partition(|(_, c)| *c >= min_count);
        if kept.is_empty() {
            return Err(Error::Validation(format!("no class has at least {min_count} samples")));
        }
        Ok(Self {
            min_count,
            kept,
            dropped,
        })
    }

    pub fn kept_samples(&self) -> usize {
        self.kept.iter().map(|(_, c)| c).sum()
    }

    pub fn dropped_samples(&self) -> usize {
        self.dropped.iter().map(|(_, c)| c).sum()
    }
}

/// Keeps classes with at least `min_count` samples and renumbers them
/// densely in their original order.
pub fn alpha_filter(ds: &LabeledDataset, min_count: usize) -> Result<(LabeledDataset, FilterReport)> {
    let names: Vec<&str> = ds.samples.iter().map(|s| ds.classes[s.label].as_str()).collect();
    let report = FilterReport::build(&names, min_count)?;
    let counts = ds.class_counts();
    let mut remap = vec![None; ds.classes.len()];
    let mut classes = Vec::new();
    for (c, name) in ds.classes.iter().enumerate() {
        if counts[c] >= min_count {
            remap[c] = Some(classes.len());
            classes.push(name.clone());
        }
    }
    let samples = ds
        .samples
        .iter()
        .filter_map(|s| {
            remap[s.label].map(|label| Sample {
                label,
                ..s.clone()
            })
        })
        .collect();
    Ok((LabeledDataset::new(samples, classes, ds.provenance.clone())?, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 42,
            stratified: true,
        }
    }
}

/// Train and validation indices (each ascending) for the given labels.
///
/// Stratified splits shuffle each class separately and send
/// `round(f · n_c)` samples, clamped to `[1, n_c − 1]`, to training.
pub fn split_indices(labels: &[usize], spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    let f = spec.train_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::Config(format!("train fraction must lie in (0, 1), got {f}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let take = |n: usize| ((f * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let (mut train, mut val) = (Vec::new(), Vec::new());
    if spec.stratified {
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            by_class.entry(l).or_default().push(i);
        }
        let singles: Vec<usize> = by_class.iter().filter(|(_, v)| v.len() < 2).map(|(c, _)| *c).collect();
        if !singles.is_empty() {
            return Err(Error::Validation(format!(
                "stratified split needs at least 2 samples per class; classes {singles:?} have 1"
            )));
        }
        for idx in by_class.values_mut() {
            idx.shuffle(&mut rng);
            let k = take(idx.len());
            train.extend_from_slice(&idx[..k]);
            val.extend_from_slice(&idx[k..]);
        }
    } else {
        if labels.len() < 2 {
            return Err(Error::Validation("a split needs at least 2 samples".into()));
        }
        let mut idx: Vec<usize> = (0..labels.len()).collect();
        idx.shuffle(&mut rng);
        let k = take(idx.len());
        train.extend_from_slice(&idx[..k]);
        val.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

pub fn split(ds: &LabeledDataset, spec: &SplitSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    let (train, val) = split_indices(&ds.labels(), spec)?;
    Ok((ds.subset(&train)?, ds.subset(&val)?))
}

/// A seeded subset of `n` indices whose class proportions follow the full
/// label distribution (largest-remainder rounding).
pub fn stratified_sample(labels: &[usize], n: usize, seed: u64) -> Vec<usize> {
    let n = n.min(labels.len());
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let total = labels.len() as f64;
    let mut quota: Vec<(usize, usize, f64)> = by_class
        .iter()
        .map(|(&c, v)| {
            let exact = n as f64 * v.len() as f64 / total.max(1.0);
            (c, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = quota.iter().map(|q| q.1).sum();
    let mut order: Vec<usize> = (0..quota.len()).collect();
    order.sort_by(|&a, &b| quota[b].2.total_cmp(&quota[a].2).then(a.cmp(&b)));
    for &i in order.iter().take(n - assigned) {
        quota[i].1 += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for (c, k, _) in quota {
        let idx = by_class.get_mut(&c).expect("class present");
        idx.shuffle(&mut rng);
        out.extend_from_slice(&idx[..k.min(idx.len())]);
    }
    out.sort_unstable();
    out
}
