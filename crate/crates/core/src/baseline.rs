//! Nearest-neighbour classification with optional PCA and LDA reduction.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{LabeledDataset, Sample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-major flattening of a `[h, w]` grayscale image.
pub fn unroll(gray: &Tensor<f64>) -> Result<Vec<f64>> {
    match *gray.shape() {
        [_, _] | [_, _, 1] => Ok(gray.data().to_vec()),
        _ => Err(Error::dim("unroll", gray.shape(), &[0, 0])),
    }
}

/// Grayscale feature vector of a dataset sample: single-channel samples are
/// flattened as they are, RGB ones are converted to Rec. 601 luma first.
pub fn sample_features(features: &Tensor<f32>) -> Result<Vec<f64>> {
    match *features.shape() {
        [_, _, 1] | [_, _] => Ok(features.data().iter().map(|&v| v as f64).collect()),
        [_, _, 3] => Ok(features
            .data()
            .chunks(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect()),
        _ => Err(Error::dim("sample features", features.shape(), &[0, 0, 1])),
    }
}

/// `[n, d]` grayscale feature matrix and labels of a dataset.
pub fn feature_matrix(ds: &LabeledDataset) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let rows = ds
        .samples()
        .iter()
        .map(|s| sample_features(&s.features))
        .collect::<Result<Vec<_>>>()?;
    let d = rows.first().map_or(0, Vec::len);
    Ok((DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]), ds.labels()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Metric {
    #[default]
    Euclidean,
    Chebyshev,
    Minkowski { p: f64 },
}

impl Metric {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Metric::Minkowski { p } if !(p >= 1.0 && p.is_finite()) => {
                Err(Error::Config(format!("Minkowski p must be a finite value ≥ 1, got {p}")))
            }
            _ => Ok(()),
        }
    }

    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let diffs = a.iter().zip(b).map(|(x, y)| (x - y).abs());
        match *self {
            Metric::Euclidean => diffs.map(|d| d * d).sum::<f64>().sqrt(),
            Metric::Chebyshev => diffs.fold(0.0, f64::max),
            Metric::Minkowski { p } if p == 1.0 => diffs.sum(),
            Metric::Minkowski { p } if p == 2.0 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
            Metric::Minkowski { p } => diffs.map(|d| d.powf(p)).sum::<f64>().powf(1.0 / p),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Metric::Euclidean => write!(f, "euclidean"),
            Metric::Chebyshev => write!(f, "chebyshev"),
            Metric::Minkowski { p } => write!(f, "minkowski(p={p})"),
        }
    }
}

pub fn distance(a: &[f64], b: &[f64], metric: Metric) -> Result<f64> {
    metric.validate()?;
    if a.len() != b.len() {
        return Err(Error::dim("distance", &[a.len()], &[b.len()]));
    }
    Ok(metric.eval(a, b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub label: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnPrediction {
    pub label: usize,
    /// The k nearest training points ordered by (distance, index).
    pub neighbors: Vec<Neighbor>,
}

#[derive(Debug, Clone)]
pub struct KnnModel {
    data: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    k: usize,
    metric: Metric,
}

impl KnnModel {
    /// `data` is `[n, d]`.
    pub fn fit(data: &DMatrix<f64>, labels: &[usize], k: usize, metric: Metric) -> Result<Self> {
        metric.validate()?;
        let n = data.nrows();
        if n == 0 {
            return Err(Error::Validation("kNN needs at least one training point".into()));
        }
        if labels.len() != n {
            return Err(Error::dim("knn labels", &[n], &[labels.len()]));
        }
        if k == 0 || k > n {
            return Err(Error::Config(format!("k must lie in [1, {n}], got {k}")));
        }
        let dim = data.ncols();
        let mut rows = Vec::with_capacity(n * dim);
        for row in data.row_iter() {
            rows.extend(row.iter());
        }
        Ok(Self {
            data: rows,
            dim,
            labels: labels.to_vec(),
            k,
            metric,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn neighbors(&self, query: &[f64]) -> Result<Vec<Neighbor>> {
        if query.len() != self.dim {
            return Err(Error::dim("knn query", &[query.len()], &[self.dim]));
        }
        let mut all: Vec<(f64, usize)> = self
            .data
            .chunks(self.dim.max(1))
            .take(self.labels.len())
            .map(|row| self.metric.eval(row, query))
            .zip(0..)
            .collect();
        let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < all.len() {
            all.select_nth_unstable_by(self.k - 1, order);
            all.truncate(self.k);
        }
        all.sort_by(order);
        Ok(all
            .into_iter()
            .map(|(distance, index)| Neighbor {
                index,
                label: self.labels[index],
                distance,
            })
            .collect())
    }

    /// Majority vote among the k nearest. Ties go to the tied class with the
    /// smallest summed neighbour distance, then to the smallest class id.
    pub fn classify(&self, query: &[f64]) -> Result<KnnPrediction> {
        let neighbors = self.neighbors(query)?;
        let mut tally: Vec<(usize, usize, f64)> = Vec::new();
        for nb in &neighbors {
            match tally.iter_mut().find(|t| t.0 == nb.label) {
                Some(t) => {
                    t.1 += 1;
                    t.2 += nb.distance;
                }
                None => tally.push((nb.label, 1, nb.distance)),
            }
        }
        let label = tally
            .iter()
            .min_by(|a, b| b.1.cmp(&a.1).then(a.2.total_cmp(&b.2)).then(a.0.cmp(&b.0)))
            .expect("k ≥ 1")
            .0;
        Ok(KnnPrediction { label, neighbors })
    }

    /// Labels for every row of `queries` (`[m, d]`), in parallel.
    pub fn classify_batch(&self, queries: &DMatrix<f64>) -> Result<Vec<usize>> {
        let rows: Vec<Vec<f64>> = queries.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.par_iter().map(|q| self.classify(q).map(|p| p.label)).collect()
    }
}

/// How many principal components to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Retain {
    Count(usize),
    /// Smallest count whose variances sum to at least this share of the total.
    Fraction(f64),
}

impl Default for Retain {
    fn default() -> Self {
        Retain::Fraction(0.95)
    }
}

/// Eigen-decomposition sorted by descending eigenvalue, each eigenvector
/// signed so its largest-magnitude entry is positive.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = eig.eigenvectors.select_columns(&order);
    for mut col in vectors.column_iter_mut() {
        canonical_sign(&mut col);
    }
    (values, vectors)
}

fn canonical_sign<S: nalgebra::StorageMut<f64, nalgebra::Dyn>>(col: &mut nalgebra::Matrix<f64, nalgebra::Dyn, nalgebra::U1, S>) {
    let pivot = col.iter().copied().fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
    if pivot < 0.0 {
        col.neg_mut();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// `[d, r]`, orthonormal columns.
    pub components: DMatrix<f64>,
    /// Descending, length `r`.
    pub variances: Vec<f64>,
    /// Total sample variance of the training data.
    pub total_variance: f64,
}

/// Principal components of the rows of `data` (`[n, d]`), from the sample
/// covariance (denominator `n − 1`). When `d > n` the `n × n` Gram matrix is
/// decomposed instead and its eigenvectors mapped back.
pub fn pca_fit(data: &DMatrix<f64>, retain: Retain) -> Result<PcaModel> {
    let (n, d) = data.shape();
    if n < 2 {
        return Err(Error::Validation(format!("PCA needs at least 2 samples, got {n}")));
    }
    let mean = data.row_mean().transpose();
    let mut x = data.clone();
    for mut row in x.row_iter_mut() {
        row -= mean.transpose();
    }
    let denom = (n - 1) as f64;
    let total_variance = x.iter().map(|v| v * v).sum::<f64>() / denom;
    if !(total_variance > 0.0) {
        return Err(Error::DegenerateData("all samples are identical; PCA has no variance to explain".into()));
    }
    let (values, vectors) = if d <= n {
        sorted_eigen(x.transpose() * &x / denom)
    } else {
        let (values, u) = sorted_eigen(&x * x.transpose() / denom);
        let top = values[0];
        let usable = values.iter().take_while(|&&l| l > 1e-12 * top).count();
        let mut v = DMatrix::zeros(d, usable);
        for j in 0..usable {
            let mut col = x.transpose() * u.column(j) / (values[j] * denom).sqrt();
            canonical_sign(&mut col);
            v.set_column(j, &col);
        }
        (values[..usable].to_vec(), v)
    };
    let values: Vec<f64> = values.into_iter().map(|l| l.max(0.0)).collect();
    let max_r = values.len().min(n - 1).min(d);
    let r = match retain {
        Retain::Count(r) => {
            if r == 0 || r > max_r {
                return Err(Error::Config(format!("PCA can keep between 1 and {max_r} components, asked for {r}")));
            }
            r
        }
        Retain::Fraction(f) => {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("PCA variance fraction must lie in (0, 1], got {f}")));
            }
            let mut acc = 0.0;
            let mut r = max_r;
            for (i, l) in values.iter().enumerate().take(max_r) {
                acc += l;
                if acc >= f * total_variance * (1.0 - 1e-12) {
                    r = i + 1;
                    break;
                }
            }
            r
        }
    };
    Ok(PcaModel {
        mean,
        components: vectors.columns(0, r).into_owned(),
        variances: values[..r].to_vec(),
        total_variance,
    })
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.components.ncols()
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.mean.len() {
            return Err(Error::dim("pca transform", &[x.len()], &[self.mean.len()]));
        }
        let centred = DVector::from_column_slice(x) - &self.mean;
        Ok((self.components.transpose() * centred).iter().copied().collect())
    }

    /// Projects every row of `[n, d]` data to `[n, r]`.
    pub fn transform_rows(&self, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if data.ncols() != self.mean.len() {
            return Err(Error::dim("pca transform", &[data.ncols()], &[self.mean.len()]));
        }
        let mut x = data.clone();
        for mut row in x.row_iter_mut() {
            row -= self.mean.transpose();
        }
        Ok(x * &self.components)
    }

    pub fn inverse_transform(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim() {
            return Err(Error::dim("pca inverse", &[z.len()], &[self.dim()]));
        }
        Ok((&self.components * DVector::from_column_slice(z) + &self.mean).iter().copied().collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    pub mean: DVector<f64>,
    /// `[r, out_dim]`.
    pub projection: DMatrix<f64>,
    /// Generalized eigenvalues of the kept directions, descending.
    pub eigenvalues: Vec<f64>,
    /// `(class id, projected mean)`.
    pub class_means: Vec<(usize, Vec<f64>)>,
}

/// Multi-class Fisher discriminant. Solves the generalized problem
/// `S_b v = λ S_w v` through symmetric whitening by `(S_w + γI)^(−½)` with
/// `γ = 1e-6 · tr(S_w) / r`.
pub fn lda_fit(data: &DMatrix<f64>, labels: &[usize], out_dim: Option<usize>) -> Result<LdaModel> {
    let (n, r) = data.shape();
    if labels.len() != n {
        return Err(Error::dim("lda labels", &[n], &[labels.len()]));
    }
    let classes: Vec<usize> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if classes.len() < 2 {
        return Err(Error::Validation("LDA needs at least 2 classes".into()));
    }
    let counts: Vec<usize> = classes.iter().map(|c| labels.iter().filter(|&&l| l == *c).count()).collect();
    if let Some(i) = counts.iter().position(|&c| c < 2) {
        return Err(Error::Validation(format!("LDA needs 2 samples per class; class {} has 1", classes[i])));
    }
    let max_dim = (classes.len() - 1).min(r);
    let out_dim = out_dim.unwrap_or(max_dim);
    if out_dim == 0 || out_dim > max_dim {
        return Err(Error::Config(format!("LDA output dimension must lie in [1, {max_dim}], got {out_dim}")));
    }

    let mean = data.row_mean().transpose();
    let means: Vec<DVector<f64>> = classes
        .iter()
        .zip(&counts)
        .map(|(&c, &nc)| {
            let mut m = DVector::zeros(r);
            for (i, _) in labels.iter().enumerate().filter(|(_, &l)| l == c) {
                m += data.row(i).transpose();
            }
            m / nc as f64
        })
        .collect();
    let mut sw = DMatrix::zeros(r, r);
    for (i, &l) in labels.iter().enumerate() {
        let k = classes.binary_search(&l).expect("label collected above");
        let dev = data.row(i).transpose() - &means[k];
        sw += &dev * dev.transpose();
    }
    let mut sb = DMatrix::zeros(r, r);
    for (m, &nc) in means.iter().zip(&counts) {
        let dev = m - &mean;
        sb += (&dev * dev.transpose()) * nc as f64;
    }

    let trace = sw.trace();
    if !(trace > 0.0) || !trace.is_finite() {
        return Err(Error::DegenerateData(
            "within-class scatter is zero; reduce dimensionality with PCA first".into(),
        ));
    }
    let gamma = 1e-6 * trace / r as f64;
    for i in 0..r {
        sw[(i, i)] += gamma;
    }
    let eig = SymmetricEigen::new(sw);
    let floor = eig.eigenvalues.max() * 1e-15;
    if eig.eigenvalues.iter().any(|&l| !(l > floor) || !l.is_finite()) {
        return Err(Error::DegenerateData(
            "within-class scatter is singular after regularization; reduce dimensionality with PCA first".into(),
        ));
    }
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let whiten = &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose();
    let m = &whiten * sb * &whiten;
    let m = (&m + m.transpose()) * 0.5;
    let (values, vectors) = sorted_eigen(m);
    let mut projection = whiten * vectors.columns(0, out_dim);
    for mut col in projection.column_iter_mut() {
        canonical_sign(&mut col);
    }
    if projection.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("LDA projection"));
    }
    let class_means = classes
        .iter()
        .zip(&means)
        .map(|(&c, mu)| (c, (projection.transpose() * (mu - &mean)).iter().copied().collect()))
        .collect();
    Ok(LdaModel {
        mean,
        projection,
        eigenvalues: values[..out_dim].to_vec(),
        class_means,
    })
}

impl LdaModel {
    pub fn dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.mean.len() {
            return Err(Error::dim("lda transform", &[x.len()], &[self.mean.len()]));
        }
        let centred = DVector::from_column_slice(x) - &self.mean;
        Ok((self.projection.transpose() * centred).iter().copied().collect())
    }

    pub fn transform_rows(&self, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if data.ncols() != self.mean.len() {
            return Err(Error::dim("lda transform", &[data.ncols()], &[self.mean.len()]));
        }
        let mut x = data.clone();
        for mut row in x.row_iter_mut() {
            row -= self.mean.transpose();
        }
        Ok(x * &self.projection)
    }
}

/// Feature pipelines compared by [`baseline_pipeline`].
pub const VARIANTS: [&str; 4] = ["RAW", "PCA", "PCA+LDA", "PCA+LDA-Chebyshev"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub ks: Vec<usize>,
    pub metric: Metric,
    pub pca: Retain,
    /// Defaults to `classes − 1` (capped by the PCA dimension).
    pub lda_dim: Option<usize>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            ks: vec![1, 3, 5],
            metric: Metric::Euclidean,
            pca: Retain::default(),
            lda_dim: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineReport {
    pub ks: Vec<usize>,
    /// `accuracy[row][variant]`, rows aligned with `ks`, columns with [`VARIANTS`].
    pub accuracy: Vec<[f64; 4]>,
    pub metric: String,
    pub pca_dim: usize,
    pub lda_dim: usize,
    pub train_samples: usize,
    pub val_samples: usize,
}

impl BaselineReport {
    /// Comma-separated table: one row per k, one column per variant.
    pub fn to_delimited(&self) -> String {
        let mut out = format!("k,{}\n", VARIANTS.join(","));
        for (k, row) in self.ks.iter().zip(&self.accuracy) {
            let cells: Vec<String> = row.iter().map(|a| format!("{a:.4}")).collect();
            out.push_str(&format!("{k},{}\n", cells.join(",")));
        }
        out
    }
}

fn accuracy(model: &KnnModel, queries: &DMatrix<f64>, truth: &[usize]) -> Result<f64> {
    let pred = model.classify_batch(queries)?;
    Ok(pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / truth.len().max(1) as f64)
}

/// Runs every variant for every k on precomputed `[n, d]` features. PCA and
/// LDA are fitted on the training rows only.
pub fn baseline_pipeline_features(
    train_x: &DMatrix<f64>,
    train_y: &[usize],
    val_x: &DMatrix<f64>,
    val_y: &[usize],
    cfg: &BaselineConfig,
) -> Result<BaselineReport> {
    cfg.metric.validate()?;
    if val_y.is_empty() {
        return Err(Error::Validation("validation set is empty".into()));
    }
    let known: BTreeSet<usize> = train_y.iter().copied().collect();
    let missing: BTreeSet<usize> = val_y.iter().copied().filter(|l| !known.contains(l)).collect();
    if !missing.is_empty() {
        return Err(Error::Validation(format!(
            "classes {missing:?} appear in validation but not in training"
        )));
    }
    let pca = pca_fit(train_x, cfg.pca)?;
    let train_p = pca.transform_rows(train_x)?;
    let val_p = pca.transform_rows(val_x)?;
    let lda = lda_fit(&train_p, train_y, cfg.lda_dim.map(|d| d.min(pca.dim())))?;
    let train_l = lda.transform_rows(&train_p)?;
    let val_l = lda.transform_rows(&val_p)?;

    let mut rows = Vec::with_capacity(cfg.ks.len());
    for &k in &cfg.ks {
        let run = |tx: &DMatrix<f64>, vx: &DMatrix<f64>, metric: Metric| -> Result<f64> {
            accuracy(&KnnModel::fit(tx, train_y, k, metric)?, vx, val_y)
        };
        rows.push([
            run(train_x, val_x, cfg.metric)?,
            run(&train_p, &val_p, cfg.metric)?,
            run(&train_l, &val_l, cfg.metric)?,
            run(&train_l, &val_l, Metric::Chebyshev)?,
        ]);
    }
    Ok(BaselineReport {
        ks: cfg.ks.clone(),
        accuracy: rows,
        metric: cfg.metric.to_string(),
        pca_dim: pca.dim(),
        lda_dim: lda.dim(),
        train_samples: train_y.len(),
        val_samples: val_y.len(),
    })
}

/// [`baseline_pipeline_features`] on grayscale-unrolled dataset samples.
pub fn baseline_pipeline(train: &LabeledDataset, val: &LabeledDataset, cfg: &BaselineConfig) -> Result<BaselineReport> {
    if train.classes() != val.classes() {
        return Err(Error::Validation("train and validation sets use different class tables".into()));
    }
    let (tx, ty) = feature_matrix(train)?;
    let (vx, vy) = feature_matrix(val)?;
    baseline_pipeline_features(&tx, &ty, &vx, &vy, cfg)
}

/// Seeded synthetic classification set: class means sit in a low-variance
/// subspace while a few shared high-variance directions carry pure
/// nuisance, so raw distances are dominated by noise that a discriminant
/// projection removes. Samples are `[1, dim, 1]`.
pub fn correlated_blobs(classes: usize, per_class: usize, dim: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let nuisance_dirs = 3.min(dim);
    let nuisance: Vec<Vec<f64>> = (0..nuisance_dirs)
        .map(|_| (0..dim).map(|_| unit.sample(&mut rng)).collect())
        .collect();
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| unit.sample(&mut rng)).collect())
        .collect();
    let mut samples = Vec::with_capacity(classes * per_class);
    for i in 0..per_class {
        for (c, mu) in means.iter().enumerate() {
            let mut x: Vec<f64> = mu.iter().map(|m| m + 0.8 * unit.sample(&mut rng)).collect();
            for dir in &nuisance {
                let z = 0.8 * unit.sample(&mut rng);
                for (v, d) in x.iter_mut().zip(dir) {
                    *v += z * d;
                }
            }
            samples.push(Sample {
                id: format!("blob-{c}-{i}"),
                features: Tensor::new([1, dim, 1], x.iter().map(|&v| v as f32).collect()).expect("consistent extents"),
                label: c,
            });
        }
    }
    LabeledDataset::new(
        samples,
        (0..classes).map(|c| format!("class-{c}")).collect(),
        format!("correlated blobs (seed {seed})"),
    )
    .expect("generated labels are valid")
}
