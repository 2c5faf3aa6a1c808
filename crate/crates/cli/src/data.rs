use std::path::PathBuf;

use callo::baseline::correlated_blobs;
use callo::datasets::{alpha_filter, load_mnist_dir, split, stratified_sample, LabeledDataset, Manifest, MnistPart, SplitSpec};
use callo::{Error, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;

/// Where labelled data comes from. Exactly one source may be given.
#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Directory holding the four MNIST idx files
    #[arg(long, group = "source")]
    pub mnist: Option<PathBuf>,

    /// Two-column CSV of image filename and label
    #[arg(long, group = "source")]
    pub manifest: Option<PathBuf>,

    /// Image directory for --manifest (defaults to the CSV's directory)
    #[arg(long, requires = "manifest")]
    pub root: Option<PathBuf>,

    /// Seeded synthetic 10-class correlated-blob set
    #[arg(long, group = "source")]
    pub blobs: bool,

    /// Resize manifest images to SIZE×SIZE
    #[arg(long)]
    pub image_size: Option<usize>,

    /// Drop classes with fewer samples than this
    #[arg(long, default_value_t = 1)]
    pub min_count: usize,

    /// Training share for sources without a fixed split
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,

    /// Stratified subsample of the training part
    #[arg(long)]
    pub limit_train: Option<usize>,

    /// Stratified subsample of the test part
    #[arg(long)]
    pub limit_test: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Part {
    Train,
    Test,
}

pub const BLOB_CLASSES: usize = 10;
pub const BLOB_PER_CLASS: usize = 60;
pub const BLOB_DIM: usize = 40;

impl DataArgs {
    pub fn has_source(&self) -> bool {
        self.mnist.is_some() || self.manifest.is_some() || self.blobs
    }

    /// Train and test parts. MNIST keeps its official split; other sources
    /// are split per class with `seed`.
    pub fn load(&self, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
        let (train, test) = if let Some(dir) = &self.mnist {
            (load_mnist_dir(dir, MnistPart::Train)?, load_mnist_dir(dir, MnistPart::Test)?)
        } else {
            let full = if let Some(csv) = &self.manifest {
                let manifest = Manifest::read(csv, self.root.as_deref())?;
                let (manifest, report) = manifest.alpha_filter(self.min_count)?;
                if !report.dropped.is_empty() {
                    eprintln!(
                        "class filter: kept {} samples, dropped {}",
                        report.kept_samples(),
                        report.dropped_samples()
                    );
                }
                manifest.load(self.image_size.map(|s| (s, s)))?
            } else if self.blobs {
                correlated_blobs(BLOB_CLASSES, BLOB_PER_CLASS, BLOB_DIM, seed)
            } else {
                return Err(Error::Config("no dataset given; pass --mnist, --manifest or --blobs".into()));
            };
            let full = if self.manifest.is_none() && self.min_count > 1 {
                alpha_filter(&full, self.min_count)?.0
            } else {
                full
            };
            split(
                &full,
                &SplitSpec {
                    train_fraction: self.train_fraction,
                    seed,
                    stratified: true,
                },
            )?
        };
        Ok((limit(train, self.limit_train, seed)?, limit(test, self.limit_test, seed)?))
    }

    pub fn load_part(&self, part: Part, seed: u64) -> Result<LabeledDataset> {
        let (train, test) = self.load(seed)?;
        Ok(match part {
            Part::Train => train,
            Part::Test => test,
        })
    }
}

fn limit(ds: LabeledDataset, n: Option<usize>, seed: u64) -> Result<LabeledDataset> {
    match n {
        Some(n) if n < ds.len() => ds.subset(&stratified_sample(&ds.labels(), n, seed)),
        _ => Ok(ds),
    }
}
