use std::path::PathBuf;

use callo::baseline::{baseline_pipeline, feature_matrix, BaselineConfig, KnnModel, Metric, Retain};
use callo::{Error, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;

use crate::data::DataArgs;
use crate::run::{create_dir, write_text, RunManifest};
use crate::Context;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricArg {
    Euclidean,
    Chebyshev,
    Minkowski,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct KnnArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// Neighbour counts, comma separated
    #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
    pub ks: Vec<usize>,

    #[arg(long, value_enum, default_value_t = MetricArg::Euclidean)]
    pub metric: MetricArg,

    /// Minkowski exponent
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,

    /// Share of variance PCA keeps
    #[arg(long, default_value_t = 0.95)]
    pub pca_fraction: f64,

    /// Fixed PCA component count (overrides --pca-fraction)
    #[arg(long)]
    pub pca_components: Option<usize>,

    /// LDA output dimension (default: classes − 1)
    #[arg(long)]
    pub lda_dim: Option<usize>,

    /// Only the RAW variant (skips PCA and LDA)
    #[arg(long)]
    pub raw_only: bool,

    /// Repeat the whole pipeline and require identical results
    #[arg(long, default_value_t = 1)]
    pub runs: usize,

    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

impl KnnArgs {
    fn metric(&self) -> Metric {
        match self.metric {
            MetricArg::Euclidean => Metric::Euclidean,
            MetricArg::Chebyshev => Metric::Chebyshev,
            MetricArg::Minkowski => Metric::Minkowski { p: self.p },
        }
    }
}

fn once(args: &KnnArgs, ctx: Context) -> Result<String> {
    let (train, test) = args.data.load(ctx.seed)?;
    if args.raw_only {
        let (tx, ty) = feature_matrix(&train)?;
        let (vx, vy) = feature_matrix(&test)?;
        let mut table = String::from("k,RAW\n");
        for &k in &args.ks {
            let pred = KnnModel::fit(&tx, &ty, k, args.metric())?.classify_batch(&vx)?;
            let acc = pred.iter().zip(&vy).filter(|(p, t)| p == t).count() as f64 / vy.len() as f64;
            table.push_str(&format!("{k},{acc:.4}\n"));
        }
        return Ok(table);
    }
    let cfg = BaselineConfig {
        ks: args.ks.clone(),
        metric: args.metric(),
        pca: args.pca_components.map_or(Retain::Fraction(args.pca_fraction), Retain::Count),
        lda_dim: args.lda_dim,
    };
    let report = baseline_pipeline(&train, &test, &cfg)?;
    eprintln!(
        "{} train / {} test samples; PCA keeps {} components, LDA {}",
        report.train_samples, report.val_samples, report.pca_dim, report.lda_dim
    );
    Ok(report.to_delimited())
}

pub fn run(args: &KnnArgs, ctx: Context) -> Result<()> {
    if args.ks.is_empty() || args.runs == 0 {
        return Err(Error::Config("need at least one k and one run".into()));
    }
    create_dir(&args.out)?;
    let first = once(args, ctx)?;
    for run in 1..args.runs {
        if once(args, ctx)? != first {
            return Err(Error::State(format!("run {} differs from run 0", run + 1)));
        }
    }
    write_text(&args.out.join("report.csv"), &first)?;
    let mut manifest = RunManifest::new("knn", ctx.seed, ctx.threads, args);
    manifest.resolve("metric", args.metric().to_string());
    manifest.resolve("runs_identical", args.runs);
    manifest.outputs.push(args.out.join("report.csv"));
    manifest.write(&args.out)?;
    print!("{first}");
    if args.runs > 1 {
        println!("{} runs identical (σ = 0 for every cell)", args.runs);
    }
    Ok(())
}
