use std::path::{Path, PathBuf};

use callo::datasets::LabeledDataset;
use callo::nn::{checkpoint, Network, NetworkSpec};
use callo::optim::{evaluate, train_loop, EvalRecord, StepRecord, TrainConfig, TrainObserver};
use callo::{Error, Result, Scalar};
use clap::{Args, ValueEnum};
use serde::Serialize;

use crate::data::{DataArgs, Part};
use crate::model::{ModelArgs, CHECKPOINT_FILE, SPEC_FILE};
use crate::run::{create_dir, write_text, RunManifest};
use crate::Context;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// Preset name or network TOML
    #[arg(long, default_value = "mnist")]
    pub net: String,

    /// Training configuration TOML; flags below override it
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[arg(long)]
    pub max_steps: Option<u64>,

    #[arg(long)]
    pub batch_size: Option<usize>,

    #[arg(long)]
    pub learning_rate: Option<f64>,

    /// Evaluate every N steps (0: only at the end)
    #[arg(long)]
    pub eval_every: Option<u64>,

    /// Write model.ckpt every N steps (0: only at the end)
    #[arg(long)]
    pub checkpoint_every: Option<u64>,

    #[arg(long, value_enum, default_value_t = Precision::F32)]
    pub precision: Precision,

    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    #[command(flatten)]
    pub data: DataArgs,

    /// Which part of the dataset to score
    #[arg(long, value_enum, default_value_t = Part::Test)]
    pub part: Part,

    #[arg(long, default_value_t = 100)]
    pub batch_size: usize,

    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

fn resolve_config(args: &TrainArgs, seed: u64) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| crate::run::io(path, e))?;
            TrainConfig::from_toml(&text)?
        }
        None => TrainConfig::default(),
    };
    cfg.seed = seed;
    if let Some(v) = args.max_steps {
        cfg.max_steps = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.eval_every {
        cfg.eval_every = v;
    }
    if let Some(v) = args.checkpoint_every {
        cfg.checkpoint_every = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn check_shape(spec: &NetworkSpec, ds: &LabeledDataset) -> Result<()> {
    match ds.feature_shape() {
        Some(shape) if shape != spec.input.as_slice() => Err(Error::Validation(format!(
            "dataset samples are {shape:?} but the network expects {:?}",
            spec.input
        ))),
        _ if ds.classes().len() > spec.classes() => Err(Error::Validation(format!(
            "dataset has {} classes but the network outputs {}",
            ds.classes().len(),
            spec.classes()
        ))),
        _ => Ok(()),
    }
}

struct Progress<'a> {
    out: &'a Path,
    max_steps: u64,
    last_loss: f64,
}

impl<T: Scalar> TrainObserver<T> for Progress<'_> {
    fn on_step(&mut self, record: &StepRecord) {
        self.last_loss = record.loss;
    }

    fn on_eval(&mut self, r: &EvalRecord) {
        let val = r.val_accuracy.map(|v| format!(", val accuracy {v:.4}")).unwrap_or_default();
        eprintln!(
            "step {}/{}: loss {:.4}, train accuracy {:.4}{val}",
            r.step, self.max_steps, self.last_loss, r.train_accuracy
        );
    }

    fn on_checkpoint(&mut self, _step: u64, net: &Network<T>) -> Result<()> {
        checkpoint::save(net, &self.out.join(CHECKPOINT_FILE))
    }
}

fn train_with<T: Scalar>(
    spec: NetworkSpec,
    train: &LabeledDataset,
    test: &LabeledDataset,
    cfg: &TrainConfig,
    out: &Path,
    manifest: &mut RunManifest,
) -> Result<()> {
    let mut net = Network::<T>::new(spec, cfg.seed)?;
    let mut progress = Progress {
        out,
        max_steps: cfg.max_steps,
        last_loss: f64::NAN,
    };
    let history = train_loop(&mut net, train, Some(test), cfg, &mut progress)?;
    checkpoint::save(&net, &out.join(CHECKPOINT_FILE))?;
    write_text(&out.join("history.csv"), &history.to_csv())?;
    let test_acc = evaluate(&net, test, 100)?.accuracy;
    manifest.resolve("test_accuracy", test_acc);
    manifest.outputs.extend([out.join(CHECKPOINT_FILE), out.join("history.csv")]);
    println!("trained {} steps; test accuracy {test_acc:.4} on {} samples", cfg.max_steps, test.len());
    Ok(())
}

pub fn run_train(args: &TrainArgs, ctx: Context) -> Result<()> {
    let spec = NetworkSpec::resolve(&args.net)?;
    let cfg = resolve_config(args, ctx.seed)?;
    let (train, test) = args.data.load(ctx.seed)?;
    check_shape(&spec, &train)?;
    create_dir(&args.out)?;
    write_text(&args.out.join(SPEC_FILE), &spec.to_toml())?;

    let mut manifest = RunManifest::new("train", ctx.seed, ctx.threads, args);
    manifest.resolve("train_config", &cfg);
    manifest.resolve("network", &spec);
    manifest.resolve("train_samples", train.len());
    manifest.resolve("test_samples", test.len());
    manifest.outputs.push(args.out.join(SPEC_FILE));
    match args.precision {
        Precision::F32 => train_with::<f32>(spec, &train, &test, &cfg, &args.out, &mut manifest)?,
        Precision::F64 => train_with::<f64>(spec, &train, &test, &cfg, &args.out, &mut manifest)?,
    }
    manifest.write(&args.out)
}

pub fn run_eval(args: &EvalArgs, ctx: Context) -> Result<()> {
    let net = args.model.load::<f32>()?;
    let ds = args.data.load_part(args.part, ctx.seed)?;
    check_shape(net.spec(), &ds)?;
    let eval = evaluate(&net, &ds, args.batch_size)?;
    create_dir(&args.out)?;

    let names: Vec<String> = (0..eval.confusion.len())
        .map(|c| ds.classes().get(c).cloned().unwrap_or_else(|| c.to_string()))
        .collect();
    let mut csv = format!("true\\predicted,{}\n", names.join(","));
    for (name, row) in names.iter().zip(&eval.confusion) {
        let cells: Vec<String> = row.iter().map(usize::to_string).collect();
        csv.push_str(&format!("{name},{}\n", cells.join(",")));
    }
    write_text(&args.out.join("confusion.csv"), &csv)?;

    let mut manifest = RunManifest::new("eval", ctx.seed, ctx.threads, args);
    manifest.resolve("accuracy", eval.accuracy);
    manifest.resolve("samples", ds.len());
    manifest.outputs.push(args.out.join("confusion.csv"));
    manifest.write(&args.out)?;
    println!("accuracy {:.4} on {} samples", eval.accuracy, ds.len());
    Ok(())
}
