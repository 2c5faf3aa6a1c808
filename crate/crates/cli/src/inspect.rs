use std::path::PathBuf;

use callo::imaging::save_gray;
use callo::interpret::{dead_neuron_report, dead_neurons_csv, dump_activations, saliency, Occlusion, SaliencyConfig};
use callo::Result;
use clap::{Args, ValueEnum};
use serde::Serialize;

use crate::data::{DataArgs, Part};
use crate::model::{image_input, ModelArgs};
use crate::run::{create_dir, write_text, RunManifest};
use crate::Context;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FillArg {
    Zero,
    Mean,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SaliencyArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    /// Image to explain
    #[arg(long)]
    pub image: PathBuf,

    /// Class to explain (default: the predicted one)
    #[arg(long)]
    pub target: Option<usize>,

    /// Occlusion box side (default: 16 px at 256², scaled)
    #[arg(long = "box")]
    pub box_size: Option<usize>,

    /// Grid stride (default: 8 px at 256², scaled)
    #[arg(long)]
    pub stride: Option<usize>,

    #[arg(long, value_enum, default_value_t = FillArg::Zero)]
    pub fill: FillArg,

    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ActivationsArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    /// Image whose activations are dumped
    #[arg(long)]
    pub image: PathBuf,

    /// Optional probe set for the dead-neuron report
    #[command(flatten)]
    pub data: DataArgs,

    /// Probe samples drawn from the test part
    #[arg(long, default_value_t = 256)]
    pub probe_count: usize,

    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_saliency(args: &SaliencyArgs, ctx: Context) -> Result<()> {
    let net = args.model.load::<f64>()?;
    let (image, x) = image_input(&args.image, net.input_shape())?;
    let (h, w) = (x.shape()[0], x.shape()[1]);
    let defaults = SaliencyConfig::for_size(h, w);
    let cfg = SaliencyConfig {
        box_size: args.box_size.unwrap_or(defaults.box_size),
        stride: args.stride.unwrap_or(defaults.stride),
        fill: match args.fill {
            FillArg::Zero => Occlusion::Zero,
            FillArg::Mean => Occlusion::Mean,
        },
    };
    let target = match args.target {
        Some(t) => t,
        None => net.predict(&x.clone().reshape([1, h, w, x.shape()[2]])?)?[0],
    };
    let map = saliency(&net, &x, target, &cfg)?;
    create_dir(&args.out)?;
    let outputs = ["heat.csv", "heat.png", "heat.pgm", "overlay.png"].map(|f| args.out.join(f));
    write_text(&outputs[0], &map.to_csv())?;
    map.heat_image().save(&outputs[1])?;
    let full = map.upsample();
    let scale = full.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gray = full.map(|v| if scale > 0.0 { 0.5 + 0.5 * v / scale } else { 0.5 });
    save_gray(&gray, &outputs[2])?;
    map.overlay(&image)?.save(&outputs[3])?;

    let mut manifest = RunManifest::new("saliency", ctx.seed, ctx.threads, args);
    manifest.resolve("config", cfg);
    manifest.resolve("target", target);
    manifest.resolve("baseline_probability", map.baseline);
    manifest.resolve("grid", map.heat.shape());
    manifest.outputs.extend(outputs);
    manifest.write(&args.out)?;
    println!(
        "class {target}: p0 {:.4}, grid {}x{}, heat range [{:.4}, {:.4}]",
        map.baseline,
        map.heat.shape()[0],
        map.heat.shape()[1],
        map.heat.data().iter().copied().fold(f64::INFINITY, f64::min),
        map.heat.data().iter().copied().fold(f64::NEG_INFINITY, f64::max),
    );
    Ok(())
}

pub fn run_activations(args: &ActivationsArgs, ctx: Context) -> Result<()> {
    let net = args.model.load::<f64>()?;
    let (_, x) = image_input(&args.image, net.input_shape())?;
    let dump = dump_activations(&net, &x)?;
    create_dir(&args.out)?;
    let mut manifest = RunManifest::new("activations", ctx.seed, ctx.threads, args);
    for layer in &dump.layers {
        let path = args.out.join(format!("layer{:02}-{}.pgm", layer.layer, layer.kind));
        save_gray(&layer.channel_grid(), &path)?;
        manifest.outputs.push(path);
    }
    write_text(&args.out.join("activations.csv"), &dump.to_csv())?;
    manifest.outputs.push(args.out.join("activations.csv"));
    let depths: Vec<(usize, usize)> = dump.layers.iter().map(|l| (l.layer, l.depth())).collect();
    manifest.resolve("layer_depths", &depths);

    if args.data.has_source() {
        let probes = args.data.load_part(Part::Test, ctx.seed)?;
        let n = args.probe_count.min(probes.len()).max(1);
        let (batch, _) = probes.batch::<f64>(&(0..n).collect::<Vec<_>>())?;
        let report = dead_neuron_report(&net, &batch)?;
        write_text(&args.out.join("dead_neurons.csv"), &dead_neurons_csv(&report))?;
        manifest.outputs.push(args.out.join("dead_neurons.csv"));
        let dead = report.iter().filter(|r| r.dead).count();
        manifest.resolve("dead_channels", dead);
        println!("dead channels: {dead} of {} over {n} probes", report.len());
    }
    manifest.write(&args.out)?;
    for l in &dump.layers {
        println!("layer {} ({}): {} channels", l.layer, l.kind, l.depth());
    }
    Ok(())
}
