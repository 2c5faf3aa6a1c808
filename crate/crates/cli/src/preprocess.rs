use std::path::{Path, PathBuf};

use callo::imaging::{preprocess, save_gray, Image, Preprocessed};
use callo::{Error, Result};
use clap::Args;
use rayon::prelude::*;
use serde::Serialize;

use crate::run::{create_dir, io, write_text, RunManifest};
use crate::Context;

const EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "ppm", "pgm"];

#[derive(Debug, Clone, Args, Serialize)]
pub struct PreprocessArgs {
    /// Directory of input photos
    #[arg(long)]
    pub input: PathBuf,

    /// Output directory for crops, masks and diagnostics
    #[arg(long)]
    pub out: PathBuf,

    /// Side of the square passport crop
    #[arg(long, default_value_t = 256)]
    pub out_size: usize,

    /// Exit with a data error when any image fails
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Status {
    /// Level crop from a two-mode saturation histogram.
    Success,
    /// Crop written, but the threshold fell back or the result is not level.
    Fallback,
    /// No crop could be produced.
    Failure,
}

#[derive(Debug, Serialize)]
struct Sidecar {
    file: String,
    status: Status,
    error: Option<String>,
    threshold_bin: Option<usize>,
    threshold_fallback: Option<bool>,
    components: Option<usize>,
    mask_pixels: Option<usize>,
    theta_deg: Option<f64>,
    confidence: Option<f64>,
    low_confidence: Option<bool>,
    residual_deg: Option<f64>,
    crop: Option<[usize; 4]>,
}

impl Sidecar {
    fn failed(file: String, e: &Error) -> Self {
        Self {
            file,
            status: Status::Failure,
            error: Some(e.to_string()),
            threshold_bin: None,
            threshold_fallback: None,
            components: None,
            mask_pixels: None,
            theta_deg: None,
            confidence: None,
            low_confidence: None,
            residual_deg: None,
            crop: None,
        }
    }

    fn from_result(file: String, p: &Preprocessed) -> Self {
        let fallback = p.segmentation.threshold.fallback;
        let c = p.passport.crop;
        Self {
            file,
            status: if p.is_level() && !fallback { Status::Success } else { Status::Fallback },
            error: None,
            threshold_bin: Some(p.segmentation.threshold.bin),
            threshold_fallback: Some(fallback),
            components: Some(p.segmentation.components),
            mask_pixels: Some(p.segmentation.mask.pixel_count()),
            theta_deg: Some(p.orientation.theta.to_degrees()),
            confidence: Some(p.orientation.confidence),
            low_confidence: Some(p.orientation.low_confidence),
            residual_deg: Some(p.residual_deg).filter(|r| r.is_finite()),
            crop: Some([c.x0, c.y0, c.x1, c.y1]),
        }
    }
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| io(dir, e))? {
        let path = entry.map_err(|e| io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn process_one(path: &Path, out: &Path, size: usize) -> Result<Sidecar> {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
    let sidecar = match Image::load(path).and_then(|img| preprocess(&img, size)) {
        Ok(p) => {
            p.passport.image.save(&out.join(format!("{stem}-passport.png")))?;
            save_gray(&p.passport.mask, &out.join(format!("{stem}-mask.png")))?;
            Sidecar::from_result(name, &p)
        }
        Err(e @ (Error::Io { .. } | Error::Config(_))) => return Err(e),
        Err(e) => Sidecar::failed(name, &e),
    };
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    write_text(&out.join(format!("{stem}.json")), &(json + "\n"))?;
    Ok(sidecar)
}

pub fn run(args: &PreprocessArgs, ctx: Context) -> Result<()> {
    if args.out_size < 2 {
        return Err(Error::Config(format!("--out-size must be at least 2, got {}", args.out_size)));
    }
    let files = list_images(&args.input)?;
    create_dir(&args.out)?;
    let results = files
        .par_iter()
        .map(|f| process_one(f, &args.out, args.out_size))
        .collect::<Result<Vec<_>>>()?;

    let count = |s: Status| results.iter().filter(|r| r.status == s).count();
    let (ok, fallback, failed) = (count(Status::Success), count(Status::Fallback), count(Status::Failure));
    let mut csv = String::from("file,status,theta_deg,residual_deg,error\n");
    for r in &results {
        let fmt = |v: Option<f64>| v.map(|v| format!("{v:.3}")).unwrap_or_default();
        let status = serde_json::to_value(r.status).expect("status serializes");
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.file,
            status.as_str().unwrap_or_default(),
            fmt(r.theta_deg),
            fmt(r.residual_deg),
            r.error.as_deref().unwrap_or_default().replace(',', ";")
        ));
    }
    write_text(&args.out.join("summary.csv"), &csv)?;

    let mut manifest = RunManifest::new("preprocess", ctx.seed, ctx.threads, args);
    manifest.resolve("counts", serde_json::json!({"success": ok, "fallback": fallback, "failure": failed}));
    manifest.outputs.push(args.out.join("summary.csv"));
    manifest.write(&args.out)?;
    println!(
        "preprocessed {} images: {ok} success, {fallback} fallback, {failed} failure",
        results.len()
    );
    if args.strict && failed > 0 {
        return Err(Error::SegmentationFailed(format!("{failed} of {} images failed (--strict)", results.len())));
    }
    Ok(())
}
