use std::path::{Path, PathBuf};

use callo::imaging::{resize, Image};
use callo::nn::{checkpoint, Network, NetworkSpec};
use callo::{Error, Result, Scalar, Tensor};
use clap::Args;
use serde::Serialize;

pub const SPEC_FILE: &str = "network.toml";
pub const CHECKPOINT_FILE: &str = "model.ckpt";

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    /// Checkpoint written by `callo train`
    #[arg(long)]
    pub checkpoint: PathBuf,

    /// Preset name or network TOML (defaults to network.toml beside the checkpoint)
    #[arg(long)]
    pub net: Option<String>,
}

impl ModelArgs {
    pub fn spec(&self) -> Result<NetworkSpec> {
        match &self.net {
            Some(name) => NetworkSpec::resolve(name),
            None => {
                let dir = self.checkpoint.parent().unwrap_or(Path::new("."));
                NetworkSpec::load(&dir.join(SPEC_FILE))
            }
        }
    }

    pub fn load<T: Scalar>(&self) -> Result<Network<T>> {
        checkpoint::load(&self.spec()?, &self.checkpoint)
    }
}

/// Loads an image file and converts it to a network's `[h, w, c]` input:
/// resized to the input extent, grayscale when the input has one channel.
pub fn image_input(path: &Path, input: &[usize]) -> Result<(Image, Tensor<f64>)> {
    let (h, w, c) = match *input {
        [h, w, c] => (h, w, c),
        _ => return Err(Error::Config(format!("network input {input:?} is not an image"))),
    };
    let img = Image::load(path)?;
    let resized = Image::new(resize(img.pixels(), h, w)?)?;
    let x = match c {
        3 => resized.pixels().clone(),
        1 => resized.to_gray().reshape([h, w, 1])?,
        _ => return Err(Error::Config(format!("network input needs {c} channels; images have 1 or 3"))),
    };
    Ok((resized, x))
}
