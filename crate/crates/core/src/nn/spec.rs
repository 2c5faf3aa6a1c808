//! Declarative network topologies.
//!
//! A [`NetworkSpec`] is stored as TOML: an `input` shape (`[h, w, c]` for
//! images or `[features]`), a `loss`, and an ordered `[[layers]]` array where
//! each entry carries a `kind` plus its parameters:
//!
//! | kind      | parameters                                                     |
//! |-----------|----------------------------------------------------------------|
//! | `conv`    | `filters`, `kernel` (odd for same padding), `stride` = 1, `padding` = `"same"` / `"valid"` |
//! | `maxpool` | `window`, `stride` = `window`                                  |
//! | `relu`    | none                                                           |
//! | `lrn`     | `k` = 2, `n` = 5, `alpha` = 1e-4, `beta` = 0.75                |
//! | `dropout` | `p` in `[0, 1)`                                                |
//! | `flatten` | none                                                           |
//! | `dense`   | `units`                                                        |
//! | `softmax` | none; only allowed last                                        |
//!
//! The shipped presets live in `presets/*.toml`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{ConvGeometry, Padding, PoolGeometry};

fn one() -> usize {
    1
}

fn lrn_k() -> f64 {
    2.0
}

fn lrn_n() -> usize {
    5
}

fn lrn_alpha() -> f64 {
    1e-4
}

fn lrn_beta() -> f64 {
    0.75
}

/// One layer of a network description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    Conv {
        filters: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: Padding,
    },
    Maxpool {
        window: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stride: Option<usize>,
    },
    Relu,
    /// Cross-channel local response normalization.
    Lrn {
        #[serde(default = "lrn_k")]
        k: f64,
        #[serde(default = "lrn_n")]
        n: usize,
        #[serde(default = "lrn_alpha")]
        alpha: f64,
        #[serde(default = "lrn_beta")]
        beta: f64,
    },
    Dropout {
        p: f64,
    },
    Flatten,
    Dense {
        units: usize,
    },
    Softmax,
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Maxpool { .. } => "maxpool",
            LayerSpec::Relu => "relu",
            LayerSpec::Lrn { .. } => "lrn",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Softmax => "softmax",
        }
    }

    pub fn lrn_default() -> Self {
        LayerSpec::Lrn {
            k: lrn_k(),
            n: lrn_n(),
            alpha: lrn_alpha(),
            beta: lrn_beta(),
        }
    }

    /// Output shape of this layer for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let spatial = |what: &str| -> Result<[usize; 3]> {
            match *input {
                [h, w, c] => Ok([h, w, c]),
                _ => Err(Error::Config(format!(
                    "{what} layer needs an [h, w, c] input, got {input:?}"
                ))),
            }
        };
        match *self {
            LayerSpec::Conv {
                filters,
                kernel,
                stride,
                padding,
            } => {
                if filters == 0 {
                    return Err(Error::Config("conv filters must be at least 1".into()));
                }
                let g = ConvGeometry::new(spatial("conv")?, (kernel, kernel), stride, padding)?;
                Ok(vec![g.out_h, g.out_w, filters])
            }
            LayerSpec::Maxpool { window, stride } => {
                let g = PoolGeometry::new(spatial("maxpool")?, window, stride.unwrap_or(window))?;
                Ok(vec![g.out_h, g.out_w, g.channels])
            }
            LayerSpec::Lrn { k, n, alpha, beta } => {
                spatial("lrn")?;
                if n % 2 == 0 || k <= 0.0 || !alpha.is_finite() || !beta.is_finite() {
                    return Err(Error::Config(format!(
                        "lrn needs odd n and k > 0 (got n={n}, k={k}, alpha={alpha}, beta={beta})"
                    )));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Dropout { p } => {
                if !(0.0..1.0).contains(&p) {
                    return Err(Error::Config(format!("dropout p must be in [0, 1), got {p}")));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dense { units } => {
                if units == 0 {
                    return Err(Error::Config("dense units must be at least 1".into()));
                }
                Ok(vec![units])
            }
            LayerSpec::Softmax => {
                if input.len() != 1 {
                    return Err(Error::Config(format!(
                        "softmax needs a flat input, got {input:?}"
                    )));
                }
                Ok(input.to_vec())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Softmax cross-entropy on logits, averaged over the batch.
    #[default]
    CrossEntropy,
    /// `½ Σ (t − o)²` against one-hot targets.
    SquaredError,
}

/// A full network description: input shape, loss and layer sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub input: Vec<usize>,
    #[serde(default)]
    pub loss: LossKind,
    pub layers: Vec<LayerSpec>,
}

pub const PRESETS: &[(&str, &str)] = &[
    ("mnist", include_str!("../../presets/mnist.toml")),
    ("dumbnet-simple", include_str!("../../presets/dumbnet-simple.toml")),
    ("deepsense-like", include_str!("../../presets/deepsense-like.toml")),
];

impl NetworkSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: NetworkSpec = toml::from_str(text).map_err(|e| Error::Format {
            format: "network config",
            reason: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("network specs always serialize")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| {
                let known: Vec<_> = PRESETS.iter().map(|(n, _)| *n).collect();
                Error::Config(format!("unknown preset {name:?}; known presets: {known:?}"))
            })?;
        Self::from_toml(text)
    }

    /// Resolves either a preset name or a path to a TOML file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if PRESETS.iter().any(|(n, _)| *n == name_or_path) {
            Self::preset(name_or_path)
        } else if !Path::new(name_or_path).exists() {
            let known: Vec<_> = PRESETS.iter().map(|(n, _)| *n).collect();
            Err(Error::Config(format!(
                "{name_or_path:?} is neither a preset ({known:?}) nor an existing file"
            )))
        } else {
            Self::load(Path::new(name_or_path))
        }
    }

    /// Per-layer output shapes (per sample), validating that every layer
    /// composes with its predecessor and that the last one emits logits.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if !(self.input.len() == 1 || self.input.len() == 3) || self.input.contains(&0) {
            return Err(Error::Config(format!(
                "input must be [features] or [h, w, c] with positive extents, got {:?}",
                self.input
            )));
        }
        if self.layers.is_empty() {
            return Err(Error::Config("network has no layers".into()));
        }
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut current = self.input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            if matches!(layer, LayerSpec::Softmax) && i + 1 != self.layers.len() {
                return Err(Error::Config("softmax may only be the final layer".into()));
            }
            current = layer.output_shape(&current).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("layer {i} ({}): {msg}", layer.name())),
                other => other,
            })?;
            shapes.push(current.clone());
        }
        if current.len() != 1 || current[0] < 2 {
            return Err(Error::Config(format!(
                "final layer must produce class logits (at least 2), got shape {current:?}"
            )));
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        self.layer_shapes().map(|_| ())
    }

    pub fn classes(&self) -> usize {
        self.layer_shapes()
            .ok()
            .and_then(|s| s.last().map(|l| l[0]))
            .unwrap_or(0)
    }

    /// SHA-256 over the topology (input, loss, layers); the display name is
    /// excluded so renaming a config does not orphan its checkpoints.
    pub fn topology_hash(&self) -> [u8; 32] {
        let canonical = serde_json::to_vec(&(&self.input, &self.loss, &self.layers))
            .expect("topology serializes");
        Sha256::digest(&canonical).into()
    }
}
