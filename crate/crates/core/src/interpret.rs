//! Occlusion saliency, per-layer activation dumps and dead-neuron detection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::nn::{Layer, Network};
use crate::tensor::{Scalar, Tensor};

/// Value written into the occluded box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Occlusion {
    #[default]
    Zero,
    /// Per-channel mean of the image being explained.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaliencyConfig {
    pub box_size: usize,
    pub stride: usize,
    pub fill: Occlusion,
}

impl SaliencyConfig {
    /// 16 px boxes every 8 px at 256², scaled with the shorter image side.
    pub fn for_size(height: usize, width: usize) -> Self {
        let side = height.min(width) as f64;
        Self {
            box_size: ((16.0 * side / 256.0).round() as usize).max(1),
            stride: ((8.0 * side / 256.0).round() as usize).max(1),
            fill: Occlusion::Zero,
        }
    }
}

/// Number of box positions along one axis.
pub fn grid_len(extent: usize, box_size: usize, stride: usize) -> usize {
    (extent - box_size).div_ceil(stride) + 1
}

/// Top-left offset of grid cell `i`; the last cell is clamped to the edge.
fn cell_origin(i: usize, extent: usize, box_size: usize, stride: usize) -> usize {
    (i * stride).min(extent - box_size)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    /// `[gh, gw]`: `p₀ − p_occluded` per grid cell.
    pub heat: Tensor<f64>,
    pub box_size: usize,
    pub stride: usize,
    pub baseline: f64,
    pub target: usize,
    pub image_height: usize,
    pub image_width: usize,
}

impl SaliencyMap {
    /// Full-resolution `[h, w]` map: each pixel averages the heat of every
    /// cell whose box covers it.
    pub fn upsample(&self) -> Tensor<f64> {
        let (h, w) = (self.image_height, self.image_width);
        let (gh, gw) = (self.heat.shape()[0], self.heat.shape()[1]);
        let mut sum = vec![0.0; h * w];
        let mut count = vec![0u32; h * w];
        for i in 0..gh {
            let y0 = cell_origin(i, h, self.box_size, self.stride);
            for j in 0..gw {
                let x0 = cell_origin(j, w, self.box_size, self.stride);
                let v = self.heat.at(&[i, j]);
                for y in y0..y0 + self.box_size {
                    for x in x0..x0 + self.box_size {
                        sum[y * w + x] += v;
                        count[y * w + x] += 1;
                    }
                }
            }
        }
        let data = sum.iter().zip(&count).map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 }).collect();
        Tensor::new([h, w], data).expect("consistent extents")
    }

    /// Colormapped full-resolution heat, scaled by the largest magnitude.
    pub fn heat_image(&self) -> Image {
        colormap(&self.upsample())
    }

    /// Half-and-half blend of the grayscale image with the heat colormap.
    pub fn overlay(&self, image: &Image) -> Result<Image> {
        if image.height() != self.image_height || image.width() != self.image_width {
            return Err(Error::dim(
                "saliency overlay",
                &[image.height(), image.width()],
                &[self.image_height, self.image_width],
            ));
        }
        let gray = image.to_gray();
        let heat = self.heat_image();
        Ok(Image::from_fn(self.image_height, self.image_width, |y, x| {
            let g = gray.at(&[y, x]);
            heat.rgb(y, x).map(|c| 0.5 * g + 0.5 * c)
        }))
    }

    /// `row,col,y,x,heat` per grid cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,y,x,heat\n");
        let (gh, gw) = (self.heat.shape()[0], self.heat.shape()[1]);
        for i in 0..gh {
            for j in 0..gw {
                let y = cell_origin(i, self.image_height, self.box_size, self.stride);
                let x = cell_origin(j, self.image_width, self.box_size, self.stride);
                out.push_str(&format!("{i},{j},{y},{x},{:.9}\n", self.heat.at(&[i, j])));
            }
        }
        out
    }
}

/// Diverging blue → white → red map of `[h, w]` values, symmetric around 0.
pub fn colormap(values: &Tensor<f64>) -> Image {
    let (h, w) = (values.shape()[0], values.shape()[1]);
    let scale = values.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Image::from_fn(h, w, |y, x| {
        let v = if scale > 0.0 { values.at(&[y, x]) / scale } else { 0.0 };
        let t = (v + 1.0) / 2.0;
        if t < 0.5 {
            [2.0 * t, 2.0 * t, 1.0]
        } else {
            [1.0, 2.0 * (1.0 - t), 2.0 * (1.0 - t)]
        }
    })
}

const OCCLUSION_BATCH: usize = 32;

fn require_ready<T: Scalar>(net: &Network<T>) -> Result<()> {
    if net.is_initialized() {
        Ok(())
    } else {
        Err(Error::State("network parameters are not initialized".into()))
    }
}

/// Occlusion saliency of `image` (`[h, w, c]`) for class `target`. Boxes are
/// evaluated in parallel batches; the heat grid is ordered by position.
pub fn saliency<T: Scalar>(net: &Network<T>, image: &Tensor<T>, target: usize, cfg: &SaliencyConfig) -> Result<SaliencyMap> {
    require_ready(net)?;
    let [h, w, c] = match *image.shape() {
        [h, w, c] => [h, w, c],
        _ => return Err(Error::dim("saliency image", image.shape(), &[0, 0, 0])),
    };
    if target >= net.classes() {
        return Err(Error::Config(format!("target class {target} out of range for {} classes", net.classes())));
    }
    if cfg.box_size == 0 || cfg.stride == 0 || cfg.box_size > h || cfg.box_size > w {
        return Err(Error::Config(format!(
            "occlusion box {} with stride {} does not fit a {h}×{w} image",
            cfg.box_size, cfg.stride
        )));
    }
    let single = image.clone().reshape([1, h, w, c])?;
    let baseline = net.predict_proba(&single)?.at(&[0, target]).to_f64_lossy();
    let fill: Vec<T> = match cfg.fill {
        Occlusion::Zero => vec![T::zero(); c],
        Occlusion::Mean => (0..c)
            .map(|ch| {
                let s: f64 = image.data().iter().skip(ch).step_by(c).map(|v| v.to_f64_lossy()).sum();
                T::from_f64_lossy(s / (h * w) as f64)
            })
            .collect(),
    };
    let (gh, gw) = (grid_len(h, cfg.box_size, cfg.stride), grid_len(w, cfg.box_size, cfg.stride));
    let cells: Vec<usize> = (0..gh * gw).collect();
    let heat = cells
        .par_chunks(OCCLUSION_BATCH)
        .map(|chunk| {
            let mut batch = Vec::with_capacity(chunk.len() * image.len());
            for &cell in chunk {
                let y0 = cell_origin(cell / gw, h, cfg.box_size, cfg.stride);
                let x0 = cell_origin(cell % gw, w, cfg.box_size, cfg.stride);
                let mut occluded = image.data().to_vec();
                for y in y0..y0 + cfg.box_size {
                    for x in x0..x0 + cfg.box_size {
                        let at = (y * w + x) * c;
                        occluded[at..at + c].copy_from_slice(&fill);
                    }
                }
                batch.extend(occluded);
            }
            let probs = net.predict_proba(&Tensor::new([chunk.len(), h, w, c], batch)?)?;
            Ok((0..chunk.len()).map(|i| baseline - probs.at(&[i, target]).to_f64_lossy()).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?
        .concat();
    Ok(SaliencyMap {
        heat: Tensor::new([gh, gw], heat)?,
        box_size: cfg.box_size,
        stride: cfg.stride,
        baseline,
        target,
        image_height: h,
        image_width: w,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivation {
    pub layer: usize,
    pub kind: &'static str,
    /// `[h, w, depth]` raw output.
    pub raw: Tensor<f64>,
    /// Each channel rescaled to `[0, 1]`; constant channels become 0.
    pub normalized: Tensor<f64>,
    pub stats: Vec<ChannelStats>,
}

impl LayerActivation {
    pub fn depth(&self) -> usize {
        self.raw.shape()[2]
    }

    /// Normalized channel images tiled on a near-square grid with 1 px gaps.
    pub fn channel_grid(&self) -> Tensor<f64> {
        let (h, w, d) = (self.raw.shape()[0], self.raw.shape()[1], self.depth());
        let cols = (d as f64).sqrt().ceil() as usize;
        let rows = d.div_ceil(cols);
        let (gh, gw) = (rows * (h + 1) - 1, cols * (w + 1) - 1);
        let mut grid = Tensor::zeros([gh, gw]);
        for ch in 0..d {
            let (oy, ox) = ((ch / cols) * (h + 1), (ch % cols) * (w + 1));
            for y in 0..h {
                for x in 0..w {
                    grid.set(&[oy + y, ox + x], self.normalized.at(&[y, x, ch]));
                }
            }
        }
        grid
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationDump {
    pub layers: Vec<LayerActivation>,
}

impl ActivationDump {
    /// `layer,kind,channel,mean,min,max` per channel.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,kind,channel,mean,min,max\n");
        for l in &self.layers {
            for (ch, s) in l.stats.iter().enumerate() {
                out.push_str(&format!("{},{},{ch},{:.9},{:.9},{:.9}\n", l.layer, l.kind, s.mean, s.min, s.max));
            }
        }
        out
    }
}

/// Outputs of every spatial (`[h, w, depth]`) layer for one `[h, w, c]` input.
pub fn dump_activations<T: Scalar>(net: &Network<T>, image: &Tensor<T>) -> Result<ActivationDump> {
    let mut shape = vec![1];
    shape.extend_from_slice(image.shape());
    let outs = net.activations(&image.clone().reshape(shape)?)?;
    let layers = outs
        .iter()
        .enumerate()
        .filter(|(_, t)| t.rank() == 4)
        .map(|(i, t)| {
            let (h, w, d) = (t.shape()[1], t.shape()[2], t.shape()[3]);
            let raw: Tensor<f64> = t.cast::<f64>().reshape([h, w, d])?;
            let stats: Vec<ChannelStats> = (0..d)
                .map(|ch| {
                    let vals = raw.data().iter().skip(ch).step_by(d);
                    let (mut min, mut max, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
                    for &v in vals {
                        min = min.min(v);
                        max = max.max(v);
                        sum += v;
                    }
                    ChannelStats {
                        mean: sum / (h * w) as f64,
                        min,
                        max,
                    }
                })
                .collect();
            let normalized = Tensor::from_fn([h, w, d], |k| {
                let s = stats[k % d];
                if s.max > s.min {
                    (raw.data()[k] - s.min) / (s.max - s.min)
                } else {
                    0.0
                }
            });
            Ok(LayerActivation {
                layer: i,
                kind: net.layers()[i].kind(),
                raw,
                normalized,
                stats,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ActivationDump { layers })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChannelActivity {
    /// Index of the layer feeding the ReLU.
    pub layer: usize,
    pub kind: &'static str,
    pub channel: usize,
    /// Fraction of probes with any positive post-ReLU activation.
    pub rate: f64,
    pub max: f64,
    pub dead: bool,
}

pub fn dead_neurons_csv(report: &[ChannelActivity]) -> String {
    let mut out = String::from("layer,kind,channel,rate,max,dead\n");
    for r in report {
        out.push_str(&format!("{},{},{},{:.6},{:.9},{}\n", r.layer, r.kind, r.channel, r.rate, r.max, r.dead));
    }
    out
}

/// Activity of every channel feeding a ReLU over a `[n, ...input]` probe
/// batch. A channel is dead when its post-ReLU maximum is 0 on every probe.
pub fn dead_neuron_report<T: Scalar>(net: &Network<T>, probes: &Tensor<T>) -> Result<Vec<ChannelActivity>> {
    if probes.rank() == 0 || probes.shape()[0] == 0 {
        return Err(Error::Validation("dead-neuron probe set is empty".into()));
    }
    let relus: Vec<usize> = net
        .layers()
        .iter()
        .enumerate()
        .filter(|(i, l)| *i > 0 && matches!(l, Layer::Relu(_)))
        .map(|(i, _)| i)
        .collect();
    let n = probes.shape()[0];
    let chunks: Vec<usize> = (0..n).step_by(OCCLUSION_BATCH).collect();
    // Per ReLU, per channel: (probes with positive activity, max activation).
    let partials = chunks
        .par_iter()
        .map(|&start| {
            let len = OCCLUSION_BATCH.min(n - start);
            let batch = Tensor::stack(&(start..start + len).map(|i| probes.slice_outer(i)).collect::<Vec<_>>())?;
            let outs = net.activations(&batch)?;
            Ok(relus
                .iter()
                .map(|&r| {
                    let t = &outs[r];
                    let d = *t.shape().last().expect("non-scalar activation");
                    let per_sample = t.len() / len;
                    let mut acc = vec![(0usize, 0.0f64); d];
                    for sample in t.data().chunks(per_sample) {
                        let mut seen = vec![0.0f64; d];
                        for (k, v) in sample.iter().enumerate() {
                            seen[k % d] = seen[k % d].max(v.to_f64_lossy());
                        }
                        for (a, s) in acc.iter_mut().zip(seen) {
                            a.0 += usize::from(s > 0.0);
                            a.1 = a.1.max(s);
                        }
                    }
                    acc
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = Vec::new();
    for (slot, &r) in relus.iter().enumerate() {
        let d = partials[0][slot].len();
        for ch in 0..d {
            let (active, max) = partials
                .iter()
                .fold((0, 0.0f64), |(a, m), p| (a + p[slot][ch].0, m.max(p[slot][ch].1)));
            report.push(ChannelActivity {
                layer: r - 1,
                kind: net.layers()[r - 1].kind(),
                channel: ch,
                rate: active as f64 / n as f64,
                max,
                dead: max <= 0.0,
            });
        }
    }
    Ok(report)
}
