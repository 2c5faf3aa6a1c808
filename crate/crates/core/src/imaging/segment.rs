//! Foreground extraction by thresholding the saturation channel between the
//! two dominant histogram modes.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::imaging::{hsv_of, Image};
use crate::tensor::Tensor;

/// Centered moving-average width applied before peak picking.
pub const SMOOTHING_WINDOW: usize = 9;
/// A local maximum must rise this far (relative to the tallest bin) above
/// the valleys separating it from taller peaks to count as a mode.
pub const MIN_PROMINENCE: f64 = 0.05;
/// Iterations of 3×3 closing applied to the kept component.
pub const CLOSING_ITERATIONS: usize = 2;

pub fn bin_of(value: f64, bins: usize) -> usize {
    ((value * bins as f64).floor().max(0.0) as usize).min(bins - 1)
}

/// Saturation histogram; bin `b` covers `[b / bins, (b + 1) / bins)` with
/// saturation 1.0 landing in the last bin.
pub fn saturation_histogram(img: &Image, bins: usize) -> Vec<u64> {
    let bins = bins.max(1);
    let mut hist = vec![0u64; bins];
    for p in img.pixels().data().chunks(3) {
        hist[bin_of(hsv_of(p[0], p[1], p[2])[1], bins)] += 1;
    }
    hist
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdResult {
    /// Pixels in bins strictly above this one are foreground.
    pub bin: usize,
    /// Set when fewer than two modes survived and the between-class
    /// variance criterion chose the threshold instead.
    pub fallback: bool,
    /// The two modes (ascending bin order) when the valley rule applied.
    pub peaks: Option<(usize, usize)>,
    pub smoothed: Vec<f64>,
}

fn smooth(hist: &[u64]) -> Vec<f64> {
    let half = SMOOTHING_WINDOW / 2;
    (0..hist.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(hist.len() - 1);
            hist[lo..=hi].iter().sum::<u64>() as f64 / (hi - lo + 1) as f64
        })
        .collect()
}

/// Local maxima of `s` (plateaus collapse to their centre) with their
/// topographic prominence.
fn modes(s: &[f64]) -> Vec<(usize, f64)> {
    let n = s.len();
    let mut maxima = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && s[j + 1] == s[i] {
            j += 1;
        }
        let left_lower = i == 0 || s[i - 1] < s[i];
        let right_lower = j == n - 1 || s[j + 1] < s[i];
        if s[i] > 0.0 && left_lower && right_lower {
            maxima.push((i + j) / 2);
        }
        i = j + 1;
    }
    maxima
        .iter()
        .map(|&m| {
            let h = s[m];
            let mut left_base = h;
            let mut k = m;
            while k > 0 && s[k - 1] <= h {
                k -= 1;
                left_base = left_base.min(s[k]);
            }
            // Reaching the edge without meeting a taller bin: base is the lowest point seen.
            let mut right_base = h;
            let mut k = m;
            while k + 1 < n && s[k + 1] <= h {
                k += 1;
                right_base = right_base.min(s[k]);
            }
            (m, h - left_base.max(right_base))
        })
        .collect()
}

/// Threshold maximizing the between-class variance of the raw histogram.
pub fn otsu_threshold(hist: &[u64]) -> usize {
    let total: f64 = hist.iter().sum::<u64>() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_var) = (0, -1.0);
    for (t, &c) in hist.iter().enumerate() {
        w0 += c as f64;
        sum0 += t as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = sum0 / w0;
        let mu1 = (sum_all - sum0) / w1;
        let var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if var > best_var {
            best_var = var;
            best = t;
        }
    }
    best
}

/// Picks the valley between the two dominant modes of a histogram.
///
/// The histogram is smoothed with a centered moving average, the two tallest
/// sufficiently prominent local maxima are located, and the lowest smoothed
/// bin strictly between them is returned (centre of the run on ties). When
/// no such pair exists the between-class variance threshold is used and
/// `fallback` is set.
pub fn bimodal_threshold(hist: &[u64]) -> Result<ThresholdResult> {
    if hist.iter().all(|&c| c == 0) {
        return Err(Error::Validation("histogram is empty or all zero".into()));
    }
    let smoothed = smooth(hist);
    let top = smoothed.iter().copied().fold(0.0, f64::max);
    let mut candidates: Vec<(usize, f64)> = modes(&smoothed)
        .into_iter()
        .filter(|&(_, prom)| prom >= MIN_PROMINENCE * top)
        .collect();
    candidates.sort_by(|a, b| smoothed[b.0].total_cmp(&smoothed[a.0]).then(a.0.cmp(&b.0)));
    if candidates.len() >= 2 {
        let (a, b) = (candidates[0].0.min(candidates[1].0), candidates[0].0.max(candidates[1].0));
        if b - a >= 2 {
            let low = smoothed[a + 1..b].iter().copied().fold(f64::INFINITY, f64::min);
            let first = (a + 1..b).find(|&i| smoothed[i] == low).unwrap();
            let mut last = first;
            while last + 1 < b && smoothed[last + 1] == low {
                last += 1;
            }
            return Ok(ThresholdResult {
                bin: (first + last) / 2,
                fallback: false,
                peaks: Some((a, b)),
                smoothed,
            });
        }
    }
    Ok(ThresholdResult {
        bin: otsu_threshold(hist),
        fallback: true,
        peaks: None,
        smoothed,
    })
}

/// Inclusive pixel bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoundingBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }
}

/// A non-empty binary mask with its pixel count and tight bounding box.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
    pixel_count: usize,
    bbox: BoundingBox,
}

impl RoiMask {
    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::dim("mask", &[bits.len()], &[height, width]));
        }
        let mut count = 0;
        let mut bbox = BoundingBox {
            x0: usize::MAX,
            y0: usize::MAX,
            x1: 0,
            y1: 0,
        };
        for (i, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
            let (y, x) = (i / width, i % width);
            count += 1;
            bbox.x0 = bbox.x0.min(x);
            bbox.y0 = bbox.y0.min(y);
            bbox.x1 = bbox.x1.max(x);
            bbox.y1 = bbox.y1.max(y);
        }
        if count == 0 {
            return Err(Error::SegmentationFailed("mask is empty".into()));
        }
        Ok(Self {
            height,
            width,
            bits,
            pixel_count: count,
            bbox,
        })
    }

    /// Pixels of a `[h, w]` or `[h, w, 1]` tensor above `threshold`.
    pub fn from_tensor(t: &Tensor<f64>, threshold: f64) -> Result<Self> {
        let (h, w) = match *t.shape() {
            [h, w] | [h, w, 1] => (h, w),
            _ => return Err(Error::dim("mask", t.shape(), &[0, 0])),
        };
        Self::from_bits(h, w, t.data().iter().map(|&v| v > threshold).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn pixel_count(&self) -> usize {
        self.pixel_count
    }

    pub fn bbox(&self) -> BoundingBox {
        self.bbox
    }

    pub fn to_tensor(&self) -> Tensor<f64> {
        Tensor::new(
            [self.height, self.width],
            self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
        .expect("consistent extents")
    }

    pub fn iou(&self, other: &RoiMask) -> f64 {
        let inter = self.bits.iter().zip(&other.bits).filter(|(a, b)| **a && **b).count();
        let union = self.bits.iter().zip(&other.bits).filter(|(a, b)| **a || **b).count();
        inter as f64 / union.max(1) as f64
    }

    /// Number of 4-connected components.
    pub fn component_count(&self) -> usize {
        components(&self.bits, self.height, self.width).1
    }
}

/// 4-connected labelling; returns per-pixel labels (0 = background) and the
/// component count.
fn components(bits: &[bool], h: usize, w: usize) -> (Vec<u32>, usize) {
    let mut labels = vec![0u32; bits.len()];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..bits.len() {
        if !bits[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (y, x) = (i / w, i % w);
            let mut visit = |j: usize| {
                if bits[j] && labels[j] == 0 {
                    labels[j] = next;
                    queue.push_back(j);
                }
            };
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
        }
    }
    (labels, next as usize)
}

/// Keeps the largest 4-connected component (first in scan order on ties).
fn largest_component(bits: &[bool], h: usize, w: usize) -> (Vec<bool>, usize) {
    let (labels, count) = components(bits, h, w);
    if count == 0 {
        return (vec![false; bits.len()], 0);
    }
    let mut sizes = vec![0usize; count + 1];
    for &l in &labels {
        sizes[l as usize] += 1;
    }
    let mut best = 1;
    for l in 2..=count {
        if sizes[l] > sizes[best] {
            best = l;
        }
    }
    (labels.iter().map(|&l| l as usize == best).collect(), count)
}

fn dilate(bits: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut out = vec![false; bits.len()];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (y.saturating_sub(1)..=(y + 1).min(h - 1))
                .any(|yy| (x.saturating_sub(1)..=(x + 1).min(w - 1)).any(|xx| bits[yy * w + xx]));
        }
    }
    out
}

/// Erosion treating out-of-bounds pixels as foreground, so closing never
/// removes pixels along the image border.
fn erode(bits: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut out = vec![false; bits.len()];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (y.saturating_sub(1)..=(y + 1).min(h - 1))
                .all(|yy| (x.saturating_sub(1)..=(x + 1).min(w - 1)).all(|xx| bits[yy * w + xx]));
        }
    }
    out
}

fn close(bits: &[bool], h: usize, w: usize, iterations: usize) -> Vec<bool> {
    let mut cur = bits.to_vec();
    for _ in 0..iterations {
        cur = dilate(&cur, h, w);
    }
    for _ in 0..iterations {
        cur = erode(&cur, h, w);
    }
    cur
}

/// Result of [`segment_roi`] with the diagnostics worth logging.
#[derive(Debug, Clone)]
pub struct Segmentation {
    pub mask: RoiMask,
    pub threshold: ThresholdResult,
    /// Pixels above threshold before component selection.
    pub raw_foreground: usize,
    /// 4-connected components above threshold.
    pub components: usize,
    pub closing_iterations: usize,
}

/// Saturation threshold → largest 4-connected component → 3×3 closing.
pub fn segment_roi(img: &Image) -> Result<Segmentation> {
    let (h, w) = (img.height(), img.width());
    let bins = 256;
    let hist = saturation_histogram(img, bins);
    let threshold = bimodal_threshold(&hist)?;
    let fg: Vec<bool> = img
        .pixels()
        .data()
        .chunks(3)
        .map(|p| bin_of(hsv_of(p[0], p[1], p[2])[1], bins) > threshold.bin)
        .collect();
    let raw_foreground = fg.iter().filter(|&&b| b).count();
    if raw_foreground == 0 {
        return Err(Error::SegmentationFailed(format!(
            "no pixels above saturation bin {}",
            threshold.bin
        )));
    }
    let (largest, count) = largest_component(&fg, h, w);
    let closed = close(&largest, h, w, CLOSING_ITERATIONS);
    // Closing can pinch off slivers; keep the mask a single component.
    let (single, _) = largest_component(&closed, h, w);
    Ok(Segmentation {
        mask: RoiMask::from_bits(h, w, single)?,
        threshold,
        raw_foreground,
        components: count,
        closing_iterations: CLOSING_ITERATIONS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_hist(peaks: &[(f64, f64, f64)], bins: usize) -> Vec<u64> {
        (0..bins)
            .map(|b| {
                peaks
                    .iter()
                    .map(|&(mu, sd, mass)| {
                        let z = (b as f64 - mu) / sd;
                        mass * (-0.5 * z * z).exp()
                    })
                    .sum::<f64>()
                    .round() as u64
            })
            .collect()
    }

    /// Independent valley finder: exhaustive scan of the generating mixture
    /// density on a fine grid strictly between the two peak centres.
    fn valley_oracle(peaks: &[(f64, f64, f64)], a: f64, b: f64) -> f64 {
        let density = |x: f64| {
            peaks
                .iter()
                .map(|&(mu, sd, mass)| mass * (-0.5 * ((x - mu) / sd).powi(2)).exp())
                .sum::<f64>()
        };
        let steps = 10_000;
        (1..steps)
            .map(|i| a + (b - a) * i as f64 / steps as f64)
            .min_by(|x, y| density(*x).total_cmp(&density(*y)))
            .unwrap()
    }

    #[test]
    fn two_gaussian_valley() {
        let peaks = [(40.0, 15.0, 5000.0), (180.0, 15.0, 2000.0)];
        let hist = gaussian_hist(&peaks, 256);
        let oracle = valley_oracle(&peaks, 40.0, 180.0);
        let r = bimodal_threshold(&hist).unwrap();
        assert!(!r.fallback);
        assert!((r.bin as i64 - 110).abs() <= 5, "threshold {} (oracle {oracle})", r.bin);
        assert!((r.bin as f64 - oracle).abs() <= 5.0);
    }

    #[test]
    fn unimodal_falls_back() {
        let hist = gaussian_hist(&[(90.0, 20.0, 3000.0)], 256);
        let r = bimodal_threshold(&hist).unwrap();
        assert!(r.fallback);
        assert!(r.peaks.is_none());
    }

    #[test]
    fn mirrored_histogram_mirrors_threshold() {
        for (p1, p2, m1, m2) in [(30.0, 200.0, 9000.0, 1500.0), (60.0, 150.0, 800.0, 2500.0)] {
            let hist = gaussian_hist(&[(p1, 12.0, m1), (p2, 18.0, m2)], 256);
            let mut rev = hist.clone();
            rev.reverse();
            let t = bimodal_threshold(&hist).unwrap().bin as i64;
            let tr = bimodal_threshold(&rev).unwrap().bin as i64;
            assert!((tr - (255 - t)).abs() <= 1, "{t} vs {tr}");
        }
    }

    #[test]
    fn all_zero_histogram_errors() {
        assert!(bimodal_threshold(&[0; 256]).is_err());
        assert!(bimodal_threshold(&[]).is_err());
    }

    #[test]
    fn histogram_hand_cases() {
        let gray = Image::from_fn(4, 4, |_, _| [0.4; 3]);
        let h = saturation_histogram(&gray, 256);
        assert_eq!(h[0], 16);
        let half = Image::from_fn(4, 4, |_, x| if x < 2 { [1.0, 0.0, 0.0] } else { [0.5; 3] });
        let h = saturation_histogram(&half, 256);
        assert_eq!((h[0], h[255]), (8, 8));
        assert_eq!(h.iter().sum::<u64>(), 16);
    }

    #[test]
    fn gray_image_fails_segmentation() {
        let gray = Image::from_fn(32, 32, |_, _| [0.5; 3]);
        assert!(matches!(segment_roi(&gray), Err(Error::SegmentationFailed(_))));
    }

    #[test]
    fn keeps_only_largest_blob() {
        // Two saturated squares on gray: 16x16 and 8x8 (4x smaller).
        let img = Image::from_fn(64, 64, |y, x| {
            let big = (8..24).contains(&y) && (8..24).contains(&x);
            let small = (40..48).contains(&y) && (40..48).contains(&x);
            if big || small {
                [0.8, 0.2, 0.1]
            } else {
                [0.45, 0.45, 0.5]
            }
        });
        let seg = segment_roi(&img).unwrap();
        assert_eq!(seg.components, 2);
        assert_eq!(seg.mask.pixel_count(), 256);
        assert!(seg.mask.get(10, 10) && !seg.mask.get(44, 44));
        assert_eq!(seg.mask.component_count(), 1);
    }

    #[test]
    fn closing_fills_small_holes_and_keeps_border() {
        let (h, w) = (20, 20);
        let mut bits = vec![false; h * w];
        for y in 0..10 {
            for x in 0..12 {
                bits[y * w + x] = true;
            }
        }
        bits[5 * w + 5] = false;
        let closed = close(&bits, h, w, 2);
        assert!(closed[5 * w + 5]);
        assert!(closed[0]);
        assert!(bits.iter().zip(&closed).all(|(a, b)| !a || *b));
    }
}
