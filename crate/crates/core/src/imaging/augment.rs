//! Deterministic augmentation transforms. Random choices belong to the
//! caller, who picks the operation and its parameters from a seeded RNG.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::geometry::{rotate, Canvas, Interpolation};
use crate::imaging::Image;
use crate::tensor::Tensor;

/// Blur width used as the low-frequency estimate in [`Augment::HighPass`].
pub const HIGH_PASS_SIGMA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum Augment {
    HFlip,
    VFlip,
    /// Radians about the centre, same canvas.
    Rotate { theta: f64 },
    /// Zoom about the centre, `s ∈ [0.5, 2]`.
    Scale { s: f64 },
    /// Whole-pixel translation; uncovered pixels are black.
    Shift { dx: i64, dy: i64 },
    /// Gaussian blur, `σ ∈ (0, 5]`.
    LowPass { sigma: f64 },
    /// `img − lowpass(img) + ½`, clamped to `[0, 1]`.
    HighPass,
}

pub fn augment(img: &Image, op: Augment) -> Result<Image> {
    let (h, w) = (img.height(), img.width());
    match op {
        Augment::HFlip => Ok(Image::from_fn(h, w, |y, x| img.rgb(y, w - 1 - x))),
        Augment::VFlip => Ok(Image::from_fn(h, w, |y, x| img.rgb(h - 1 - y, x))),
        Augment::Rotate { theta } => {
            if !theta.is_finite() {
                return Err(Error::Config(format!("rotation angle must be finite, got {theta}")));
            }
            Image::new(rotate(img.pixels(), theta, Interpolation::Bilinear, Canvas::Same)?)
        }
        Augment::Scale { s } => {
            if !(0.5..=2.0).contains(&s) {
                return Err(Error::Config(format!("scale must lie in [0.5, 2], got {s}")));
            }
            Ok(scale(img, s))
        }
        Augment::Shift { dx, dy } => Ok(Image::from_fn(h, w, |y, x| {
            let (sx, sy) = (x as i64 - dx, y as i64 - dy);
            if (0..w as i64).contains(&sx) && (0..h as i64).contains(&sy) {
                img.rgb(sy as usize, sx as usize)
            } else {
                [0.0; 3]
            }
        })),
        Augment::LowPass { sigma } => {
            if !(sigma > 0.0 && sigma <= 5.0) {
                return Err(Error::Config(format!("low-pass sigma must lie in (0, 5], got {sigma}")));
            }
            Image::new(gaussian_blur(img.pixels(), sigma))
        }
        Augment::HighPass => {
            let blur = gaussian_blur(img.pixels(), HIGH_PASS_SIGMA);
            let data = img
                .pixels()
                .data()
                .iter()
                .zip(blur.data())
                .map(|(a, b)| (a - b + 0.5).clamp(0.0, 1.0))
                .collect();
            Image::new(Tensor::new([h, w, 3], data)?)
        }
    }
}

fn scale(img: &Image, s: f64) -> Image {
    let (h, w) = (img.height(), img.width());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let d = img.pixels().data();
    Image::from_fn(h, w, |y, x| {
        let sx = (x as f64 - cx) / s + cx;
        let sy = (y as f64 - cy) / s + cy;
        if sx < -0.5 || sy < -0.5 || sx > w as f64 - 0.5 || sy > h as f64 - 0.5 {
            return [0.0; 3];
        }
        let sx = sx.clamp(0.0, (w - 1) as f64);
        let sy = sy.clamp(0.0, (h - 1) as f64);
        let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let p = |yy: usize, xx: usize| d[(yy * w + xx) * 3 + c];
            *o = (p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx) * (1.0 - fy)
                + (p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx) * fy;
        }
        out
    })
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = k.iter().sum();
    k.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian blur of an `[h, w, c]` tensor with edge clamping.
pub fn gaussian_blur(t: &Tensor<f64>, sigma: f64) -> Tensor<f64> {
    let (h, w, c) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let src = t.data();
    let mut tmp = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                tmp[(y * w + x) * c + ch] = k
                    .iter()
                    .enumerate()
                    .map(|(j, kv)| kv * src[(y * w + clamp(x as i64 + j as i64 - r, w)) * c + ch])
                    .sum();
            }
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out[(y * w + x) * c + ch] = k
                    .iter()
                    .enumerate()
                    .map(|(j, kv)| kv * tmp[(clamp(y as i64 + j as i64 - r, h) * w + x) * c + ch])
                    .sum();
            }
        }
    }
    Tensor::new(t.shape().to_vec(), out).expect("same extents")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, h: usize, w: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    fn laplacian_energy(img: &Image) -> f64 {
        let g = img.to_gray();
        let (h, w) = (img.height(), img.width());
        let p = |y: usize, x: usize| g.data()[y * w + x];
        let mut e = 0.0;
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let l = p(y - 1, x) + p(y + 1, x) + p(y, x - 1) + p(y, x + 1) - 4.0 * p(y, x);
                e += l * l;
            }
        }
        e
    }

    #[test]
    fn flips_are_involutions() {
        let img = random_image(1, 9, 13);
        for op in [Augment::HFlip, Augment::VFlip] {
            assert_eq!(augment(&augment(&img, op).unwrap(), op).unwrap(), img);
        }
    }

    #[test]
    fn shift_round_trip_interior() {
        let img = random_image(2, 10, 12);
        let there = augment(&img, Augment::Shift { dx: 3, dy: 0 }).unwrap();
        let back = augment(&there, Augment::Shift { dx: -3, dy: 0 }).unwrap();
        for y in 0..10 {
            for x in 0..9 {
                assert_eq!(back.rgb(y, x), img.rgb(y, x));
            }
        }
    }

    #[test]
    fn lowpass_reduces_high_frequency_energy() {
        for seed in 0..5 {
            let img = random_image(seed, 24, 24);
            let blur = augment(&img, Augment::LowPass { sigma: 1.5 }).unwrap();
            assert!(laplacian_energy(&blur) < laplacian_energy(&img));
        }
    }

    #[test]
    fn highpass_of_flat_image_is_mid_gray() {
        let img = Image::from_fn(6, 6, |_, _| [0.2, 0.7, 0.9]);
        let hp = augment(&img, Augment::HighPass).unwrap();
        assert!(hp.pixels().data().iter().all(|v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn out_of_range_parameters() {
        let img = random_image(3, 4, 4);
        for op in [
            Augment::Scale { s: 0.4 },
            Augment::Scale { s: 2.1 },
            Augment::LowPass { sigma: 0.0 },
            Augment::LowPass { sigma: 5.5 },
        ] {
            assert!(matches!(augment(&img, op), Err(Error::Config(_))));
        }
        assert!(augment(&img, Augment::Scale { s: 1.0 }).unwrap() == img);
    }
}
