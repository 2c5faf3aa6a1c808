//! Moment-ellipse orientation, rotation, resizing and the passport crop.

use crate::error::{Error, Result};
use crate::imaging::segment::{BoundingBox, RoiMask};
use crate::imaging::Image;
use crate::tensor::Tensor;

/// Minimum mask size for a meaningful moment estimate.
pub const MIN_MASK_PIXELS: usize = 16;
/// Fraction added to the larger bounding-box side when cutting the square.
pub const CROP_MARGIN: f64 = 0.2;

/// Second-moment ellipse of a mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientationEstimate {
    /// Major-axis angle in `(−π/2, π/2]`, measured from +x towards +y.
    pub theta: f64,
    /// `(x, y)` in pixel coordinates.
    pub centroid: (f64, f64),
    /// Full axis lengths of the uniform ellipse with the same moments.
    pub major: f64,
    pub minor: f64,
    /// `1 − minor / major`; 0 for a disk, approaching 1 for a line.
    pub confidence: f64,
    /// Set when the mask is too thin for the angle to be trusted.
    pub low_confidence: bool,
}

pub fn estimate_orientation(mask: &RoiMask) -> Result<OrientationEstimate> {
    let n = mask.pixel_count();
    if n < MIN_MASK_PIXELS {
        return Err(Error::DegenerateData(format!(
            "mask has {n} pixels, need at least {MIN_MASK_PIXELS}"
        )));
    }
    let w = mask.width();
    let pts = || {
        mask.bits()
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| ((i % w) as f64, (i / w) as f64))
    };
    let nf = n as f64;
    let (sx, sy) = pts().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (cx, cy) = (sx / nf, sy / nf);
    let (mut m20, mut m02, mut m11) = (0.0, 0.0, 0.0);
    for (x, y) in pts() {
        let (dx, dy) = (x - cx, y - cy);
        m20 += dx * dx;
        m02 += dy * dy;
        m11 += dx * dy;
    }
    m20 /= nf;
    m02 /= nf;
    m11 /= nf;
    let theta = 0.5 * (2.0 * m11).atan2(m20 - m02);
    let mean = 0.5 * (m20 + m02);
    let spread = (0.25 * (m20 - m02).powi(2) + m11 * m11).sqrt();
    let major = 4.0 * (mean + spread).max(0.0).sqrt();
    let minor = 4.0 * (mean - spread).max(0.0).sqrt();
    let confidence = if major > 0.0 { 1.0 - minor / major } else { 0.0 };
    Ok(OrientationEstimate {
        theta,
        centroid: (cx, cy),
        major,
        minor,
        confidence,
        low_confidence: minor < 1.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    #[default]
    Bilinear,
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Canvas {
    /// Grow the output so the whole rotated input fits.
    #[default]
    Expand,
    /// Keep the input extents, cropping the corners.
    Same,
}

fn hwc(t: &Tensor<f64>, op: &'static str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [h, w, c] => Ok((h, w, c)),
        [h, w] => Ok((h, w, 1)),
        _ => Err(Error::dim(op, t.shape(), &[0, 0, 0])),
    }
}

/// Samples channel values at a real-valued source position; positions more
/// than half a pixel outside the grid read as black.
fn sample(src: &[f64], h: usize, w: usize, c: usize, x: f64, y: f64, interp: Interpolation, out: &mut [f64]) {
    if !(x >= -0.5 && x <= w as f64 - 0.5 && y >= -0.5 && y <= h as f64 - 0.5) {
        out.fill(0.0);
        return;
    }
    match interp {
        Interpolation::Nearest => {
            let xi = (x.round().max(0.0) as usize).min(w - 1);
            let yi = (y.round().max(0.0) as usize).min(h - 1);
            out.copy_from_slice(&src[(yi * w + xi) * c..][..c]);
        }
        Interpolation::Bilinear => {
            let x = x.clamp(0.0, (w - 1) as f64);
            let y = y.clamp(0.0, (h - 1) as f64);
            let (x0, y0) = (x.floor() as usize, y.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = (x - x0 as f64, y - y0 as f64);
            for (ch, o) in out.iter_mut().enumerate() {
                let p = |yy: usize, xx: usize| src[(yy * w + xx) * c + ch];
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                *o = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
}

/// Rotates an `[h, w, c]` (or `[h, w]`) tensor by `theta` about its centre.
///
/// A source offset `(x, y)` from the centre lands at
/// `(x cosθ − y sinθ, x sinθ + y cosθ)`; each output pixel is filled by the
/// inverse mapping. Pixels with no source are black.
pub fn rotate(t: &Tensor<f64>, theta: f64, interp: Interpolation, canvas: Canvas) -> Result<Tensor<f64>> {
    let (h, w, c) = hwc(t, "rotate")?;
    let (cos, sin) = (theta.cos(), theta.sin());
    let (oh, ow) = match canvas {
        Canvas::Same => (h, w),
        Canvas::Expand => {
            let fit = |a: f64, b: f64| ((a * cos.abs() + b * sin.abs()) - 1e-9).ceil().max(1.0) as usize;
            (fit(h as f64, w as f64), fit(w as f64, h as f64))
        }
    };
    let (csx, csy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (cdx, cdy) = ((ow as f64 - 1.0) / 2.0, (oh as f64 - 1.0) / 2.0);
    let mut data = vec![0.0; oh * ow * c];
    let src = t.data();
    for (i, px) in data.chunks_mut(c).enumerate() {
        let (dx, dy) = ((i % ow) as f64 - cdx, (i / ow) as f64 - cdy);
        let sx = cos * dx + sin * dy + csx;
        let sy = -sin * dx + cos * dy + csy;
        sample(src, h, w, c, sx, sy, interp, px);
    }
    let shape = if t.rank() == 2 { vec![oh, ow] } else { vec![oh, ow, c] };
    Tensor::new(shape, data)
}

/// [`rotate`] on an image with an expanded canvas.
pub fn rotate_image(img: &Image, theta: f64, interp: Interpolation) -> Image {
    let t = rotate(img.pixels(), theta, interp, Canvas::Expand).expect("image tensors are rank 3");
    Image::new(t).expect("rotation keeps three channels")
}

/// Bilinear resize of an `[h, w, c]` (or `[h, w]`) tensor using pixel-centre
/// alignment.
pub fn resize(t: &Tensor<f64>, out_h: usize, out_w: usize) -> Result<Tensor<f64>> {
    let (h, w, c) = hwc(t, "resize")?;
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(Error::Config(format!("cannot resize {h}x{w} to {out_h}x{out_w}")));
    }
    let (ky, kx) = (h as f64 / out_h as f64, w as f64 / out_w as f64);
    let mut data = vec![0.0; out_h * out_w * c];
    for (i, px) in data.chunks_mut(c).enumerate() {
        let x = ((i % out_w) as f64 + 0.5) * kx - 0.5;
        let y = ((i / out_w) as f64 + 0.5) * ky - 0.5;
        sample(t.data(), h, w, c, x.clamp(0.0, (w - 1) as f64), y.clamp(0.0, (h - 1) as f64), Interpolation::Bilinear, px);
    }
    let shape = if t.rank() == 2 { vec![out_h, out_w] } else { vec![out_h, out_w, c] };
    Tensor::new(shape, data)
}

/// Half-turn rotation; resolves the head/tail ambiguity of the major axis.
pub fn flip_180(img: &Image) -> Image {
    let (h, w) = (img.height(), img.width());
    Image::from_fn(h, w, |y, x| img.rgb(h - 1 - y, w - 1 - x))
}

/// A derotated, centred, square crop of the region of interest.
#[derive(Debug, Clone)]
pub struct Passport {
    pub image: Image,
    /// The region-of-interest mask carried through the same transform.
    pub mask: Tensor<f64>,
    /// Rotation applied to the input, radians.
    pub rotation: f64,
    /// Square cut from the derotated canvas.
    pub crop: BoundingBox,
}

/// Derotates so the mask's major axis is horizontal, cuts a square centred
/// on the mask with a margin around its larger extent (shifted or shrunk to
/// stay inside the canvas) and resizes it to `out_size × out_size`.
pub fn passport_crop(img: &Image, mask: &RoiMask, orientation: &OrientationEstimate, out_size: usize) -> Result<Passport> {
    if mask.height() != img.height() || mask.width() != img.width() {
        return Err(Error::dim(
            "passport_crop",
            &[img.height(), img.width()],
            &[mask.height(), mask.width()],
        ));
    }
    if out_size == 0 {
        return Err(Error::Config("passport size must be positive".into()));
    }
    let rotation = -orientation.theta;
    let pixels = rotate(img.pixels(), rotation, Interpolation::Bilinear, Canvas::Expand)?;
    let rotated_mask = rotate(&mask.to_tensor(), rotation, Interpolation::Bilinear, Canvas::Expand)?;
    let (ch, cw) = (pixels.shape()[0], pixels.shape()[1]);
    let derotated = RoiMask::from_tensor(&rotated_mask, 0.5)?;
    let bbox = derotated.bbox();
    let centre = estimate_orientation(&derotated)
        .map(|o| o.centroid)
        .unwrap_or(((bbox.x0 + bbox.x1) as f64 / 2.0, (bbox.y0 + bbox.y1) as f64 / 2.0));

    let extent = bbox.width().max(bbox.height()) as f64;
    let side = ((extent * (1.0 + CROP_MARGIN)).round() as usize).clamp(1, ch.min(cw));
    let place = |c: f64, limit: usize| -> usize {
        let start = (c - (side as f64 - 1.0) / 2.0).round();
        start.clamp(0.0, (limit - side) as f64) as usize
    };
    let (x0, y0) = (place(centre.0, cw), place(centre.1, ch));
    let crop = BoundingBox {
        x0,
        y0,
        x1: x0 + side - 1,
        y1: y0 + side - 1,
    };
    let cut = |t: &Tensor<f64>, c: usize| -> Result<Tensor<f64>> {
        let src = t.data();
        let mut data = Vec::with_capacity(side * side * c);
        for y in y0..y0 + side {
            data.extend_from_slice(&src[(y * cw + x0) * c..(y * cw + x0 + side) * c]);
        }
        Tensor::new(vec![side, side, c], data)
    };
    let image = Image::new(resize(&cut(&pixels, 3)?, out_size, out_size)?)?;
    let mask = resize(&cut(&rotated_mask.reshape([ch, cw, 1])?, 1)?, out_size, out_size)?
        .map(|v| if v > 0.5 { 1.0 } else { 0.0 })
        .reshape([out_size, out_size])?;
    Ok(Passport {
        image,
        mask,
        rotation,
        crop,
    })
}
