//! Passport-photo preprocessing: saturation segmentation, moment-ellipse
//! orientation, derotation, cropping and augmentation filters.
//!
//! Images are `[h, w, 3]` tensors with channels in `[0, 1]`. Geometry uses
//! pixel coordinates with `x` to the right and `y` downwards; angles are in
//! radians in that frame, so a positive angle turns clockwise on screen.

pub mod augment;
pub mod geometry;
pub mod segment;
pub mod synth;

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use augment::{augment, Augment};
pub use geometry::{
    estimate_orientation, flip_180, passport_crop, resize, rotate, rotate_image, Canvas, Interpolation,
    OrientationEstimate, Passport,
};
pub use segment::{
    bimodal_threshold, otsu_threshold, saturation_histogram, segment_roi, BoundingBox, RoiMask, Segmentation,
    ThresholdResult,
};
pub use synth::{generate_corpus, generate_scene, Scene, SceneParams};

/// Largest residual tilt, in degrees, for a passport crop to count as level.
pub const LEVEL_TOLERANCE_DEG: f64 = 5.0;

/// Output of the full preprocessing chain with its diagnostics.
#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub passport: Passport,
    pub segmentation: Segmentation,
    pub orientation: OrientationEstimate,
    /// Major-axis angle re-measured on the passport mask, degrees.
    pub residual_deg: f64,
}

impl Preprocessed {
    /// Whether the crop came out level within [`LEVEL_TOLERANCE_DEG`].
    pub fn is_level(&self) -> bool {
        self.residual_deg.abs() <= LEVEL_TOLERANCE_DEG
    }
}

/// Segment, estimate orientation, derotate and crop, then re-measure the
/// orientation of the result.
pub fn preprocess(img: &Image, out_size: usize) -> Result<Preprocessed> {
    let segmentation = segment_roi(img)?;
    let orientation = estimate_orientation(&segmentation.mask)?;
    let passport = passport_crop(img, &segmentation.mask, &orientation, out_size)?;
    let residual_deg = RoiMask::from_tensor(&passport.mask, 0.5)
        .and_then(|m| estimate_orientation(&m))
        .map(|o| o.theta.to_degrees())
        .unwrap_or(f64::INFINITY);
    Ok(Preprocessed {
        passport,
        segmentation,
        orientation,
        residual_deg,
    })
}

/// An RGB image with real-valued channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pixels: Tensor<f64>,
    pub source: Option<PathBuf>,
}

impl Image {
    pub fn new(pixels: Tensor<f64>) -> Result<Self> {
        if pixels.rank() != 3 || pixels.shape()[2] != 3 {
            return Err(Error::dim("image", pixels.shape(), &[0, 0, 3]));
        }
        Ok(Self {
            pixels: pixels.map(|v| v.clamp(0.0, 1.0)),
            source: None,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(y, x).iter().map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Self {
            pixels: Tensor::new([height, width, 3], data).expect("consistent extents"),
            source: None,
        }
    }

    /// A single-channel `[h, w]` or `[h, w, 1]` tensor replicated to RGB.
    pub fn from_gray(gray: &Tensor<f64>) -> Result<Self> {
        let (h, w) = match *gray.shape() {
            [h, w] | [h, w, 1] => (h, w),
            _ => return Err(Error::dim("gray image", gray.shape(), &[0, 0])),
        };
        Ok(Self::from_fn(h, w, |y, x| [gray.data()[y * w + x]; 3]))
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn pixels(&self) -> &Tensor<f64> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Tensor<f64> {
        self.pixels
    }

    pub fn rgb(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width() + x) * 3;
        let d = self.pixels.data();
        [d[i], d[i + 1], d[i + 2]]
    }

    /// Rec. 601 luma, `[h, w]`.
    pub fn to_gray(&self) -> Tensor<f64> {
        let data = self
            .pixels
            .data()
            .chunks(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect();
        Tensor::new([self.height(), self.width()], data).expect("consistent extents")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let data = rgb.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
        let mut out = Self::new(Tensor::new([h as usize, w as usize, 3], data)?)?;
        out.source = Some(path.to_path_buf());
        Ok(out)
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels.data().iter().map(|&v| to_u8(v)).collect()
    }

    /// Writes PNG or PPM depending on the extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_pixels(path, &self.to_rgb8(), self.width(), self.height(), image::ExtendedColorType::Rgb8)
    }
}

fn write_pixels(path: &Path, bytes: &[u8], w: usize, h: usize, color: image::ExtendedColorType) -> Result<()> {
    use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
    use image::ImageEncoder;

    let err = |reason: String| Error::Image {
        path: path.to_path_buf(),
        reason,
    };
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let subtype = match ext.as_str() {
        "pgm" => Some(PnmSubtype::Graymap(SampleEncoding::Binary)),
        "ppm" => Some(PnmSubtype::Pixmap(SampleEncoding::Binary)),
        _ => None,
    };
    match subtype {
        Some(subtype) => {
            let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
            PnmEncoder::new(std::io::BufWriter::new(file))
                .with_subtype(subtype)
                .write_image(bytes, w as u32, h as u32, color)
                .map_err(|e| err(e.to_string()))
        }
        None => image::save_buffer(path, bytes, w as u32, h as u32, color).map_err(|e| err(e.to_string())),
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an `[h, w]` (or `[h, w, 1]`) tensor of values in `[0, 1]` as PNG
/// or PGM depending on the extension.
pub fn save_gray(gray: &Tensor<f64>, path: &Path) -> Result<()> {
    let (h, w) = match *gray.shape() {
        [h, w] | [h, w, 1] => (h, w),
        _ => return Err(Error::dim("save_gray", gray.shape(), &[0, 0])),
    };
    let bytes: Vec<u8> = gray.data().iter().map(|&v| to_u8(v)).collect();
    write_pixels(path, &bytes, w, h, image::ExtendedColorType::L8)
}

/// Hexcone RGB → HSV. All three output channels are in `[0, 1]`; hue is the
/// fraction of a full turn (0 = red). `S = (max − min) / max`, or 0 for black.
pub fn rgb_to_hsv(img: &Image) -> Tensor<f64> {
    let data = img
        .pixels
        .data()
        .chunks(3)
        .flat_map(|p| hsv_of(p[0], p[1], p[2]))
        .collect();
    Tensor::new([img.height(), img.width(), 3], data).expect("consistent extents")
}

pub(crate) fn hsv_of(r: f64, g: f64, b: f64) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    } / 6.0;
    [h, s, max]
}

/// Inverse of [`rgb_to_hsv`].
pub fn hsv_to_rgb(hsv: &Tensor<f64>) -> Result<Image> {
    if hsv.rank() != 3 || hsv.shape()[2] != 3 {
        return Err(Error::dim("hsv_to_rgb", hsv.shape(), &[0, 0, 3]));
    }
    let data = hsv
        .data()
        .chunks(3)
        .flat_map(|p| rgb_of(p[0], p[1], p[2]))
        .collect();
    Image::new(Tensor::new(hsv.shape().to_vec(), data)?)
}

pub(crate) fn rgb_of(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = (h.rem_euclid(1.0)) * 6.0;
    let x = c * (1.0 - ((hp % 2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}
