//! Turning a labelled face into a normalized network input.
//!
//! region crop → square (pad, or crop when padding is off) → bilinear
//! resize to 72×72 → 64×64 window (random + mirror when training, centred
//! otherwise) → `(v/255 − mean)/std`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledFace;
use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::regions::{center_square_crop, extract_region, pad_to_square, random_square_crop, Region};

pub const INPUT_SIZE: usize = 64;
pub const RESIZE: usize = 72;
const MAX_OFFSET: usize = RESIZE - INPUT_SIZE;

/// What part of each face the model sees and how it is made square.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub region: Region,
    pub margin: f64,
    pub padding: bool,
}

impl InputSpec {
    pub fn new(region: Region) -> Self {
        InputSpec {
            region,
            margin: crate::regions::DEFAULT_MARGIN,
            padding: true,
        }
    }

    /// The region crop of a sample. Samples without landmarks are usable
    /// only for the whole face, which is then the whole image.
    pub fn crop(&self, face: &LabeledFace) -> Result<GrayImage> {
        match (&face.landmarks, self.region) {
            (Some(l), r) => Ok(extract_region(&face.image, l, r, self.margin)?.pixels),
            (None, Region::WholeFace) => Ok(face.image.clone()),
            (None, r) => Err(Error::InvalidConfig(format!(
                "sample `{}` has no landmarks, required for region {r}",
                face.source_id
            ))),
        }
    }

    /// Square version of a crop. Without padding the long side is cut:
    /// at a random offset when `rng` is given, centred otherwise.
    pub fn square<R: Rng + ?Sized>(&self, crop: &GrayImage, rng: Option<&mut R>) -> GrayImage {
        if self.padding {
            pad_to_square(crop, 0)
        } else {
            match rng {
                Some(rng) => random_square_crop(crop, rng),
                None => center_square_crop(crop),
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

impl Normalization {
    pub const IDENTITY: Normalization = Normalization { mean: 0.0, std: 1.0 };

    /// Pixel mean and standard deviation (on the 0–1 scale) over the
    /// centred input windows of `images`.
    pub fn fit<'a>(images: impl IntoIterator<Item = &'a GrayImage>) -> Self {
        let (mut n, mut sum, mut sq) = (0usize, 0.0f64, 0.0f64);
        for img in images {
            for v in augment_eval(img, Normalization::IDENTITY) {
                let v = v as f64;
                n += 1;
                sum += v;
                sq += v * v;
            }
        }
        if n == 0 {
            return Normalization::IDENTITY;
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        let std = var.sqrt();
        Normalization {
            mean,
            std: if std > 1e-6 { std } else { 1.0 },
        }
    }
}

/// Window position inside the 72×72 resize and whether to mirror it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Jitter {
    pub dx: usize,
    pub dy: usize,
    pub flip: bool,
}

impl Jitter {
    pub const CENTER: Jitter = Jitter {
        dx: MAX_OFFSET / 2,
        dy: MAX_OFFSET / 2,
        flip: false,
    };

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Jitter {
            dx: rng.random_range(0..=MAX_OFFSET),
            dy: rng.random_range(0..=MAX_OFFSET),
            flip: rng.random_bool(0.5),
        }
    }
}

pub fn augment_with(image: &GrayImage, norm: Normalization, jitter: Jitter) -> Vec<f32> {
    let resized = image.resize_bilinear(RESIZE, RESIZE);
    let (mean, inv_std) = (norm.mean, 1.0 / norm.std);
    let mut out = Vec::with_capacity(INPUT_SIZE * INPUT_SIZE);
    for y in 0..INPUT_SIZE {
        let row = &resized[(y + jitter.dy) * RESIZE + jitter.dx..][..INPUT_SIZE];
        for x in 0..INPUT_SIZE {
            let v = if jitter.flip { row[INPUT_SIZE - 1 - x] } else { row[x] };
            out.push(((v as f64 / 255.0 - mean) * inv_std) as f32);
        }
    }
    out
}

/// Random 64×64 window of the 72×72 resize, mirrored with probability ½.
pub fn augment_train<R: Rng + ?Sized>(image: &GrayImage, norm: Normalization, rng: &mut R) -> Vec<f32> {
    augment_with(image, norm, Jitter::sample(rng))
}

/// Centred 64×64 window of the 72×72 resize.
pub fn augment_eval(image: &GrayImage, norm: Normalization) -> Vec<f32> {
    augment_with(image, norm, Jitter::CENTER)
}

/// 8-bit rendering of the centred input window (what the model sees,
/// before normalization).
pub fn eval_view(image: &GrayImage) -> GrayImage {
    let pixels = augment_eval(image, Normalization::IDENTITY)
        .into_iter()
        .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    GrayImage::from_raw(INPUT_SIZE, INPUT_SIZE, pixels).expect("window size")
}
