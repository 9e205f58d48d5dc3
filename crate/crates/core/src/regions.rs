//! 68-point landmark schema, the seven face regions and region cropping.
//!
//! Landmark indices are 1-based throughout, following the usual 68-point
//! annotation: jaw 1–17, eyebrows 18–27, nose 28–36, eyes 37–48, mouth 49–68.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::GrayImage;

pub const LANDMARK_COUNT: usize = 68;
pub const DEFAULT_MARGIN: f64 = 0.05;
pub const SIDECAR_EXTENSION: &str = "lmk";

#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSet68 {
    points: Vec<[f64; 2]>,
}

impl LandmarkSet68 {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.len() != LANDMARK_COUNT {
            return Err(Error::malformed(
                "landmarks",
                0,
                format!("expected {LANDMARK_COUNT} points, got {}", points.len()),
            ));
        }
        if let Some(i) = points.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::malformed("landmarks", i + 1, "non-finite coordinate"));
        }
        Ok(LandmarkSet68 { points })
    }

    /// Point by 1-based index.
    pub fn point(&self, index: usize) -> [f64; 2] {
        self.points[index - 1]
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn map(&self, mut f: impl FnMut([f64; 2]) -> [f64; 2]) -> Self {
        LandmarkSet68 {
            points: self.points.iter().map(|&p| f(p)).collect(),
        }
    }

    pub fn parse(text: &str, context: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let count = lines
            .next()
            .map(|(_, l)| l.trim())
            .ok_or_else(|| Error::malformed(context, 1, "empty landmark file"))?;
        if count != "68" {
            return Err(Error::malformed(
                context,
                1,
                format!("expected count line `68`, got `{count}`"),
            ));
        }
        let mut points = Vec::with_capacity(LANDMARK_COUNT);
        for (i, line) in lines {
            let line_no = i + 1;
            if line.trim().is_empty() {
                if points.len() == LANDMARK_COUNT {
                    continue;
                }
                return Err(Error::malformed(context, line_no, "blank line inside landmark list"));
            }
            if points.len() == LANDMARK_COUNT {
                return Err(Error::malformed(context, line_no, "more than 68 points"));
            }
            let mut fields = line.split_whitespace();
            let mut coord = || -> Result<f64> {
                let v: f64 = fields
                    .next()
                    .ok_or_else(|| Error::malformed(context, line_no, "expected `x y`"))?
                    .parse()
                    .map_err(|_| Error::malformed(context, line_no, format!("bad number in `{line}`")))?;
                if !v.is_finite() {
                    return Err(Error::malformed(context, line_no, "non-finite coordinate"));
                }
                Ok(v)
            };
            let p = [coord()?, coord()?];
            if fields.next().is_some() {
                return Err(Error::malformed(context, line_no, "expected exactly two numbers"));
            }
            points.push(p);
        }
        if points.len() != LANDMARK_COUNT {
            return Err(Error::malformed(
                context,
                points.len() + 2,
                format!("expected 68 points, found {}", points.len()),
            ));
        }
        Ok(LandmarkSet68 { points })
    }

    pub fn to_sidecar(&self) -> String {
        let mut out = String::from("68\n");
        for p in &self.points {
            out.push_str(&format!("{} {}\n", p[0], p[1]));
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_sidecar()).map_err(|e| Error::io(path, e))
    }
}

/// A face area and the landmarks that bound it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Mouth,
    Nose,
    Eyes,
    NoseMouth,
    NoseEyes,
    MouthEyes,
    WholeFace,
    /// Both eyebrows and both eyes; not one of the seven standard areas.
    EyesSymmetric,
}

impl Region {
    /// The seven standard areas in report order.
    pub const STANDARD: [Region; 7] = [
        Region::Mouth,
        Region::Nose,
        Region::Eyes,
        Region::NoseMouth,
        Region::NoseEyes,
        Region::MouthEyes,
        Region::WholeFace,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Region::Mouth => "mouth",
            Region::Nose => "nose",
            Region::Eyes => "eyes",
            Region::NoseMouth => "nose_mouth",
            Region::NoseEyes => "nose_eyes",
            Region::MouthEyes => "mouth_eyes",
            Region::WholeFace => "whole_face",
            Region::EyesSymmetric => "eyes_symmetric",
        }
    }

    /// Inclusive 1-based landmark ranges.
    pub fn ranges(self) -> &'static [(usize, usize)] {
        match self {
            Region::Mouth => &[(49, 68)],
            Region::Nose => &[(29, 36)],
            Region::Eyes => &[(18, 22), (37, 42)],
            Region::NoseMouth => &[(29, 36), (49, 68)],
            Region::NoseEyes => &[(18, 22), (29, 36), (37, 42)],
            Region::MouthEyes => &[(18, 22), (49, 68), (37, 42)],
            Region::WholeFace => &[(1, 68)],
            Region::EyesSymmetric => &[(18, 27), (37, 48)],
        }
    }

    /// Sorted 1-based landmark indices.
    pub fn indices(self) -> Vec<usize> {
        let mut v: Vec<usize> = self.ranges().iter().flat_map(|&(a, b)| a..=b).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Region::STANDARD
            .iter()
            .chain(&[Region::EyesSymmetric])
            .copied()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::UnknownRegion(s.to_string()))
    }
}

/// Landmark indices of a region by name.
pub fn region_indices(name: &str) -> Result<Vec<usize>> {
    Ok(name.parse::<Region>()?.indices())
}

/// Integer box in source pixel coordinates; pixels `[left, right) × [top, bottom)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub left: usize,
    pub top: usize,
    pub right: usize,
    pub bottom: usize,
}

impl BoundingBox {
    pub fn width(&self) -> usize {
        self.right - self.left
    }

    pub fn height(&self) -> usize {
        self.bottom - self.top
    }

    pub fn contains_point(&self, p: [f64; 2]) -> bool {
        p[0] >= self.left as f64 && p[0] <= self.right as f64 && p[1] >= self.top as f64 && p[1] <= self.bottom as f64
    }

    pub fn contains(&self, other: &BoundingBox) -> bool {
        self.left <= other.left && self.top <= other.top && self.right >= other.right && self.bottom >= other.bottom
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionCrop {
    pub pixels: GrayImage,
    pub source_box: BoundingBox,
    pub region: Region,
}

fn clip_point(p: [f64; 2], width: usize, height: usize) -> [f64; 2] {
    [p[0].clamp(0.0, width as f64), p[1].clamp(0.0, height as f64)]
}

/// Box around the region's landmarks (clipped to the image first), grown by
/// `margin · max(box width, box height)` on every side and clipped again.
pub fn region_box(
    width: usize,
    height: usize,
    landmarks: &LandmarkSet68,
    region: Region,
    margin: f64,
) -> Result<BoundingBox> {
    let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
    let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for i in region.indices() {
        let [x, y] = clip_point(landmarks.point(i), width, height);
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let grow = margin.max(0.0) * (x1 - x0).max(y1 - y0);
    let left = (x0 - grow).floor().max(0.0);
    let top = (y0 - grow).floor().max(0.0);
    let right = (x1 + grow).ceil().min(width as f64);
    let bottom = (y1 + grow).ceil().min(height as f64);
    if right <= left || bottom <= top {
        return Err(Error::DegenerateBox {
            region: region.name().to_string(),
            left: left as i64,
            top: top as i64,
            right: right as i64,
            bottom: bottom as i64,
        });
    }
    Ok(BoundingBox {
        left: left as usize,
        top: top as usize,
        right: right as usize,
        bottom: bottom as usize,
    })
}

pub fn extract_region(image: &GrayImage, landmarks: &LandmarkSet68, region: Region, margin: f64) -> Result<RegionCrop> {
    if image.is_empty() {
        return Err(Error::DimensionMismatch {
            op: "extract_region",
            detail: "empty image".into(),
        });
    }
    let b = region_box(image.width(), image.height(), landmarks, region, margin)?;
    Ok(RegionCrop {
        pixels: image.crop(b.left, b.top, b.right, b.bottom),
        source_box: b,
        region,
    })
}

/// Centres the image on an `S×S` canvas, `S = max(w, h)`. Odd remainders put
/// the extra row or column at the bottom or right.
pub fn pad_to_square(image: &GrayImage, fill: u8) -> GrayImage {
    let (w, h) = (image.width(), image.height());
    let side = w.max(h);
    if w == h {
        return image.clone();
    }
    let (left, top) = ((side - w) / 2, (side - h) / 2);
    let mut out = GrayImage::new(side, side, fill);
    for y in 0..h {
        for x in 0..w {
            out.put(left + x, top + y, image.get(x, y));
        }
    }
    out
}

/// Largest centred square inside the image (drops the excess of the long side).
pub fn center_square_crop(image: &GrayImage) -> GrayImage {
    let side = image.width().min(image.height());
    let left = (image.width() - side) / 2;
    let top = (image.height() - side) / 2;
    image.crop(left, top, left + side, top + side)
}

/// Square of side `min(w, h)` at a uniformly random offset along the long side.
pub fn random_square_crop<R: Rng + ?Sized>(image: &GrayImage, rng: &mut R) -> GrayImage {
    let side = image.width().min(image.height());
    let left = rng.random_range(0..=image.width() - side);
    let top = rng.random_range(0..=image.height() - side);
    image.crop(left, top, left + side, top + side)
}
