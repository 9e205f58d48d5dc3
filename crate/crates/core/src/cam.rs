//! Class activation maps and heatmap rendering.
//!
//! For class `c`, the map is `Σ_k w[k][c] · f_k(x, y)` over the
//! visualizer's final feature maps. Because the head is a bias-free linear
//! layer over spatial means, the map sums to `H'·W'` times the class logit.

use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;

use crate::autodiff::Graph;
use crate::data::LabeledFace;
use crate::error::{Error, Result};
use crate::imaging::{write_rgb, GrayImage, RgbImage};
use crate::layers::Mode;
use crate::models::Model;
use crate::tensor::{Element, Shape, Tensor};
use crate::training::{augment_eval, eval_view, Checkpoint, INPUT_SIZE};

#[derive(Clone, Debug, PartialEq)]
pub struct CamMap {
    pub height: usize,
    pub width: usize,
    pub class_index: usize,
    /// Row-major raw map.
    pub raw: Vec<f64>,
}

impl CamMap {
    pub fn sum(&self) -> f64 {
        self.raw.iter().sum()
    }

    /// `(raw − min)/(max − min)`; a constant map becomes all zeros.
    pub fn normalized(&self) -> Vec<f64> {
        let lo = self.raw.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            self.raw.iter().map(|v| (v - lo) / (hi - lo)).collect()
        } else {
            vec![0.0; self.raw.len()]
        }
    }
}

/// Map for class `class` from `K×H'×W'` feature maps (a single-item
/// tensor `1×K×H'×W'`) and `K×C` head weights.
pub fn compute_cam<T: Element>(feature_maps: &Tensor<T>, fc_weights: &Tensor<T>, class: usize) -> Result<CamMap> {
    let fs = feature_maps.shape();
    let ws = fc_weights.shape();
    let classes = ws.c * ws.h * ws.w;
    if fs.n != 1 || ws.n != fs.c {
        return Err(Error::DimensionMismatch {
            op: "compute_cam",
            detail: format!("feature maps {fs} vs head weights {ws}"),
        });
    }
    if class >= classes {
        return Err(Error::ClassOutOfRange { class, classes });
    }
    let plane = fs.h * fs.w;
    let data = feature_maps.data();
    let weights = fc_weights.data();
    let mut raw = vec![0.0f64; plane];
    for k in 0..fs.c {
        let w = weights[k * classes + class].as_f64();
        for (r, f) in raw.iter_mut().zip(&data[k * plane..(k + 1) * plane]) {
            *r += w * f.as_f64();
        }
    }
    Ok(CamMap {
        height: fs.h,
        width: fs.w,
        class_index: class,
        raw,
    })
}

/// Align-corners bilinear resampling of a row-major `h×w` map.
pub fn upsample_bilinear(map: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    assert_eq!(map.len(), h * w);
    let coord = |i: usize, src: usize, dst: usize| -> (usize, usize, f64) {
        if dst <= 1 || src <= 1 {
            return (0, 0, 0.0);
        }
        let pos = i as f64 * (src - 1) as f64 / (dst - 1) as f64;
        let lo = (pos.floor() as usize).min(src - 1);
        let hi = (lo + 1).min(src - 1);
        (lo, hi, pos - lo as f64)
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let (y0, y1, fy) = coord(y, h, out_h);
        for x in 0..out_w {
            let (x0, x1, fx) = coord(x, w, out_w);
            let top = map[y0 * w + x0] * (1.0 - fx) + map[y0 * w + x1] * fx;
            let bottom = map[y1 * w + x0] * (1.0 - fx) + map[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Piecewise-linear jet: blue at 0, green at ½, red at 1.
pub fn jet(v: f64) -> Result<[u8; 3]> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::OutOfUnitRange(v));
    }
    let channel = |a: f64| (255.0 * (1.5 - (4.0 * v - a).abs()).clamp(0.0, 1.0)).round() as u8;
    Ok([channel(3.0), channel(2.0), channel(1.0)])
}

pub fn colormap_jet(values: &[f64], width: usize, height: usize) -> Result<RgbImage> {
    let mut img = RgbImage::new(width, height);
    for (i, &v) in values.iter().enumerate() {
        img.put(i % width, i / width, jet(v)?);
    }
    Ok(img)
}

/// `round(clamp(0.4·heatmap + 0.5·image, 0, 255))` per channel, the
/// grayscale image broadcast to all three.
pub fn blend(heatmap: &RgbImage, image: &GrayImage) -> Result<RgbImage> {
    if heatmap.width() != image.width() || heatmap.height() != image.height() {
        return Err(Error::DimensionMismatch {
            op: "blend",
            detail: format!(
                "heatmap {}x{} vs image {}x{}",
                heatmap.width(),
                heatmap.height(),
                image.width(),
                image.height()
            ),
        });
    }
    let pixels = heatmap
        .pixels()
        .iter()
        .enumerate()
        .map(|(i, &h)| blend_value(h, image.pixels()[i / 3]))
        .collect();
    RgbImage::from_raw(image.width(), image.height(), pixels)
}

pub fn blend_value(heat: u8, gray: u8) -> u8 {
    (0.4 * heat as f64 + 0.5 * gray as f64).clamp(0.0, 255.0).round() as u8
}

/// Full rendering: normalize, upsample to the image size, colour, blend.
pub fn render_heatmap(cam: &CamMap, image: &GrayImage) -> Result<RgbImage> {
    let up = upsample_bilinear(&cam.normalized(), cam.height, cam.width, image.height(), image.width());
    let heat = colormap_jet(&up, image.width(), image.height())?;
    blend(&heat, image)
}

/// Raw maps for `classes` from one visualizer forward pass over a single
/// `1×1×S×S` input, along with that pass's logits.
pub fn class_activation_maps<T: Element>(
    model: &mut Model<T>,
    input: &Tensor<T>,
    classes: &[usize],
) -> Result<(Vec<CamMap>, Vec<f64>)> {
    if input.shape().n != 1 {
        return Err(Error::ShapeMismatch {
            op: "class_activation_maps",
            left: input.shape(),
            right: Shape::new(1, input.shape().c, input.shape().h, input.shape().w),
        });
    }
    let mut g = Graph::new();
    let x = g.input(input.clone());
    let out = model.visualizer_forward(&mut g, x, Mode::Infer)?;
    let weights = model.fc_weights()?;
    let maps = classes
        .iter()
        .map(|&c| compute_cam(g.value(out.feature_maps), weights, c))
        .collect::<Result<Vec<_>>>()?;
    let logits = g.value(out.logits).data().iter().map(|v| v.as_f64()).collect();
    Ok((maps, logits))
}

pub struct FaceHeatmap {
    pub cam: CamMap,
    pub image: RgbImage,
}

/// Heatmaps for `classes` over the centred input window of one face, each
/// blended onto that window. `model` must be `checkpoint.model()`.
pub fn face_heatmaps(
    checkpoint: &Checkpoint,
    model: &mut Model<f32>,
    face: &LabeledFace,
    classes: &[usize],
) -> Result<Vec<FaceHeatmap>> {
    let spec = &checkpoint.input;
    let square = spec.square::<ChaCha8Rng>(&spec.crop(face)?, None);
    let view = eval_view(&square);
    let input = Tensor::from_vec(
        Shape::new(1, 1, INPUT_SIZE, INPUT_SIZE),
        augment_eval(&square, checkpoint.normalization),
    )?;
    let (maps, _) = class_activation_maps(model, &input, classes)?;
    maps.into_iter()
        .map(|cam| {
            let image = render_heatmap(&cam, &view)?;
            Ok(FaceHeatmap { cam, image })
        })
        .collect()
}

/// `<dir>/<stem>.<class>.cam.png` and the matching `.ppm`.
pub fn heatmap_paths(dir: &Path, stem: &str, class_name: &str) -> [PathBuf; 2] {
    ["png", "ppm"].map(|ext| dir.join(format!("{stem}.{class_name}.cam.{ext}")))
}

pub fn write_heatmap(dir: &Path, stem: &str, class_name: &str, img: &RgbImage) -> Result<[PathBuf; 2]> {
    let paths = heatmap_paths(dir, stem, class_name);
    for p in &paths {
        write_rgb(p, img)?;
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn maps(k: usize, h: usize, w: usize, f: impl Fn(usize) -> f64) -> Tensor<f64> {
        Tensor::from_vec(Shape::new(1, k, h, w), (0..k * h * w).map(f).collect()).unwrap()
    }

    #[test]
    fn unit_weight_returns_the_map() {
        let fm = maps(1, 2, 3, |i| i as f64 - 2.0);
        let w = Tensor::from_vec(Shape::matrix(1, 1), vec![1.0]).unwrap();
        assert_eq!(compute_cam(&fm, &w, 0).unwrap().raw, fm.data().to_vec());
    }

    #[test]
    fn dimension_and_class_errors() {
        let fm = maps(3, 2, 2, |i| i as f64);
        let w = Tensor::<f64>::zeros(Shape::matrix(2, 4));
        assert!(matches!(compute_cam(&fm, &w, 0), Err(Error::DimensionMismatch { .. })));
        let w = Tensor::<f64>::zeros(Shape::matrix(3, 4));
        assert!(matches!(compute_cam(&fm, &w, 4), Err(Error::ClassOutOfRange { .. })));
    }

    #[test]
    fn upsample_hand_example() {
        let up = upsample_bilinear(&[0.0, 1.0, 2.0, 3.0], 2, 2, 3, 3);
        assert_eq!(up, vec![0.0, 0.5, 1.0, 1.0, 1.5, 2.0, 2.0, 2.5, 3.0]);
        let flat = upsample_bilinear(&[0.3; 4], 2, 2, 5, 7);
        assert!(flat.iter().all(|&v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn jet_endpoints_and_hue_order() {
        assert_eq!(jet(0.0).unwrap(), [0, 0, 128]);
        assert_eq!(jet(1.0).unwrap(), [128, 0, 0]);
        let mid = jet(0.5).unwrap();
        assert!(mid[1] > mid[0] && mid[1] > mid[2]);
        assert!(jet(1.01).is_err() && jet(-0.1).is_err() && jet(f64::NAN).is_err());
    }

    #[test]
    fn blend_arithmetic() {
        assert_eq!(blend_value(255, 255), 230);
        assert_eq!(blend_value(0, 200), 100);
        assert_eq!(blend_value(0, 0), 0);
        let heat = RgbImage::new(2, 1);
        assert!(blend(&heat, &GrayImage::new(1, 2, 0)).is_err());
    }

    #[test]
    fn constant_map_normalizes_to_zero() {
        let cam = CamMap {
            height: 1,
            width: 3,
            class_index: 0,
            raw: vec![2.5; 3],
        };
        assert_eq!(cam.normalized(), vec![0.0; 3]);
    }
}
