//! Schematic faces with a class pattern painted into one region, for
//! experiments that need a known ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{stratified_split, Dataset, LabeledFace};
use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::regions::{region_box, LandmarkSet68, Region};

const SIDE: usize = 64;
const PATTERNS: [&str; 8] = [
    "bar", "disk", "ring", "column", "cross", "diagonal", "checker", "corners",
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticOptions {
    pub classes: usize,
    pub per_class: usize,
    pub signal_region: Region,
    pub seed: u64,
    pub noise_std: f64,
}

impl SyntheticOptions {
    pub fn new(classes: usize, per_class: usize, signal_region: Region, seed: u64) -> Self {
        SyntheticOptions {
            classes,
            per_class,
            signal_region,
            seed,
            noise_std: 10.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(2..=PATTERNS.len()).contains(&self.classes) {
            return Err(Error::InvalidConfig(format!(
                "synthetic data supports 2 to {} classes, got {}",
                PATTERNS.len(),
                self.classes
            )));
        }
        if self.per_class == 0 {
            return Err(Error::InvalidConfig("per_class must be at least 1".into()));
        }
        Ok(())
    }
}

/// A frontal 68-point layout on a 64×64 canvas.
pub fn schematic_template() -> LandmarkSet68 {
    use std::f64::consts::PI;
    let mut p = Vec::with_capacity(68);
    for i in 0..17 {
        let t = PI * i as f64 / 16.0;
        p.push([32.0 - 24.0 * t.cos(), 20.0 + 38.0 * t.sin()]);
    }
    for x0 in [13.0, 37.0] {
        for i in 0..5 {
            let u = i as f64 / 4.0;
            p.push([x0 + 14.0 * u, 16.0 - 2.5 * (PI * u).sin()]);
        }
    }
    for i in 0..4 {
        p.push([32.0, 21.0 + 4.5 * i as f64]);
    }
    for i in 0..5 {
        p.push([27.0 + 2.5 * i as f64, 36.0 + if i == 2 { 1.0 } else { 0.0 }]);
    }
    for cx in [20.0, 44.0] {
        let eye = [
            (-5.0, 0.0),
            (-2.0, -2.0),
            (2.0, -2.0),
            (5.0, 0.0),
            (2.0, 2.0),
            (-2.0, 2.0),
        ];
        p.extend(eye.iter().map(|&(dx, dy)| [cx + dx, 23.0 + dy]));
    }
    for i in 0..12 {
        let t = PI * i as f64 / 6.0;
        p.push([32.0 - 11.0 * t.cos(), 47.0 - 5.0 * t.sin()]);
    }
    for i in 0..8 {
        let t = PI * i as f64 / 4.0;
        p.push([32.0 - 7.0 * t.cos(), 47.0 - 2.5 * t.sin()]);
    }
    LandmarkSet68::new(p).expect("template has 68 finite points")
}

fn in_pattern(class: usize, u: f64, v: f64) -> bool {
    let r2 = u * u + v * v;
    match class {
        0 => v.abs() < 0.3 && u.abs() < 0.9,
        1 => r2 < 0.55,
        2 => (0.2..0.72).contains(&r2),
        3 => u.abs() < 0.25 && v.abs() < 0.9,
        4 => (v.abs() < 0.25 || u.abs() < 0.2) && r2 < 0.9,
        5 => (u - v).abs() < 0.35,
        6 => ((u + 1.0) * 2.0).floor() as i64 % 2 == ((v + 1.0) * 2.0).floor() as i64 % 2,
        _ => u.abs() > 0.5 && v.abs() > 0.5,
    }
}

/// Paints `class`'s pattern over the box `[x0, x1) × [y0, y1)`.
fn paint_pattern(img: &mut GrayImage, class: usize, (x0, y0, x1, y1): (f64, f64, f64, f64), value: u8) {
    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    let (hw, hh) = ((x1 - x0) / 2.0, (y1 - y0) / 2.0);
    let xs = x0.floor().max(0.0) as usize..(x1.ceil() as usize).min(img.width());
    for y in y0.floor().max(0.0) as usize..(y1.ceil() as usize).min(img.height()) {
        for x in xs.clone() {
            let u = (x as f64 + 0.5 - cx) / hw;
            let v = (y as f64 + 0.5 - cy) / hh;
            if u.abs() <= 1.0 && v.abs() <= 1.0 && in_pattern(class, u, v) {
                img.put(x, y, value);
            }
        }
    }
}

fn draw_polyline(img: &mut GrayImage, points: &[[f64; 2]], closed: bool, value: u8) {
    let n = points.len();
    let segments = if closed { n } else { n - 1 };
    for i in 0..segments {
        let (a, b) = (points[i], points[(i + 1) % n]);
        let steps = ((b[0] - a[0]).hypot(b[1] - a[1]) * 3.0).ceil().max(1.0) as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let x = (a[0] + t * (b[0] - a[0])).round();
            let y = (a[1] + t * (b[1] - a[1])).round();
            if x >= 0.0 && y >= 0.0 && (x as usize) < img.width() && (y as usize) < img.height() {
                img.put(x as usize, y as usize, value);
            }
        }
    }
}

fn add_noise(img: &GrayImage, canvas: &[f64], std: f64, rng: &mut ChaCha8Rng) -> GrayImage {
    let noise = Normal::new(0.0, std.max(1e-9)).expect("positive std");
    let pixels = canvas
        .iter()
        .zip(img.pixels())
        .map(|(&base, &p)| {
            let v = if p > 0 { p as f64 } else { base };
            (v + noise.sample(rng)).round().clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayImage::from_raw(img.width(), img.height(), pixels).expect("same size")
}

fn render_face(class: usize, opts: &SyntheticOptions, rng: &mut ChaCha8Rng) -> Result<(GrayImage, LandmarkSet68)> {
    let jitter = Normal::new(0.0, 0.5).expect("positive std");
    let scale = rng.random_range(0.94..1.06);
    let (tx, ty) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
    let landmarks = schematic_template().map(|[x, y]| {
        [
            32.0 + (x - 32.0) * scale + tx + jitter.sample(rng),
            32.0 + (y - 32.0) * scale + ty + jitter.sample(rng),
        ]
    });

    // background and face oval as a real-valued canvas; strokes on an overlay
    let mut canvas = vec![0.0; SIDE * SIDE];
    let skin = rng.random_range(125.0..150.0);
    for y in 0..SIDE {
        for x in 0..SIDE {
            let (u, v) = ((x as f64 + 0.5 - 32.0 - tx) / 26.0, (y as f64 + 0.5 - 36.0 - ty) / 28.0);
            canvas[y * SIDE + x] = if u * u + v * v <= 1.0 { skin } else { 60.0 };
        }
    }
    let mut overlay = GrayImage::new(SIDE, SIDE, 0);
    let pts = landmarks.points();
    let stroke = 75;
    draw_polyline(&mut overlay, &pts[0..17], false, stroke);
    draw_polyline(&mut overlay, &pts[17..22], false, stroke);
    draw_polyline(&mut overlay, &pts[22..27], false, stroke);
    draw_polyline(&mut overlay, &pts[27..31], false, stroke);
    draw_polyline(&mut overlay, &pts[31..36], false, stroke);
    draw_polyline(&mut overlay, &pts[36..42], true, stroke);
    draw_polyline(&mut overlay, &pts[42..48], true, stroke);
    draw_polyline(&mut overlay, &pts[48..60], true, stroke);
    draw_polyline(&mut overlay, &pts[60..68], true, stroke);

    let b = region_box(SIDE, SIDE, &landmarks, opts.signal_region, 0.0)?;
    let value = rng.random_range(205..=245);
    paint_pattern(
        &mut overlay,
        class,
        (b.left as f64, b.top as f64, b.right as f64, b.bottom as f64),
        value,
    );
    Ok((add_noise(&overlay, &canvas, opts.noise_std, rng), landmarks))
}

fn pattern_names(classes: usize) -> Vec<String> {
    PATTERNS[..classes].iter().map(|s| s.to_string()).collect()
}

/// `classes × per_class` 64×64 schematic faces with landmarks. Only the
/// `signal_region` box carries class information; the split is the
/// stratified 4:1 rule under `seed`.
pub fn generate_synthetic(opts: &SyntheticOptions) -> Result<Dataset> {
    opts.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut faces = Vec::with_capacity(opts.classes * opts.per_class);
    for class in 0..opts.classes {
        for j in 0..opts.per_class {
            let (image, landmarks) = render_face(class, opts, &mut rng)?;
            faces.push((class, j, image, landmarks));
        }
    }
    let labels: Vec<usize> = faces.iter().map(|f| f.0).collect();
    let splits = stratified_split(&labels, opts.classes, opts.seed);
    let mut ds = Dataset::new("synthetic", pattern_names(opts.classes));
    ds.split_seed = Some(opts.seed);
    ds.filters
        .insert("signal_region".into(), opts.signal_region.name().into());
    ds.filters.insert("noise_std".into(), opts.noise_std.to_string());
    for ((class, j, image, landmarks), split) in faces.into_iter().zip(splits) {
        ds.push(LabeledFace {
            image,
            label: class,
            landmarks: Some(landmarks),
            split,
            source_id: format!("synthetic-{}-{j:04}", PATTERNS[class]),
        })?;
    }
    Ok(ds)
}

/// Wide, short crops (width 72–88, height 20–28) without landmarks. A
/// class-neutral horizontal stroke runs through the middle; the class
/// pattern appears only at the two ends, outside the centred square.
pub fn generate_wide_crops(classes: usize, per_class: usize, seed: u64) -> Result<Dataset> {
    SyntheticOptions::new(classes, per_class, Region::WholeFace, seed).validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut faces = Vec::with_capacity(classes * per_class);
    for class in 0..classes {
        for j in 0..per_class {
            let w = rng.random_range(72..=88usize);
            let h = rng.random_range(20..=28usize);
            let side = (h - 6) as f64;
            // room between an end and the centred h×h square
            let room = (w - h) as f64 / 2.0 - side;
            let inset = rng.random_range(0.0..=room.max(0.0));
            let y0 = (h as f64 - side) / 2.0 + rng.random_range(-1.0..=1.0);
            let canvas = vec![rng.random_range(90.0..130.0); w * h];
            let mut overlay = GrayImage::new(w, h, 0);
            let mid = h as f64 / 2.0;
            draw_polyline(&mut overlay, &[[0.0, mid], [w as f64 - 1.0, mid]], false, 60);
            let value = rng.random_range(205..=245);
            paint_pattern(&mut overlay, class, (inset, y0, inset + side, y0 + side), value);
            let right = w as f64 - inset;
            paint_pattern(&mut overlay, class, (right - side, y0, right, y0 + side), value);
            faces.push((class, j, add_noise(&overlay, &canvas, 10.0, &mut rng)));
        }
    }
    let labels: Vec<usize> = faces.iter().map(|f| f.0).collect();
    let splits = stratified_split(&labels, classes, seed);
    let mut ds = Dataset::new("synthetic-wide", pattern_names(classes));
    ds.split_seed = Some(seed);
    for ((class, j, image), split) in faces.into_iter().zip(splits) {
        ds.push(LabeledFace {
            image,
            label: class,
            landmarks: None,
            split,
            source_id: format!("wide-{}-{j:04}", PATTERNS[class]),
        })?;
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;

    #[test]
    fn template_regions_are_disjoint_where_expected() {
        let t = schematic_template();
        let mouth = region_box(64, 64, &t, Region::Mouth, 0.05).unwrap();
        let eyes = region_box(64, 64, &t, Region::Eyes, 0.05).unwrap();
        let nose = region_box(64, 64, &t, Region::Nose, 0.05).unwrap();
        assert!(eyes.bottom <= mouth.top && nose.bottom <= mouth.top);
    }

    #[test]
    fn deterministic_and_stratified() {
        let opts = SyntheticOptions::new(3, 10, Region::Mouth, 5);
        let a = generate_synthetic(&opts).unwrap();
        assert_eq!(a, generate_synthetic(&opts).unwrap());
        assert_eq!(a.counts(Split::Test), vec![2, 2, 2]);
        assert_eq!(a.counts(Split::Train), vec![8, 8, 8]);
        assert!(generate_synthetic(&SyntheticOptions::new(1, 10, Region::Mouth, 0)).is_err());
    }

    #[test]
    fn wide_crops_centre_square_is_class_neutral() {
        let ds = generate_wide_crops(3, 5, 1).unwrap();
        for s in &ds.samples {
            let (w, h) = (s.image.width(), s.image.height());
            assert!(w >= h + 20);
            // pattern pixels are ≥ 205 before noise; the centre holds none
            let centre = crate::regions::center_square_crop(&s.image);
            let bright = centre.pixels().iter().filter(|&&p| p > 190).count();
            assert!(bright < 3, "{bright} bright pixels in the centre of {}", s.source_id);
        }
    }
}
