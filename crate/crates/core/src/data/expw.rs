use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{class_names, find_image, sidecar_for, Dataset, ExpectedCounts, LabeledFace, Split, BASIC_CLASSES};
use crate::error::{Error, Result};
use crate::imaging::{read_gray, GrayImage};
use crate::regions::LandmarkSet68;

/// Official label codes 0–6 (angry, disgust, fear, happy, sad, surprise,
/// neutral) mapped onto [`BASIC_CLASSES`].
const CODE_TO_CLASS: [usize; 7] = [4, 5, 6, 1, 3, 2, 0];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpwOptions {
    /// Faces are kept only when their confidence is strictly greater.
    pub min_confidence: f64,
    pub split_seed: u64,
}

impl Default for ExpwOptions {
    fn default() -> Self {
        ExpwOptions {
            min_confidence: 60.0,
            split_seed: 0,
        }
    }
}

/// Label-stratified 4:1 split. Each class's members are shuffled under
/// `seed`; the last `⌊n/5⌋` go to test.
pub fn stratified_split(labels: &[usize], classes: usize, seed: u64) -> Vec<Split> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![Split::Train; labels.len()];
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        let test = members.len() / 5;
        for &i in &members[members.len() - test..] {
            out[i] = Split::Test;
        }
    }
    out
}

#[derive(Debug)]
struct Row {
    name: String,
    face_id: String,
    top: f64,
    left: f64,
    right: f64,
    bottom: f64,
    label: usize,
    line: usize,
}

fn parse_row(line: &str, line_no: usize, ctx: &str) -> Result<Option<(Row, f64)>> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.is_empty() {
        return Ok(None);
    }
    if fields.len() != 8 {
        return Err(Error::malformed(
            ctx,
            line_no,
            format!("expected 8 fields, found {}", fields.len()),
        ));
    }
    let num = |i: usize, what: &str| -> Result<f64> {
        fields[i]
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::malformed(ctx, line_no, format!("bad {what} `{}`", fields[i])))
    };
    let (top, left, right, bottom) = (num(2, "top")?, num(3, "left")?, num(4, "right")?, num(5, "bottom")?);
    let confidence = num(6, "confidence")?;
    let label = fields[7]
        .parse::<usize>()
        .ok()
        .filter(|&c| c < 7)
        .ok_or_else(|| Error::malformed(ctx, line_no, format!("bad label `{}`", fields[7])))?;
    Ok(Some((
        Row {
            name: fields[0].to_string(),
            face_id: fields[1].to_string(),
            top,
            left,
            right,
            bottom,
            label: CODE_TO_CLASS[label],
            line: line_no,
        },
        confidence,
    )))
}

/// Reads the label file (`name face_id top left right bottom confidence
/// label` per line), keeps faces with confidence above the threshold, crops
/// each to its face box and applies [`stratified_split`].
pub fn ingest_expw(image_dir: &Path, label_file: &Path, options: ExpwOptions) -> Result<Dataset> {
    let ctx = label_file.display().to_string();
    let text = fs::read_to_string(label_file).map_err(|e| Error::io(label_file, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some((row, confidence)) = parse_row(line, i + 1, &ctx)? {
            if confidence > options.min_confidence {
                rows.push(row);
            }
        }
    }

    let mut missing = Vec::new();
    let mut found = HashMap::new();
    for row in &rows {
        if found.contains_key(&row.name) || missing.contains(&row.name) {
            continue;
        }
        match find_image(image_dir, &row.name) {
            Some(p) => {
                found.insert(row.name.clone(), p);
            }
            None => missing.push(row.name.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingImages(missing));
    }

    let labels: Vec<usize> = rows.iter().map(|r| r.label).collect();
    let splits = stratified_split(&labels, BASIC_CLASSES.len(), options.split_seed);

    let mut ds = Dataset::new("expw", class_names(&BASIC_CLASSES));
    ds.filters
        .insert("min_confidence_exclusive".into(), options.min_confidence.to_string());
    ds.split_seed = Some(options.split_seed);
    ds.expected = Some(ExpectedCounts {
        train: vec![8309, 10576, 2471, 2494, 1272, 1250, 329],
        test: vec![2077, 2644, 617, 623, 318, 312, 82],
    });
    let mut cache: HashMap<String, (GrayImage, Option<LandmarkSet68>)> = HashMap::new();
    for (row, split) in rows.into_iter().zip(splits) {
        if !cache.contains_key(&row.name) {
            let path = &found[&row.name];
            cache.clear();
            cache.insert(row.name.clone(), (read_gray(path)?, sidecar_for(path)?));
        }
        let (image, landmarks) = &cache[&row.name];
        let (w, h) = (image.width() as f64, image.height() as f64);
        let left = row.left.max(0.0).floor();
        let top = row.top.max(0.0).floor();
        let right = row.right.min(w).ceil();
        let bottom = row.bottom.min(h).ceil();
        if right <= left || bottom <= top {
            return Err(Error::malformed(
                &ctx,
                row.line,
                "face box is empty after clipping to the image",
            ));
        }
        let crop = image.crop(left as usize, top as usize, right as usize, bottom as usize);
        ds.push(LabeledFace {
            image: crop,
            label: row.label,
            landmarks: landmarks.as_ref().map(|l| l.map(|[x, y]| [x - left, y - top])),
            split,
            source_id: format!("{}#{}", row.name, row.face_id),
        })?;
    }
    Ok(ds)
}
