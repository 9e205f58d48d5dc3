use std::fs;
use std::path::Path;

use super::{class_names, find_image, sidecar_for, Dataset, ExpectedCounts, LabeledFace, Split, BASIC_CLASSES};
use crate::error::{Error, Result};
use crate::imaging::read_gray;

/// Official label codes 1–7 (surprise, fear, disgust, happiness, sadness,
/// anger, neutral) mapped onto [`BASIC_CLASSES`].
const CODE_TO_CLASS: [usize; 7] = [2, 6, 5, 1, 3, 4, 0];

/// Reads the single-label partition list (`<name> <code>` per line, split
/// given by the `train_`/`test_` name prefix) and loads every listed image.
/// Any listed image absent from `image_dir` is an error naming all of them.
pub fn ingest_rafdb(image_dir: &Path, label_list: &Path) -> Result<Dataset> {
    let ctx = label_list.display().to_string();
    let text = fs::read_to_string(label_list).map_err(|e| Error::io(label_list, e))?;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let mut fields = line.split_whitespace();
        let Some(name) = fields.next() else { continue };
        let code: usize = fields
            .next()
            .and_then(|c| c.parse().ok())
            .filter(|c| (1..=7).contains(c))
            .ok_or_else(|| Error::malformed(&ctx, line_no, "expected `<image> <label 1-7>`"))?;
        if fields.next().is_some() {
            return Err(Error::malformed(&ctx, line_no, "trailing fields"));
        }
        let lower = name.to_ascii_lowercase();
        let split = if lower.starts_with("train") {
            Split::Train
        } else if lower.starts_with("test") {
            Split::Test
        } else {
            return Err(Error::malformed(
                &ctx,
                line_no,
                format!("`{name}` has no train/test prefix"),
            ));
        };
        entries.push((name.to_string(), CODE_TO_CLASS[code - 1], split));
    }

    let mut missing = Vec::new();
    let mut paths = Vec::with_capacity(entries.len());
    for (name, _, _) in &entries {
        match find_image(image_dir, name) {
            Some(p) => paths.push(p),
            None => missing.push(name.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingImages(missing));
    }

    let mut ds = Dataset::new("rafdb", class_names(&BASIC_CLASSES));
    ds.expected = Some(ExpectedCounts {
        train: vec![2524, 4772, 1290, 1982, 705, 717, 281],
        test: vec![680, 1185, 329, 478, 162, 160, 74],
    });
    for ((name, label, split), path) in entries.into_iter().zip(paths) {
        ds.push(LabeledFace {
            image: read_gray(&path)?,
            label,
            landmarks: sidecar_for(&path)?,
            split,
            source_id: name,
        })?;
    }
    Ok(ds)
}
