use std::fs::File;
use std::path::Path;

use super::{class_names, Dataset, ExpectedCounts, LabeledFace, Split};
use crate::error::{Error, Result};
use crate::imaging::GrayImage;

pub const FERPLUS_CLASSES: [&str; 8] = [
    "neutral",
    "happiness",
    "surprise",
    "sadness",
    "anger",
    "disgust",
    "fear",
    "contempt",
];

const SIDE: usize = 48;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FerplusOptions {
    /// Minimum share of the emotion votes the winning class must hold.
    pub vote_threshold: f64,
}

impl Default for FerplusOptions {
    fn default() -> Self {
        FerplusOptions { vote_threshold: 0.5 }
    }
}

/// Winning class of a vote row, or `None` when its share is below
/// `threshold`. Ties go to the lowest class index.
pub fn majority_label(votes: &[f64], threshold: f64) -> Option<usize> {
    let total: f64 = votes.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let mut best = 0;
    for (i, &v) in votes.iter().enumerate() {
        if v > votes[best] {
            best = i;
        }
    }
    (votes[best] >= threshold * total).then_some(best)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().flexible(true).from_reader(file))
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::malformed(path.display().to_string(), 1, format!("missing column `{name}`")))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::malformed(path.display().to_string(), line, e.to_string())
}

fn parse_pixels(text: &str, context: &str, line: usize) -> Result<GrayImage> {
    let mut pixels = Vec::with_capacity(SIDE * SIDE);
    for (pos, tok) in text.split_whitespace().enumerate() {
        let v: u8 = tok
            .parse()
            .map_err(|_| Error::malformed(context, line, format!("pixel {pos}: `{tok}` is not an 8-bit value")))?;
        pixels.push(v);
    }
    if pixels.len() != SIDE * SIDE {
        return Err(Error::malformed(
            context,
            line,
            format!("expected {} pixel values, found {}", SIDE * SIDE, pixels.len()),
        ));
    }
    GrayImage::from_raw(SIDE, SIDE, pixels)
}

/// Reads the 48×48 pixel table and the aligned crowd-vote table. Only the
/// eight emotion columns count as votes; rows whose winning class holds
/// less than `vote_threshold` of them are dropped.
pub fn ingest_ferplus(pixel_csv: &Path, votes_csv: &Path, options: FerplusOptions) -> Result<Dataset> {
    let pix_ctx = pixel_csv.display().to_string();
    let vote_ctx = votes_csv.display().to_string();
    let mut pix = csv_reader(pixel_csv)?;
    let mut votes = csv_reader(votes_csv)?;
    let ph = pix.headers().map_err(|e| csv_error(pixel_csv, e))?.clone();
    let vh = votes.headers().map_err(|e| csv_error(votes_csv, e))?.clone();
    let pixels_col = column(&ph, "pixels", pixel_csv)?;
    let usage_col = column(&ph, "Usage", pixel_csv)?;
    let vote_cols = FERPLUS_CLASSES
        .iter()
        .map(|c| column(&vh, c, votes_csv))
        .collect::<Result<Vec<_>>>()?;

    let pix_rows: Vec<csv::StringRecord> = pix
        .records()
        .collect::<Result<_, _>>()
        .map_err(|e| csv_error(pixel_csv, e))?;
    let vote_rows: Vec<csv::StringRecord> = votes
        .records()
        .collect::<Result<_, _>>()
        .map_err(|e| csv_error(votes_csv, e))?;
    if pix_rows.len() != vote_rows.len() {
        return Err(Error::RowCountMismatch {
            pixels: pix_rows.len(),
            votes: vote_rows.len(),
        });
    }

    let mut ds = Dataset::new("ferplus", class_names(&FERPLUS_CLASSES));
    ds.filters
        .insert("vote_threshold".into(), options.vote_threshold.to_string());
    ds.expected = Some(ExpectedCounts {
        train: vec![11000, 8326, 3807, 3660, 2535, 151, 636, 153],
        test: vec![1219, 920, 429, 421, 287, 19, 88, 21],
    });
    for (i, (p, v)) in pix_rows.iter().zip(&vote_rows).enumerate() {
        let line = i + 2;
        let counts = vote_cols
            .iter()
            .map(|&c| {
                let field = v.get(c).unwrap_or("").trim();
                field
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite() && *x >= 0.0)
                    .ok_or_else(|| Error::malformed(&vote_ctx, line, format!("bad vote count `{field}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let usage = p.get(usage_col).unwrap_or("").trim();
        let split = match usage {
            "Training" | "PublicTest" => Split::Train,
            "PrivateTest" => Split::Test,
            other => return Err(Error::malformed(&pix_ctx, line, format!("unknown usage `{other}`"))),
        };
        let Some(label) = majority_label(&counts, options.vote_threshold) else {
            continue;
        };
        let image = parse_pixels(p.get(pixels_col).unwrap_or(""), &pix_ctx, line)?;
        ds.push(LabeledFace {
            image,
            label,
            landmarks: None,
            split,
            source_id: format!("ferplus-{i:05}"),
        })?;
    }
    Ok(ds)
}
