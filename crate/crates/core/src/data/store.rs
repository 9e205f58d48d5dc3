//! Prepared-store layout:
//!
//! ```text
//! <dir>/manifest.json        DatasetManifest
//! <dir>/samples.tsv          index, source_id, label, split, image, landmarks
//! <dir>/images/NNNNNN.pgm    8-bit grayscale
//! <dir>/images/NNNNNN.lmk    landmark sidecar, when present
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Dataset, DatasetManifest, LabeledFace};
use crate::error::{Error, Result};
use crate::imaging::{read_gray, write_gray};
use crate::regions::LandmarkSet68;

const HEADER: &str = "index\tsource_id\tlabel\tsplit\timage\tlandmarks";

pub(super) fn save(ds: &Dataset, dir: &Path) -> Result<()> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut table = format!("{HEADER}\n");
    for (i, s) in ds.samples.iter().enumerate() {
        let image_name = format!("images/{i:06}.pgm");
        write_gray(&dir.join(&image_name), &s.image)?;
        let lmk_name = match &s.landmarks {
            Some(l) => {
                let name = format!("images/{i:06}.lmk");
                l.write(&dir.join(&name))?;
                name
            }
            None => "-".to_string(),
        };
        let id: String = s
            .source_id
            .chars()
            .map(|c| if c == '\t' || c == '\n' || c == '\r' { ' ' } else { c })
            .collect();
        let _ = writeln!(table, "{i}\t{id}\t{}\t{}\t{image_name}\t{lmk_name}", s.label, s.split);
    }
    let table_path = dir.join("samples.tsv");
    fs::write(&table_path, table).map_err(|e| Error::io(&table_path, e))?;
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&ds.manifest()).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&manifest_path, json + "\n").map_err(|e| Error::io(&manifest_path, e))
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::malformed(path.display().to_string(), e.line(), e.to_string()))
}

pub(super) fn load(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let table_path = dir.join("samples.tsv");
    let ctx = table_path.display().to_string();
    let text = fs::read_to_string(&table_path).map_err(|e| Error::io(&table_path, e))?;
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, l)| l) != Some(HEADER) {
        return Err(Error::malformed(&ctx, 1, "unexpected header"));
    }
    let mut ds = Dataset::new(manifest.name, manifest.class_names);
    ds.filters = manifest.filters;
    ds.split_seed = manifest.split_seed;
    ds.expected = manifest.expected;
    for (i, line) in lines {
        let line_no = i + 1;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(Error::malformed(
                &ctx,
                line_no,
                format!("expected 6 fields, found {}", f.len()),
            ));
        }
        let label = f[2]
            .parse()
            .map_err(|_| Error::malformed(&ctx, line_no, format!("bad label `{}`", f[2])))?;
        let split = f[3]
            .parse()
            .map_err(|_| Error::malformed(&ctx, line_no, format!("bad split `{}`", f[3])))?;
        let landmarks = match f[5] {
            "-" => None,
            name => Some(LandmarkSet68::read(&dir.join(name))?),
        };
        ds.push(LabeledFace {
            image: read_gray(&dir.join(f[4]))?,
            label,
            landmarks,
            split,
            source_id: f[1].to_string(),
        })
        .map_err(|e| Error::malformed(&ctx, line_no, e.to_string()))?;
    }
    Ok(ds)
}
