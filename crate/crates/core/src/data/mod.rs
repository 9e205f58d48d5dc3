//! Labelled face datasets: ingestion of the three public formats, a
//! synthetic generator, and an on-disk prepared store.

mod expw;
mod ferplus;
mod rafdb;
mod store;
mod synthetic;

pub use expw::{ingest_expw, stratified_split, ExpwOptions};
pub use ferplus::{ingest_ferplus, majority_label, FerplusOptions, FERPLUS_CLASSES};
pub use rafdb::ingest_rafdb;
pub use store::read_manifest;
pub use synthetic::{generate_synthetic, generate_wide_crops, schematic_template, SyntheticOptions};

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::regions::LandmarkSet68;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidConfig(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledFace {
    pub image: GrayImage,
    pub label: usize,
    pub landmarks: Option<LandmarkSet68>,
    pub split: Split,
    pub source_id: String,
}

/// Published per-class split sizes a dataset is expected to reproduce.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedCounts {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl ExpectedCounts {
    pub fn train_total(&self) -> usize {
        self.train.iter().sum()
    }

    pub fn test_total(&self) -> usize {
        self.test.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub class_names: Vec<String>,
    pub train_counts: Vec<usize>,
    pub test_counts: Vec<usize>,
    /// Filter parameters as `name → value` text.
    pub filters: BTreeMap<String, String>,
    pub split_seed: Option<u64>,
    pub expected: Option<ExpectedCounts>,
    /// Differences from `expected`; informational only.
    pub discrepancies: Vec<String>,
}

impl DatasetManifest {
    pub fn train_total(&self) -> usize {
        self.train_counts.iter().sum()
    }

    pub fn test_total(&self) -> usize {
        self.test_counts.iter().sum()
    }

    fn check_expected(&mut self) {
        self.discrepancies.clear();
        let Some(exp) = &self.expected else { return };
        for (split, got, want) in [
            ("train", &self.train_counts, &exp.train),
            ("test", &self.test_counts, &exp.test),
        ] {
            let (g, w): (usize, usize) = (got.iter().sum(), want.iter().sum());
            if g != w {
                self.discrepancies
                    .push(format!("{split} total {g} differs from published {w}"));
            }
            for (c, (a, b)) in got.iter().zip(want).enumerate() {
                if a != b {
                    self.discrepancies.push(format!(
                        "{split} count for {} is {a}, published {b}",
                        self.class_names[c]
                    ));
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub class_names: Vec<String>,
    pub samples: Vec<LabeledFace>,
    pub filters: BTreeMap<String, String>,
    pub split_seed: Option<u64>,
    pub expected: Option<ExpectedCounts>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, class_names: Vec<String>) -> Self {
        Dataset {
            name: name.into(),
            class_names,
            samples: Vec::new(),
            filters: BTreeMap::new(),
            split_seed: None,
            expected: None,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn push(&mut self, face: LabeledFace) -> Result<()> {
        if face.label >= self.num_classes() {
            return Err(Error::LabelOutOfRange {
                label: face.label,
                classes: self.num_classes(),
            });
        }
        self.samples.push(face);
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &LabeledFace> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn counts(&self, split: Split) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for s in self.split(split) {
            counts[s.label] += 1;
        }
        counts
    }

    pub fn manifest(&self) -> DatasetManifest {
        let mut m = DatasetManifest {
            name: self.name.clone(),
            class_names: self.class_names.clone(),
            train_counts: self.counts(Split::Train),
            test_counts: self.counts(Split::Test),
            filters: self.filters.clone(),
            split_seed: self.split_seed,
            expected: self.expected.clone(),
            discrepancies: Vec::new(),
        };
        m.check_expected();
        m
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        store::save(self, dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        store::load(dir)
    }
}

/// The seven basic emotions, in the order used for every 7-class dataset.
pub const BASIC_CLASSES: [&str; 7] = [
    "neutral",
    "happiness",
    "surprise",
    "sadness",
    "anger",
    "disgust",
    "fear",
];

pub fn class_names(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Landmark sidecar stored next to an image (`<stem>.lmk`), if any.
pub fn sidecar_for(image_path: &Path) -> Result<Option<LandmarkSet68>> {
    let p = image_path.with_extension(crate::regions::SIDECAR_EXTENSION);
    if p.is_file() {
        LandmarkSet68::read(&p).map(Some)
    } else {
        Ok(None)
    }
}

/// Reads an image by listed name, falling back to `.pgm`/`.png` variants of
/// the same stem. Returns `None` when no candidate exists.
pub(crate) fn find_image(dir: &Path, listed: &str) -> Option<PathBuf> {
    let exact = dir.join(listed);
    if exact.is_file() {
        return Some(exact);
    }
    let stem = Path::new(listed).file_stem()?.to_string_lossy().into_owned();
    let parent = Path::new(listed)
        .parent()
        .map(|p| dir.join(p))
        .unwrap_or_else(|| dir.to_path_buf());
    for name in [&stem, &format!("{stem}_aligned")] {
        for ext in ["pgm", "png"] {
            let p = parent.join(format!("{name}.{ext}"));
            if p.is_file() {
                return Some(p);
            }
        }
    }
    None
}
