//! Accuracy, confusion matrices, region comparison reports and bottleneck
//! feature export.

use std::fmt::Write as _;

use crate::data::{Dataset, LabeledFace, Split};
use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::models::Architecture;
use crate::regions::Region;
use crate::tensor::{Shape, Tensor};
use crate::training::{argmax, eval_inputs, predict_logits, Checkpoint, INPUT_SIZE};

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub class_names: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(class_names: Vec<String>) -> Self {
        let n = class_names.len();
        ConfusionMatrix {
            class_names,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn from_pairs(class_names: Vec<String>, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut m = Self::new(class_names);
        for (truth, pred) in pairs {
            m.record(truth, pred)?;
        }
        Ok(m)
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let classes = self.classes();
        for c in [truth, predicted] {
            if c >= classes {
                return Err(Error::ClassOutOfRange { class: c, classes });
            }
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    /// `trace / total`, or 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.trace() as f64 / t as f64,
        }
    }

    /// Each row divided by its support; rows of absent classes are zero.
    pub fn normalized_rows(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let s: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| if s == 0 { 0.0 } else { c as f64 / s as f64 })
                    .collect()
            })
            .collect()
    }

    /// Drops one class's row and column.
    pub fn without_class(&self, class: usize) -> ConfusionMatrix {
        let keep: Vec<usize> = (0..self.classes()).filter(|&c| c != class).collect();
        ConfusionMatrix {
            class_names: keep.iter().map(|&c| self.class_names[c].clone()).collect(),
            counts: keep
                .iter()
                .map(|&r| keep.iter().map(|&c| self.counts[r][c]).collect())
                .collect(),
        }
    }

    /// Tab-separated counts with class-name headers.
    pub fn to_text(&self) -> String {
        let mut out = String::from("true\\predicted");
        for name in &self.class_names {
            let _ = write!(out, "\t{name}");
        }
        out.push('\n');
        for (name, row) in self.class_names.iter().zip(&self.counts) {
            out.push_str(name);
            for c in row {
                let _ = write!(out, "\t{c}");
            }
            out.push('\n');
        }
        out
    }

    /// Grayscale grid, one `cell×cell` square per entry with brightness
    /// proportional to the row-normalized value.
    pub fn render_grid(&self, cell: usize) -> GrayImage {
        let n = self.classes();
        let mut img = GrayImage::new(n * cell, n * cell, 0);
        for (r, row) in self.normalized_rows().iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                let value = (255.0 * v).round() as u8;
                for y in r * cell..(r + 1) * cell {
                    for x in c * cell..(c + 1) * cell {
                        img.put(x, y, value);
                    }
                }
            }
        }
        img
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub matrix: ConfusionMatrix,
}

impl Evaluation {
    fn from_matrix(matrix: ConfusionMatrix) -> Self {
        Evaluation {
            accuracy: matrix.accuracy(),
            matrix,
        }
    }
}

fn check_classes(checkpoint: &Checkpoint, dataset: &Dataset) -> Result<()> {
    if checkpoint.class_names != dataset.class_names {
        return Err(Error::ClassMismatch {
            expected: checkpoint.class_names.clone(),
            found: dataset.class_names.clone(),
        });
    }
    Ok(())
}

/// Predicted class per sample of `split`, in dataset order.
pub fn predict(checkpoint: &Checkpoint, faces: &[&LabeledFace]) -> Result<Vec<usize>> {
    let mut model = checkpoint.model()?;
    let inputs = eval_inputs(faces.iter().copied(), &checkpoint.input, checkpoint.normalization)?;
    Ok(predict_logits(&mut model, &inputs, 64)?
        .iter()
        .map(|l| argmax(l))
        .collect())
}

/// Centred-window predictions on `split`, scored against the labels.
pub fn evaluate(checkpoint: &Checkpoint, dataset: &Dataset, split: Split) -> Result<Evaluation> {
    check_classes(checkpoint, dataset)?;
    let faces: Vec<&LabeledFace> = dataset.split(split).collect();
    let preds = predict(checkpoint, &faces)?;
    let matrix = ConfusionMatrix::from_pairs(dataset.class_names.clone(), faces.iter().map(|f| f.label).zip(preds))?;
    Ok(Evaluation::from_matrix(matrix))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionRow {
    pub region: Region,
    /// `None` when no checkpoint was supplied for the region.
    pub result: Option<Evaluation>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionReport {
    pub dataset: String,
    pub split: Split,
    pub class_names: Vec<String>,
    pub masked_class: Option<String>,
    pub rows: Vec<RegionRow>,
}

impl RegionReport {
    pub fn row(&self, region: Region) -> Option<&Evaluation> {
        self.rows.iter().find(|r| r.region == region)?.result.as_ref()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# region report\tdataset={}\tsplit={}\tclasses={}",
            self.dataset,
            self.split,
            self.class_names.join(",")
        );
        if let Some(m) = &self.masked_class {
            let _ = write!(out, "\tmasked={m}");
        }
        out.push_str("\nregion\taccuracy\tsamples\n");
        for row in &self.rows {
            match &row.result {
                Some(e) => {
                    let _ = writeln!(out, "{}\t{:.6}\t{}", row.region, e.accuracy, e.matrix.total());
                }
                None => {
                    let _ = writeln!(out, "{}\tabsent\t-", row.region);
                }
            }
        }
        for row in &self.rows {
            if let Some(e) = &row.result {
                let _ = write!(out, "\n## {} confusion\n{}", row.region, e.matrix.to_text());
            }
        }
        out
    }
}

/// Evaluates one checkpoint per face area and lays the results out in the
/// standard region order. Areas without a checkpoint are reported absent.
/// With `mask_contempt`, a class named `contempt` is removed from every
/// matrix and accuracy before reporting.
pub fn compare_regions(
    checkpoints: &[Checkpoint],
    dataset: &Dataset,
    split: Split,
    mask_contempt: bool,
) -> Result<RegionReport> {
    let mut by_region: Vec<(Region, &Checkpoint)> = Vec::new();
    for ckpt in checkpoints {
        check_classes(ckpt, dataset)?;
        let region = ckpt.input.region;
        if !Region::STANDARD.contains(&region) {
            return Err(Error::InvalidConfig(format!(
                "region {region} is not one of the seven compared areas"
            )));
        }
        if by_region.iter().any(|(r, _)| *r == region) {
            return Err(Error::InvalidConfig(format!("two checkpoints for region {region}")));
        }
        by_region.push((region, ckpt));
    }
    let mask = if mask_contempt {
        dataset.class_names.iter().position(|c| c == "contempt")
    } else {
        None
    };
    let mut rows = Vec::with_capacity(Region::STANDARD.len());
    for region in Region::STANDARD {
        let result = match by_region.iter().find(|(r, _)| *r == region) {
            Some((_, ckpt)) => {
                let e = evaluate(ckpt, dataset, split)?;
                Some(match mask {
                    Some(c) => Evaluation::from_matrix(e.matrix.without_class(c)),
                    None => e,
                })
            }
            None => None,
        };
        rows.push(RegionRow { region, result });
    }
    let class_names = match mask {
        Some(c) => dataset
            .class_names
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != c)
            .map(|(_, n)| n.clone())
            .collect(),
        None => dataset.class_names.clone(),
    };
    Ok(RegionReport {
        dataset: dataset.name.clone(),
        split,
        class_names,
        masked_class: mask.map(|c| dataset.class_names[c].clone()),
        rows,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub source_id: String,
    pub label: usize,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub class_names: Vec<String>,
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    pub fn width(&self) -> usize {
        self.rows.first().map_or(0, |r| r.values.len())
    }

    /// A `# classes` comment line, then a header row and one row per
    /// sample: `source_id`, true class name, then the feature values.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# classes\t{}\nsource_id\tlabel", self.class_names.join("\t"));
        for k in 0..self.width() {
            let _ = write!(out, "\tf{k}");
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.source_id);
            out.push('\t');
            out.push_str(&self.class_names[row.label]);
            for v in &row.values {
                let _ = write!(out, "\t{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Global-average-pooled visualizer features for every sample of `split`.
pub fn export_features(checkpoint: &Checkpoint, dataset: &Dataset, split: Split) -> Result<FeatureTable> {
    if !matches!(checkpoint.architecture, Architecture::Visualizer(_)) {
        return Err(Error::WrongModelKind {
            expected: "visualizer",
            found: checkpoint.architecture.kind(),
        });
    }
    check_classes(checkpoint, dataset)?;
    let mut model = checkpoint.model()?;
    let faces: Vec<&LabeledFace> = dataset.split(split).collect();
    let inputs = eval_inputs(faces.iter().copied(), &checkpoint.input, checkpoint.normalization)?;
    let mut rows = Vec::with_capacity(faces.len());
    for (chunk_faces, chunk) in faces.chunks(16).zip(inputs.chunks(16)) {
        let data: Vec<f32> = chunk.iter().flatten().copied().collect();
        let batch = Tensor::from_vec(Shape::new(chunk.len(), 1, INPUT_SIZE, INPUT_SIZE), data)?;
        let features = model.bottleneck_features(&batch)?;
        let width = features.shape().item_len();
        for (face, values) in chunk_faces.iter().zip(features.data().chunks(width)) {
            rows.push(FeatureRow {
                source_id: face.source_id.clone(),
                label: face.label,
                values: values.to_vec(),
            });
        }
    }
    Ok(FeatureTable {
        class_names: dataset.class_names.clone(),
        rows,
    })
}
