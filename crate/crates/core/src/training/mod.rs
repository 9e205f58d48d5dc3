//! Optimization protocol: augmentation, Adam with accuracy-driven
//! learning-rate decay, early stopping, best-of-runs selection and
//! checkpoints.
//!
//! Model selection uses the test split. That mirrors the published
//! protocol being reproduced; it is not a held-out estimate.

mod adam;
mod augment;
mod checkpoint;

pub use adam::AdamState;
pub use augment::{
    augment_eval, augment_train, augment_with, eval_view, InputSpec, Jitter, Normalization, INPUT_SIZE, RESIZE,
};
pub use checkpoint::{Checkpoint, RunSummary, TrainSummary, FORMAT_VERSION, MAGIC};

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::{Dataset, LabeledFace, Split};
use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::layers::Mode;
use crate::models::{Architecture, Model};
use crate::regions::{Region, DEFAULT_MARGIN};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr0: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub runs: usize,
    pub lr_decay_factor: f64,
    /// Epochs without a test-accuracy improvement before the rate decays.
    pub lr_patience: usize,
    /// Epochs without a test-accuracy improvement before a run stops.
    pub stop_patience: usize,
    pub min_lr: f64,
    pub seed: u64,
    pub augmentation: bool,
    pub padding: bool,
    pub margin: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.05,
            max_epochs: 100,
            batch_size: 32,
            runs: 5,
            lr_decay_factor: 0.5,
            lr_patience: 3,
            stop_patience: 10,
            min_lr: 1e-5,
            seed: 0,
            augmentation: true,
            padding: true,
            margin: DEFAULT_MARGIN,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return fail(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return fail(format!(
                "lr_decay_factor must lie in (0, 1), got {}",
                self.lr_decay_factor
            ));
        }
        if !(self.min_lr > 0.0) || self.min_lr > self.lr0 {
            return fail(format!("min_lr must lie in (0, lr0], got {}", self.min_lr));
        }
        if self.lr_patience == 0 || self.stop_patience == 0 {
            return fail("patience values must be at least 1".into());
        }
        if self.max_epochs == 0 || self.batch_size == 0 || self.runs == 0 {
            return fail("max_epochs, batch_size and runs must be positive".into());
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return fail(format!("margin must be non-negative, got {}", self.margin));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub run: usize,
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Accuracy on the augmented training batches, in training mode.
    pub train_acc: f64,
    pub test_acc: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "run={} epoch={} lr={:e} train_loss={:.6} train_acc={:.4} test_acc={:.4}",
            self.run, self.epoch, self.lr, self.train_loss, self.train_acc, self.test_acc
        )
    }
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f32]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

fn batch_tensor(inputs: &[&[f32]]) -> Tensor<f32> {
    let mut data = Vec::with_capacity(inputs.len() * INPUT_SIZE * INPUT_SIZE);
    for x in inputs {
        data.extend_from_slice(x);
    }
    Tensor::from_vec(Shape::new(inputs.len(), 1, INPUT_SIZE, INPUT_SIZE), data).expect("input windows are 64×64")
}

/// Inference-mode logits, one row per input window.
pub fn predict_logits(model: &mut Model<f32>, inputs: &[Vec<f32>], batch_size: usize) -> Result<Vec<Vec<f32>>> {
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(batch_size.max(1)) {
        let refs: Vec<&[f32]> = chunk.iter().map(Vec::as_slice).collect();
        let logits = model.logits(&batch_tensor(&refs))?;
        out.extend(logits.data().chunks(model.num_classes()).map(<[f32]>::to_vec));
    }
    Ok(out)
}

/// Centred, normalized input windows for `faces` under `spec`.
pub fn eval_inputs<'a>(
    faces: impl IntoIterator<Item = &'a LabeledFace>,
    spec: &InputSpec,
    norm: Normalization,
) -> Result<Vec<Vec<f32>>> {
    faces
        .into_iter()
        .map(|f| {
            let sq = spec.square::<ChaCha8Rng>(&spec.crop(f)?, None);
            Ok(augment_eval(&sq, norm))
        })
        .collect()
}

fn accuracy(model: &mut Model<f32>, inputs: &[Vec<f32>], labels: &[usize]) -> Result<f64> {
    let logits = predict_logits(model, inputs, 64)?;
    let correct = logits.iter().zip(labels).filter(|(l, &y)| argmax(l) == y).count();
    Ok(correct as f64 / labels.len() as f64)
}

struct Prepared {
    spec: InputSpec,
    norm: Normalization,
    train_crops: Vec<GrayImage>,
    train_squares: Option<Vec<GrayImage>>,
    train_labels: Vec<usize>,
    test_inputs: Vec<Vec<f32>>,
    test_labels: Vec<usize>,
}

fn prepare(dataset: &Dataset, spec: InputSpec) -> Result<Prepared> {
    let train: Vec<&LabeledFace> = dataset.split(Split::Train).collect();
    let test: Vec<&LabeledFace> = dataset.split(Split::Test).collect();
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if test.is_empty() {
        return Err(Error::InvalidConfig(
            "test split is empty; model selection needs it".into(),
        ));
    }
    let train_crops = train.iter().map(|f| spec.crop(f)).collect::<Result<Vec<_>>>()?;
    let centred: Vec<GrayImage> = train_crops.iter().map(|c| spec.square::<ChaCha8Rng>(c, None)).collect();
    let norm = Normalization::fit(&centred);
    Ok(Prepared {
        spec,
        norm,
        train_squares: spec.padding.then_some(centred),
        train_crops,
        train_labels: train.iter().map(|f| f.label).collect(),
        test_inputs: eval_inputs(test.iter().copied(), &spec, norm)?,
        test_labels: test.iter().map(|f| f.label).collect(),
    })
}

struct RunResult {
    summary: RunSummary,
    best: Model<f32>,
}

fn train_run(
    arch: &Architecture,
    data: &Prepared,
    config: &TrainConfig,
    run: usize,
    on_epoch: &mut dyn FnMut(&EpochLog),
    log: &mut Vec<EpochLog>,
) -> Result<RunResult> {
    let seed = config.seed.wrapping_add(run as u64);
    let mut model = Model::<f32>::build(arch.clone(), seed)?;
    let mut adam = AdamState::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);

    let static_inputs: Option<Vec<Vec<f32>>> = match (&data.train_squares, config.augmentation) {
        (Some(squares), false) => Some(squares.iter().map(|s| augment_eval(s, data.norm)).collect()),
        _ => None,
    };

    let n = data.train_labels.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut lr = config.lr0;
    let (mut best_acc, mut best_epoch, mut best) = (-1.0, 0, model.clone());
    let (mut stale, mut lr_stale, mut epochs_run) = (0, 0, 0);

    for epoch in 1..=config.max_epochs {
        epochs_run = epoch;
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let inputs: Vec<Vec<f32>> = chunk
                .iter()
                .map(|&i| {
                    if let Some(s) = &static_inputs {
                        return s[i].clone();
                    }
                    let square = match &data.train_squares {
                        Some(sq) => sq[i].clone(),
                        None => data.spec.square(&data.train_crops[i], Some(&mut rng)),
                    };
                    if config.augmentation {
                        augment_train(&square, data.norm, &mut rng)
                    } else {
                        augment_eval(&square, data.norm)
                    }
                })
                .collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| data.train_labels[i]).collect();
            let refs: Vec<&[f32]> = inputs.iter().map(Vec::as_slice).collect();

            let mut g = Graph::new();
            let x = g.input(batch_tensor(&refs));
            let logits = model.forward(&mut g, x, Mode::Train)?;
            let (loss, _) = g.softmax_cross_entropy(logits, &labels)?;
            let loss_value = g.value(loss).data()[0] as f64;
            if !loss_value.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    loss: loss_value,
                });
            }
            loss_sum += loss_value * chunk.len() as f64;
            correct += g
                .value(logits)
                .data()
                .chunks(arch.num_classes())
                .zip(&labels)
                .filter(|(row, &y)| argmax(row) == y)
                .count();
            g.backward(loss, &mut model.params)?;
            adam.step(&mut model.params, lr)?;
            model.params.zero_grad();
        }

        let test_acc = accuracy(&mut model, &data.test_inputs, &data.test_labels)?;
        let entry = EpochLog {
            run,
            epoch,
            lr,
            train_loss: loss_sum / n as f64,
            train_acc: correct as f64 / n as f64,
            test_acc,
        };
        on_epoch(&entry);
        log.push(entry);

        if test_acc > best_acc {
            best_acc = test_acc;
            best_epoch = epoch;
            best = model.clone();
            stale = 0;
            lr_stale = 0;
        } else {
            stale += 1;
            lr_stale += 1;
            if lr_stale >= config.lr_patience {
                lr = (lr * config.lr_decay_factor).max(config.min_lr);
                lr_stale = 0;
            }
            if stale >= config.stop_patience {
                break;
            }
        }
    }
    Ok(RunResult {
        summary: RunSummary {
            run,
            seed,
            epochs_run,
            best_epoch,
            best_test_accuracy: best_acc,
            final_lr: lr,
        },
        best,
    })
}

/// Trains `config.runs` independently seeded models on `region` crops and
/// keeps the one with the best test accuracy.
pub fn train(arch: &Architecture, dataset: &Dataset, region: Region, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(arch, dataset, region, config, |_| {})
}

pub fn train_with_progress(
    arch: &Architecture,
    dataset: &Dataset,
    region: Region,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    arch.validate()?;
    if arch.num_classes() != dataset.num_classes() {
        return Err(Error::InvalidConfig(format!(
            "model has {} classes, dataset has {}",
            arch.num_classes(),
            dataset.num_classes()
        )));
    }
    if arch.input_size() != INPUT_SIZE {
        return Err(Error::InvalidConfig(format!(
            "training windows are {INPUT_SIZE}×{INPUT_SIZE}, model expects {}",
            arch.input_size()
        )));
    }
    let spec = InputSpec {
        region,
        margin: config.margin,
        padding: config.padding,
    };
    let data = prepare(dataset, spec)?;
    let mut log = Vec::new();
    let mut winner: Option<RunResult> = None;
    let mut summaries = Vec::with_capacity(config.runs);
    for run in 0..config.runs {
        let result = train_run(arch, &data, config, run, &mut on_epoch, &mut log)?;
        summaries.push(result.summary.clone());
        if winner
            .as_ref()
            .is_none_or(|w| result.summary.best_test_accuracy > w.summary.best_test_accuracy)
        {
            winner = Some(result);
        }
    }
    let winner = winner.expect("at least one run");
    let summary = TrainSummary {
        selected_run: winner.summary.run,
        runs: summaries,
    };
    let checkpoint = Checkpoint::from_model(
        &winner.best,
        dataset.class_names.clone(),
        data.norm,
        spec,
        winner.summary.best_test_accuracy,
        summary,
    );
    Ok(TrainOutcome { checkpoint, log })
}
