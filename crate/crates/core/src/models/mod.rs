//! The classification model and the visualization model.

mod classifier;
mod visualizer;

pub use classifier::ClassifierConfig;
pub use visualizer::{VisualizerConfig, VisualizerOutput};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::layers::{softmax, Mode};
use crate::params::ParamStore;
use crate::tensor::{Element, Shape, Tensor};
use classifier::Classifier;
use visualizer::Visualizer;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Classifier(ClassifierConfig),
    Visualizer(VisualizerConfig),
}

impl Architecture {
    pub fn kind(&self) -> &'static str {
        match self {
            Architecture::Classifier(_) => "classifier",
            Architecture::Visualizer(_) => "visualizer",
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Architecture::Classifier(c) => c.num_classes,
            Architecture::Visualizer(c) => c.num_classes,
        }
    }

    pub fn input_size(&self) -> usize {
        match self {
            Architecture::Classifier(c) => c.input_size,
            Architecture::Visualizer(c) => c.input_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Architecture::Classifier(c) => c.validate(),
            Architecture::Visualizer(c) => c.validate(),
        }
    }
}

#[derive(Clone, Debug)]
enum Body {
    Classifier(Classifier),
    Visualizer(Visualizer),
}

/// A built network together with its parameters.
#[derive(Clone, Debug)]
pub struct Model<T: Element = f32> {
    arch: Architecture,
    pub params: ParamStore<T>,
    body: Body,
}

/// Maps `N×1×64×64` inputs to class probabilities through a VGG-style stack.
pub fn build_classifier<T: Element>(config: ClassifierConfig, seed: u64) -> Result<Model<T>> {
    Model::build(Architecture::Classifier(config), seed)
}

/// DenseNet-BC network used for class activation maps and bottleneck features.
pub fn build_visualizer<T: Element>(config: VisualizerConfig, seed: u64) -> Result<Model<T>> {
    Model::build(Architecture::Visualizer(config), seed)
}

impl<T: Element> Model<T> {
    pub fn build(arch: Architecture, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let body = match &arch {
            Architecture::Classifier(c) => Body::Classifier(Classifier::build(c, &mut params, &mut rng)?),
            Architecture::Visualizer(c) => Body::Visualizer(Visualizer::build(c, &mut params, &mut rng)?),
        };
        Ok(Model { arch, params, body })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes()
    }

    fn check_input(&self, shape: Shape) -> Result<()> {
        let size = self.arch.input_size();
        let want = Shape::new(shape.n, 1, size, size);
        if shape != want || shape.n == 0 {
            return Err(Error::ShapeMismatch {
                op: "model input",
                left: shape,
                right: want,
            });
        }
        Ok(())
    }

    /// Pre-softmax class scores. In training mode batch-norm running
    /// statistics are updated as a side effect.
    pub fn forward(&mut self, g: &mut Graph<T>, x: Var, mode: Mode) -> Result<Var> {
        self.check_input(g.shape(x))?;
        match &self.body {
            Body::Classifier(c) => c.forward(g, &mut self.params, x, mode),
            Body::Visualizer(v) => Ok(v.forward(g, &mut self.params, x, mode)?.logits),
        }
    }

    pub fn visualizer_forward(&mut self, g: &mut Graph<T>, x: Var, mode: Mode) -> Result<VisualizerOutput> {
        self.check_input(g.shape(x))?;
        match &self.body {
            Body::Visualizer(v) => v.forward(g, &mut self.params, x, mode),
            Body::Classifier(_) => Err(self.not_visualizer()),
        }
    }

    fn not_visualizer(&self) -> Error {
        Error::WrongModelKind {
            expected: "visualizer",
            found: self.arch.kind(),
        }
    }

    /// Inference-mode pre-softmax scores for a batch.
    pub fn logits(&mut self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.input(batch.clone());
        let out = self.forward(&mut g, x, Mode::Infer)?;
        Ok(g.value(out).clone())
    }

    /// Inference-mode class probabilities, rows summing to one.
    pub fn predict_proba(&mut self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(softmax(&self.logits(batch)?))
    }

    /// Global-average-pooled features of the visualizer, one row per input.
    pub fn bottleneck_features(&mut self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.input(batch.clone());
        let out = self.visualizer_forward(&mut g, x, Mode::Infer)?;
        Ok(g.value(out.features).clone())
    }

    /// Visualizer head weights, `K×C` (feature index by class).
    pub fn fc_weights(&self) -> Result<&Tensor<T>> {
        match &self.body {
            Body::Visualizer(v) => Ok(&self.params.get(v.head().weight).value),
            Body::Classifier(_) => Err(self.not_visualizer()),
        }
    }
}
