//! DenseNet-BC visualizer: 3×3 stem, dense blocks of bottleneck layers
//! joined by compressing transitions, final BN-ReLU, global average pooling
//! and a bias-free fully-connected head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::layers::{BatchNormState, Conv, Linear, Mode};
use crate::params::ParamStore;
use crate::tensor::Element;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisualizerConfig {
    pub initial_channels: usize,
    pub blocks: usize,
    pub layers_per_block: usize,
    pub growth_rate: usize,
    pub compression: f64,
    pub num_classes: usize,
    pub input_size: usize,
}

impl VisualizerConfig {
    /// 16-channel stem, 3 blocks of 16 layers, growth 12, compression 0.5.
    pub fn with_classes(num_classes: usize) -> Self {
        VisualizerConfig {
            initial_channels: 16,
            blocks: 3,
            layers_per_block: 16,
            growth_rate: 12,
            compression: 0.5,
            num_classes,
            input_size: 64,
        }
    }

    /// Channels entering each block and the final channel count.
    pub fn channel_plan(&self) -> (Vec<usize>, usize) {
        let mut inputs = Vec::with_capacity(self.blocks);
        let mut c = self.initial_channels;
        for b in 0..self.blocks {
            inputs.push(c);
            c += self.layers_per_block * self.growth_rate;
            if b + 1 < self.blocks {
                c = self.compressed(c);
            }
        }
        (inputs, c)
    }

    fn compressed(&self, channels: usize) -> usize {
        (self.compression * channels as f64).floor() as usize
    }

    /// Length of the bottleneck feature vector.
    pub fn feature_len(&self) -> usize {
        self.channel_plan().1
    }

    pub fn final_spatial(&self) -> usize {
        self.input_size >> self.blocks.saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.blocks == 0 || self.layers_per_block == 0 {
            return bad("need at least one block with one layer".into());
        }
        if self.initial_channels == 0 || self.growth_rate == 0 {
            return bad("initial channels and growth rate must be positive".into());
        }
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return bad(format!("compression {} outside (0, 1]", self.compression));
        }
        let halvings = self.blocks - 1;
        if halvings >= usize::BITS as usize
            || !self.input_size.is_multiple_of(1 << halvings)
            || self.final_spatial() == 0
        {
            return bad(format!(
                "input size {} cannot be halved {halvings} times",
                self.input_size
            ));
        }
        let mut c = self.initial_channels;
        for _ in 0..halvings {
            c = self.compressed(c + self.layers_per_block * self.growth_rate);
            if c == 0 {
                return bad("compression leaves a transition with zero channels".into());
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Bottleneck {
    bn1: BatchNormState,
    conv1: Conv,
    bn2: BatchNormState,
    conv2: Conv,
}

#[derive(Clone, Debug)]
struct Transition {
    bn: BatchNormState,
    conv: Conv,
}

#[derive(Clone, Debug)]
pub(crate) struct Visualizer {
    stem: Conv,
    blocks: Vec<Vec<Bottleneck>>,
    transitions: Vec<Transition>,
    final_bn: BatchNormState,
    head: Linear,
}

/// Intermediate results of a visualizer forward pass.
#[derive(Clone, Copy, Debug)]
pub struct VisualizerOutput {
    /// Last-block maps after the final BN-ReLU, `N×K×H'×W'`.
    pub feature_maps: Var,
    /// Global average pooled features, `N×K`.
    pub features: Var,
    /// Pre-softmax class scores, `N×C`.
    pub logits: Var,
}

impl Visualizer {
    pub(crate) fn build<T: Element, R: Rng + ?Sized>(
        config: &VisualizerConfig,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let k = config.growth_rate;
        let stem = Conv::new(store, "stem", 1, config.initial_channels, 3, 1, 1, rng)?;
        let mut c = config.initial_channels;
        let mut blocks = Vec::with_capacity(config.blocks);
        let mut transitions = Vec::new();
        for b in 0..config.blocks {
            let mut layers = Vec::with_capacity(config.layers_per_block);
            for t in 0..config.layers_per_block {
                let p = format!("block{b}.layer{t}");
                layers.push(Bottleneck {
                    bn1: BatchNormState::new(store, &format!("{p}.bn1"), c)?,
                    conv1: Conv::new(store, &format!("{p}.conv1"), c, 4 * k, 1, 1, 0, rng)?,
                    bn2: BatchNormState::new(store, &format!("{p}.bn2"), 4 * k)?,
                    conv2: Conv::new(store, &format!("{p}.conv2"), 4 * k, k, 3, 1, 1, rng)?,
                });
                c += k;
            }
            blocks.push(layers);
            if b + 1 < config.blocks {
                let out = config.compressed(c);
                let p = format!("transition{b}");
                transitions.push(Transition {
                    bn: BatchNormState::new(store, &format!("{p}.bn"), c)?,
                    conv: Conv::new(store, &format!("{p}.conv"), c, out, 1, 1, 0, rng)?,
                });
                c = out;
            }
        }
        let final_bn = BatchNormState::new(store, "final.bn", c)?;
        let head = Linear::new(store, "fc", c, config.num_classes, false, rng)?;
        Ok(Visualizer {
            stem,
            blocks,
            transitions,
            final_bn,
            head,
        })
    }

    pub(crate) fn forward<T: Element>(
        &self,
        g: &mut Graph<T>,
        store: &mut ParamStore<T>,
        x: Var,
        mode: Mode,
    ) -> Result<VisualizerOutput> {
        let mut h = self.stem.forward(g, store, x)?;
        for (b, layers) in self.blocks.iter().enumerate() {
            for layer in layers {
                let mut y = layer.bn1.forward(g, store, h, mode)?;
                y = g.relu(y);
                y = layer.conv1.forward(g, store, y)?;
                y = layer.bn2.forward(g, store, y, mode)?;
                y = g.relu(y);
                y = layer.conv2.forward(g, store, y)?;
                h = g.concat_channels(&[h, y])?;
            }
            if let Some(tr) = self.transitions.get(b) {
                h = tr.bn.forward(g, store, h, mode)?;
                h = g.relu(h);
                h = tr.conv.forward(g, store, h)?;
                h = g.avg_pool2(h)?;
            }
        }
        h = self.final_bn.forward(g, store, h, mode)?;
        let feature_maps = g.relu(h);
        let pooled = g.global_avg_pool(feature_maps);
        let logits = self.head.forward(g, store, pooled)?;
        Ok(VisualizerOutput {
            feature_maps,
            features: pooled,
            logits,
        })
    }

    pub(crate) fn head(&self) -> &Linear {
        &self.head
    }
}
