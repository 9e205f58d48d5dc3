//! VGG-style classifier: stages of 3×3 conv → BN → ReLU, each closed by a
//! 2×2 max-pool, then one fully-connected head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::layers::{BatchNormState, Conv, Linear, Mode};
use crate::params::ParamStore;
use crate::tensor::Element;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    /// Conv widths per stage; every stage ends with a max-pool.
    pub conv_plan: Vec<Vec<usize>>,
    pub num_classes: usize,
    pub input_size: usize,
}

impl ClassifierConfig {
    pub fn new(conv_plan: Vec<Vec<usize>>, num_classes: usize) -> Self {
        ClassifierConfig {
            conv_plan,
            num_classes,
            input_size: 64,
        }
    }

    /// `[64,64]-P-[128,128]-P-[256,256,256]-P-[256,256,256]-P`.
    pub fn default_plan() -> Vec<Vec<usize>> {
        vec![vec![64, 64], vec![128, 128], vec![256, 256, 256], vec![256, 256, 256]]
    }

    pub fn with_classes(num_classes: usize) -> Self {
        Self::new(Self::default_plan(), num_classes)
    }

    pub fn final_spatial(&self) -> usize {
        self.input_size >> self.conv_plan.len()
    }

    pub fn final_channels(&self) -> usize {
        self.conv_plan.last().and_then(|s| s.last()).copied().unwrap_or(1)
    }

    /// Width of the fully-connected input.
    pub fn fc_inputs(&self) -> usize {
        self.final_channels() * self.final_spatial() * self.final_spatial()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.conv_plan.is_empty() {
            return bad("conv plan has no stages".into());
        }
        if let Some(i) = self.conv_plan.iter().position(|s| s.is_empty()) {
            return bad(format!("stage {i} has no convolutions"));
        }
        if self.conv_plan.iter().flatten().any(|&w| w == 0) {
            return bad("convolution widths must be positive".into());
        }
        let pools = self.conv_plan.len();
        if pools >= usize::BITS as usize || !self.input_size.is_multiple_of(1 << pools) || self.final_spatial() == 0 {
            return bad(format!(
                "input size {} cannot be halved {pools} times to a whole spatial size >= 1",
                self.input_size
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Classifier {
    stages: Vec<Vec<(Conv, BatchNormState)>>,
    head: Linear,
}

impl Classifier {
    pub(crate) fn build<T: Element, R: Rng + ?Sized>(
        config: &ClassifierConfig,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let mut in_ch = 1;
        let mut stages = Vec::with_capacity(config.conv_plan.len());
        for (s, widths) in config.conv_plan.iter().enumerate() {
            let mut stage = Vec::with_capacity(widths.len());
            for (j, &w) in widths.iter().enumerate() {
                let prefix = format!("stage{s}.conv{j}");
                let conv = Conv::new(store, &prefix, in_ch, w, 3, 1, 1, rng)?;
                let bn = BatchNormState::new(store, &format!("{prefix}.bn"), w)?;
                stage.push((conv, bn));
                in_ch = w;
            }
            stages.push(stage);
        }
        let head = Linear::new(store, "fc", config.fc_inputs(), config.num_classes, true, rng)?;
        Ok(Classifier { stages, head })
    }

    pub(crate) fn forward<T: Element>(
        &self,
        g: &mut Graph<T>,
        store: &mut ParamStore<T>,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        let mut h = x;
        for stage in &self.stages {
            for (conv, bn) in stage {
                h = conv.forward(g, store, h)?;
                h = bn.forward(g, store, h, mode)?;
                h = g.relu(h);
            }
            h = g.max_pool2(h)?;
        }
        let flat = g.flatten(h);
        self.head.forward(g, store, flat)
    }
}
