use serde::{Deserialize, Serialize};

use crate::data::SamplingMode;
use crate::error::{Error, Result};
use crate::nn::NetworkConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Everything a training run depends on besides the data.
///
/// Epochs are counted from 0; an epoch is `steps_per_epoch` optimizer steps
/// of `batch_size` sampled patches each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub network: NetworkConfig,
    /// First epoch whose loss includes the fused head.
    pub stage_switch_epoch: usize,
    pub total_epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub sampling: SamplingMode,
    /// `[z, y, x]`
    pub patch_size: [usize; 3],
    pub stride: [usize; 3],
    /// Validate after every `validate_every` epochs and after the last one.
    pub validate_every: usize,
    /// Z-score each modality over its nonzero voxels before use.
    pub normalize: bool,
    /// Case directory names used for training; all cases when absent.
    pub train_cases: Option<Vec<String>>,
    /// Case names used for validation; the training cases when absent.
    pub val_cases: Option<Vec<String>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            network: NetworkConfig::default(),
            stage_switch_epoch: 30,
            total_epochs: 60,
            steps_per_epoch: 10,
            batch_size: 1,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            sampling: SamplingMode::ClassBalanced,
            patch_size: [32; 3],
            stride: [14; 3],
            validate_every: 10,
            normalize: true,
            train_cases: None,
            val_cases: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        let fail = |m: String| Err(Error::Config(m));
        if self.stage_switch_epoch == 0 || self.stage_switch_epoch > self.total_epochs {
            return fail(format!(
                "stage_switch_epoch {} must lie in (0, total_epochs = {}]",
                self.stage_switch_epoch, self.total_epochs
            ));
        }
        if self.steps_per_epoch == 0 || self.batch_size == 0 || self.validate_every == 0 {
            return fail("steps_per_epoch, batch_size and validate_every must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.patch_size.iter().any(|&p| p < self.network.min_spatial) {
            return fail(format!("patch {:?} is below the network minimum {}", self.patch_size, self.network.min_spatial));
        }
        if self.stride.contains(&0) {
            return fail("stride must be positive".into());
        }
        Ok(())
    }
}

/// Per-output loss weights for one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub streams: Vec<f64>,
    pub fused: f64,
}

/// Each stream weighs `1 / num_streams`; the fused head joins with weight 1
/// from `stage_switch_epoch` on, as a step with no blending.
pub fn loss_weights(epoch: usize, stage_switch_epoch: usize, num_streams: usize) -> LossWeights {
    let w = 1.0 / num_streams as f64;
    LossWeights { streams: vec![w; num_streams], fused: if epoch < stage_switch_epoch { 0.0 } else { 1.0 } }
}

/// 1 before the switch, 2 from it on.
pub fn stage(epoch: usize, stage_switch_epoch: usize) -> u8 {
    if epoch < stage_switch_epoch { 1 } else { 2 }
}
