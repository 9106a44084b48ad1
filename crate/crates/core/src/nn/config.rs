use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    SeRes,
    DenseAspp,
}

/// How the two streams' features are combined before the final head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Multi-level features are scaled by `1 - U` of their own stream first.
    Gated,
    /// Plain concatenation of adapted features (ablation baseline).
    Concat,
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Label values `0..num_classes`, background included.
    pub num_classes: usize,
    pub num_modalities: usize,
    /// Trunk channel width of every stream.
    pub width: usize,
    /// Output width of each stream's adaptation layer.
    pub adapt_width: usize,
    /// Channels produced by each Dense-ASPP branch.
    pub aspp_growth: usize,
    /// Dilation rates of the Dense-ASPP branches, strictly increasing.
    pub dilations: Vec<usize>,
    pub se_reduction: usize,
    pub kernel: usize,
    /// Block sequence after the stem; a feature level is tapped after each.
    pub blocks: Vec<BlockKind>,
    pub fusion: FusionMode,
    /// Treat the uncertainty field as a constant during backpropagation.
    pub detach_uncertainty: bool,
    /// Smallest accepted spatial extent per axis.
    pub min_spatial: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            num_classes: 5,
            num_modalities: 2,
            width: 16,
            adapt_width: 16,
            aspp_growth: 8,
            dilations: vec![1, 2, 4, 8],
            se_reduction: 4,
            kernel: 3,
            blocks: vec![BlockKind::SeRes, BlockKind::SeRes, BlockKind::DenseAspp, BlockKind::SeRes],
            fusion: FusionMode::Gated,
            detach_uncertainty: true,
            min_spatial: 32,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_classes < 2 {
            return fail(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.num_classes > 256 {
            return fail("num_classes must fit in a byte label".into());
        }
        if self.num_modalities == 0 {
            return fail("num_modalities must be positive".into());
        }
        if self.width == 0 || self.adapt_width == 0 || self.aspp_growth == 0 {
            return fail("channel widths must be positive".into());
        }
        if self.se_reduction == 0 || self.width % self.se_reduction != 0 {
            return fail(format!("se_reduction {} must divide width {}", self.se_reduction, self.width));
        }
        if self.kernel % 2 == 0 {
            return fail(format!("kernel {} must be odd", self.kernel));
        }
        if self.blocks.is_empty() {
            return fail("at least one block is required".into());
        }
        if self.blocks.contains(&BlockKind::DenseAspp) {
            if self.dilations.is_empty() {
                return fail("dilation set must be nonempty".into());
            }
            if self.dilations[0] == 0 || self.dilations.windows(2).any(|w| w[0] >= w[1]) {
                return fail(format!("dilations {:?} must be positive and strictly increasing", self.dilations));
            }
        }
        Ok(())
    }

    /// Channels of one stream's concatenated feature levels.
    pub fn level_channels(&self) -> usize {
        self.blocks.len() * self.width
    }
}
