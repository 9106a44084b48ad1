use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::TrainConfig;
use super::optim::Optimizer;
use crate::error::{Error, Result};
use crate::fusion::FusionNet;
use crate::nn::Checkpoint;

/// How a checkpoint expects its inputs to be prepared and tiled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceSettings {
    pub patch_size: [usize; 3],
    pub stride: [usize; 3],
    pub normalize: bool,
}

impl From<&TrainConfig> for InferenceSettings {
    fn from(c: &TrainConfig) -> Self {
        Self { patch_size: c.patch_size, stride: c.stride, normalize: c.normalize }
    }
}

pub struct LoadedModel {
    pub net: FusionNet<f32>,
    pub inference: InferenceSettings,
    pub meta: serde_json::Value,
}

/// Network, optional optimizer appendix, training config and inference
/// settings in one `UAF1` file. `extra` keys are merged into the metadata.
pub fn build_checkpoint(
    net: &FusionNet<f32>,
    optimizer: Option<&Optimizer<f32>>,
    cfg: &TrainConfig,
    extra: serde_json::Value,
) -> Checkpoint {
    let mut meta = json!({
        "train_config": cfg,
        "inference": InferenceSettings::from(cfg),
    });
    if let (Some(m), Some(e)) = (meta.as_object_mut(), extra.as_object()) {
        m.extend(e.clone());
    }
    let mut ck = net.to_checkpoint(meta);
    if let Some(opt) = optimizer {
        let names: Vec<String> = net.params.named().into_iter().map(|(n, _)| n).collect();
        opt.write_to(&mut ck, &names);
    }
    ck
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    net: &FusionNet<f32>,
    optimizer: Option<&Optimizer<f32>>,
    cfg: &TrainConfig,
    extra: serde_json::Value,
) -> Result<()> {
    build_checkpoint(net, optimizer, cfg, extra).save(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LoadedModel> {
    let ck = Checkpoint::load(path)?;
    let net = FusionNet::from_checkpoint(&ck)?;
    let inference = ck
        .meta
        .get("inference")
        .map(|v| serde_json::from_value(v.clone()))
        .transpose()?
        .ok_or_else(|| Error::Checkpoint("meta.inference is missing".into()))?;
    Ok(LoadedModel { net, inference, meta: ck.meta })
}
