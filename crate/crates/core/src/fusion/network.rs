use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::uncertainty::{compute_uncertainty, StreamId, UncertaintyField, PROB_EPS};
use crate::error::{Error, Result};
use crate::nn::{conv, stream_forward, Checkpoint, FusionHeadParams, FusionMode, NetworkConfig, NetworkParams, StreamOutput};
use crate::scalar::Real;
use crate::tensor::{Tape, Tensor, Var};

/// Multiplies every feature map by `1 - U` voxel-wise.
///
/// The field enters the tape as a constant, so no gradient reaches the
/// probabilities it was computed from.
pub fn gate_features<T: Real>(tape: &mut Tape<T>, levels: &[Var], u: &UncertaintyField<T>) -> Result<Vec<Var>> {
    let one_minus = Tensor::new(
        u.values.shape().to_vec(),
        u.values.data().iter().map(|&v| T::one() - v).collect(),
    )?;
    let gate = tape.constant(one_minus);
    gate_with(tape, levels, gate)
}

/// Multiplies every feature map by a `[1, Z, Y, X]` gate field already on the tape.
pub fn gate_with<T: Real>(tape: &mut Tape<T>, levels: &[Var], gate: Var) -> Result<Vec<Var>> {
    let gshape = tape.value(gate).shape().to_vec();
    levels
        .iter()
        .map(|&l| {
            let lshape = tape.value(l).shape();
            if gshape.len() != lshape.len() || gshape[0] != 1 || gshape[1..] != lshape[1..] {
                return Err(Error::dim("gate_features", format!("field {gshape:?} vs features {lshape:?}")));
            }
            tape.mul(l, gate)
        })
        .collect()
}

/// `softmax(head(concat_s(adapt_s(concat(gated_s)))))`, streams in order.
pub fn fuse_and_predict<T: Real>(tape: &mut Tape<T>, gated: &[Vec<Var>], p: &FusionHeadParams<Var>) -> Result<Var> {
    if gated.len() != p.adaptation.convs.len() {
        return Err(Error::dim(
            "fuse",
            format!("{} streams but {} adaptation layers", gated.len(), p.adaptation.convs.len()),
        ));
    }
    let mut adapted = Vec::with_capacity(gated.len());
    for (levels, a) in gated.iter().zip(&p.adaptation.convs) {
        let x = if levels.len() == 1 { levels[0] } else { tape.concat(levels)? };
        adapted.push(conv(tape, x, a)?);
    }
    let fused = tape.concat(&adapted)?;
    let logits = conv(tape, fused, &p.head)?;
    tape.softmax(logits)
}

pub struct NetworkOutput {
    pub streams: Vec<StreamOutput>,
    /// Per-stream `[1, Z, Y, X]` uncertainty, present when fusion ran in gated mode.
    pub uncertainty: Vec<Var>,
    /// Fused prediction, absent when the fusion path was skipped.
    pub y_final: Option<Var>,
}

/// Full forward pass over one patch. `modalities[i]` feeds stream `i`.
///
/// With `run_fusion == false` only the streams are evaluated.
pub fn network_forward<T: Real>(
    tape: &mut Tape<T>,
    cfg: &NetworkConfig,
    params: &NetworkParams<Var>,
    modalities: &[Var],
    run_fusion: bool,
) -> Result<NetworkOutput> {
    if modalities.len() != params.streams.len() {
        return Err(Error::dim(
            "network",
            format!("{} modalities for {} streams", modalities.len(), params.streams.len()),
        ));
    }
    let streams = modalities
        .iter()
        .zip(&params.streams)
        .map(|(&m, p)| stream_forward(tape, m, p, cfg.min_spatial))
        .collect::<Result<Vec<_>>>()?;
    if !run_fusion {
        return Ok(NetworkOutput { streams, uncertainty: Vec::new(), y_final: None });
    }
    let mut uncertainty = Vec::new();
    let mut gated = Vec::with_capacity(streams.len());
    for (i, s) in streams.iter().enumerate() {
        let feats = match cfg.fusion {
            FusionMode::Concat => s.level_concat,
            FusionMode::Gated => {
                let (u, gate) = if cfg.detach_uncertainty {
                    let field = compute_uncertainty(tape.value(s.prob), StreamId(i))?;
                    let one_minus = Tensor::new(
                        field.values.shape().to_vec(),
                        field.values.data().iter().map(|&v| T::one() - v).collect(),
                    )?;
                    let u = tape.constant(field.values);
                    (u, tape.constant(one_minus))
                } else {
                    let u = tape.uncertainty(s.prob, T::lit(PROB_EPS))?;
                    (u, tape.one_minus(u)?)
                };
                uncertainty.push(u);
                gate_with(tape, &[s.level_concat], gate)?[0]
            }
        };
        gated.push(vec![feats]);
    }
    let y_final = fuse_and_predict(tape, &gated, &params.fusion)?;
    Ok(NetworkOutput { streams, uncertainty, y_final: Some(y_final) })
}

/// Probability maps produced for one patch.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPrediction<T> {
    pub streams: Vec<Tensor<T>>,
    pub fused: Tensor<T>,
}

/// Configuration plus stored parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionNet<T> {
    pub config: NetworkConfig,
    pub params: NetworkParams<Tensor<T>>,
}

impl<T: Real> FusionNet<T> {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        let params = NetworkParams::init(&mut ChaCha8Rng::seed_from_u64(seed), &config)?;
        Ok(Self { config, params })
    }

    /// Puts every parameter on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> NetworkParams<Var> {
        self.params.map(&mut |_, t| tape.param(t.clone()))
    }

    /// Inference on one patch; each modality is `[1, Z, Y, X]`.
    pub fn predict(&self, modalities: &[Tensor<T>]) -> Result<PatchPrediction<T>> {
        let mut tape = Tape::new();
        let params = self.params.map(&mut |_, t| tape.constant(t.clone()));
        let inputs: Vec<Var> = modalities.iter().map(|m| tape.constant(m.clone())).collect();
        let out = network_forward(&mut tape, &self.config, &params, &inputs, true)?;
        let fused = tape.value(out.y_final.expect("fusion ran")).clone();
        let streams = out.streams.iter().map(|s| tape.value(s.prob).clone()).collect();
        Ok(PatchPrediction { streams, fused })
    }
}

impl FusionNet<f32> {
    /// Parameters plus `meta.network`; `meta` must be a JSON object.
    pub fn to_checkpoint(&self, mut meta: serde_json::Value) -> Checkpoint {
        if let Some(m) = meta.as_object_mut() {
            m.insert("network".into(), serde_json::to_value(&self.config).expect("config serializes"));
        }
        let mut ck = Checkpoint::new(meta);
        ck.insert_params("", &self.params);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let cfg = ck.meta.get("network").ok_or_else(|| Error::Checkpoint("meta.network is missing".into()))?;
        let config: NetworkConfig = serde_json::from_value(cfg.clone())?;
        let mut net = Self::new(config, 0)?;
        ck.restore_params("", &mut net.params)?;
        Ok(net)
    }
}
