use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{loss_weights, stage, LossWeights, TrainConfig};
use super::dice::{pooled_dice_report, DiceReport};
use super::optim::Optimizer;
use crate::data::{build_patch_grid, normalize, PatchGrid, PatchSampler, Volume};
use crate::error::{Error, Result};
use crate::fusion::{network_forward, FusionNet};
use crate::infer::{patch_inputs, predict_volume};
use crate::scalar::Real;
use crate::tensor::{Tape, Tensor};

/// Loss bookkeeping of one optimizer step, averaged over the batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub stage: u8,
    pub weights: LossWeights,
    pub stream_losses: Vec<f64>,
    /// Absent while the fused path is skipped.
    pub fused_loss: Option<f64>,
    /// The value that was backpropagated.
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub streams: Vec<f64>,
    pub fused: Option<f64>,
    pub total: f64,
}

/// Stitched whole-volume Dice over the validation cases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub fused: DiceReport,
    pub streams: Vec<DiceReport>,
}

/// One line of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: u8,
    pub losses: EpochLosses,
    pub validation: Option<Validation>,
    pub seconds: f64,
}

/// Progress notifications; returning an error from the observer aborts training.
pub enum Event<'a, T> {
    Step(&'a StepRecord),
    Epoch(&'a EpochRecord),
    /// Validation mean Dice improved on every earlier validation.
    Improved { epoch: usize, mean_dice: f64, net: &'a FusionNet<T>, optimizer: &'a Optimizer<T> },
}

pub struct TrainState<T> {
    /// Epochs completed.
    pub epoch: usize,
    pub stage: u8,
    pub seed: u64,
    pub net: FusionNet<T>,
    pub optimizer: Optimizer<T>,
}

pub struct BestSnapshot<T> {
    pub epoch: usize,
    pub mean_dice: f64,
    pub net: FusionNet<T>,
}

pub struct TrainOutcome<T> {
    pub state: TrainState<T>,
    pub best: Option<BestSnapshot<T>>,
    pub history: Vec<EpochRecord>,
}

/// Per-patch forward/backward result.
struct PatchResult<T> {
    grads: Vec<Option<Tensor<T>>>,
    stream_losses: Vec<f64>,
    fused_loss: Option<f64>,
    total: f64,
}

fn patch_step<T: Real>(net: &FusionNet<T>, inputs: Vec<Tensor<T>>, labels: &[u8], w: &LossWeights) -> Result<PatchResult<T>> {
    let run_fusion = w.fused != 0.0;
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape);
    let inputs: Vec<_> = inputs.into_iter().map(|t| tape.constant(t)).collect();
    let out = network_forward(&mut tape, &net.config, &vars, &inputs, run_fusion)?;
    let eps = T::lit(crate::fusion::PROB_EPS);
    let mut terms = Vec::new();
    let mut stream_losses = Vec::new();
    for (s, &ws) in out.streams.iter().zip(&w.streams) {
        let l = tape.cross_entropy(s.prob, labels, eps)?;
        stream_losses.push(tape.value(l).item().as_f64());
        terms.push((l, T::lit(ws)));
    }
    let fused_loss = match out.y_final {
        Some(y) => {
            let l = tape.cross_entropy(y, labels, eps)?;
            terms.push((l, T::lit(w.fused)));
            Some(tape.value(l).item().as_f64())
        }
        None => None,
    };
    let loss = tape.weighted_sum(&terms)?;
    let total = tape.value(loss).item().as_f64();
    let grads = tape.backward(loss)?;
    let grads = vars.named().into_iter().map(|(_, &v)| grads.get(v).cloned()).collect();
    Ok(PatchResult { grads, stream_losses, fused_loss, total })
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

/// Whole-volume stitched Dice of the fused head and of every stream.
pub fn validate<T: Real>(net: &FusionNet<T>, vols: &[Volume], patch: [usize; 3], stride: [usize; 3]) -> Result<Validation> {
    let preds = vols.iter().map(|v| predict_volume(net, v, patch, stride)).collect::<Result<Vec<_>>>()?;
    let truths: Vec<&[u8]> = vols
        .iter()
        .map(|v| v.label.as_ref().map(|l| l.data()).ok_or_else(|| Error::Config("validation volume has no label".into())))
        .collect::<Result<_>>()?;
    let classes = net.config.num_classes;
    let score = |labels: Vec<crate::data::Grid<u8>>| {
        let pairs: Vec<(&[u8], &[u8])> = labels.iter().map(|l| l.data()).zip(truths.iter().copied()).collect();
        pooled_dice_report(&pairs, classes)
    };
    let fused = score(preds.iter().map(|p| p.labels()).collect())?;
    let streams = (0..net.config.num_modalities)
        .map(|i| score(preds.iter().map(|p| p.stream_labels(i)).collect()))
        .collect::<Result<_>>()?;
    Ok(Validation { fused, streams })
}

/// Two-stage training. Volumes are normalized here when the config asks.
pub fn train<T: Real>(
    cfg: &TrainConfig,
    train_vols: &[Volume],
    val_vols: &[Volume],
    observer: &mut dyn FnMut(Event<'_, T>) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train_vols.is_empty() {
        return Err(Error::Config("no training volumes".into()));
    }
    let prep = |vs: &[Volume]| -> Result<Vec<Volume>> {
        vs.iter()
            .map(|v| {
                v.validate(cfg.network.num_classes)?;
                if v.modalities.len() != cfg.network.num_modalities {
                    return Err(Error::Config(format!("volume has {} modalities, network expects {}", v.modalities.len(), cfg.network.num_modalities)));
                }
                Ok(if cfg.normalize { normalize(v) } else { v.clone() })
            })
            .collect()
    };
    let train_vols = prep(train_vols)?;
    let val_vols = prep(val_vols)?;
    let grids = train_vols.iter().map(|v| build_patch_grid(v.dims(), cfg.patch_size, cfg.stride)).collect::<Result<Vec<PatchGrid>>>()?;
    let labelled = train_vols
        .iter()
        .zip(&grids)
        .map(|(v, g)| v.label.as_ref().map(|l| (g, l)).ok_or_else(|| Error::Config("training volume has no label".into())))
        .collect::<Result<Vec<_>>>()?;
    let sampler = PatchSampler::new(cfg.sampling, &labelled)?;

    let mut net = FusionNet::<T>::new(cfg.network.clone(), cfg.seed)?;
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, net.params.count());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut history = Vec::with_capacity(cfg.total_epochs);
    let mut best: Option<BestSnapshot<T>> = None;

    for epoch in 0..cfg.total_epochs {
        let started = Instant::now();
        let w = loss_weights(epoch, cfg.stage_switch_epoch, cfg.network.num_modalities);
        let mut steps = Vec::with_capacity(cfg.steps_per_epoch);
        for step in 0..cfg.steps_per_epoch {
            let draws: Vec<_> = (0..cfg.batch_size).map(|_| sampler.draw(&mut rng)).collect();
            let results = draws
                .par_iter()
                .map(|d| {
                    let vol = &train_vols[d.volume];
                    let inputs = patch_inputs::<T>(vol, d.start, cfg.patch_size)?;
                    let labels = vol.label.as_ref().expect("checked above").crop(d.start, cfg.patch_size)?;
                    patch_step(&net, inputs, labels.data(), &w)
                })
                .collect::<Result<Vec<_>>>()?;
            let record = StepRecord {
                epoch,
                step,
                stage: stage(epoch, cfg.stage_switch_epoch),
                weights: w.clone(),
                stream_losses: (0..w.streams.len()).map(|i| mean(results.iter().map(|r| r.stream_losses[i]))).collect(),
                fused_loss: results[0].fused_loss.map(|_| mean(results.iter().filter_map(|r| r.fused_loss))),
                total: mean(results.iter().map(|r| r.total)),
            };
            if !record.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: step,
                    seed: cfg.seed,
                    patches: draws.iter().map(|d| (d.volume, d.start)).collect(),
                });
            }
            let scale = T::lit(1.0 / cfg.batch_size as f64);
            let mut grads: Vec<Option<Tensor<T>>> = vec![None; net.params.count()];
            for r in results {
                for (acc, g) in grads.iter_mut().zip(r.grads) {
                    let Some(g) = g else { continue };
                    match acc {
                        Some(a) => a.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a += b * scale),
                        None => *acc = Some(Tensor::new(g.shape().to_vec(), g.data().iter().map(|&b| b * scale).collect())?),
                    }
                }
            }
            optimizer.step(&mut net.params, &grads)?;
            observer(Event::Step(&record))?;
            steps.push(record);
        }

        let last = epoch + 1 == cfg.total_epochs;
        let validation = if !val_vols.is_empty() && ((epoch + 1) % cfg.validate_every == 0 || last) {
            Some(validate(&net, &val_vols, cfg.patch_size, cfg.stride)?)
        } else {
            None
        };
        let fused_losses: Vec<f64> = steps.iter().filter_map(|s| s.fused_loss).collect();
        let record = EpochRecord {
            epoch,
            stage: stage(epoch, cfg.stage_switch_epoch),
            losses: EpochLosses {
                streams: (0..w.streams.len()).map(|i| mean(steps.iter().map(|s| s.stream_losses[i]))).collect(),
                fused: (!fused_losses.is_empty()).then(|| mean(fused_losses.into_iter())),
                total: mean(steps.iter().map(|s| s.total)),
            },
            validation,
            seconds: started.elapsed().as_secs_f64(),
        };
        observer(Event::Epoch(&record))?;
        if let Some(v) = &record.validation {
            if best.as_ref().is_none_or(|b| v.fused.mean > b.mean_dice) {
                observer(Event::Improved { epoch, mean_dice: v.fused.mean, net: &net, optimizer: &optimizer })?;
                best = Some(BestSnapshot { epoch, mean_dice: v.fused.mean, net: net.clone() });
            }
        }
        history.push(record);
    }
    let state = TrainState {
        epoch: cfg.total_epochs,
        stage: stage(cfg.total_epochs.saturating_sub(1), cfg.stage_switch_epoch),
        seed: cfg.seed,
        net,
        optimizer,
    };
    Ok(TrainOutcome { state, best, history })
}
