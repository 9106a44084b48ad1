use serde_json::json;

use super::config::OptimizerKind;
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, NetworkParams};
use crate::scalar::Real;
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Moments of one parameter tensor; empty until its first gradient arrives.
#[derive(Clone, Debug, Default, PartialEq)]
struct Slot<T> {
    m: Vec<T>,
    v: Vec<T>,
    steps: u64,
}

/// Adam with bias correction, or plain SGD.
///
/// Parameters are addressed by their position in the network's visit order.
/// A parameter without a gradient in a step is left untouched, and under Adam
/// its moments and step count do not advance.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer<T> {
    pub kind: OptimizerKind,
    pub lr: f64,
    slots: Vec<Slot<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64, num_params: usize) -> Self {
        Self { kind, lr, slots: vec![Slot { m: Vec::new(), v: Vec::new(), steps: 0 }; num_params] }
    }

    /// Steps taken so far by parameter `slot`.
    pub fn steps(&self, slot: usize) -> u64 {
        self.slots[slot].steps
    }

    /// Updates one parameter in place from its gradient.
    pub fn update(&mut self, slot: usize, param: &mut [T], grad: &[T]) {
        assert_eq!(param.len(), grad.len(), "parameter/gradient length mismatch");
        let lr = T::lit(self.lr);
        match self.kind {
            OptimizerKind::Sgd => param.iter_mut().zip(grad).for_each(|(p, &g)| *p -= lr * g),
            OptimizerKind::Adam => {
                let s = &mut self.slots[slot];
                if s.m.is_empty() {
                    s.m = vec![T::zero(); param.len()];
                    s.v = vec![T::zero(); param.len()];
                }
                s.steps += 1;
                let t = s.steps as i32;
                let (b1, b2) = (T::lit(ADAM_BETA1), T::lit(ADAM_BETA2));
                let c1 = T::lit(1.0 - ADAM_BETA1.powi(t));
                let c2 = T::lit(1.0 - ADAM_BETA2.powi(t));
                let eps = T::lit(ADAM_EPS);
                let one = T::one();
                for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(&mut s.m).zip(&mut s.v) {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
    }

    /// One step over the whole network; `grads` follows the visit order.
    pub fn step(&mut self, params: &mut NetworkParams<Tensor<T>>, grads: &[Option<Tensor<T>>]) -> Result<()> {
        if grads.len() != self.slots.len() {
            return Err(Error::dim("optimizer", format!("{} gradients for {} parameters", grads.len(), self.slots.len())));
        }
        let mut i = 0;
        let mut err = None;
        params.visit_mut(&mut |name, p| {
            if let Some(g) = &grads[i] {
                if g.shape() != p.shape() {
                    err.get_or_insert_with(|| Error::dim("optimizer", format!("gradient of {name} has shape {:?}", g.shape())));
                } else {
                    self.update(i, p.data_mut(), g.data());
                }
            }
            i += 1;
        });
        err.map_or(Ok(()), Err)
    }

    /// Writes moments as `optim.m.<name>` / `optim.v.<name>` and the
    /// per-parameter step counts into `meta.optim`.
    pub fn write_to(&self, ck: &mut Checkpoint, names: &[String]) {
        let mut steps = serde_json::Map::new();
        for (s, name) in self.slots.iter().zip(names) {
            if s.steps > 0 {
                let shape = vec![s.m.len()];
                ck.tensors.insert(format!("optim.m.{name}"), Tensor::new(shape.clone(), s.m.iter().map(|v| v.to_f32().unwrap()).collect()).unwrap());
                ck.tensors.insert(format!("optim.v.{name}"), Tensor::new(shape, s.v.iter().map(|v| v.to_f32().unwrap()).collect()).unwrap());
                steps.insert(name.clone(), json!(s.steps));
            }
        }
        if let Some(meta) = ck.meta.as_object_mut() {
            meta.insert("optim".into(), json!({"kind": self.kind, "lr": self.lr, "steps": steps}));
        }
    }

    /// Inverse of [`write_to`](Self::write_to).
    pub fn read_from(ck: &Checkpoint, names: &[String]) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        let meta = ck.meta.get("optim").ok_or_else(|| bad("no optimizer state".into()))?;
        let kind: OptimizerKind = serde_json::from_value(meta["kind"].clone())?;
        let lr = meta["lr"].as_f64().ok_or_else(|| bad("optimizer lr missing".into()))?;
        let mut opt = Self::new(kind, lr, names.len());
        for (slot, name) in opt.slots.iter_mut().zip(names) {
            let Some(steps) = meta["steps"].get(name).and_then(|v| v.as_u64()) else { continue };
            let get = |k: &str| {
                ck.tensors
                    .get(&format!("optim.{k}.{name}"))
                    .map(|t| t.data().iter().map(|&v| T::from_f32(v).unwrap()).collect::<Vec<T>>())
                    .ok_or_else(|| bad(format!("missing optim.{k}.{name}")))
            };
            *slot = Slot { m: get("m")?, v: get("v")?, steps };
        }
        Ok(opt)
    }
}
