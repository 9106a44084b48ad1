//! Central finite-difference checks for every differentiable tape operation.
//!
//! Each registered case builds a small double-precision graph from random
//! leaves, reduces it to a scalar through a fixed random projection and
//! compares the tape's gradient with `(f(x + h) - f(x - h)) / 2h` for every
//! leaf element.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::fusion::PROB_EPS;

pub const DEFAULT_STEP: f64 = 1e-4;
pub const DEFAULT_TOLERANCE: f64 = 1e-3;
pub const DEFAULT_SEEDS: u64 = 20;

/// Elements whose analytic and numeric gradients are both below this are
/// compared absolutely instead of relatively.
const ABS_FLOOR: f64 = 1e-7;

#[derive(Clone, Copy, Debug)]
enum Init {
    Uniform,
    /// Bounded away from zero so relu kinks sit outside `[-h, h]`.
    AwayFromZero,
    /// Inside `(0.05, 1)`, safely above the probability floor.
    Probability,
}

type Build = fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

struct Case {
    name: &'static str,
    inputs: &'static [(&'static [usize], Init)],
    build: Build,
}

const S: &[usize] = &[2, 3, 3, 4];
const CASES: &[Case] = &[
    Case {
        name: "conv3d",
        inputs: &[(&[2, 4, 4, 4], Init::Uniform), (&[3, 2, 3, 3, 3], Init::Uniform), (&[3], Init::Uniform)],
        build: |t, v| t.conv3d(v[0], v[1], v[2], 1),
    },
    Case {
        name: "conv3d_dilated",
        inputs: &[(&[2, 5, 4, 5], Init::Uniform), (&[2, 2, 3, 3, 3], Init::Uniform), (&[2], Init::Uniform)],
        build: |t, v| t.conv3d(v[0], v[1], v[2], 2),
    },
    Case {
        name: "conv3d_pointwise",
        inputs: &[(&[3, 3, 2, 4], Init::Uniform), (&[2, 3, 1, 1, 1], Init::Uniform), (&[2], Init::Uniform)],
        build: |t, v| t.conv3d(v[0], v[1], v[2], 1),
    },
    Case { name: "relu", inputs: &[(S, Init::AwayFromZero)], build: |t, v| t.relu(v[0]) },
    Case { name: "sigmoid", inputs: &[(S, Init::Uniform)], build: |t, v| t.sigmoid(v[0]) },
    Case { name: "one_minus", inputs: &[(S, Init::Uniform)], build: |t, v| t.one_minus(v[0]) },
    Case { name: "add", inputs: &[(S, Init::Uniform), (S, Init::Uniform)], build: |t, v| t.add(v[0], v[1]) },
    Case { name: "mul", inputs: &[(S, Init::Uniform), (S, Init::Uniform)], build: |t, v| t.mul(v[0], v[1]) },
    Case {
        name: "mul_field",
        inputs: &[(S, Init::Uniform), (&[1, 3, 3, 4], Init::Uniform)],
        build: |t, v| t.mul(v[0], v[1]),
    },
    Case {
        name: "scale_channels",
        inputs: &[(S, Init::Uniform), (&[2], Init::Uniform)],
        build: |t, v| t.scale_channels(v[0], v[1]),
    },
    Case {
        name: "concat",
        inputs: &[(S, Init::Uniform), (&[3, 3, 3, 4], Init::Uniform)],
        build: |t, v| t.concat(&[v[0], v[1]]),
    },
    Case { name: "global_avg_pool", inputs: &[(S, Init::Uniform)], build: |t, v| t.global_avg_pool(v[0]) },
    Case {
        name: "linear",
        inputs: &[(&[4], Init::Uniform), (&[3, 4], Init::Uniform), (&[3], Init::Uniform)],
        build: |t, v| t.linear(v[0], v[1], v[2]),
    },
    Case { name: "softmax", inputs: &[(&[4, 3, 2, 3], Init::Uniform)], build: |t, v| t.softmax(v[0]) },
    Case {
        name: "cross_entropy",
        inputs: &[(&[3, 2, 3, 2], Init::Probability)],
        build: |t, v| {
            let labels: Vec<u8> = (0..12).map(|i| (i * 7 % 3) as u8).collect();
            t.cross_entropy(v[0], &labels, PROB_EPS)
        },
    },
    Case { name: "sum", inputs: &[(S, Init::Uniform)], build: |t, v| t.sum(v[0]) },
    Case {
        name: "weighted_sum",
        inputs: &[(S, Init::Uniform), (S, Init::Uniform)],
        build: |t, v| t.weighted_sum(&[(v[0], 0.5), (v[1], -1.25)]),
    },
    Case {
        // Probabilities must stay normalized under perturbation, so the
        // check runs through a softmax.
        name: "uncertainty",
        inputs: &[(&[3, 2, 3, 2], Init::Uniform)],
        build: |t, v| {
            let p = t.softmax(v[0])?;
            t.uncertainty(p, PROB_EPS)
        },
    },
];

/// Names of every registered check, in report order.
pub fn registered_ops() -> Vec<&'static str> {
    CASES.iter().map(|c| c.name).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct OpReport {
    pub op: String,
    pub seeds: u64,
    pub elements_checked: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

fn sample(rng: &mut ChaCha8Rng, shape: &[usize], init: Init) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| match init {
        Init::Uniform => rng.random_range(-1.0..1.0),
        Init::AwayFromZero => {
            let m: f64 = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        }
        Init::Probability => rng.random_range(0.05..1.0),
    })
}

/// Scalar objective `Σ out ⊙ r` for a fixed projection `r`.
fn objective(case: &Case, leaves: &[Tensor<f64>], proj: &Tensor<f64>, grad: bool) -> Result<(Tape<f64>, Var, Vec<Var>)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t.clone(), grad)).collect();
    let out = (case.build)(&mut tape, &vars)?;
    let r = tape.constant(proj.clone());
    let prod = tape.mul(out, r)?;
    let loss = tape.sum(prod)?;
    Ok((tape, loss, vars))
}

fn run_case(case: &Case, seeds: u64, step: f64, tol: f64) -> Result<OpReport> {
    let mut max_err: f64 = 0.0;
    let mut checked = 0;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9).wrapping_add(case.name.len() as u64));
        let leaves: Vec<Tensor<f64>> = case.inputs.iter().map(|(s, i)| sample(&mut rng, s, *i)).collect();
        let out_shape = {
            let mut probe = Tape::new();
            let pv: Vec<Var> = leaves.iter().map(|t| probe.constant(t.clone())).collect();
            let out = (case.build)(&mut probe, &pv)?;
            probe.value(out).shape().to_vec()
        };
        let proj = sample(&mut rng, &out_shape, Init::Uniform);
        let (mut tape, loss, vars) = objective(case, &leaves, &proj, true)?;
        let grads = tape.backward(loss)?;
        for (li, leaf) in leaves.iter().enumerate() {
            let analytic = grads.get(vars[li]).cloned().unwrap_or_else(|| Tensor::zeros(leaf.shape().to_vec()));
            for e in 0..leaf.len() {
                let mut plus = leaves.clone();
                plus[li].data_mut()[e] += step;
                let mut minus = leaves.clone();
                minus[li].data_mut()[e] -= step;
                let f = |ls: &[Tensor<f64>]| -> Result<f64> {
                    let (t, l, _) = objective(case, ls, &proj, false)?;
                    Ok(t.value(l).item())
                };
                let numeric = (f(&plus)? - f(&minus)?) / (2.0 * step);
                let a = analytic.data()[e];
                let scale = a.abs().max(numeric.abs());
                let err = if scale < ABS_FLOOR { 0.0 } else { (a - numeric).abs() / scale };
                max_err = max_err.max(err);
                checked += 1;
            }
        }
    }
    Ok(OpReport { op: case.name.to_string(), seeds, elements_checked: checked, max_rel_error: max_err, passed: max_err <= tol })
}

/// Checks one registered op.
pub fn check_op(name: &str, seeds: u64, step: f64, tol: f64) -> Result<OpReport> {
    let case = CASES
        .iter()
        .find(|c| c.name == name)
        .ok_or_else(|| Error::Config(format!("unknown op '{name}'; known: {}", registered_ops().join(", "))))?;
    run_case(case, seeds, step, tol)
}

/// Checks every registered op.
pub fn check_all(seeds: u64, step: f64, tol: f64) -> Result<Vec<OpReport>> {
    CASES.iter().map(|c| run_case(c, seeds, step, tol)).collect()
}
