use super::params::{BlockParams, ConvParams, DenseAsppBlockParams, SeResBlockParams, StreamParams};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{Tape, Var};

pub fn conv<T: Real>(tape: &mut Tape<T>, x: Var, p: &ConvParams<Var>) -> Result<Var> {
    tape.conv3d(x, p.weight, p.bias, p.dilation)
}

/// SE-Res block output together with its per-channel excitation weights.
pub struct SeResOutput {
    pub out: Var,
    pub gate: Var,
}

/// `relu(x + s ⊙ f(x))` with `f = conv -> relu -> conv` and `s` the sigmoid
/// excitation computed from the spatial mean of `f(x)`.
pub fn se_res_forward<T: Real>(tape: &mut Tape<T>, x: Var, p: &SeResBlockParams<Var>) -> Result<Var> {
    se_res_forward_traced(tape, x, p).map(|o| o.out)
}

pub fn se_res_forward_traced<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    p: &SeResBlockParams<Var>,
) -> Result<SeResOutput> {
    let c = tape.value(x).channels();
    if p.reduction == 0 || c % p.reduction != 0 {
        return Err(Error::dim("se_res", format!("{c} channels not divisible by reduction {}", p.reduction)));
    }
    let h = conv(tape, x, &p.conv1)?;
    let h = tape.relu(h)?;
    let f = conv(tape, h, &p.conv2)?;
    if tape.value(f).channels() != c {
        return Err(Error::dim("se_res", format!("branch emits {} channels, input has {c}", tape.value(f).channels())));
    }
    let squeezed = tape.global_avg_pool(f)?;
    let e = tape.linear(squeezed, p.se_fc1.weight, p.se_fc1.bias)?;
    let e = tape.relu(e)?;
    let e = tape.linear(e, p.se_fc2.weight, p.se_fc2.bias)?;
    let gate = tape.sigmoid(e)?;
    let scaled = tape.scale_channels(f, gate)?;
    let sum = tape.add(x, scaled)?;
    Ok(SeResOutput { out: tape.relu(sum)?, gate })
}

/// Densely connected dilated branches followed by a pointwise projection.
pub fn dense_aspp_forward<T: Real>(tape: &mut Tape<T>, x: Var, p: &DenseAsppBlockParams<Var>) -> Result<Var> {
    if p.branches.is_empty() {
        return Err(Error::dim("dense_aspp", "no branches"));
    }
    let c = tape.value(x).channels();
    let mut feats = vec![x];
    for (i, b) in p.branches.iter().enumerate() {
        let input = if feats.len() == 1 { x } else { tape.concat(&feats)? };
        let expect = tape.value(input).channels();
        let got = tape.value(b.weight).shape()[1];
        if got != expect {
            return Err(Error::dim("dense_aspp", format!("branch {i} expects {got} input channels, wiring gives {expect}")));
        }
        let y = conv(tape, input, b)?;
        feats.push(tape.relu(y)?);
    }
    let all = tape.concat(&feats)?;
    let out = conv(tape, all, &p.projection)?;
    if tape.value(out).channels() != c {
        return Err(Error::dim("dense_aspp", format!("projection emits {} channels, expected {c}", tape.value(out).channels())));
    }
    Ok(out)
}

pub struct StreamOutput {
    /// Feature map after each block, all `[C, Z, Y, X]`.
    pub levels: Vec<Var>,
    /// Channel concatenation of `levels`.
    pub level_concat: Var,
    /// Class probabilities `[classes, Z, Y, X]`.
    pub prob: Var,
}

/// One modality's stream: stem, blocks with a tap after each, and a
/// pointwise head over the concatenated taps.
pub fn stream_forward<T: Real>(
    tape: &mut Tape<T>,
    input: Var,
    p: &StreamParams<Var>,
    min_spatial: usize,
) -> Result<StreamOutput> {
    let shape = tape.value(input).shape().to_vec();
    if shape.len() != 4 || shape[0] != 1 {
        return Err(Error::dim("stream", format!("expected a [1, Z, Y, X] modality, got {shape:?}")));
    }
    if shape[1..].iter().any(|&s| s < min_spatial) {
        return Err(Error::dim("stream", format!("spatial extent {:?} below minimum {min_spatial}", &shape[1..])));
    }
    let stem = conv(tape, input, &p.stem)?;
    let mut h = tape.relu(stem)?;
    let mut levels = Vec::with_capacity(p.blocks.len());
    for block in &p.blocks {
        h = match block {
            BlockParams::SeRes(b) => se_res_forward(tape, h, b)?,
            BlockParams::DenseAspp(b) => dense_aspp_forward(tape, h, b)?,
        };
        levels.push(h);
    }
    let level_concat = tape.concat(&levels)?;
    let logits = conv(tape, level_concat, &p.head)?;
    let prob = tape.softmax(logits)?;
    Ok(StreamOutput { levels, level_concat, prob })
}
