//! Parameter trees.
//!
//! Every parameter struct is generic over its leaf type `P`: `Tensor<T>` for
//! stored weights, [`Var`](crate::Var) once bound to a tape, and plain
//! gradient tensors after backward. `map` rebuilds the same tree with new
//! leaves; `visit_mut` walks leaves in a fixed order with dotted names.

use rand::Rng;

use super::config::{BlockKind, NetworkConfig};
use crate::error::Result;
use crate::scalar::Real;
use crate::tensor::Tensor;

type MapFn<'a, P, Q> = &'a mut dyn FnMut(&str, &P) -> Q;
type VisitFn<'a, P> = &'a mut dyn FnMut(&str, &mut P);

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<P> {
    /// `[Cout, Cin, k, k, k]`
    pub weight: P,
    /// `[Cout]`
    pub bias: P,
    pub dilation: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearParams<P> {
    /// `[Cout, Cin]`
    pub weight: P,
    pub bias: P,
}

/// Residual block with squeeze-and-excitation reweighting of its branch.
#[derive(Clone, Debug, PartialEq)]
pub struct SeResBlockParams<P> {
    pub conv1: ConvParams<P>,
    pub conv2: ConvParams<P>,
    /// `C -> C / r`
    pub se_fc1: LinearParams<P>,
    /// `C / r -> C`
    pub se_fc2: LinearParams<P>,
    pub reduction: usize,
}

/// Densely wired dilated branches plus a pointwise projection back to `C`.
///
/// Branch `i` consumes the concatenation of the block input and every
/// earlier branch output.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseAsppBlockParams<P> {
    pub branches: Vec<ConvParams<P>>,
    pub projection: ConvParams<P>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BlockParams<P> {
    SeRes(SeResBlockParams<P>),
    DenseAspp(DenseAsppBlockParams<P>),
}

/// One self-contained modality stream.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamParams<P> {
    /// `1 -> C`
    pub stem: ConvParams<P>,
    pub blocks: Vec<BlockParams<P>>,
    /// Pointwise `levels * C -> classes`.
    pub head: ConvParams<P>,
}

/// One pointwise conv per stream, mapping gated levels to `C_adapt`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptationParams<P> {
    pub convs: Vec<ConvParams<P>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionHeadParams<P> {
    pub adaptation: AdaptationParams<P>,
    /// Pointwise `streams * C_adapt -> classes`.
    pub head: ConvParams<P>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<P> {
    pub streams: Vec<StreamParams<P>>,
    pub fusion: FusionHeadParams<P>,
}

impl<P> ConvParams<P> {
    pub fn map<Q>(&self, prefix: &str, f: MapFn<'_, P, Q>) -> ConvParams<Q> {
        ConvParams {
            weight: f(&join(prefix, "weight"), &self.weight),
            bias: f(&join(prefix, "bias"), &self.bias),
            dilation: self.dilation,
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: VisitFn<'_, P>) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

impl<P> LinearParams<P> {
    pub fn map<Q>(&self, prefix: &str, f: MapFn<'_, P, Q>) -> LinearParams<Q> {
        LinearParams { weight: f(&join(prefix, "weight"), &self.weight), bias: f(&join(prefix, "bias"), &self.bias) }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: VisitFn<'_, P>) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

impl<P> SeResBlockParams<P> {
    pub fn map<Q>(&self, prefix: &str, f: MapFn<'_, P, Q>) -> SeResBlockParams<Q> {
        SeResBlockParams {
            conv1: self.conv1.map(&join(prefix, "conv1"), f),
            conv2: self.conv2.map(&join(prefix, "conv2"), f),
            se_fc1: self.se_fc1.map(&join(prefix, "se_fc1"), f),
            se_fc2: self.se_fc2.map(&join(prefix, "se_fc2"), f),
            reduction: self.reduction,
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: VisitFn<'_, P>) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
        self.se_fc1.visit_mut(&join(prefix, "se_fc1"), f);
        self.se_fc2.visit_mut(&join(prefix, "se_fc2"), f);
    }
}

impl<P> DenseAsppBlockParams<P> {
    pub fn map<Q>(&self, prefix: &str, f: MapFn<'_, P, Q>) -> DenseAsppBlockParams<Q> {
        DenseAsppBlockParams {
            branches: self
                .branches
                .iter()
                .enumerate()
                .map(|(i, b)| b.map(&join(prefix, &format!("branch{i}")), f))
                .collect(),
            projection: self.projection.map(&join(prefix, "projection"), f),
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: VisitFn<'_, P>) {
        for (i, b) in self.branches.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("branch{i}")), f);
        }
        self.projection.visit_mut(&join(prefix, "projection"), f);
    }
}

impl<P> BlockParams<P> {
    pub fn map<Q>(&self, prefix: &str, f: MapFn<'_, P, Q>) -> BlockParams<Q> {
        match self {
            BlockParams::SeRes(b) => BlockParams::SeRes(b.map(prefix, f)),
            BlockParams::DenseAspp(b) => BlockParams::DenseAspp(b.map(prefix, f)),
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: VisitFn<'_, P>) {
        match self {
            BlockParams::SeRes(b) => b.visit_mut(prefix, f),
            BlockParams::DenseAspp(b) => b.visit_mut(prefix, f),
        }
    }
}

impl<P> StreamParams<P> {
    pub fn map<Q>(&self, prefix: &str, f: MapFn<'_, P, Q>) -> StreamParams<Q> {
        StreamParams {
            stem: self.stem.map(&join(prefix, "stem"), f),
            blocks: self
                .blocks
                .iter()
                .enumerate()
                .map(|(i, b)| b.map(&join(prefix, &format!("block{i}")), f))
                .collect(),
            head: self.head.map(&join(prefix, "head"), f),
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: VisitFn<'_, P>) {
        self.stem.visit_mut(&join(prefix, "stem"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("block{i}")), f);
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

impl<P> FusionHeadParams<P> {
    pub fn map<Q>(&self, prefix: &str, f: MapFn<'_, P, Q>) -> FusionHeadParams<Q> {
        FusionHeadParams {
            adaptation: AdaptationParams {
                convs: self
                    .adaptation
                    .convs
                    .iter()
                    .enumerate()
                    .map(|(i, c)| c.map(&join(prefix, &format!("adapt{i}")), f))
                    .collect(),
            },
            head: self.head.map(&join(prefix, "head"), f),
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: VisitFn<'_, P>) {
        for (i, c) in self.adaptation.convs.iter_mut().enumerate() {
            c.visit_mut(&join(prefix, &format!("adapt{i}")), f);
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

impl<P> NetworkParams<P> {
    pub fn map<Q>(&self, f: MapFn<'_, P, Q>) -> NetworkParams<Q> {
        NetworkParams {
            streams: self
                .streams
                .iter()
                .enumerate()
                .map(|(i, s)| s.map(&format!("stream{i}"), f))
                .collect(),
            fusion: self.fusion.map("fusion", f),
        }
    }

    /// Visits every leaf; stream parameters first, fusion head last.
    pub fn visit_mut(&mut self, f: VisitFn<'_, P>) {
        for (i, s) in self.streams.iter_mut().enumerate() {
            s.visit_mut(&format!("stream{i}"), f);
        }
        self.fusion.visit_mut("fusion", f);
    }

    /// Leaves in visit order with their names.
    pub fn named(&self) -> Vec<(String, &P)> {
        let mut names = Vec::new();
        self.map(&mut |n, _| names.push(n.to_string()));
        let mut refs = Vec::new();
        collect_refs(self, &mut refs);
        names.into_iter().zip(refs).collect()
    }

    pub fn count(&self) -> usize {
        let mut n = 0;
        self.map(&mut |_, _| n += 1);
        n
    }
}

fn collect_refs<'a, P>(p: &'a NetworkParams<P>, out: &mut Vec<&'a P>) {
    fn conv<'a, P>(c: &'a ConvParams<P>, out: &mut Vec<&'a P>) {
        out.push(&c.weight);
        out.push(&c.bias);
    }
    fn lin<'a, P>(c: &'a LinearParams<P>, out: &mut Vec<&'a P>) {
        out.push(&c.weight);
        out.push(&c.bias);
    }
    for s in &p.streams {
        conv(&s.stem, out);
        for b in &s.blocks {
            match b {
                BlockParams::SeRes(b) => {
                    conv(&b.conv1, out);
                    conv(&b.conv2, out);
                    lin(&b.se_fc1, out);
                    lin(&b.se_fc2, out);
                }
                BlockParams::DenseAspp(b) => {
                    for br in &b.branches {
                        conv(br, out);
                    }
                    conv(&b.projection, out);
                }
            }
        }
        conv(&s.head, out);
    }
    for c in &p.fusion.adaptation.convs {
        conv(c, out);
    }
    conv(&p.fusion.head, out);
}

/// Fan-in scaled uniform weights in `±1/sqrt(fan_in)`, zero biases.
pub fn init_conv<T: Real, R: Rng>(rng: &mut R, cin: usize, cout: usize, k: usize, dilation: usize) -> ConvParams<Tensor<T>> {
    let fan_in = cin * k * k * k;
    let bound = 1.0 / (fan_in as f64).sqrt();
    ConvParams {
        weight: Tensor::from_fn(vec![cout, cin, k, k, k], |_| T::lit(rng.random_range(-bound..bound))),
        bias: Tensor::zeros(vec![cout]),
        dilation,
    }
}

pub fn init_linear<T: Real, R: Rng>(rng: &mut R, cin: usize, cout: usize) -> LinearParams<Tensor<T>> {
    let bound = 1.0 / (cin as f64).sqrt();
    LinearParams {
        weight: Tensor::from_fn(vec![cout, cin], |_| T::lit(rng.random_range(-bound..bound))),
        bias: Tensor::zeros(vec![cout]),
    }
}

impl<T: Real> SeResBlockParams<Tensor<T>> {
    pub fn init<R: Rng>(rng: &mut R, channels: usize, reduction: usize, k: usize) -> Self {
        let hidden = (channels / reduction).max(1);
        Self {
            conv1: init_conv(rng, channels, channels, k, 1),
            conv2: init_conv(rng, channels, channels, k, 1),
            se_fc1: init_linear(rng, channels, hidden),
            se_fc2: init_linear(rng, hidden, channels),
            reduction,
        }
    }
}

impl<T: Real> DenseAsppBlockParams<Tensor<T>> {
    pub fn init<R: Rng>(rng: &mut R, channels: usize, growth: usize, dilations: &[usize], k: usize) -> Self {
        let branches: Vec<_> = dilations
            .iter()
            .enumerate()
            .map(|(i, &d)| init_conv(rng, channels + i * growth, growth, k, d))
            .collect();
        let projection = init_conv(rng, channels + dilations.len() * growth, channels, 1, 1);
        Self { branches, projection }
    }
}

impl<T: Real> StreamParams<Tensor<T>> {
    pub fn init<R: Rng>(rng: &mut R, cfg: &NetworkConfig) -> Self {
        let c = cfg.width;
        let stem = init_conv(rng, 1, c, cfg.kernel, 1);
        let blocks = cfg
            .blocks
            .iter()
            .map(|kind| match kind {
                BlockKind::SeRes => BlockParams::SeRes(SeResBlockParams::init(rng, c, cfg.se_reduction, cfg.kernel)),
                BlockKind::DenseAspp => BlockParams::DenseAspp(DenseAsppBlockParams::init(
                    rng,
                    c,
                    cfg.aspp_growth,
                    &cfg.dilations,
                    cfg.kernel,
                )),
            })
            .collect();
        let head = init_conv(rng, cfg.level_channels(), cfg.num_classes, 1, 1);
        Self { stem, blocks, head }
    }
}

impl<T: Real> NetworkParams<Tensor<T>> {
    /// Fresh parameters for `cfg`, deterministic in the RNG state.
    pub fn init<R: Rng>(rng: &mut R, cfg: &NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let streams = (0..cfg.num_modalities).map(|_| StreamParams::init(rng, cfg)).collect();
        let convs = (0..cfg.num_modalities)
            .map(|_| init_conv(rng, cfg.level_channels(), cfg.adapt_width, 1, 1))
            .collect();
        let head = init_conv(rng, cfg.num_modalities * cfg.adapt_width, cfg.num_classes, 1, 1);
        Ok(Self { streams, fusion: FusionHeadParams { adaptation: AdaptationParams { convs }, head } })
    }

    pub fn cast<U: Real>(&self) -> NetworkParams<Tensor<U>> {
        self.map(&mut |_, t| t.cast())
    }

    pub fn num_scalars(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }
}
