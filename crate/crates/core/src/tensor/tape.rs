use std::sync::atomic::{AtomicU64, Ordering};

use super::conv::{self, ConvGeom};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::{gemm, MatRef, Real};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn tape_id(self) -> u64 {
        self.tape
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv3d { x: usize, w: usize, b: usize, geom: ConvGeom },
    Relu(usize),
    Sigmoid(usize),
    Add(usize, usize),
    /// Same-shape product, or `b` is a `[1, ...]` field broadcast over `a`'s channels.
    Mul { a: usize, b: usize, field: bool },
    ScaleChannels { x: usize, s: usize },
    Concat(Vec<usize>),
    GlobalAvgPool(usize),
    Linear { x: usize, w: usize, b: usize },
    Softmax(usize),
    CrossEntropy { p: usize, labels: Vec<u8>, eps: T },
    Sum(usize),
    WeightedSum(Vec<(usize, T)>),
    Uncertainty { p: usize, eps: T },
    OneMinus(usize),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only record of a forward pass.
///
/// Nodes are stored in forward order, which is also a topological order, so
/// `backward` is a single reverse sweep.
#[derive(Debug)]
pub struct Tape<T> {
    id: u64,
    nodes: Vec<Node<T>>,
    consumed: bool,
}

/// Gradients of every leaf that requires one, produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of `v`, or `None` when no loss term reached it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get_mut(v.index).and_then(Option::take)
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed), nodes: Vec::new(), consumed: false }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Constant leaf; never accumulates gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        assert_eq!(v.tape, self.id, "variable from another tape");
        &self.nodes[v.index].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.index].requires_grad
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id {
            return Err(Error::ForeignVar { expected: self.id, found: v.tape });
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        #[cfg(debug_assertions)]
        if !value.is_finite() && !matches!(op, Op::Leaf) {
            let inputs_finite = self.inputs_of(&op).iter().all(|&i| self.nodes[i].value.is_finite());
            assert!(!inputs_finite, "non-finite output from {op:?}-type op on finite inputs");
        }
        self.nodes.push(Node { value, op, requires_grad });
        Var { tape: self.id, index: self.nodes.len() - 1 }
    }

    #[cfg(debug_assertions)]
    fn inputs_of(&self, op: &Op<T>) -> Vec<usize> {
        match op {
            Op::Leaf => vec![],
            Op::Conv3d { x, w, b, .. } | Op::Linear { x, w, b } => vec![*x, *w, *b],
            Op::Relu(i) | Op::Sigmoid(i) | Op::GlobalAvgPool(i) | Op::Softmax(i) | Op::Sum(i) | Op::OneMinus(i) => vec![*i],
            Op::Add(a, b) | Op::Mul { a, b, .. } => vec![*a, *b],
            Op::ScaleChannels { x, s } => vec![*x, *s],
            Op::Concat(v) => v.clone(),
            Op::CrossEntropy { p, .. } | Op::Uncertainty { p, .. } => vec![*p],
            Op::WeightedSum(t) => t.iter().map(|&(i, _)| i).collect(),
        }
    }

    fn any_grad(&self, idx: &[usize]) -> bool {
        idx.iter().any(|&i| self.nodes[i].requires_grad)
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: fn(usize) -> Op<T>) -> Result<Var> {
        let i = self.idx(x)?;
        let src = &self.nodes[i].value;
        let out = Tensor { shape: src.shape.clone(), data: src.data.iter().map(|&v| f(v)).collect() };
        let rg = self.nodes[i].requires_grad;
        Ok(self.push(out, op(i), rg))
    }

    /// "Same"-padded dilated 3D convolution: `[Cin,Z,Y,X] -> [Cout,Z,Y,X]`.
    pub fn conv3d(&mut self, x: Var, weight: Var, bias: Var, dilation: usize) -> Result<Var> {
        let (xi, wi, bi) = (self.idx(x)?, self.idx(weight)?, self.idx(bias)?);
        let (xv, wv, bv) = (&self.nodes[xi].value, &self.nodes[wi].value, &self.nodes[bi].value);
        let geom = ConvGeom::new(&xv.shape, &wv.shape, &bv.shape, dilation)?;
        let data = conv::forward(&geom, &xv.data, &wv.data, &bv.data);
        let mut shape = xv.shape.clone();
        shape[0] = geom.cout;
        let rg = self.any_grad(&[xi, wi, bi]);
        Ok(self.push(Tensor { shape, data }, Op::Conv3d { x: xi, w: wi, b: bi, geom }, rg))
    }

    /// `max(x, 0)`; NaN propagates so a poisoned input cannot vanish silently.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| if v < T::zero() { T::zero() } else { v }, Op::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| T::one() / (T::one() + (-v).exp()), Op::Sigmoid)
    }

    pub fn one_minus(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| T::one() - v, Op::OneMinus)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (av, bv) = (&self.nodes[ai].value, &self.nodes[bi].value);
        if av.shape != bv.shape {
            return Err(Error::dim("add", format!("{:?} vs {:?}", av.shape, bv.shape)));
        }
        let data = av.data.iter().zip(&bv.data).map(|(&p, &q)| p + q).collect();
        let out = Tensor { shape: av.shape.clone(), data };
        let rg = self.any_grad(&[ai, bi]);
        Ok(self.push(out, Op::Add(ai, bi), rg))
    }

    /// Elementwise product. `b` may also be a single-channel field `[1, ...]`
    /// sharing `a`'s spatial extents, in which case it scales every channel.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (av, bv) = (&self.nodes[ai].value, &self.nodes[bi].value);
        let field = if av.shape == bv.shape {
            false
        } else if bv.shape.len() == av.shape.len() && bv.shape[0] == 1 && bv.shape[1..] == av.shape[1..]
        {
            true
        } else {
            return Err(Error::dim("mul", format!("cannot broadcast {:?} onto {:?}", bv.shape, av.shape)));
        };
        let data = if field {
            let n = av.spatial_len();
            av.data.chunks(n).flat_map(|ch| ch.iter().zip(&bv.data).map(|(&p, &q)| p * q)).collect()
        } else {
            av.data.iter().zip(&bv.data).map(|(&p, &q)| p * q).collect()
        };
        let out = Tensor { shape: av.shape.clone(), data };
        let rg = self.any_grad(&[ai, bi]);
        Ok(self.push(out, Op::Mul { a: ai, b: bi, field }, rg))
    }

    /// Scales channel `c` of `x` by `s[c]`.
    pub fn scale_channels(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xi, si) = (self.idx(x)?, self.idx(s)?);
        let (xv, sv) = (&self.nodes[xi].value, &self.nodes[si].value);
        if sv.shape != [xv.channels()] {
            return Err(Error::dim(
                "scale_channels",
                format!("scale {:?} vs {} channels", sv.shape, xv.channels()),
            ));
        }
        let n = xv.spatial_len();
        let data = xv
            .data
            .chunks(n)
            .zip(&sv.data)
            .flat_map(|(ch, &k)| ch.iter().map(move |&v| v * k))
            .collect();
        let out = Tensor { shape: xv.shape.clone(), data };
        let rg = self.any_grad(&[xi, si]);
        Ok(self.push(out, Op::ScaleChannels { x: xi, s: si }, rg))
    }

    /// Concatenation along the channel axis, in argument order.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::dim("concat", "no inputs"));
        }
        let idx = parts.iter().map(|&p| self.idx(p)).collect::<Result<Vec<_>>>()?;
        let spatial = self.nodes[idx[0]].value.shape[1..].to_vec();
        let mut channels = 0;
        for &i in &idx {
            let s = &self.nodes[i].value.shape;
            if s[1..] != spatial[..] {
                return Err(Error::dim("concat", format!("spatial {:?} vs {:?}", &s[1..], spatial)));
            }
            channels += s[0];
        }
        let mut data = Vec::with_capacity(channels * spatial.iter().product::<usize>());
        for &i in &idx {
            data.extend_from_slice(&self.nodes[i].value.data);
        }
        let mut shape = vec![channels];
        shape.extend_from_slice(&spatial);
        let rg = self.any_grad(&idx);
        Ok(self.push(Tensor { shape, data }, Op::Concat(idx), rg))
    }

    /// Spatial mean per channel: `[C, ...] -> [C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let xv = &self.nodes[xi].value;
        let n = xv.spatial_len();
        let inv = T::one() / T::lit(n as f64);
        let data = xv.data.chunks(n).map(|ch| ch.iter().copied().sum::<T>() * inv).collect();
        let out = Tensor { shape: vec![xv.channels()], data };
        let rg = self.nodes[xi].requires_grad;
        Ok(self.push(out, Op::GlobalAvgPool(xi), rg))
    }

    /// Fully-connected map on a channel vector: `W [Cout, Cin] * x [Cin] + b`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xi, wi, bi) = (self.idx(x)?, self.idx(weight)?, self.idx(bias)?);
        let (xv, wv, bv) = (&self.nodes[xi].value, &self.nodes[wi].value, &self.nodes[bi].value);
        if xv.shape.len() != 1 || wv.shape.len() != 2 || wv.shape[1] != xv.shape[0] || bv.shape != [wv.shape[0]]
        {
            return Err(Error::dim(
                "linear",
                format!("x {:?}, weight {:?}, bias {:?}", xv.shape, wv.shape, bv.shape),
            ));
        }
        let cin = xv.shape[0];
        let data = wv
            .data
            .chunks(cin)
            .zip(&bv.data)
            .map(|(row, &b)| row.iter().zip(&xv.data).map(|(&w, &v)| w * v).sum::<T>() + b)
            .collect();
        let out = Tensor { shape: vec![wv.shape[0]], data };
        let rg = self.any_grad(&[xi, wi, bi]);
        Ok(self.push(out, Op::Linear { x: xi, w: wi, b: bi }, rg))
    }

    /// Softmax over the leading (class) axis, independently per voxel.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let xv = &self.nodes[xi].value;
        if xv.shape.len() < 2 || xv.channels() < 2 {
            return Err(Error::dim("softmax", format!("need [C>=2, ...], got {:?}", xv.shape)));
        }
        let out = Tensor { shape: xv.shape.clone(), data: softmax_classes(&xv.data, xv.channels()) };
        let rg = self.nodes[xi].requires_grad;
        Ok(self.push(out, Op::Softmax(xi), rg))
    }

    /// Mean over voxels of `-ln max(p[label], eps)`.
    pub fn cross_entropy(&mut self, prob: Var, labels: &[u8], eps: T) -> Result<Var> {
        let pi = self.idx(prob)?;
        let pv = &self.nodes[pi].value;
        let c = pv.channels();
        let n = pv.spatial_len();
        if labels.len() != n {
            return Err(Error::dim(
                "cross_entropy",
                format!("{} labels for {} voxels", labels.len(), n),
            ));
        }
        if let Some(v) = labels.iter().position(|&l| l as usize >= c) {
            return Err(Error::LabelOutOfRange {
                label: labels[v] as u32,
                voxel: unravel(v, pv.spatial()),
                classes: c,
            });
        }
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(v, &l)| {
                // Not `max`: a NaN probability must poison the loss, not become eps.
                let p = pv.data[l as usize * n + v];
                -(if p < eps { eps } else { p }).ln().as_f64()
            })
            .sum();
        let out = Tensor::scalar(T::lit(total / n as f64));
        let rg = self.nodes[pi].requires_grad;
        Ok(self.push(out, Op::CrossEntropy { p: pi, labels: labels.to_vec(), eps }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let out = Tensor::scalar(self.nodes[xi].value.sum());
        let rg = self.nodes[xi].requires_grad;
        Ok(self.push(out, Op::Sum(xi), rg))
    }

    /// `Σ w_i x_i` over same-shape inputs.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        if terms.is_empty() {
            return Err(Error::dim("weighted_sum", "no terms"));
        }
        let idx = terms.iter().map(|&(v, w)| Ok((self.idx(v)?, w))).collect::<Result<Vec<_>>>()?;
        let shape = self.nodes[idx[0].0].value.shape.clone();
        let mut data = vec![T::zero(); self.nodes[idx[0].0].value.len()];
        for &(i, w) in &idx {
            let v = &self.nodes[i].value;
            if v.shape != shape {
                return Err(Error::dim("weighted_sum", format!("{:?} vs {:?}", v.shape, shape)));
            }
            for (d, &x) in data.iter_mut().zip(&v.data) {
                *d += w * x;
            }
        }
        let rg = idx.iter().any(|&(i, w)| w != T::zero() && self.nodes[i].requires_grad);
        Ok(self.push(Tensor { shape, data }, Op::WeightedSum(idx), rg))
    }

    /// Differentiable per-voxel prediction uncertainty `[C, ...] -> [1, ...]`.
    /// Values follow [`crate::fusion::uncertainty_value`].
    pub fn uncertainty(&mut self, prob: Var, eps: T) -> Result<Var> {
        let pi = self.idx(prob)?;
        let pv = &self.nodes[pi].value;
        let out = crate::fusion::uncertainty_map(pv, eps)?;
        let rg = self.nodes[pi].requires_grad;
        Ok(self.push(out, Op::Uncertainty { p: pi, eps }, rg))
    }

    /// Reverse sweep from a scalar `loss`. May run once per tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        let li = self.idx(loss)?;
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if !self.nodes[li].value.is_scalar() {
            return Err(Error::NonScalarLoss(self.nodes[li].value.shape.clone()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[li] = Some(Tensor::full(self.nodes[li].value.shape.clone(), T::one()));
        for i in (0..=li).rev() {
            if !self.nodes[i].requires_grad {
                grads[i] = None;
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
        }
        Ok(Gradients { tape: self.id, grads })
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let nodes = &self.nodes;
        let y = &nodes[i].value;
        let wants = |j: usize| nodes[j].requires_grad;
        // Gradient buffer for input `j`, created zeroed on first use.
        fn slot<'a, T: Real>(grads: &'a mut [Option<Tensor<T>>], nodes: &[Node<T>], j: usize) -> &'a mut [T] {
            grads[j]
                .get_or_insert_with(|| Tensor::zeros(nodes[j].value.shape.clone()))
                .data_mut()
        }
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Conv3d { x, w, b, geom } => {
                let (x, w, b) = (*x, *w, *b);
                let mut gx = wants(x).then(|| grads[x].take().unwrap_or_else(|| Tensor::zeros(nodes[x].value.shape.clone())));
                let mut gw = wants(w).then(|| grads[w].take().unwrap_or_else(|| Tensor::zeros(nodes[w].value.shape.clone())));
                let mut gb = wants(b).then(|| grads[b].take().unwrap_or_else(|| Tensor::zeros(nodes[b].value.shape.clone())));
                conv::backward(
                    geom,
                    &nodes[x].value.data,
                    &nodes[w].value.data,
                    &g.data,
                    gx.as_mut().map(|t| t.data_mut()),
                    gw.as_mut().map(|t| t.data_mut()),
                    gb.as_mut().map(|t| t.data_mut()),
                );
                for (j, t) in [(x, gx), (w, gw), (b, gb)] {
                    if let Some(t) = t {
                        match &mut grads[j] {
                            // x, w and b may alias the same node; merge instead of overwrite.
                            Some(existing) => add_into(existing.data_mut(), &t.data),
                            None => grads[j] = Some(t),
                        }
                    }
                }
            }
            Op::Relu(x) => {
                let gx = slot(grads, nodes, *x);
                for ((d, &gy), &yv) in gx.iter_mut().zip(&g.data).zip(&y.data) {
                    if yv > T::zero() {
                        *d += gy;
                    }
                }
            }
            Op::Sigmoid(x) => {
                let gx = slot(grads, nodes, *x);
                for ((d, &gy), &s) in gx.iter_mut().zip(&g.data).zip(&y.data) {
                    *d += gy * s * (T::one() - s);
                }
            }
            Op::OneMinus(x) => {
                for (d, &gy) in slot(grads, nodes, *x).iter_mut().zip(&g.data) {
                    *d -= gy;
                }
            }
            Op::Add(a, b) => {
                for j in [*a, *b] {
                    if wants(j) {
                        add_into(slot(grads, nodes, j), &g.data);
                    }
                }
            }
            Op::Mul { a, b, field } => {
                let (a, b) = (*a, *b);
                let (av, bv) = (&nodes[a].value, &nodes[b].value);
                let n = if *field { bv.len() } else { av.len() };
                if wants(a) {
                    let ga = slot(grads, nodes, a);
                    for (k, (d, &gy)) in ga.iter_mut().zip(&g.data).enumerate() {
                        *d += gy * bv.data[k % n];
                    }
                }
                if wants(b) {
                    let gb = slot(grads, nodes, b);
                    for (k, (&gy, &x)) in g.data.iter().zip(&av.data).enumerate() {
                        gb[k % n] += gy * x;
                    }
                }
            }
            Op::ScaleChannels { x, s } => {
                let (x, s) = (*x, *s);
                let (xv, sv) = (&nodes[x].value, &nodes[s].value);
                let n = xv.spatial_len();
                if wants(x) {
                    let gx = slot(grads, nodes, x);
                    for ((dch, gch), &k) in gx.chunks_mut(n).zip(g.data.chunks(n)).zip(&sv.data) {
                        for (d, &gy) in dch.iter_mut().zip(gch) {
                            *d += gy * k;
                        }
                    }
                }
                if wants(s) {
                    let gs = slot(grads, nodes, s);
                    for (c, (gch, xch)) in g.data.chunks(n).zip(xv.data.chunks(n)).enumerate() {
                        gs[c] += gch.iter().zip(xch).map(|(&a, &b)| a * b).sum::<T>();
                    }
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &j in parts {
                    let len = nodes[j].value.len();
                    if wants(j) {
                        add_into(slot(grads, nodes, j), &g.data[off..off + len]);
                    }
                    off += len;
                }
            }
            Op::GlobalAvgPool(x) => {
                let n = nodes[*x].value.spatial_len();
                let inv = T::one() / T::lit(n as f64);
                let gx = slot(grads, nodes, *x);
                for (dch, &gy) in gx.chunks_mut(n).zip(&g.data) {
                    let v = gy * inv;
                    for d in dch {
                        *d += v;
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (x, w, b) = (*x, *w, *b);
                let (xv, wv) = (&nodes[x].value, &nodes[w].value);
                let cin = xv.len();
                if wants(x) {
                    let wt = MatRef::row_major(&wv.data, wv.shape[0], cin).t();
                    let gv = MatRef::row_major(&g.data, g.len(), 1);
                    let gx = slot(grads, nodes, x);
                    gemm(T::one(), wt, gv, T::one(), gx, 1);
                }
                if wants(w) {
                    let gw = slot(grads, nodes, w);
                    for (row, &gy) in gw.chunks_mut(cin).zip(&g.data) {
                        for (d, &xv) in row.iter_mut().zip(&xv.data) {
                            *d += gy * xv;
                        }
                    }
                }
                if wants(b) {
                    add_into(slot(grads, nodes, b), &g.data);
                }
            }
            Op::Softmax(x) => {
                let c = y.channels();
                let n = y.spatial_len();
                let gx = slot(grads, nodes, *x);
                for v in 0..n {
                    let dot: T = (0..c).map(|k| g.data[k * n + v] * y.data[k * n + v]).sum();
                    for k in 0..c {
                        gx[k * n + v] += y.data[k * n + v] * (g.data[k * n + v] - dot);
                    }
                }
            }
            Op::CrossEntropy { p, labels, eps } => {
                let pv = &nodes[*p].value;
                let n = pv.spatial_len();
                let scale = g.item() / T::lit(n as f64);
                let gp = slot(grads, nodes, *p);
                for (v, &l) in labels.iter().enumerate() {
                    let k = l as usize * n + v;
                    if pv.data[k] > *eps {
                        gp[k] -= scale / pv.data[k];
                    }
                }
            }
            Op::Sum(x) => {
                let gy = g.item();
                for d in slot(grads, nodes, *x) {
                    *d += gy;
                }
            }
            Op::WeightedSum(terms) => {
                for &(j, w) in terms {
                    if wants(j) && w != T::zero() {
                        let gj = slot(grads, nodes, j);
                        for (d, &gy) in gj.iter_mut().zip(&g.data) {
                            *d += w * gy;
                        }
                    }
                }
            }
            Op::Uncertainty { p, eps } => {
                let pv = &nodes[*p].value;
                let c = pv.channels();
                let n = pv.spatial_len();
                let gp = slot(grads, nodes, *p);
                for v in 0..n {
                    let u = y.data[v];
                    // zero where U was pinned to 0 or clamped at 1
                    if u <= T::zero() || u >= T::one() {
                        continue;
                    }
                    for k in 0..c {
                        let q = pv.data[k * n + v];
                        if q > *eps {
                            gp[k * n + v] += g.data[v] * u / q;
                        }
                    }
                }
            }
        }
    }
}

/// Per-voxel softmax over `classes` channel blocks, stabilized by the voxel max.
pub(crate) fn softmax_classes<T: Real>(logits: &[T], classes: usize) -> Vec<T> {
    let n = logits.len() / classes;
    let mut out = vec![T::zero(); logits.len()];
    for v in 0..n {
        let mut m = T::neg_infinity();
        for k in 0..classes {
            m = m.max(logits[k * n + v]);
        }
        let mut z = T::zero();
        for k in 0..classes {
            let e = (logits[k * n + v] - m).exp();
            out[k * n + v] = e;
            z += e;
        }
        for k in 0..classes {
            out[k * n + v] /= z;
        }
    }
    out
}

/// Flat spatial index to coordinates.
pub(crate) fn unravel(mut v: usize, spatial: &[usize]) -> [usize; 3] {
    let mut out = [0; 3];
    let offset = 3usize.saturating_sub(spatial.len());
    for (a, &s) in spatial.iter().enumerate().rev() {
        if a + offset < 3 {
            out[a + offset] = v % s;
        }
        v /= s;
    }
    out
}
