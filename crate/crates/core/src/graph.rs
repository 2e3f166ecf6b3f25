//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a tape: every op appends a node holding its value and the
//! information its backward rule needs. Graphs are rebuilt for each batch and
//! are confined to a single thread; parameters enter through [`Graph::param`]
//! as copies of the store's values, so a forward/backward pass never mutates
//! trainable values.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Training or inference behaviour for batch norm and dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

impl Mode {
    pub fn is_train(self) -> bool {
        self == Mode::Train
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul {
        a: NodeId,
        b: NodeId,
    },
    BatchedMatMul {
        a: NodeId,
        b: NodeId,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    AddBias {
        x: NodeId,
        bias: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        x: NodeId,
        factor: f64,
    },
    Elu {
        x: NodeId,
    },
    BatchNorm {
        x: NodeId,
        scale: NodeId,
        shift: NodeId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        training: bool,
    },
    Concat {
        a: NodeId,
        b: NodeId,
        c1: usize,
        c2: usize,
    },
    Reshape {
        x: NodeId,
    },
    Depthwise {
        x: NodeId,
        w: NodeId,
        batch: usize,
        r: usize,
        c: usize,
        f: usize,
    },
    GatherRows {
        x: NodeId,
        index: Vec<usize>,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Dropout {
        x: NodeId,
        mask: Vec<f64>,
    },
    Sum {
        x: NodeId,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    op: Op,
}

/// Pending running-statistic update produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

/// Running statistics handed to [`Graph::batch_norm`].
pub enum BnStats<'a> {
    /// Normalize with batch statistics and record an update for these buffers.
    Batch {
        running_mean: ParamId,
        running_var: ParamId,
        momentum: f64,
    },
    /// Normalize with fixed statistics.
    Fixed { mean: &'a [f64], var: &'a [f64] },
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
    bn_updates: Vec<BnUpdate>,
    check_finite: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Makes every op fail with [`Error::Numeric`] when it produces NaN/Inf.
    pub fn with_finite_checks(mut self) -> Self {
        self.check_finite = true;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<NodeId> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::Numeric(format!(
                "non-finite value produced by {:?}",
                std::mem::discriminant(&op)
            )));
        }
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad: false,
            op: Op::Leaf,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is computed by [`Graph::backward`].
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad: true,
            op: Op::Leaf,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// The node for a stored parameter; repeated calls share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        self.nodes.push(Node {
            value: store.get(id).value.clone(),
            grad: None,
            requires_grad: true,
            op: Op::Param,
        });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes.insert(id, n);
        n
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    /// Gradients of every parameter node reached by the last backward pass.
    pub fn param_grads(&self) -> Vec<(ParamId, &Tensor)> {
        let mut out: Vec<_> = self
            .param_nodes
            .iter()
            .filter_map(|(&pid, &nid)| self.nodes[nid.0].grad.as_ref().map(|g| (pid, g)))
            .collect();
        out.sort_by_key(|(pid, _)| *pid);
        out
    }

    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate> {
        std::mem::take(&mut self.bn_updates)
    }

    // ---- ops -----------------------------------------------------------

    /// 2-D matrix product `[m×k]·[k×n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != 2 || vb.rank() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(Error::dim("matmul", va.shape(), vb.shape()));
        }
        let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm_nn(va.data(), vb.data(), &mut out, m, k, n);
        let value = Tensor::new(&[m, n], out)?;
        let rg = self.rg(&[a, b]);
        self.push(value, Op::MatMul { a, b }, rg)
    }

    /// Independent products `[B×m×k]·[B×k×n] -> [B×m×n]`.
    pub fn batched_matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != 3 || vb.rank() != 3 || va.shape()[0] != vb.shape()[0] || va.shape()[2] != vb.shape()[1] {
            return Err(Error::dim("batched_matmul", va.shape(), vb.shape()));
        }
        let (batch, m, k, n) = (va.shape()[0], va.shape()[1], va.shape()[2], vb.shape()[2]);
        let mut out = vec![0.0; batch * m * n];
        for i in 0..batch {
            gemm_nn(
                &va.data()[i * m * k..(i + 1) * m * k],
                &vb.data()[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let value = Tensor::new(&[batch, m, n], out)?;
        let rg = self.rg(&[a, b]);
        self.push(value, Op::BatchedMatMul { a, b, batch, m, k, n }, rg)
    }

    /// Adds a per-column bias vector to every row.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let c = *vx.shape().last().unwrap_or(&1);
        if vb.len() != c {
            return Err(Error::dim("add_bias", vx.shape(), vb.shape()));
        }
        let mut out = vx.clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, b) in row.iter_mut().zip(vb.data()) {
                *o += b;
            }
        }
        let rg = self.rg(&[x, bias]);
        self.push(out, Op::AddBias { x, bias }, rg)
    }

    /// `x·w + b` for `x [rows×cin]`, `w [cin×cout]`, `b [cout]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let h = self.matmul(x, w)?;
        self.add_bias(h, b)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::dim("add", va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(va.shape(), data)?;
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Add { a, b }, rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::dim("mul", va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(va.shape(), data)?;
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Mul { a, b }, rg)
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        let value = self.value(x).map(|v| v * factor);
        let rg = self.rg(&[x]);
        self.push(value, Op::Scale { x, factor }, rg)
    }

    /// ELU with α = 1.
    pub fn elu(&mut self, x: NodeId) -> Result<NodeId> {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { v.exp_m1() });
        let rg = self.rg(&[x]);
        self.push(value, Op::Elu { x }, rg)
    }

    /// Per-channel batch normalization over all leading dimensions of `x`.
    pub fn batch_norm(&mut self, x: NodeId, scale: NodeId, shift: NodeId, stats: BnStats<'_>, eps: f64) -> Result<NodeId> {
        let vx = self.value(x);
        let c = *vx.shape().last().ok_or_else(|| Error::dim("batch_norm", vx.shape(), &[1]))?;
        let rows = vx.len().checked_div(c).unwrap_or(0);
        if self.value(scale).len() != c || self.value(shift).len() != c {
            return Err(Error::dim("batch_norm", vx.shape(), self.value(scale).shape()));
        }
        if rows == 0 {
            return Err(Error::validation("batch_norm needs at least one row"));
        }
        let (mean, var, update) = match stats {
            BnStats::Batch {
                running_mean,
                running_var,
                momentum,
            } => {
                let mut mean = vec![0.0; c];
                for row in vx.data().chunks(c) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= rows as f64);
                let mut var = vec![0.0; c];
                for row in vx.data().chunks(c) {
                    for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= rows as f64);
                let upd = BnUpdate {
                    running_mean,
                    running_var,
                    momentum,
                    batch_mean: mean.clone(),
                    batch_var: var.clone(),
                };
                (mean, var, Some(upd))
            }
            BnStats::Fixed { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::dim("batch_norm", vx.shape(), &[mean.len()]));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v.max(0.0) + eps).sqrt()).collect();
        let mut xhat = vec![0.0; vx.len()];
        for (xr, hr) in vx.data().chunks(c).zip(xhat.chunks_mut(c)) {
            for j in 0..c {
                hr[j] = (xr[j] - mean[j]) * inv_std[j];
            }
        }
        let (vs, vb) = (self.value(scale).data(), self.value(shift).data());
        let mut out = vec![0.0; vx.len()];
        for (hr, or) in xhat.chunks(c).zip(out.chunks_mut(c)) {
            for j in 0..c {
                or[j] = hr[j] * vs[j] + vb[j];
            }
        }
        let value = Tensor::new(vx.shape(), out)?;
        let training = update.is_some();
        if let Some(u) = update {
            self.bn_updates.push(u);
        }
        let rg = self.rg(&[x, scale, shift]);
        self.push(
            value,
            Op::BatchNorm {
                x,
                scale,
                shift,
                xhat,
                inv_std,
                training,
            },
            rg,
        )
    }

    /// Concatenates along the last dimension; leading dimensions must agree.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape(), vb.shape());
        if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::dim("concat", sa, sb));
        }
        let c1 = sa[sa.len() - 1];
        let c2 = sb[sb.len() - 1];
        let rows: usize = sa[..sa.len() - 1].iter().product();
        let mut out = Vec::with_capacity(rows * (c1 + c2));
        for r in 0..rows {
            out.extend_from_slice(&va.data()[r * c1..(r + 1) * c1]);
            out.extend_from_slice(&vb.data()[r * c2..(r + 1) * c2]);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = c1 + c2;
        let value = Tensor::new(&shape, out)?;
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Concat { a, b, c1, c2 }, rg)
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        self.push(value, Op::Reshape { x }, rg)
    }

    /// Depthwise matrix convolution: `F` filters per column of each `R×C`
    /// matrix, `out[.., c·F + f] = Σ_r x[.., r, c] · w[r, c, f]`.
    ///
    /// `x` is `[R×C]` (result `[C·F]`) or `[B×R×C]` (result `[B×C·F]`).
    pub fn depthwise(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let (vx, vw) = (self.value(x), self.value(w));
        let (batch, r, c) = match vx.shape() {
            [r, c] => (1, *r, *c),
            [b, r, c] => (*b, *r, *c),
            s => return Err(Error::dim("depthwise", s, vw.shape())),
        };
        if vw.rank() != 3 || vw.shape()[0] != r || vw.shape()[1] != c {
            return Err(Error::dim("depthwise", vx.shape(), vw.shape()));
        }
        let f = vw.shape()[2];
        let cf = c * f;
        let mut out = vec![0.0; batch * cf];
        let (xd, wd) = (vx.data(), vw.data());
        for bi in 0..batch {
            let xm = &xd[bi * r * c..(bi + 1) * r * c];
            let om = &mut out[bi * cf..(bi + 1) * cf];
            for ri in 0..r {
                let xr = &xm[ri * c..(ri + 1) * c];
                let wr = &wd[ri * cf..(ri + 1) * cf];
                for ci in 0..c {
                    let xv = xr[ci];
                    if xv == 0.0 {
                        continue;
                    }
                    for (o, wv) in om[ci * f..(ci + 1) * f].iter_mut().zip(&wr[ci * f..(ci + 1) * f]) {
                        *o += xv * wv;
                    }
                }
            }
        }
        let shape: Vec<usize> = if vx.rank() == 2 { vec![cf] } else { vec![batch, cf] };
        let value = Tensor::new(&shape, out)?;
        let rg = self.rg(&[x, w]);
        self.push(value, Op::Depthwise { x, w, batch, r, c, f }, rg)
    }

    /// Selects rows of a 2-D tensor; gradients scatter-add back.
    pub fn gather_rows(&mut self, x: NodeId, index: &[usize]) -> Result<NodeId> {
        let vx = self.value(x);
        if vx.rank() != 2 {
            return Err(Error::dim("gather_rows", vx.shape(), &[2]));
        }
        let (n, c) = (vx.shape()[0], vx.shape()[1]);
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index {
            if i >= n {
                return Err(Error::validation(format!("gather index {i} out of range for {n} rows")));
            }
            out.extend_from_slice(&vx.data()[i * c..(i + 1) * c]);
        }
        let value = Tensor::new(&[index.len(), c], out)?;
        let rg = self.rg(&[x]);
        self.push(
            value,
            Op::GatherRows {
                x,
                index: index.to_vec(),
            },
            rg,
        )
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let vl = self.value(logits);
        if vl.rank() != 2 || vl.shape()[0] != labels.len() {
            return Err(Error::dim("softmax_cross_entropy", vl.shape(), &[labels.len()]));
        }
        let (b, c) = (vl.shape()[0], vl.shape()[1]);
        if b == 0 {
            return Err(Error::validation("softmax_cross_entropy on an empty batch"));
        }
        let mut probs = vec![0.0; b * c];
        let mut loss = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            if label >= c {
                return Err(Error::validation(format!("label {label} outside [0, {c})")));
            }
            let row = vl.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (p, &v) in probs[i * c..(i + 1) * c].iter_mut().zip(row) {
                *p = (v - max).exp();
                z += *p;
            }
            probs[i * c..(i + 1) * c].iter_mut().for_each(|p| *p /= z);
            loss += z.ln() + max - row[label];
        }
        let value = Tensor::scalar(loss / b as f64);
        let rg = self.rg(&[logits]);
        self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        )
    }

    /// Inverted dropout; identity in inference mode or at rate 0.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: NodeId, rate: f64, mode: Mode, rng: &mut R) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::validation(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !mode.is_train() || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let vx = self.value(x);
        let mask: Vec<f64> = (0..vx.len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = vx.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(vx.shape(), data)?;
        let rg = self.rg(&[x]);
        self.push(value, Op::Dropout { x, mask }, rg)
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        let rg = self.rg(&[x]);
        self.push(value, Op::Sum { x }, rg)
    }

    // ---- backward ------------------------------------------------------

    /// Reverse sweep from a scalar node; gradients replace any previous ones.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::dim("backward", self.value(loss).shape(), &[]));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
            self.nodes[i].grad = Some(Tensor::new(self.nodes[i].value.shape(), g)?);
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let needs = |id: NodeId| nodes[id.0].requires_grad;
        match &nodes[i].op {
            Op::Leaf | Op::Param => {}
            Op::MatMul { a, b } => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if needs(*a) {
                    gemm_nt(g, vb.data(), acc(grads, *a, m * k), m, k, n);
                }
                if needs(*b) {
                    gemm_tn(va.data(), g, acc(grads, *b, k * n), m, k, n);
                }
            }
            Op::BatchedMatMul { a, b, batch, m, k, n } => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (batch, m, k, n) = (*batch, *m, *k, *n);
                if needs(*a) {
                    let ga = acc(grads, *a, batch * m * k);
                    for bi in 0..batch {
                        gemm_nt(
                            &g[bi * m * n..(bi + 1) * m * n],
                            &vb.data()[bi * k * n..(bi + 1) * k * n],
                            &mut ga[bi * m * k..(bi + 1) * m * k],
                            m,
                            k,
                            n,
                        );
                    }
                }
                if needs(*b) {
                    let gb = acc(grads, *b, batch * k * n);
                    for bi in 0..batch {
                        gemm_tn(
                            &va.data()[bi * m * k..(bi + 1) * m * k],
                            &g[bi * m * n..(bi + 1) * m * n],
                            &mut gb[bi * k * n..(bi + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                }
            }
            Op::AddBias { x, bias } => {
                if needs(*x) {
                    add_into(acc(grads, *x, g.len()), g);
                }
                if needs(*bias) {
                    let c = nodes[bias.0].value.len();
                    let gb = acc(grads, *bias, c);
                    for row in g.chunks(c) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Add { a, b } => {
                for id in [a, b] {
                    if needs(*id) {
                        add_into(acc(grads, *id, g.len()), g);
                    }
                }
            }
            Op::Mul { a, b } => {
                let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                if needs(*a) {
                    let ga = acc(grads, *a, g.len());
                    for ((o, gv), bv) in ga.iter_mut().zip(g).zip(vb) {
                        *o += gv * bv;
                    }
                }
                if needs(*b) {
                    let gb = acc(grads, *b, g.len());
                    for ((o, gv), av) in gb.iter_mut().zip(g).zip(va) {
                        *o += gv * av;
                    }
                }
            }
            Op::Scale { x, factor } => {
                if needs(*x) {
                    for (o, gv) in acc(grads, *x, g.len()).iter_mut().zip(g) {
                        *o += gv * factor;
                    }
                }
            }
            Op::Elu { x } => {
                if needs(*x) {
                    let vx = nodes[x.0].value.data();
                    let gx = acc(grads, *x, g.len());
                    for ((o, gv), &xv) in gx.iter_mut().zip(g).zip(vx) {
                        *o += if xv > 0.0 { *gv } else { gv * xv.exp() };
                    }
                }
            }
            Op::BatchNorm {
                x,
                scale,
                shift,
                xhat,
                inv_std,
                training,
            } => {
                let c = inv_std.len();
                let rows = g.len() / c;
                let vs = nodes[scale.0].value.data();
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for (gr, hr) in g.chunks(c).zip(xhat.chunks(c)) {
                    for j in 0..c {
                        sum_g[j] += gr[j];
                        sum_gx[j] += gr[j] * hr[j];
                    }
                }
                if needs(*x) {
                    let gx = acc(grads, *x, g.len());
                    if *training {
                        let nrows = rows as f64;
                        for ((gr, hr), or) in g.chunks(c).zip(xhat.chunks(c)).zip(gx.chunks_mut(c)) {
                            for j in 0..c {
                                let k = vs[j] * inv_std[j] / nrows;
                                or[j] += k * (nrows * gr[j] - sum_g[j] - hr[j] * sum_gx[j]);
                            }
                        }
                    } else {
                        for (gr, or) in g.chunks(c).zip(gx.chunks_mut(c)) {
                            for j in 0..c {
                                or[j] += gr[j] * vs[j] * inv_std[j];
                            }
                        }
                    }
                }
                if needs(*scale) {
                    add_into(acc(grads, *scale, c), &sum_gx);
                }
                if needs(*shift) {
                    add_into(acc(grads, *shift, c), &sum_g);
                }
            }
            Op::Concat { a, b, c1, c2 } => {
                let (c1, c2) = (*c1, *c2);
                let w = c1 + c2;
                let rows = g.len() / w.max(1);
                if needs(*a) {
                    let ga = acc(grads, *a, rows * c1);
                    for r in 0..rows {
                        add_into(&mut ga[r * c1..(r + 1) * c1], &g[r * w..r * w + c1]);
                    }
                }
                if needs(*b) {
                    let gb = acc(grads, *b, rows * c2);
                    for r in 0..rows {
                        add_into(&mut gb[r * c2..(r + 1) * c2], &g[r * w + c1..(r + 1) * w]);
                    }
                }
            }
            Op::Reshape { x } => {
                if needs(*x) {
                    add_into(acc(grads, *x, g.len()), g);
                }
            }
            Op::Depthwise { x, w, batch, r, c, f } => {
                let (batch, r, c, f) = (*batch, *r, *c, *f);
                let cf = c * f;
                let (xd, wd) = (nodes[x.0].value.data(), nodes[w.0].value.data());
                if needs(*x) {
                    let gx = acc(grads, *x, batch * r * c);
                    for bi in 0..batch {
                        let gm = &g[bi * cf..(bi + 1) * cf];
                        for ri in 0..r {
                            let wr = &wd[ri * cf..(ri + 1) * cf];
                            let orow = &mut gx[(bi * r + ri) * c..(bi * r + ri + 1) * c];
                            for ci in 0..c {
                                orow[ci] += gm[ci * f..(ci + 1) * f]
                                    .iter()
                                    .zip(&wr[ci * f..(ci + 1) * f])
                                    .map(|(a, b)| a * b)
                                    .sum::<f64>();
                            }
                        }
                    }
                }
                if needs(*w) {
                    let gw = acc(grads, *w, r * cf);
                    for bi in 0..batch {
                        let gm = &g[bi * cf..(bi + 1) * cf];
                        let xm = &xd[bi * r * c..(bi + 1) * r * c];
                        for ri in 0..r {
                            let wrow = &mut gw[ri * cf..(ri + 1) * cf];
                            for ci in 0..c {
                                let xv = xm[ri * c + ci];
                                if xv == 0.0 {
                                    continue;
                                }
                                for (o, gv) in wrow[ci * f..(ci + 1) * f].iter_mut().zip(&gm[ci * f..(ci + 1) * f]) {
                                    *o += xv * gv;
                                }
                            }
                        }
                    }
                }
            }
            Op::GatherRows { x, index } => {
                if needs(*x) {
                    let vx = &nodes[x.0].value;
                    let c = vx.shape()[1];
                    let gx = acc(grads, *x, vx.len());
                    for (row, &src) in index.iter().enumerate() {
                        add_into(&mut gx[src * c..(src + 1) * c], &g[row * c..(row + 1) * c]);
                    }
                }
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                if needs(*logits) {
                    let b = labels.len();
                    let c = probs.len() / b;
                    let scale = g[0] / b as f64;
                    let gl = acc(grads, *logits, probs.len());
                    for (i, &label) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == label { 1.0 } else { 0.0 };
                            gl[i * c + j] += scale * (probs[i * c + j] - onehot);
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if needs(*x) {
                    for ((o, gv), m) in acc(grads, *x, g.len()).iter_mut().zip(g).zip(mask) {
                        *o += gv * m;
                    }
                }
            }
            Op::Sum { x } => {
                if needs(*x) {
                    let len = nodes[x.0].value.len();
                    acc(grads, *x, len).iter_mut().for_each(|o| *o += g[0]);
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut Vec<f64> {
    grads[id.0].get_or_insert_with(|| vec![0.0; len])
}
