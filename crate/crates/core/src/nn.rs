//! Parameterized building blocks: dense layers, batch norm, depthwise and
//! separable convolutions. Each block registers its tensors in a
//! [`ParamStore`] under a dotted name prefix and emits graph ops on demand.

use rand::Rng;

use crate::error::Result;
use crate::graph::{BnStats, Graph, Mode, NodeId};
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::tensor::Tensor;

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

/// Learnable per-channel scale/shift plus running statistics.
#[derive(Clone, Debug)]
pub struct BatchNormState {
    pub scale: ParamId,
    pub shift: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
    pub channels: usize,
}

impl BatchNormState {
    pub fn register(store: &mut ParamStore, prefix: &str, channels: usize) -> Result<Self> {
        Ok(BatchNormState {
            scale: store.register(format!("{prefix}.scale"), ParamKind::Trainable, Tensor::full(&[channels], 1.0))?,
            shift: store.register(format!("{prefix}.shift"), ParamKind::Trainable, Tensor::zeros(&[channels]))?,
            running_mean: store.register(format!("{prefix}.running_mean"), ParamKind::Buffer, Tensor::zeros(&[channels]))?,
            running_var: store.register(format!("{prefix}.running_var"), ParamKind::Buffer, Tensor::full(&[channels], 1.0))?,
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
            channels,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId, mode: Mode) -> Result<NodeId> {
        let scale = g.param(store, self.scale);
        let shift = g.param(store, self.shift);
        match mode {
            Mode::Train => g.batch_norm(
                x,
                scale,
                shift,
                BnStats::Batch {
                    running_mean: self.running_mean,
                    running_var: self.running_var,
                    momentum: self.momentum,
                },
                self.eps,
            ),
            Mode::Infer => {
                let mean = store.get(self.running_mean).value.data();
                let var = store.get(self.running_var).value.data();
                g.batch_norm(x, scale, shift, BnStats::Fixed { mean, var }, self.eps)
            }
        }
    }

    pub fn trainable_count(&self) -> usize {
        2 * self.channels
    }
}

/// Fully connected layer `x·W + b`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Dense {
    pub fn register<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, input: usize, output: usize, rng: &mut R) -> Result<Self> {
        let w = Tensor::glorot(&[input, output], input, output, rng);
        Ok(Dense {
            weight: store.register(format!("{prefix}.weight"), ParamKind::Trainable, w)?,
            bias: store.register(format!("{prefix}.bias"), ParamKind::Trainable, Tensor::zeros(&[output]))?,
            input,
            output,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(x, w, b)
    }

    pub fn trainable_count(&self) -> usize {
        self.input * self.output + self.output
    }
}

/// `FC → ELU → BN`, the unit every MLP in the operator is built from.
#[derive(Clone, Debug)]
pub struct DenseBlock {
    pub dense: Dense,
    pub bn: BatchNormState,
}

impl DenseBlock {
    pub fn register<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, input: usize, output: usize, rng: &mut R) -> Result<Self> {
        Ok(DenseBlock {
            dense: Dense::register(store, &format!("{prefix}.fc"), input, output, rng)?,
            bn: BatchNormState::register(store, &format!("{prefix}.bn"), output)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId, mode: Mode) -> Result<NodeId> {
        let h = self.dense.forward(g, store, x)?;
        let h = g.elu(h)?;
        self.bn.forward(g, store, h, mode)
    }

    pub fn trainable_count(&self) -> usize {
        self.dense.trainable_count() + self.bn.trainable_count()
    }
}

/// Depthwise matrix convolution weights `[R×C×F]`.
#[derive(Clone, Debug)]
pub struct Depthwise {
    pub weight: ParamId,
    pub rows: usize,
    pub cols: usize,
    pub filters: usize,
}

impl Depthwise {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        rows: usize,
        cols: usize,
        filters: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = Tensor::glorot(&[rows, cols, filters], rows, filters, rng);
        Ok(Depthwise {
            weight: store.register(format!("{prefix}.weight"), ParamKind::Trainable, w)?,
            rows,
            cols,
            filters,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = g.param(store, self.weight);
        g.depthwise(x, w)
    }

    pub fn trainable_count(&self) -> usize {
        self.rows * self.cols * self.filters
    }
}

/// Depth multiplier used when the caller does not pick one: `⌈c_out / c_in⌉`.
pub fn default_depth_multiplier(c_in: usize, c_out: usize) -> usize {
    c_out.div_ceil(c_in.max(1)).max(1)
}

/// Depthwise filtering over the K neighbor rows followed by a pointwise map.
#[derive(Clone, Debug)]
pub struct SeparableConv {
    pub depthwise: Depthwise,
    pub pointwise: ParamId,
    pub bias: ParamId,
    pub k: usize,
    pub c_in: usize,
    pub depth_multiplier: usize,
    pub c_out: usize,
}

impl SeparableConv {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        k: usize,
        c_in: usize,
        depth_multiplier: usize,
        c_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let depthwise = Depthwise::register(store, &format!("{prefix}.depthwise"), k, c_in, depth_multiplier, rng)?;
        let mid = c_in * depth_multiplier;
        let pw = Tensor::glorot(&[mid, c_out], mid, c_out, rng);
        Ok(SeparableConv {
            depthwise,
            pointwise: store.register(format!("{prefix}.pointwise"), ParamKind::Trainable, pw)?,
            bias: store.register(format!("{prefix}.bias"), ParamKind::Trainable, Tensor::zeros(&[c_out]))?,
            k,
            c_in,
            depth_multiplier,
            c_out,
        })
    }

    /// `f` is `[B×K×c_in]` (or `[K×c_in]`); the result is `[B×c_out]` (or `[1×c_out]`).
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, f: NodeId) -> Result<NodeId> {
        let mid = self.depthwise.forward(g, store, f)?;
        let rows = g.value(mid).len() / (self.c_in * self.depth_multiplier).max(1);
        let mid = g.reshape(mid, &[rows, self.c_in * self.depth_multiplier])?;
        let pw = g.param(store, self.pointwise);
        let b = g.param(store, self.bias);
        g.linear(mid, pw, b)
    }

    /// Depthwise plus pointwise weights, excluding the bias.
    pub fn core_count(&self) -> usize {
        self.k * self.c_in * self.depth_multiplier + self.c_in * self.depth_multiplier * self.c_out
    }

    pub fn trainable_count(&self) -> usize {
        self.core_count() + self.c_out
    }
}
