//! The X-Conv operator.
//!
//! For a representative point `p` with K neighbors `P` (K×Dim) and their
//! features `F` (K×C_in), one X-Conv evaluation is
//!
//! 1. `P' = P - p`
//! 2. `F_δ = MLP_δ(P')`, applied row by row
//! 3. `F_* = [F_δ, F]`
//! 4. `X = MLP(P')`, a K×K matrix
//! 5. `F_X = X · F_*`
//! 6. `F_p = Conv(K, F_X)`, a separable convolution over the K rows
//!
//! Every entry point here is vectorized over a batch of M neighborhoods
//! that all share K; the single-neighborhood helpers wrap a batch of one.
//! The ablated variant drops steps 4–5 and convolves `F_*` directly.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::localize;
use crate::graph::{Graph, Mode, NodeId};
use crate::nn::{default_depth_multiplier, BatchNormState, Dense, DenseBlock, Depthwise, SeparableConv};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// How a layer chooses its representative points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    Random,
    Fps,
}

/// Whether the X-transformation is part of the operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Full,
    /// `F_p = Conv(K, F_*)`, no learned transformation.
    Ablated,
}

/// Hyperparameters of one X-Conv layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XConvSpec {
    pub k: usize,
    pub d: usize,
    pub n_out: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub c_delta: usize,
    pub with_global: bool,
    pub sampler: Sampler,
}

impl XConvSpec {
    /// A spec with the default lifted width and no global lift.
    pub fn new(k: usize, d: usize, n_out: usize, c_in: usize, c_out: usize) -> Self {
        XConvSpec {
            k,
            d,
            n_out,
            c_in,
            c_out,
            c_delta: Self::default_c_delta(c_in, c_out),
            with_global: false,
            sampler: Sampler::Random,
        }
    }

    /// `C_in / 4`, or `C_out / 4` for a featureless input, never below 1.
    pub fn default_c_delta(c_in: usize, c_out: usize) -> usize {
        if c_in > 0 {
            (c_in / 4).max(1)
        } else {
            (c_out / 4).max(1)
        }
    }

    pub fn with_global(mut self, on: bool) -> Self {
        self.with_global = on;
        self
    }

    pub fn with_c_delta(mut self, c_delta: usize) -> Self {
        self.c_delta = c_delta;
        self
    }

    pub fn with_sampler(mut self, sampler: Sampler) -> Self {
        self.sampler = sampler;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.d == 0 || self.c_out == 0 || self.c_delta == 0 {
            return Err(Error::config(format!(
                "x-conv layer needs k, d, c_out, c_delta ≥ 1 (got k={}, d={}, c_out={}, c_delta={})",
                self.k, self.d, self.c_out, self.c_delta
            )));
        }
        Ok(())
    }

    /// Channels of `F_*`.
    pub fn c_star(&self) -> usize {
        self.c_delta + self.c_in
    }

    pub fn depth_multiplier(&self) -> usize {
        default_depth_multiplier(self.c_star(), self.c_out)
    }

    /// Width of the global-position lift.
    pub fn c_global(&self) -> usize {
        (self.c_out / 4).max(1)
    }

    /// Channels the layer emits, including the global lift when enabled.
    pub fn out_channels(&self) -> usize {
        self.c_out + if self.with_global { self.c_global() } else { 0 }
    }
}

/// Closed-form trainable-scalar counts per sub-network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub mlp_delta: usize,
    pub mlp_x: usize,
    pub sep_conv: usize,
    pub output_bn: usize,
    pub mlp_g: usize,
    pub total: usize,
}

fn two_block_mlp(input: usize, width: usize) -> usize {
    (input * width + width + 2 * width) + (width * width + width + 2 * width)
}

/// Trainable scalars of the `K×K` transformation network for `k` neighbors in `dim` dimensions.
pub fn mlp_x_count(k: usize, dim: usize) -> usize {
    let kk = k * k;
    (dim * k * kk + kk) + 2 * kk + 2 * k * kk + 2 * 2 * kk
}

/// Parameter accounting for a layer; `dim` is the coordinate dimension.
pub fn count_params(spec: &XConvSpec, dim: usize, variant: Variant) -> ParamCount {
    let mlp_delta = two_block_mlp(dim, spec.c_delta);
    let mlp_x = match variant {
        Variant::Full => mlp_x_count(spec.k, dim),
        Variant::Ablated => 0,
    };
    let dm = spec.depth_multiplier();
    let cs = spec.c_star();
    let sep_conv = spec.k * cs * dm + cs * dm * spec.c_out + spec.c_out;
    let output_bn = 2 * spec.c_out;
    let mlp_g = if spec.with_global {
        two_block_mlp(dim, spec.c_global())
    } else {
        0
    };
    ParamCount {
        mlp_delta,
        mlp_x,
        sep_conv,
        output_bn,
        mlp_g,
        total: mlp_delta + mlp_x + sep_conv + output_bn + mlp_g,
    }
}

/// `FC(Dim·K, K²) → ELU → BN → DC → ELU → BN → DC → BN`, reshaped to K×K.
#[derive(Clone, Debug)]
pub struct XTransformParams {
    pub fc: Dense,
    pub bn_fc: BatchNormState,
    pub dc1: Depthwise,
    pub bn_dc1: BatchNormState,
    pub dc2: Depthwise,
    pub bn_dc2: BatchNormState,
    pub k: usize,
}

/// Registered parameters of one X-Conv layer.
#[derive(Clone, Debug)]
pub struct XConvParams {
    pub spec: XConvSpec,
    pub dim: usize,
    pub variant: Variant,
    pub mlp_delta: [DenseBlock; 2],
    pub mlp_x: Option<XTransformParams>,
    pub sep_conv: SeparableConv,
    pub output_bn: BatchNormState,
    pub mlp_g: Option<[DenseBlock; 2]>,
    prefix: String,
}

/// Graph handles produced by one batched evaluation.
#[derive(Clone, Copy, Debug)]
pub struct XConvOutput {
    /// `[M × out_channels]`
    pub features: NodeId,
    /// `[M × K × C*]`
    pub f_star: NodeId,
    /// `[M × K × K]`, absent for the ablated variant.
    pub x: Option<NodeId>,
    /// `[M × K × C*]`, absent for the ablated variant.
    pub f_x: Option<NodeId>,
}

/// M neighborhoods prepared for a batched evaluation.
#[derive(Clone, Debug)]
pub struct NeighborhoodBatch {
    pub m: usize,
    pub k: usize,
    pub dim: usize,
    /// Localized coordinates, `[M·K × dim]`, neighborhood-major.
    pub local: Tensor,
    /// Row of the input feature matrix for each of the M·K neighbors.
    pub feature_rows: Vec<usize>,
    /// Representative coordinates scaled for the global lift, `[M × dim]`.
    pub global: Tensor,
}

impl NeighborhoodBatch {
    /// Builds a batch from source coordinates and per-neighborhood index lists.
    ///
    /// `global_scale[i]` divides the i-th representative point before the global lift.
    pub fn gather(
        source: &[f64],
        dim: usize,
        reps: &[f64],
        neighbors: &[Vec<usize>],
        global_scale: &[f64],
    ) -> Result<Self> {
        let m = neighbors.len();
        let k = neighbors.first().map_or(0, Vec::len);
        if reps.len() != m * dim || global_scale.len() != m {
            return Err(Error::dim("neighborhood batch", &[reps.len(), global_scale.len()], &[m * dim, m]));
        }
        let mut local = Vec::with_capacity(m * k * dim);
        let mut rows = Vec::with_capacity(m * k);
        for (i, nb) in neighbors.iter().enumerate() {
            if nb.len() != k {
                return Err(Error::validation(format!("neighborhood {i} has {} neighbors, expected {k}", nb.len())));
            }
            let rep = &reps[i * dim..(i + 1) * dim];
            for &j in nb {
                let p = &source[j * dim..(j + 1) * dim];
                local.extend(p.iter().zip(rep).map(|(a, b)| a - b));
                rows.push(j);
            }
        }
        let global = reps
            .chunks(dim)
            .zip(global_scale)
            .flat_map(|(r, s)| r.iter().map(move |v| v / s))
            .collect();
        Ok(NeighborhoodBatch {
            m,
            k,
            dim,
            local: Tensor::new(&[m * k, dim], local)?,
            feature_rows: rows,
            global: Tensor::new(&[m, dim], global)?,
        })
    }

    /// One neighborhood given as explicit coordinates, features rows `0..K`.
    pub fn single(rep: &[f64], neighbors: &Tensor, global_scale: f64) -> Result<Self> {
        let k = neighbors.rows();
        let dim = neighbors.cols();
        let local = localize(neighbors, rep)?;
        Ok(NeighborhoodBatch {
            m: 1,
            k,
            dim,
            local,
            feature_rows: (0..k).collect(),
            global: Tensor::new(&[1, dim], rep.iter().map(|v| v / global_scale).collect())?,
        })
    }
}

impl XConvParams {
    /// Registers a layer's parameters under `prefix` (Glorot-initialized from `rng`).
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        spec: &XConvSpec,
        dim: usize,
        variant: Variant,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let cd = spec.c_delta;
        let mlp_delta = [
            DenseBlock::register(store, &format!("{prefix}.mlp_delta.0"), dim, cd, rng)?,
            DenseBlock::register(store, &format!("{prefix}.mlp_delta.1"), cd, cd, rng)?,
        ];
        let mlp_x = match variant {
            Variant::Full => {
                let k = spec.k;
                let kk = k * k;
                let p = format!("{prefix}.mlp_x");
                Some(XTransformParams {
                    fc: Dense::register(store, &format!("{p}.fc"), dim * k, kk, rng)?,
                    bn_fc: BatchNormState::register(store, &format!("{p}.fc.bn"), kk)?,
                    dc1: Depthwise::register(store, &format!("{p}.dc1"), k, k, k, rng)?,
                    bn_dc1: BatchNormState::register(store, &format!("{p}.dc1.bn"), kk)?,
                    dc2: Depthwise::register(store, &format!("{p}.dc2"), k, k, k, rng)?,
                    bn_dc2: BatchNormState::register(store, &format!("{p}.dc2.bn"), kk)?,
                    k,
                })
            }
            Variant::Ablated => None,
        };
        let sep_conv = SeparableConv::register(
            store,
            &format!("{prefix}.sep_conv"),
            spec.k,
            spec.c_star(),
            spec.depth_multiplier(),
            spec.c_out,
            rng,
        )?;
        let output_bn = BatchNormState::register(store, &format!("{prefix}.out.bn"), spec.c_out)?;
        let mlp_g = if spec.with_global {
            let cg = spec.c_global();
            Some([
                DenseBlock::register(store, &format!("{prefix}.mlp_g.0"), dim, cg, rng)?,
                DenseBlock::register(store, &format!("{prefix}.mlp_g.1"), cg, cg, rng)?,
            ])
        } else {
            None
        };
        Ok(XConvParams {
            spec: spec.clone(),
            dim,
            variant,
            mlp_delta,
            mlp_x,
            sep_conv,
            output_bn,
            mlp_g,
            prefix: prefix.to_string(),
        })
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    /// Lifts each localized point into `C_δ` channels: `[R × dim] -> [R × C_δ]`.
    pub fn lift_coords(&self, g: &mut Graph, store: &ParamStore, local: NodeId, mode: Mode) -> Result<NodeId> {
        let h = self.mlp_delta[0].forward(g, store, local, mode)?;
        self.mlp_delta[1].forward(g, store, h, mode)
    }

    /// Learns one K×K matrix per neighborhood from `[M·K × dim]` local coordinates.
    pub fn learn_x(&self, g: &mut Graph, store: &ParamStore, local: NodeId, mode: Mode) -> Result<NodeId> {
        let mx = self
            .mlp_x
            .as_ref()
            .ok_or_else(|| Error::State("ablated layer has no X-transformation".into()))?;
        let k = mx.k;
        let rows = g.value(local).rows();
        if !rows.is_multiple_of(k) {
            return Err(Error::dim("learn_x", g.value(local).shape(), &[k]));
        }
        let m = rows / k;
        let flat = g.reshape(local, &[m, k * self.dim])?;
        let h = mx.fc.forward(g, store, flat)?;
        let h = g.elu(h)?;
        let h = mx.bn_fc.forward(g, store, h, mode)?;
        let h = g.reshape(h, &[m, k, k])?;
        let h = mx.dc1.forward(g, store, h)?;
        let h = g.elu(h)?;
        let h = mx.bn_dc1.forward(g, store, h, mode)?;
        let h = g.reshape(h, &[m, k, k])?;
        let h = mx.dc2.forward(g, store, h)?;
        let h = mx.bn_dc2.forward(g, store, h, mode)?;
        g.reshape(h, &[m, k, k])
    }

    /// Separable convolution over the K rows of `[M × K × C*]`, then ELU and BN.
    pub fn convolve(&self, g: &mut Graph, store: &ParamStore, f: NodeId, mode: Mode) -> Result<NodeId> {
        let h = self.sep_conv.forward(g, store, f)?;
        let h = g.elu(h)?;
        self.output_bn.forward(g, store, h, mode)
    }

    /// `Conv(K, X · F_*)` for caller-supplied `X` (`[M × K × K]`) and `F_*` (`[M × K × C*]`).
    pub fn convolve_with_x(&self, g: &mut Graph, store: &ParamStore, x: NodeId, f_star: NodeId, mode: Mode) -> Result<NodeId> {
        let fx = g.batched_matmul(x, f_star)?;
        self.convolve(g, store, fx, mode)
    }

    /// Evaluates the operator on a batch of neighborhoods.
    ///
    /// `features` is the `[N_prev × C_in]` input feature node (None when `C_in = 0`).
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        batch: &NeighborhoodBatch,
        features: Option<NodeId>,
        mode: Mode,
    ) -> Result<XConvOutput> {
        self.forward_variant(g, store, batch, features, mode, self.variant)
    }

    /// As [`forward`](Self::forward) but skipping the learned transformation, whatever the layer variant.
    pub fn forward_ablated(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        batch: &NeighborhoodBatch,
        features: Option<NodeId>,
        mode: Mode,
    ) -> Result<XConvOutput> {
        self.forward_variant(g, store, batch, features, mode, Variant::Ablated)
    }

    fn forward_variant(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        batch: &NeighborhoodBatch,
        features: Option<NodeId>,
        mode: Mode,
        variant: Variant,
    ) -> Result<XConvOutput> {
        let spec = &self.spec;
        if batch.k != spec.k {
            return Err(Error::validation(format!("neighborhood has {} points, layer expects k = {}", batch.k, spec.k)));
        }
        if batch.dim != self.dim {
            return Err(Error::dim("xconv coordinates", &[batch.dim], &[self.dim]));
        }
        let (m, k) = (batch.m, batch.k);
        let local = g.constant(batch.local.clone());
        let f_delta = self.lift_coords(g, store, local, mode)?;
        let f_star = match (features, spec.c_in) {
            (None, 0) => f_delta,
            (Some(f), c) if g.value(f).cols() == c && g.value(f).rank() == 2 => {
                let gathered = g.gather_rows(f, &batch.feature_rows)?;
                g.concat(f_delta, gathered)?
            }
            (Some(f), c) => {
                return Err(Error::validation(format!(
                    "feature shape {:?} does not match layer c_in = {c}",
                    g.value(f).shape()
                )))
            }
            (None, c) => return Err(Error::validation(format!("layer expects {c} feature channels, got none"))),
        };
        let f_star = g.reshape(f_star, &[m, k, spec.c_star()])?;
        let (x, f_x, conv) = match variant {
            Variant::Full => {
                let x = self.learn_x(g, store, local, mode)?;
                let fx = g.batched_matmul(x, f_star)?;
                let conv = self.convolve(g, store, fx, mode)?;
                (Some(x), Some(fx), conv)
            }
            Variant::Ablated => (None, None, self.convolve(g, store, f_star, mode)?),
        };
        let out = match &self.mlp_g {
            Some(blocks) => {
                let gl = g.constant(batch.global.clone());
                let h = blocks[0].forward(g, store, gl, mode)?;
                let h = blocks[1].forward(g, store, h, mode)?;
                g.concat(conv, h)?
            }
            None => conv,
        };
        Ok(XConvOutput {
            features: out,
            f_star,
            x,
            f_x,
        })
    }

    /// Single-neighborhood evaluation; returns a `[out_channels]` vector node.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_single(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        rep: &[f64],
        neighbors: &Tensor,
        features: Option<NodeId>,
        global_scale: f64,
        mode: Mode,
    ) -> Result<NodeId> {
        let batch = NeighborhoodBatch::single(rep, neighbors, global_scale)?;
        let out = self.forward(g, store, &batch, features, mode)?;
        let c = self.spec.out_channels();
        g.reshape(out.features, &[c])
    }

    /// Sets the transformation network so that it emits the identity for any input.
    pub fn force_identity_x(&self, store: &mut ParamStore) -> Result<()> {
        let mx = self
            .mlp_x
            .as_ref()
            .ok_or_else(|| Error::State("ablated layer has no X-transformation".into()))?;
        for id in [mx.fc.weight, mx.fc.bias, mx.dc1.weight, mx.dc2.weight] {
            store.get_mut(id).value.data_mut().fill(0.0);
        }
        store.get_mut(mx.bn_dc2.scale).value.data_mut().fill(0.0);
        let eye = Tensor::eye(mx.k);
        store.get_mut(mx.bn_dc2.shift).value.data_mut().copy_from_slice(eye.data());
        Ok(())
    }

    /// Trainable scalars registered by this layer.
    pub fn registered_count(&self, store: &ParamStore) -> usize {
        store.trainable_scalars_under(&format!("{}.", self.prefix))
    }

    pub fn count(&self) -> ParamCount {
        count_params(&self.spec, self.dim, self.variant)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_c_delta_rule() {
        assert_eq!(XConvSpec::default_c_delta(16, 48), 4);
        assert_eq!(XConvSpec::default_c_delta(0, 48), 12);
        assert_eq!(XConvSpec::default_c_delta(2, 3), 1);
        assert_eq!(XConvSpec::default_c_delta(0, 2), 1);
    }

    #[test]
    fn sep_conv_closed_form() {
        let spec = XConvSpec::new(8, 1, 32, 16, 48).with_c_delta(4);
        assert_eq!(spec.depth_multiplier(), 3);
        let c = count_params(&spec, 3, Variant::Full);
        assert_eq!(c.sep_conv - spec.c_out, 3360);
    }

    #[test]
    fn mlp_x_is_cubic() {
        // depthwise stages alone: 2·K³
        let k = 8;
        let fc_and_bn = 3 * k * k * k + k * k + 3 * 2 * k * k;
        assert_eq!(mlp_x_count(k, 3) - fc_and_bn, 1024);
    }

    #[test]
    fn registered_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (spec, dim, variant) in [
            (XConvSpec::new(8, 1, 32, 0, 32), 3, Variant::Full),
            (XConvSpec::new(12, 2, 16, 32, 64).with_global(true), 3, Variant::Full),
            (XConvSpec::new(6, 1, 8, 10, 7), 2, Variant::Ablated),
        ] {
            let mut store = ParamStore::new();
            let p = XConvParams::register(&mut store, "l", &spec, dim, variant, &mut rng).unwrap();
            assert_eq!(p.registered_count(&store), p.count().total);
            assert_eq!(store.trainable_scalars(), p.count().total);
        }
    }

    #[test]
    fn rejects_feature_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut store = ParamStore::new();
        let spec = XConvSpec::new(4, 1, 1, 3, 8);
        let p = XConvParams::register(&mut store, "l", &spec, 3, Variant::Full, &mut rng).unwrap();
        let nb = Tensor::glorot(&[4, 3], 1, 1, &mut rng);
        let mut g = Graph::new();
        let wrong = g.constant(Tensor::zeros(&[4, 2]));
        let err = p.forward_single(&mut g, &store, &[0.0; 3], &nb, Some(wrong), 1.0, Mode::Infer);
        assert!(matches!(err, Err(Error::Validation(_))));
        let err = p.forward_single(&mut g, &store, &[0.0; 3], &nb, None, 1.0, Mode::Infer);
        assert!(matches!(err, Err(Error::Validation(_))));
        let short = Tensor::glorot(&[3, 3], 1, 1, &mut rng);
        let f = g.constant(Tensor::zeros(&[3, 3]));
        assert!(p.forward_single(&mut g, &store, &[0.0; 3], &short, Some(f), 1.0, Mode::Infer).is_err());
    }

    #[test]
    fn learn_x_shape_for_small_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for k in 1..5 {
            let mut store = ParamStore::new();
            let spec = XConvSpec::new(k, 1, 1, 0, 4);
            let p = XConvParams::register(&mut store, "l", &spec, 3, Variant::Full, &mut rng).unwrap();
            let mut g = Graph::new();
            let local = g.constant(Tensor::glorot(&[3 * k, 3], 1, 1, &mut rng));
            let x = p.learn_x(&mut g, &store, local, Mode::Train).unwrap();
            assert_eq!(g.value(x).shape(), &[3, k, k]);
        }
    }
}
