//! Classification and segmentation networks assembled from X-Conv layers.
//!
//! A network walks a list of layers. Conv layers pick representative points
//! from the previous level (random downsampling or farthest point sampling)
//! and aggregate neighborhoods into them. DeConv layers take their
//! representative points from an earlier level (the *mirror*), gather
//! neighbors from the coarser current level, and, with skip links on,
//! concatenate the mirror level's features onto their output.
//!
//! Levels are numbered from the input: level 0 is the input cloud and level
//! `i` is the output of the i-th conv layer.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dilated_sample_coords, farthest_point_sample_from, random_downsample, receptive_field, PointSet};
use crate::graph::{Graph, Mode, NodeId};
use crate::nn::{Dense, DenseBlock};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::xconv::{count_params, NeighborhoodBatch, ParamCount, Sampler, Variant, XConvParams, XConvSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Segmentation,
}

/// One layer as written in a configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub k: usize,
    #[serde(default = "one")]
    pub d: usize,
    /// Representative point count for conv layers; ignored for deconv layers.
    #[serde(default)]
    pub n_out: usize,
    pub c_out: usize,
    #[serde(default)]
    pub c_delta: Option<usize>,
    #[serde(default)]
    pub with_global: bool,
    #[serde(default)]
    pub sampler: Option<Sampler>,
    /// Level whose points this deconv layer outputs on; `None` marks a conv layer.
    #[serde(default)]
    pub mirror: Option<usize>,
}

fn one() -> usize {
    1
}

fn default_dropout() -> f64 {
    0.5
}

fn default_true() -> bool {
    true
}

impl LayerSpec {
    pub fn conv(k: usize, d: usize, n_out: usize, c_out: usize) -> Self {
        LayerSpec {
            k,
            d,
            n_out,
            c_out,
            c_delta: None,
            with_global: false,
            sampler: None,
            mirror: None,
        }
    }

    pub fn deconv(k: usize, d: usize, c_out: usize, mirror: usize) -> Self {
        LayerSpec {
            mirror: Some(mirror),
            ..Self::conv(k, d, 0, c_out)
        }
    }

    pub fn global(mut self) -> Self {
        self.with_global = true;
        self
    }

    pub fn is_deconv(&self) -> bool {
        self.mirror.is_some()
    }
}

/// Fully connected head: hidden `FC → ELU → BN` blocks, dropout, final FC.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    #[serde(default)]
    pub widths: Vec<usize>,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
}

impl Default for HeadSpec {
    fn default() -> Self {
        HeadSpec {
            widths: Vec::new(),
            dropout: default_dropout(),
        }
    }
}

/// Complete description of a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub task: Task,
    #[serde(default = "three")]
    pub dim: usize,
    #[serde(default)]
    pub input_channels: usize,
    /// Nominal input point count used for validation and receptive-field accounting.
    pub input_points: usize,
    pub num_classes: usize,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub head: HeadSpec,
    #[serde(default = "default_true")]
    pub skip_links: bool,
    #[serde(default = "full_variant")]
    pub variant: Variant,
}

fn three() -> usize {
    3
}

fn full_variant() -> Variant {
    Variant::Full
}

/// A layer after channel and point-count resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedLayer {
    pub xconv: XConvSpec,
    pub mirror: Option<usize>,
    /// Nominal point count of the level neighbors are drawn from.
    pub n_prev: usize,
    /// Channels after the skip link (if any).
    pub out_width: usize,
}

impl NetworkSpec {
    /// Validates the description and fills in input channels, point counts and default samplers.
    pub fn resolve(&self) -> Result<Vec<ResolvedLayer>> {
        if self.layers.is_empty() {
            return Err(Error::config("network needs at least one layer"));
        }
        if self.dim == 0 || self.num_classes == 0 || self.input_points == 0 {
            return Err(Error::config("dim, num_classes and input_points must be ≥ 1"));
        }
        if !(0.0..1.0).contains(&self.head.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.head.dropout)));
        }
        let default_sampler = match self.task {
            Task::Classification => Sampler::Random,
            Task::Segmentation => Sampler::Fps,
        };
        // (point count, channels) per level
        let mut levels = vec![(self.input_points, self.input_channels)];
        let mut cur = (self.input_points, self.input_channels);
        let mut seen_deconv = false;
        let mut last_mirror = usize::MAX;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let n_prev = cur.0;
            if l.k * l.d > n_prev {
                return Err(Error::config(format!(
                    "layer {i}: k·d = {} exceeds previous point count {n_prev}",
                    l.k * l.d
                )));
            }
            let c_in = cur.1;
            let c_delta = l.c_delta.unwrap_or_else(|| XConvSpec::default_c_delta(c_in, l.c_out));
            let (n_out, mirror_width) = match l.mirror {
                None => {
                    if seen_deconv {
                        return Err(Error::config(format!("layer {i}: conv layer after a deconv layer")));
                    }
                    if l.n_out == 0 {
                        return Err(Error::config(format!("layer {i}: conv layer needs n_out ≥ 1")));
                    }
                    (l.n_out.min(n_prev), 0)
                }
                Some(m) => {
                    seen_deconv = true;
                    if self.task != Task::Segmentation {
                        return Err(Error::config(format!("layer {i}: deconv layers need a segmentation task")));
                    }
                    if m >= levels.len() || m >= last_mirror {
                        return Err(Error::config(format!(
                            "layer {i}: mirror level {m} must name an earlier, finer conv level than the previous deconv"
                        )));
                    }
                    last_mirror = m;
                    let (n, c) = levels[m];
                    if n < n_prev {
                        return Err(Error::config(format!("layer {i}: deconv would shrink {n_prev} points to {n}")));
                    }
                    (n, if self.skip_links { c } else { 0 })
                }
            };
            let xconv = XConvSpec {
                k: l.k,
                d: l.d,
                n_out,
                c_in,
                c_out: l.c_out,
                c_delta,
                with_global: l.with_global,
                sampler: l.sampler.unwrap_or(default_sampler),
            };
            xconv.validate()?;
            if xconv.with_global && receptive_field(l.k, l.d, n_prev) >= 1.0 {
                return Err(Error::config(format!(
                    "layer {i}: global lift requires receptive field < 1 (k·d/n_prev = {}·{}/{n_prev})",
                    l.k, l.d
                )));
            }
            let out_width = xconv.out_channels() + mirror_width;
            cur = (n_out, out_width);
            if l.mirror.is_none() {
                levels.push(cur);
            }
            out.push(ResolvedLayer {
                xconv,
                mirror: l.mirror,
                n_prev,
                out_width,
            });
        }
        if self.task == Task::Segmentation && out.last().and_then(|l| l.mirror) != Some(0) {
            return Err(Error::config("segmentation networks must end with a deconv layer mirroring level 0"));
        }
        Ok(out)
    }

    /// Receptive-field ratio of each conv layer, in order.
    pub fn receptive_fields(&self) -> Result<Vec<f64>> {
        Ok(self
            .resolve()?
            .iter()
            .filter(|l| l.mirror.is_none())
            .map(|l| receptive_field(l.xconv.k, l.xconv.d, l.n_prev))
            .collect())
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }
}

/// Checks the subvolume-supervision wiring: the last conv layer sees only
/// part of its input and lifts global coordinates.
pub fn subvolume_head(spec: &NetworkSpec) -> Result<NetworkSpec> {
    let resolved = spec.resolve()?;
    let last = resolved
        .iter()
        .rev()
        .find(|l| l.mirror.is_none())
        .ok_or_else(|| Error::config("no conv layer"))?;
    if !last.xconv.with_global {
        return Err(Error::config("subvolume supervision needs the global lift on the last conv layer"));
    }
    let rf = receptive_field(last.xconv.k, last.xconv.d, last.n_prev);
    if rf >= 1.0 {
        return Err(Error::config(format!("last conv layer receptive field {rf} must be < 1")));
    }
    Ok(spec.clone())
}

/// What one layer did for a batch, kept for analysis.
#[derive(Clone, Debug)]
pub struct LayerActivation {
    /// Representative coordinates per cloud, row-major `n_out × dim`.
    pub rep_coords: Vec<Vec<f64>>,
    /// For each cloud and representative point, the chosen neighbors as
    /// indices into that cloud's previous level.
    pub neighborhoods: Vec<Vec<Vec<usize>>>,
    /// Stacked previous-level coordinates the neighbors index into.
    pub source_coords: Vec<Vec<f64>>,
    /// Input feature node (rows stacked cloud-major), if the layer had features.
    pub input_features: Option<NodeId>,
    pub output: NodeId,
    pub f_star: NodeId,
    pub f_x: Option<NodeId>,
}

/// Result of a batched forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub logits: NodeId,
    /// Cloud index of each logits row.
    pub row_cloud: Vec<usize>,
    pub activations: Vec<LayerActivation>,
}

#[derive(Clone, Debug)]
struct Head {
    hidden: Vec<DenseBlock>,
    last: Dense,
    dropout: f64,
}

/// Closed-form parameter census of a network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct NetworkCount {
    pub layers: Vec<ParamCount>,
    pub head: usize,
    pub total: usize,
}

/// A network bound to parameters registered in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Network {
    pub spec: NetworkSpec,
    pub layers: Vec<XConvParams>,
    pub resolved: Vec<ResolvedLayer>,
    head: Head,
}

struct Level {
    coords: Vec<Vec<f64>>,
    features: Option<NodeId>,
}

impl Network {
    pub fn new<R: Rng + ?Sized>(spec: &NetworkSpec, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        let resolved = spec.resolve()?;
        let mut layers = Vec::with_capacity(resolved.len());
        for (i, r) in resolved.iter().enumerate() {
            layers.push(XConvParams::register(store, &format!("layer{i}"), &r.xconv, spec.dim, spec.variant, rng)?);
        }
        let mut width = resolved.last().map_or(0, |l| l.out_width);
        let mut hidden = Vec::new();
        for (j, &w) in spec.head.widths.iter().enumerate() {
            hidden.push(DenseBlock::register(store, &format!("head.{j}"), width, w, rng)?);
            width = w;
        }
        let last = Dense::register(store, "head.out", width, spec.num_classes, rng)?;
        Ok(Network {
            spec: spec.clone(),
            layers,
            resolved,
            head: Head {
                hidden,
                last,
                dropout: spec.head.dropout,
            },
        })
    }

    pub fn count_params(&self) -> NetworkCount {
        let layers: Vec<ParamCount> = self
            .resolved
            .iter()
            .map(|r| count_params(&r.xconv, self.spec.dim, self.spec.variant))
            .collect();
        let mut width = self.resolved.last().map_or(0, |l| l.out_width);
        let mut head = 0;
        for &w in &self.spec.head.widths {
            head += width * w + w + 2 * w;
            width = w;
        }
        head += width * self.spec.num_classes + self.spec.num_classes;
        let total = layers.iter().map(|c| c.total).sum::<usize>() + head;
        NetworkCount { layers, head, total }
    }

    /// Minimum point count a cloud needs for the first layer.
    pub fn min_points(&self) -> usize {
        self.resolved.first().map_or(1, |l| l.xconv.k * l.xconv.d)
    }

    /// Runs the network on a batch of clouds.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        clouds: &[PointSet],
        mode: Mode,
        rng: &mut R,
    ) -> Result<ForwardOutput> {
        let dim = self.spec.dim;
        if clouds.is_empty() {
            return Err(Error::validation("empty batch"));
        }
        for (ci, c) in clouds.iter().enumerate() {
            if c.dim() != dim {
                return Err(Error::validation(format!("cloud {ci} has dimension {}, network expects {dim}", c.dim())));
            }
            if c.channels() != self.spec.input_channels {
                return Err(Error::validation(format!(
                    "cloud {ci} has {} feature channels, network expects {}",
                    c.channels(),
                    self.spec.input_channels
                )));
            }
            if c.len() < self.min_points() {
                return Err(Error::validation(format!(
                    "cloud {ci} has {} points, first layer needs at least {}",
                    c.len(),
                    self.min_points()
                )));
            }
        }
        let radii: Vec<f64> = clouds
            .iter()
            .map(|c| {
                let r = c.bounding_radius();
                if r > 0.0 {
                    r
                } else {
                    1.0
                }
            })
            .collect();
        let input_features = if self.spec.input_channels > 0 {
            let mut data = Vec::new();
            for c in clouds {
                data.extend_from_slice(c.features().expect("checked channels").data());
            }
            let rows: usize = clouds.iter().map(PointSet::len).sum();
            Some(g.constant(Tensor::new(&[rows, self.spec.input_channels], data)?))
        } else {
            None
        };
        let mut levels = vec![Level {
            coords: clouds.iter().map(|c| c.coords().to_vec()).collect(),
            features: input_features,
        }];
        let mut cur_coords: Vec<Vec<f64>> = levels[0].coords.clone();
        let mut cur_features = input_features;
        let mut activations = Vec::with_capacity(self.layers.len());

        for (layer, res) in self.layers.iter().zip(&self.resolved) {
            let spec = &res.xconv;
            let mut rep_coords = Vec::with_capacity(clouds.len());
            let mut neighborhoods = Vec::with_capacity(clouds.len());
            let mut all_reps = Vec::new();
            let mut all_nbrs = Vec::new();
            let mut scales = Vec::new();
            let mut offset = 0;
            for (ci, src) in cur_coords.iter().enumerate() {
                let n_prev = src.len() / dim;
                if spec.k * spec.d > n_prev {
                    return Err(Error::validation(format!(
                        "cloud {ci}: k·d = {} exceeds {n_prev} available points",
                        spec.k * spec.d
                    )));
                }
                let reps: Vec<f64> = match res.mirror {
                    Some(m) => levels[m].coords[ci].clone(),
                    None => {
                        let n = spec.n_out.min(n_prev);
                        let idx = match spec.sampler {
                            Sampler::Random => random_downsample(&PointSet::new(dim, src.clone())?, n, rng)?,
                            Sampler::Fps => {
                                let seed = rng.random_range(0..n_prev);
                                farthest_point_sample_from(src, dim, n, seed)?
                            }
                        };
                        idx.iter().flat_map(|&i| src[i * dim..(i + 1) * dim].iter().copied()).collect()
                    }
                };
                let mut cloud_nbrs = Vec::with_capacity(reps.len() / dim);
                for rep in reps.chunks(dim) {
                    let nb = dilated_sample_coords(src, dim, rep, spec.k, spec.d, rng)?;
                    all_nbrs.push(nb.iter().map(|j| j + offset).collect::<Vec<_>>());
                    cloud_nbrs.push(nb);
                    scales.push(radii[ci]);
                }
                all_reps.extend_from_slice(&reps);
                offset += n_prev;
                rep_coords.push(reps);
                neighborhoods.push(cloud_nbrs);
            }
            let stacked: Vec<f64> = cur_coords.concat();
            let batch = NeighborhoodBatch::gather(&stacked, dim, &all_reps, &all_nbrs, &scales)?;
            let out = layer.forward(g, store, &batch, cur_features, mode)?;
            let mut features = out.features;
            if let Some(m) = res.mirror {
                if self.spec.skip_links {
                    if let Some(skip) = levels[m].features {
                        features = g.concat(features, skip)?;
                    }
                }
            }
            activations.push(LayerActivation {
                rep_coords: rep_coords.clone(),
                neighborhoods,
                source_coords: cur_coords.clone(),
                input_features: cur_features,
                output: features,
                f_star: out.f_star,
                f_x: out.f_x,
            });
            if res.mirror.is_none() {
                levels.push(Level {
                    coords: rep_coords.clone(),
                    features: Some(features),
                });
            }
            cur_coords = rep_coords;
            cur_features = Some(features);
        }

        let mut h = cur_features.expect("at least one layer");
        for block in &self.head.hidden {
            h = block.forward(g, store, h, mode)?;
        }
        h = g.dropout(h, self.head.dropout, mode, rng)?;
        let logits = self.head.last.forward(g, store, h)?;
        let row_cloud = cur_coords
            .iter()
            .enumerate()
            .flat_map(|(ci, c)| std::iter::repeat_n(ci, c.len() / dim))
            .collect();
        Ok(ForwardOutput {
            logits,
            row_cloud,
            activations,
        })
    }

    /// Labels for every logits row: the cloud label for classification,
    /// per-point labels for segmentation.
    pub fn row_labels(&self, clouds: &[PointSet], out: &ForwardOutput) -> Result<Vec<usize>> {
        match self.spec.task {
            Task::Classification => out
                .row_cloud
                .iter()
                .map(|&c| {
                    clouds[c]
                        .cloud_label
                        .ok_or_else(|| Error::validation(format!("cloud {c} has no label")))
                })
                .collect(),
            Task::Segmentation => {
                let mut labels = Vec::with_capacity(out.row_cloud.len());
                for (ci, c) in clouds.iter().enumerate() {
                    let l = c
                        .point_labels
                        .as_ref()
                        .ok_or_else(|| Error::validation(format!("cloud {ci} has no point labels")))?;
                    labels.extend_from_slice(l);
                }
                Ok(labels)
            }
        }
    }

    /// Mean softmax cross-entropy over every logits row.
    pub fn loss<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        clouds: &[PointSet],
        mode: Mode,
        rng: &mut R,
    ) -> Result<(NodeId, ForwardOutput)> {
        let out = self.forward(g, store, clouds, mode, rng)?;
        let labels = self.row_labels(clouds, &out)?;
        let loss = g.softmax_cross_entropy(out.logits, &labels)?;
        Ok((loss, out))
    }

    /// Per-representative-point logits `[R × classes]` for one cloud.
    pub fn forward_classify<R: Rng + ?Sized>(&self, store: &ParamStore, cloud: &PointSet, mode: Mode, rng: &mut R) -> Result<Tensor> {
        if self.spec.task != Task::Classification {
            return Err(Error::validation("forward_classify on a segmentation network"));
        }
        let mut g = Graph::new();
        let out = self.forward(&mut g, store, std::slice::from_ref(cloud), mode, rng)?;
        Ok(g.value(out.logits).clone())
    }

    /// Per-point logits `[N × classes]` for one cloud.
    pub fn forward_segment<R: Rng + ?Sized>(&self, store: &ParamStore, cloud: &PointSet, mode: Mode, rng: &mut R) -> Result<Tensor> {
        if self.spec.task != Task::Segmentation {
            return Err(Error::validation("forward_segment on a classification network"));
        }
        let mut g = Graph::new();
        let out = self.forward(&mut g, store, std::slice::from_ref(cloud), mode, rng)?;
        Ok(g.value(out.logits).clone())
    }

    /// Classification logits averaged over each cloud's representative points, `[B × classes]`.
    pub fn predict_classes<R: Rng + ?Sized>(&self, store: &ParamStore, clouds: &[PointSet], rng: &mut R) -> Result<Tensor> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, store, clouds, Mode::Infer, rng)?;
        average_rows(g.value(out.logits), &out.row_cloud, clouds.len())
    }

    /// Aggregated per-point predictions over `passes` shuffled evaluations.
    pub fn predict_multipass<R: Rng + ?Sized>(
        &self,
        store: &ParamStore,
        cloud: &PointSet,
        passes: usize,
        rng: &mut R,
    ) -> Result<MultipassPrediction> {
        if passes == 0 {
            return Err(Error::validation("need at least one pass"));
        }
        let mut results = Vec::with_capacity(passes);
        for _ in 0..passes {
            results.push(self.segment_pass(store, cloud, rng)?);
        }
        MultipassPrediction::aggregate(&results, cloud.len(), self.spec.num_classes)
    }

    /// One shuffled pass: the cloud is split into chunks of the nominal input
    /// size (the last chunk topped up with random other points) so every
    /// point is evaluated at least once.
    pub fn segment_pass<R: Rng + ?Sized>(&self, store: &ParamStore, cloud: &PointSet, rng: &mut R) -> Result<PassLogits> {
        if self.spec.task != Task::Segmentation {
            return Err(Error::validation("multipass prediction needs a segmentation network"));
        }
        let n = cloud.len();
        let chunk = self.spec.input_points.min(n).max(self.min_points());
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut chunks: Vec<Vec<usize>> = order.chunks(chunk).map(<[usize]>::to_vec).collect();
        if let Some(last) = chunks.last_mut() {
            while last.len() < chunk.min(n) {
                let extra = rng.random_range(0..n);
                if !last.contains(&extra) {
                    last.push(extra);
                }
            }
        }
        let subsets = chunks.iter().map(|c| cloud.subset(c)).collect::<Result<Vec<_>>>()?;
        let mut g = Graph::new();
        let out = self.forward(&mut g, store, &subsets, Mode::Infer, rng)?;
        let logits = g.value(out.logits);
        let indices: Vec<usize> = chunks.concat();
        Ok(PassLogits {
            indices,
            logits: logits.clone(),
        })
    }
}

/// Mean of the rows belonging to each group.
pub fn average_rows(values: &Tensor, row_group: &[usize], groups: usize) -> Result<Tensor> {
    let c = values.cols();
    if values.rows() != row_group.len() {
        return Err(Error::dim("average_rows", values.shape(), &[row_group.len()]));
    }
    let mut sums = vec![0.0; groups * c];
    let mut counts = vec![0usize; groups];
    for (r, &gi) in row_group.iter().enumerate() {
        counts[gi] += 1;
        for (s, v) in sums[gi * c..(gi + 1) * c].iter_mut().zip(values.row(r)) {
            *s += v;
        }
    }
    for (gi, &n) in counts.iter().enumerate() {
        if n > 0 {
            sums[gi * c..(gi + 1) * c].iter_mut().for_each(|s| *s /= n as f64);
        }
    }
    Tensor::new(&[groups, c], sums)
}

/// Logits of one evaluation pass, keyed by original point index.
#[derive(Clone, Debug)]
pub struct PassLogits {
    pub indices: Vec<usize>,
    pub logits: Tensor,
}

/// Per-point logits averaged over every pass in which a point appeared.
#[derive(Clone, Debug)]
pub struct MultipassPrediction {
    pub mean_logits: Tensor,
    pub counts: Vec<usize>,
}

impl MultipassPrediction {
    pub fn aggregate(passes: &[PassLogits], n: usize, classes: usize) -> Result<Self> {
        let mut sums = vec![0.0; n * classes];
        let mut counts = vec![0usize; n];
        for p in passes {
            if p.logits.rows() != p.indices.len() || p.logits.cols() != classes {
                return Err(Error::dim("multipass", p.logits.shape(), &[p.indices.len(), classes]));
            }
            for (r, &i) in p.indices.iter().enumerate() {
                counts[i] += 1;
                for (s, v) in sums[i * classes..(i + 1) * classes].iter_mut().zip(p.logits.row(r)) {
                    *s += v;
                }
            }
        }
        for (i, &c) in counts.iter().enumerate() {
            if c == 0 {
                return Err(Error::State(format!("point {i} was never evaluated")));
            }
            sums[i * classes..(i + 1) * classes].iter_mut().for_each(|s| *s /= c as f64);
        }
        Ok(MultipassPrediction {
            mean_logits: Tensor::new(&[n, classes], sums)?,
            counts,
        })
    }
}

/// Index of the largest entry among `allowed` (all entries when empty).
pub fn argmax_within(row: &[f64], allowed: &[usize]) -> usize {
    let candidates: Box<dyn Iterator<Item = usize>> = if allowed.is_empty() {
        Box::new(0..row.len())
    } else {
        Box::new(allowed.iter().copied())
    };
    let mut best = (f64::NEG_INFINITY, usize::MAX);
    for j in candidates {
        if row[j] > best.0 || best.1 == usize::MAX {
            best = (row[j], j);
        }
    }
    best.1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cls_spec() -> NetworkSpec {
        NetworkSpec {
            task: Task::Classification,
            dim: 3,
            input_channels: 0,
            input_points: 32,
            num_classes: 3,
            layers: vec![LayerSpec::conv(8, 1, 16, 16), LayerSpec::conv(4, 2, 4, 32)],
            head: HeadSpec {
                widths: vec![16],
                dropout: 0.5,
            },
            skip_links: true,
            variant: Variant::Full,
        }
    }

    #[test]
    fn resolve_fills_channels() {
        let r = cls_spec().resolve().unwrap();
        assert_eq!(r[0].xconv.c_in, 0);
        assert_eq!(r[0].xconv.c_delta, 4);
        assert_eq!(r[1].xconv.c_in, 16);
        assert_eq!(r[1].n_prev, 16);
        assert_eq!(cls_spec().receptive_fields().unwrap(), vec![0.25, 0.5]);
    }

    #[test]
    fn resolve_rejects_oversized_neighborhoods() {
        let mut s = cls_spec();
        s.layers[1].d = 5;
        assert!(matches!(s.resolve(), Err(Error::Config(_))));
    }

    #[test]
    fn global_lift_needs_partial_receptive_field() {
        let mut s = cls_spec();
        s.layers[1] = LayerSpec::conv(8, 1, 4, 32).global();
        s.input_points = 128;
        s.layers[0].n_out = 32;
        assert!(subvolume_head(&s).is_ok());
        s.layers[1].d = 4;
        assert!(subvolume_head(&s).is_err());
        s.layers[1].with_global = false;
        assert!(s.resolve().is_ok());
        assert!(subvolume_head(&s).is_err());
    }

    #[test]
    fn segmentation_must_end_at_input_level() {
        let mut s = cls_spec();
        s.task = Task::Segmentation;
        assert!(s.resolve().is_err());
        s.layers.push(LayerSpec::deconv(4, 1, 16, 1));
        assert!(s.resolve().is_err());
        s.layers.push(LayerSpec::deconv(4, 1, 16, 0));
        let r = s.resolve().unwrap();
        assert_eq!(r[2].xconv.n_out, 16);
        assert_eq!(r[3].xconv.n_out, 32);
        assert_eq!(r[2].xconv.sampler, Sampler::Fps);
        // skip link widens the deconv output by the mirrored level's channels
        assert_eq!(r[2].out_width, 16 + 16);
        assert_eq!(r[3].xconv.c_in, 32);
    }

    #[test]
    fn argmax_respects_allowed_set() {
        let row = [0.1, 5.0, 0.3, 0.2];
        assert_eq!(argmax_within(&row, &[]), 1);
        assert_eq!(argmax_within(&row, &[2, 3]), 2);
    }

    #[test]
    fn average_rows_groups() {
        let v = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![10.0, 0.0]]).unwrap();
        let a = average_rows(&v, &[0, 0, 1], 2).unwrap();
        assert_eq!(a.data(), &[2.0, 3.0, 10.0, 0.0]);
    }
}
