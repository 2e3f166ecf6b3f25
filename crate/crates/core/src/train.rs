//! Training, evaluation, ablation and feature-concentration analysis.
//!
//! Every random choice is drawn from a ChaCha stream derived from the run
//! seed and a purpose tag, so a `(config, seed)` pair fixes the whole
//! trajectory and an interrupted run resumes onto the same path.

use std::collections::hash_map::DefaultHasher;
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::metrics::{compute_metrics, segmentation_metrics};
use crate::data::{Dataset, Metrics, ShapeResult, Split};
use crate::error::{Error, Result};
use crate::geometry::{gaussian_count, resample_to, PointSet};
use crate::graph::{Graph, Mode};
use crate::network::{argmax_within, Network, Task};
use crate::optim::Adam;
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::xconv::{NeighborhoodBatch, Variant};

const STREAM_INIT: u64 = 0;
const STREAM_EPOCH: u64 = 1 << 32;
const STREAM_VALIDATE: u64 = 2 << 32;
const STREAM_EVAL: u64 = 3 << 32;
const STREAM_FEATURES: u64 = 4 << 32;

/// Deterministic generator for one purpose of one run.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A freshly initialized network for the config's seed.
pub fn build(cfg: &RunConfig) -> Result<(Network, ParamStore)> {
    let mut store = ParamStore::new();
    let net = Network::new(&cfg.network, &mut store, &mut stream_rng(cfg.seed, STREAM_INIT))?;
    Ok((net, store))
}

/// One line of the metrics file.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub points: usize,
    pub batch_hash: u64,
}

impl EpochRecord {
    pub fn line(&self, seed: u64) -> String {
        format!(
            "epoch={} seed={seed} lr={:.6} loss={:.6} train_acc={:.6} val_acc={:.6} points={} batch_hash={:016x}",
            self.epoch, self.lr, self.loss, self.train_accuracy, self.val_accuracy, self.points, self.batch_hash
        )
    }
}

/// Reads the `key=value` pairs of one metrics line.
pub fn parse_kv(line: &str) -> Vec<(&str, &str)> {
    line.split_whitespace().filter_map(|t| t.split_once('=')).collect()
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub network: Network,
    pub store: ParamStore,
    pub history: Vec<EpochRecord>,
    pub best_val: f64,
}

/// Points fed to the network for one training cloud.
fn prepare_cloud<R: Rng + ?Sized>(cfg: &RunConfig, min_points: usize, cloud: &PointSet, rng: &mut R) -> Result<PointSet> {
    if cfg.augmentation.enabled {
        let n = gaussian_count(cfg.resample_target(), rng).max(min_points);
        resample_to(cloud, n, rng)
    } else {
        Ok(cloud.clone())
    }
}

fn hash_batch(indices: &[usize], clouds: &[PointSet]) -> u64 {
    let mut h = DefaultHasher::new();
    indices.hash(&mut h);
    for c in clouds {
        c.len().hash(&mut h);
        for v in c.coords() {
            v.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

fn checkpoint_paths(cfg: &RunConfig) -> Option<(PathBuf, PathBuf)> {
    cfg.paths
        .checkpoint_dir
        .as_ref()
        .map(|d| (d.join("last.xckp"), d.join("best.xckp")))
}

/// Trains per the config, writing metrics lines and checkpoints when paths are set.
///
/// With `resume`, parameters, optimizer state and the epoch counter come from
/// that checkpoint and the metrics file keeps only the lines up to it.
pub fn train(cfg: &RunConfig, data: &Dataset, resume: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_compatible(cfg, data)?;
    let (network, mut store) = build(cfg)?;
    let train_idx = data.split_indices(Split::Train);
    if train_idx.is_empty() {
        return Err(Error::validation("dataset has no training clouds"));
    }
    let mut start = 0;
    let mut best = f64::NEG_INFINITY;
    if let Some(path) = resume {
        let ck = Checkpoint::load(path)?;
        ck.restore(&mut store)?;
        start = ck.meta("epoch").map_or(0, |e| e as usize);
        best = ck.meta("best").unwrap_or(f64::NEG_INFINITY);
    }
    let mut lines: Vec<String> = Vec::new();
    if let (Some(path), true) = (&cfg.paths.metrics, resume.is_some()) {
        if let Ok(text) = std::fs::read_to_string(path) {
            lines = text
                .lines()
                .filter(|l| {
                    parse_kv(l)
                        .iter()
                        .find(|(k, _)| *k == "epoch")
                        .and_then(|(_, v)| v.parse::<usize>().ok())
                        .is_some_and(|e| e <= start)
                })
                .map(str::to_string)
                .collect();
        }
    }
    if let Some(dir) = &cfg.paths.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    if let Some(parent) = cfg.paths.metrics.as_ref().and_then(|p| p.parent()) {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }

    let adam = Adam::default();
    let mut history = Vec::new();
    for epoch in start + 1..=cfg.optimizer.epochs {
        let lr = cfg.optimizer.lr * cfg.optimizer.lr_decay.powi(epoch as i32 - 1);
        let record = train_epoch(cfg, &network, &mut store, &adam, data, &train_idx, epoch, lr)?;
        let val = validate(cfg, &network, &store, data, epoch)?;
        let record = EpochRecord {
            val_accuracy: val,
            ..record
        };
        lines.push(record.line(cfg.seed));
        if let Some(path) = &cfg.paths.metrics {
            std::fs::write(path, lines.join("\n") + "\n")?;
        }
        let improved = val > best;
        if improved {
            best = val;
        }
        if let Some((last, best_path)) = checkpoint_paths(cfg) {
            let ck = Checkpoint::capture(
                &store,
                &[("epoch", epoch as f64), ("best", best), ("seed", cfg.seed as f64)],
            );
            ck.save(&last)?;
            if improved {
                ck.save(&best_path)?;
            }
        }
        history.push(record);
    }
    Ok(TrainOutcome {
        network,
        store,
        history,
        best_val: best,
    })
}

fn check_compatible(cfg: &RunConfig, data: &Dataset) -> Result<()> {
    if cfg.network.task != data.task {
        return Err(Error::config(format!(
            "network task {:?} does not match dataset task {:?}",
            cfg.network.task, data.task
        )));
    }
    if cfg.network.num_classes != data.num_labels() {
        return Err(Error::config(format!(
            "network predicts {} labels, dataset has {}",
            cfg.network.num_classes,
            data.num_labels()
        )));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train_epoch(
    cfg: &RunConfig,
    net: &Network,
    store: &mut ParamStore,
    adam: &Adam,
    data: &Dataset,
    train_idx: &[usize],
    epoch: usize,
    lr: f64,
) -> Result<EpochRecord> {
    let mut rng = stream_rng(cfg.seed, STREAM_EPOCH + epoch as u64);
    let mut order = train_idx.to_vec();
    order.shuffle(&mut rng);
    let mut hasher = DefaultHasher::new();
    let (mut loss_sum, mut correct, mut rows, mut points) = (0.0, 0usize, 0usize, 0usize);
    let batches = order.chunks(cfg.optimizer.batch_size).count();
    for (b, chunk) in order.chunks(cfg.optimizer.batch_size).enumerate() {
        let batch_seed: u64 = rng.random();
        let mut data_rng = stream_rng(batch_seed, 0);
        let mut net_rng = stream_rng(batch_seed, 1);
        let clouds = chunk
            .iter()
            .map(|&i| prepare_cloud(cfg, net.min_points(), &data.clouds[i], &mut data_rng))
            .collect::<Result<Vec<_>>>()?;
        hash_batch(chunk, &clouds).hash(&mut hasher);
        points += clouds.iter().map(PointSet::len).sum::<usize>();

        let numeric = |e: Error| match e {
            Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch} batch {b} (batch seed {batch_seed}): {msg}")),
            other => other,
        };
        let mut g = Graph::new().with_finite_checks();
        let (loss, out) = net
            .loss(&mut g, store, &clouds, Mode::Train, &mut net_rng)
            .map_err(numeric)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(numeric(Error::Numeric(format!("loss is {value}"))));
        }
        g.backward(loss).map_err(numeric)?;
        store.absorb(&mut g)?;
        adam.step(store, lr)?;

        let labels = net.row_labels(&clouds, &out)?;
        let logits = g.value(out.logits);
        for (r, &l) in labels.iter().enumerate() {
            correct += usize::from(argmax_within(logits.row(r), &[]) == l);
        }
        rows += labels.len();
        loss_sum += value;
    }
    Ok(EpochRecord {
        epoch,
        lr,
        loss: loss_sum / batches as f64,
        train_accuracy: correct as f64 / rows.max(1) as f64,
        val_accuracy: 0.0,
        points,
        batch_hash: hasher.finish(),
    })
}

/// Cheap per-epoch validation on the test split: OA for classification,
/// single-pass point accuracy for segmentation. Returns 0 without test clouds.
fn validate(cfg: &RunConfig, net: &Network, store: &ParamStore, data: &Dataset, epoch: usize) -> Result<f64> {
    let test = data.clouds_in(Split::Test);
    if test.is_empty() {
        return Ok(0.0);
    }
    let mut rng = stream_rng(cfg.seed, STREAM_VALIDATE + epoch as u64);
    match net.spec.task {
        Task::Classification => {
            let m = classify(net, store, data, Split::Test, &mut rng)?;
            Ok(m.overall_accuracy)
        }
        Task::Segmentation => {
            let (mut hit, mut total) = (0usize, 0usize);
            for c in test {
                let pass = net.segment_pass(store, c, &mut rng)?;
                let allowed = &data.part_sets[c.cloud_label.unwrap_or(0)];
                let labels = c.point_labels.as_ref().expect("validated dataset");
                for (r, &i) in pass.indices.iter().enumerate() {
                    hit += usize::from(argmax_within(pass.logits.row(r), allowed) == labels[i]);
                    total += 1;
                }
            }
            Ok(hit as f64 / total.max(1) as f64)
        }
    }
}

const EVAL_BATCH: usize = 16;

fn classify<R: Rng + ?Sized>(net: &Network, store: &ParamStore, data: &Dataset, split: Split, rng: &mut R) -> Result<Metrics> {
    let clouds: Vec<PointSet> = data.clouds_in(split).into_iter().cloned().collect();
    let mut pred = Vec::with_capacity(clouds.len());
    for chunk in clouds.chunks(EVAL_BATCH) {
        let avg = net.predict_classes(store, chunk, rng)?;
        pred.extend((0..chunk.len()).map(|i| argmax_within(avg.row(i), &[])));
    }
    let truth: Vec<usize> = clouds.iter().map(|c| c.cloud_label.expect("validated dataset")).collect();
    compute_metrics(&pred, &truth, data.class_names.len())
}

/// Evaluation result; `min_coverage` is the fewest passes any point received.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub min_coverage: usize,
    pub clouds: usize,
}

impl Evaluation {
    pub fn to_kv(&self, seed: u64, split: Split) -> String {
        format!(
            "seed={seed}\nsplit={}\nclouds={}\nmin_coverage={}\n{}",
            match split {
                Split::Train => "train",
                Split::Test => "test",
            },
            self.clouds,
            self.min_coverage,
            self.metrics.to_kv()
        )
    }
}

/// Full evaluation on one split: logits averaged over representative points
/// for classification, `passes`-pass aggregation for segmentation.
pub fn evaluate(cfg: &RunConfig, net: &Network, store: &ParamStore, data: &Dataset, split: Split, passes: usize) -> Result<Evaluation> {
    check_compatible(cfg, data)?;
    let mut rng = stream_rng(cfg.seed, STREAM_EVAL);
    let clouds = data.clouds_in(split);
    if clouds.is_empty() {
        return Err(Error::validation("no clouds in the requested split"));
    }
    match net.spec.task {
        Task::Classification => Ok(Evaluation {
            metrics: classify(net, store, data, split, &mut rng)?,
            min_coverage: 1,
            clouds: clouds.len(),
        }),
        Task::Segmentation => {
            let mut shapes = Vec::with_capacity(clouds.len());
            let mut min_coverage = usize::MAX;
            for c in &clouds {
                let category = c.cloud_label.expect("validated dataset");
                let pred = net.predict_multipass(store, c, passes, &mut rng)?;
                min_coverage = min_coverage.min(pred.counts.iter().copied().min().unwrap_or(0));
                let allowed = &data.part_sets[category];
                shapes.push(ShapeResult {
                    category,
                    pred: (0..c.len())
                        .map(|i| argmax_within(pred.mean_logits.row(i), allowed))
                        .collect(),
                    truth: c.point_labels.clone().expect("validated dataset"),
                });
            }
            Ok(Evaluation {
                metrics: segmentation_metrics(&shapes, &data.part_sets, data.num_labels())?,
                min_coverage,
                clouds: clouds.len(),
            })
        }
    }
}

/// Loads parameters for `cfg`'s network from a checkpoint.
pub fn load_model(cfg: &RunConfig, checkpoint: &Path) -> Result<(Network, ParamStore)> {
    let (net, mut store) = build(cfg)?;
    Checkpoint::load(checkpoint)?.restore(&mut store)?;
    Ok((net, store))
}

/// One side of an ablation pair.
#[derive(Clone, Debug, Serialize)]
pub struct AblationRun {
    pub variant: Variant,
    pub seed: u64,
    pub parameters: usize,
    pub test_accuracy: f64,
    pub batch_hashes: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationReport {
    pub runs: Vec<AblationRun>,
    pub mean_full: f64,
    pub mean_ablated: f64,
    /// Trainable parameters of the transformation networks: full minus ablated.
    pub parameter_difference: usize,
    pub paired: bool,
    pub config_full: RunConfig,
    pub config_ablated: RunConfig,
}

impl AblationReport {
    /// Table-style summary: method, parameter count, mean accuracy.
    pub fn summary(&self) -> String {
        let params = |v: Variant| self.runs.iter().find(|r| r.variant == v).map_or(0, |r| r.parameters);
        let mut s = String::new();
        let _ = writeln!(s, "method=full parameters={} mean_accuracy={:.6}", params(Variant::Full), self.mean_full);
        let _ = writeln!(
            s,
            "method=ablated parameters={} mean_accuracy={:.6}",
            params(Variant::Ablated),
            self.mean_ablated
        );
        let _ = writeln!(s, "parameter_difference={} paired={}", self.parameter_difference, self.paired);
        s
    }
}

/// Worker cap from `XCONV_THREADS`, defaulting to the available parallelism.
pub fn worker_count() -> usize {
    std::env::var("XCONV_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from))
}

/// Trains the full and the ablated network on identical batches for each seed.
pub fn ablate(cfg: &RunConfig, data: &Dataset, seeds: &[u64], workers: usize) -> Result<AblationReport> {
    let strip = |variant: Variant| {
        let mut c = cfg.clone();
        c.network.variant = variant;
        c.paths.checkpoint_dir = None;
        c.paths.metrics = None;
        c
    };
    let full = strip(Variant::Full);
    let ablated = strip(Variant::Ablated);
    let jobs: Vec<(Variant, u64)> = seeds
        .iter()
        .flat_map(|&s| [(Variant::Full, s), (Variant::Ablated, s)])
        .collect();
    let run = |&(variant, seed): &(Variant, u64)| -> Result<AblationRun> {
        let mut c = if variant == Variant::Full { full.clone() } else { ablated.clone() };
        c.seed = seed;
        let out = train(&c, data, None)?;
        let eval = evaluate(&c, &out.network, &out.store, data, Split::Test, c.eval.passes)?;
        Ok(AblationRun {
            variant,
            seed,
            parameters: out.store.trainable_scalars(),
            test_accuracy: eval.metrics.overall_accuracy,
            batch_hashes: out.history.iter().map(|r| format!("{:016x}", r.batch_hash)).collect(),
        })
    };
    let workers = workers.clamp(1, jobs.len().max(1));
    let mut results: Vec<Option<Result<AblationRun>>> = (0..jobs.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let jobs = &jobs;
                let run = &run;
                scope.spawn(move || {
                    (w..jobs.len())
                        .step_by(workers)
                        .map(|j| (j, run(&jobs[j])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (j, r) in h.join().expect("ablation worker panicked") {
                results[j] = Some(r);
            }
        }
    });
    let runs = results
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect::<Result<Vec<_>>>()?;
    let mean = |v: Variant| {
        let xs: Vec<f64> = runs.iter().filter(|r| r.variant == v).map(|r| r.test_accuracy).collect();
        xs.iter().sum::<f64>() / xs.len().max(1) as f64
    };
    let paired = runs
        .chunks(2)
        .all(|p| p.len() == 2 && p[0].batch_hashes == p[1].batch_hashes);
    let parameter_difference = runs[0].parameters - runs[1].parameters;
    Ok(AblationReport {
        mean_full: mean(Variant::Full),
        mean_ablated: mean(Variant::Ablated),
        parameter_difference,
        paired,
        runs,
        config_full: full,
        config_ablated: ablated,
    })
}

/// Which per-neighborhood matrix a dump row holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    /// Lifted-and-concatenated features before the transformation.
    Star,
    /// Features after the learned transformation.
    Transformed,
    /// Lifted-and-concatenated features of the ablated network.
    Ablated,
}

impl FeatureKind {
    pub fn tag(self) -> &'static str {
        match self {
            FeatureKind::Star => "star",
            FeatureKind::Transformed => "x",
            FeatureKind::Ablated => "ablated",
        }
    }

    fn parse(tag: &str) -> Option<Self> {
        [FeatureKind::Star, FeatureKind::Transformed, FeatureKind::Ablated]
            .into_iter()
            .find(|k| k.tag() == tag)
    }
}

/// One `K × C*` matrix, flattened row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub kind: FeatureKind,
    pub cloud: usize,
    pub rep: usize,
    pub draw: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDump {
    pub layer: usize,
    pub k: usize,
    pub channels: usize,
    pub rows: Vec<FeatureRow>,
}

impl FeatureDump {
    /// Text form: a header line, then `kind cloud rep draw values…` per row.
    pub fn to_text(&self) -> String {
        let mut s = format!("layer={} k={} channels={} rows={}\n", self.layer, self.k, self.channels, self.rows.len());
        for r in &self.rows {
            let _ = write!(s, "{} {} {} {}", r.kind.tag(), r.cloud, r.rep, r.draw);
            for v in &r.values {
                let _ = write!(s, " {v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Format {
            offset: line,
            message: format!("feature dump line {}: {msg}", line + 1),
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad(0, "empty dump"))?;
        let field = |key: &str| -> Result<usize> {
            parse_kv(header)
                .iter()
                .find(|(k, _)| *k == key)
                .and_then(|(_, v)| v.parse().ok())
                .ok_or_else(|| bad(0, &format!("header lacks {key}")))
        };
        let (layer, k, channels, count) = (field("layer")?, field("k")?, field("channels")?, field("rows")?);
        let mut rows = Vec::with_capacity(count);
        for (i, line) in lines.enumerate() {
            let mut t = line.split_whitespace();
            let kind = t.next().and_then(FeatureKind::parse).ok_or_else(|| bad(i + 1, "unknown kind"))?;
            let mut id = || -> Result<usize> { t.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad(i + 1, "bad id")) };
            let (cloud, rep, draw) = (id()?, id()?, id()?);
            let values = t
                .map(|v| v.parse::<f64>().map_err(|_| bad(i + 1, "bad value")))
                .collect::<Result<Vec<_>>>()?;
            if values.len() != k * channels {
                return Err(bad(i + 1, "wrong value count"));
            }
            rows.push(FeatureRow {
                kind,
                cloud,
                rep,
                draw,
                values,
            });
        }
        if rows.len() != count {
            return Err(bad(0, "row count does not match header"));
        }
        Ok(FeatureDump {
            layer,
            k,
            channels,
            rows,
        })
    }

    pub fn rows_of(&self, kind: FeatureKind) -> impl Iterator<Item = &FeatureRow> {
        self.rows.iter().filter(move |r| r.kind == kind)
    }
}

/// Nearest-center accuracy for each feature kind present in a dump.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Concentration {
    pub reps: usize,
    pub draws: usize,
    pub star: f64,
    pub transformed: f64,
    pub ablated: Option<f64>,
}

impl Concentration {
    pub fn to_kv(&self) -> String {
        let mut s = format!(
            "reps={}\ndraws={}\naccuracy_star={:.6}\naccuracy_x={:.6}\n",
            self.reps, self.draws, self.star, self.transformed
        );
        if let Some(a) = self.ablated {
            let _ = writeln!(s, "accuracy_ablated={a:.6}");
        }
        s
    }
}

/// Fraction of samples whose nearest group center (Euclidean) is their own group's.
pub fn nearest_center_accuracy(samples: &[&[f64]], groups: &[usize]) -> f64 {
    let n_groups = groups.iter().max().map_or(0, |m| m + 1);
    let width = samples.first().map_or(0, |s| s.len());
    let mut centers = vec![vec![0.0; width]; n_groups];
    let mut counts = vec![0usize; n_groups];
    for (s, &g) in samples.iter().zip(groups) {
        counts[g] += 1;
        for (c, v) in centers[g].iter_mut().zip(s.iter()) {
            *c += v;
        }
    }
    for (c, &n) in centers.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= n.max(1) as f64);
    }
    let hits = samples
        .iter()
        .zip(groups)
        .filter(|(s, &g)| {
            let d = |c: &[f64]| c.iter().zip(s.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            let own = d(&centers[g]);
            centers
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != g && counts[*j] > 0)
                .all(|(_, c)| own <= d(c))
        })
        .count();
    hits as f64 / samples.len().max(1) as f64
}

/// A probed layer's neighborhoods and inputs, recorded from one forward pass.
struct Probe {
    source: Vec<f64>,
    features: Option<Tensor>,
    /// (cloud, rep, representative coordinates, neighbor rows into `source`)
    sites: Vec<(usize, usize, Vec<f64>, Vec<usize>)>,
    scales: Vec<f64>,
}

fn probe_layer(net: &Network, store: &ParamStore, clouds: &[PointSet], layer: usize, seed: u64) -> Result<Probe> {
    let mut g = Graph::new();
    let out = net.forward(&mut g, store, clouds, Mode::Infer, &mut stream_rng(seed, STREAM_FEATURES))?;
    let act = &out.activations[layer];
    let dim = net.spec.dim;
    let mut sites = Vec::new();
    let mut scales = Vec::new();
    let mut offset = 0;
    for (ci, (reps, nbrs)) in act.rep_coords.iter().zip(&act.neighborhoods).enumerate() {
        let radius = clouds[ci].bounding_radius();
        for (ri, (rep, nb)) in reps.chunks(dim).zip(nbrs).enumerate() {
            sites.push((ci, ri, rep.to_vec(), nb.iter().map(|j| j + offset).collect()));
            scales.push(if radius > 0.0 { radius } else { 1.0 });
        }
        offset += act.source_coords[ci].len() / dim;
    }
    Ok(Probe {
        source: act.source_coords.concat(),
        features: act.input_features.map(|f| g.value(f).clone()),
        sites,
        scales,
    })
}

/// Feeds `draws` neighbor orderings of `reps` random representative points of
/// the test clouds through one layer and records the matrices before and
/// after the transformation (and, given an ablated model, its matrices).
pub fn feature_dump(
    cfg: &RunConfig,
    full: (&Network, &ParamStore),
    ablated: Option<(&Network, &ParamStore)>,
    data: &Dataset,
    reps: usize,
    draws: usize,
) -> Result<(FeatureDump, Concentration)> {
    if draws < 2 {
        return Err(Error::validation("feature analysis needs at least 2 draws per representative point"));
    }
    if reps < 2 {
        return Err(Error::validation("feature analysis needs at least 2 representative points"));
    }
    let (net, store) = full;
    let layer = cfg.features.layer.unwrap_or(0);
    if layer >= net.layers.len() || net.spec.variant != Variant::Full {
        return Err(Error::validation(format!("layer {layer} is not a full X-Conv layer of this network")));
    }
    let mut split = Split::Test;
    if data.split_indices(split).is_empty() {
        split = Split::Train;
    }
    let clouds: Vec<PointSet> = data.clouds_in(split).into_iter().cloned().collect();
    let probe = probe_layer(net, store, &clouds, layer, cfg.seed)?;
    if probe.sites.len() < reps {
        return Err(Error::validation(format!(
            "layer {layer} has only {} representative points",
            probe.sites.len()
        )));
    }
    let mut rng = stream_rng(cfg.seed, STREAM_FEATURES + 1);
    let picked = index::sample(&mut rng, probe.sites.len(), reps).into_vec();
    let mut rep_coords = Vec::new();
    let mut neighbors = Vec::new();
    let mut scales = Vec::new();
    let mut keys = Vec::new();
    for &s in &picked {
        let (cloud, rep, coord, nb) = &probe.sites[s];
        for draw in 0..draws {
            let mut order = nb.clone();
            order.shuffle(&mut rng);
            rep_coords.extend_from_slice(coord);
            neighbors.push(order);
            scales.push(probe.scales[s]);
            keys.push((*cloud, *rep, draw));
        }
    }
    let batch = NeighborhoodBatch::gather(&probe.source, net.spec.dim, &rep_coords, &neighbors, &scales)?;
    let run = |net: &Network, store: &ParamStore, features: &Option<Tensor>| -> Result<(Tensor, Option<Tensor>)> {
        let mut g = Graph::new();
        let f = features.clone().map(|t| g.constant(t));
        let out = net.layers[layer].forward(&mut g, store, &batch, f, Mode::Infer)?;
        Ok((g.value(out.f_star).clone(), out.f_x.map(|x| g.value(x).clone())))
    };
    let (star, fx) = run(net, store, &probe.features)?;
    let fx = fx.expect("full variant emits transformed features");
    let spec = &net.layers[layer].spec;
    let (k, channels) = (spec.k, spec.c_star());
    let width = k * channels;
    let mut rows = Vec::new();
    let mut push = |kind: FeatureKind, t: &Tensor| {
        for (i, &(cloud, rep, draw)) in keys.iter().enumerate() {
            rows.push(FeatureRow {
                kind,
                cloud,
                rep,
                draw,
                values: t.data()[i * width..(i + 1) * width].to_vec(),
            });
        }
    };
    push(FeatureKind::Star, &star);
    push(FeatureKind::Transformed, &fx);
    if let Some((abl_net, abl_store)) = ablated {
        let abl_probe = probe_layer(abl_net, abl_store, &clouds, layer, cfg.seed)?;
        if abl_probe.sites.len() != probe.sites.len() || abl_probe.source != probe.source {
            return Err(Error::validation("ablated network samples different neighborhoods"));
        }
        if abl_net.layers[layer].spec.c_star() != channels {
            return Err(Error::validation("ablated network has a different layer width"));
        }
        let (abl_star, _) = run(abl_net, abl_store, &abl_probe.features)?;
        push(FeatureKind::Ablated, &abl_star);
    }
    let dump = FeatureDump {
        layer,
        k,
        channels,
        rows,
    };
    let groups: Vec<usize> = (0..reps).flat_map(|r| std::iter::repeat_n(r, draws)).collect();
    let accuracy = |kind: FeatureKind| {
        let samples: Vec<&[f64]> = dump.rows_of(kind).map(|r| r.values.as_slice()).collect();
        (!samples.is_empty()).then(|| nearest_center_accuracy(&samples, &groups))
    };
    let concentration = Concentration {
        reps,
        draws,
        star: accuracy(FeatureKind::Star).unwrap_or(0.0),
        transformed: accuracy(FeatureKind::Transformed).unwrap_or(0.0),
        ablated: accuracy(FeatureKind::Ablated),
    };
    Ok((dump, concentration))
}
