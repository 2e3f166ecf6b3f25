use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xconv::config::RunConfig;
use xconv::data::synth::{gen_parts, gen_shapes, Primitive};
use xconv::data::{Dataset, Split};
use xconv::train::{ablate, evaluate, feature_dump, load_model, train, worker_count};
use xconv::xconv::Variant;
use xconv::Error;

#[derive(Parser)]
#[command(name = "xconv", version, about = "Point-cloud classification and segmentation with X-Conv")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory (XPC1 clouds plus manifest.json).
    GenData(GenData),
    /// Train a network; writes per-epoch metrics and best/last checkpoints.
    Train(Train),
    /// Evaluate a checkpoint on one split.
    Eval(Eval),
    /// Train the full and the ablated network on identical batches and compare.
    Ablate(Ablate),
    /// Dump per-neighborhood features under reordered neighbors and report concentration.
    Features(Features),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Shapes,
    Parts,
}

#[derive(Args)]
struct GenData {
    #[arg(long, value_enum, default_value = "shapes")]
    kind: Kind,
    /// Comma-separated shape classes (shapes only).
    #[arg(long, default_value = "sphere,cube,ring", value_delimiter = ',')]
    classes: Vec<String>,
    #[arg(long, default_value_t = 70)]
    per_class: usize,
    /// Clouds per class assigned to the test split.
    #[arg(long, default_value_t = 20)]
    test_per_class: usize,
    #[arg(long, default_value_t = 256)]
    points: usize,
    /// Gaussian coordinate noise (shapes only).
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset directory or manifest; overrides the config path.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct Train {
    #[command(flatten)]
    common: Common,
    /// Resume from this checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output directory for checkpoints and metrics.txt; overrides the config paths.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    no_augment: bool,
}

#[derive(Args)]
struct Eval {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Metrics file; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    /// Evaluation passes for segmentation; overrides the config.
    #[arg(long)]
    passes: Option<usize>,
}

#[derive(Args)]
struct Ablate {
    #[command(flatten)]
    common: Common,
    /// Seeds to pair; defaults to three consecutive seeds from the config seed.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// JSON report path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Features {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Checkpoint of the ablated network, for the third feature kind.
    #[arg(long)]
    ablated_checkpoint: Option<PathBuf>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    layer: Option<usize>,
    /// Feature dump path; the concentration summary is written to `<out>.summary`.
    #[arg(long)]
    out: PathBuf,
}

fn load_config(c: &Common) -> xconv::Result<RunConfig> {
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(d) = &c.data {
        cfg.paths.dataset = Some(d.clone());
    }
    Ok(cfg)
}

fn load_data(cfg: &RunConfig) -> xconv::Result<Dataset> {
    let path = cfg
        .paths
        .dataset
        .as_ref()
        .ok_or_else(|| Error::Config("no dataset path: set paths.dataset or pass --data".into()))?;
    Dataset::load(path)
}

fn write_out(path: &Path, text: &str) -> xconv::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn parse_split(s: &str) -> xconv::Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        other => Err(Error::Config(format!("unknown split {other:?} (train, test)"))),
    }
}

fn run(cli: Cli) -> xconv::Result<()> {
    match cli.command {
        Command::GenData(a) => {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let data = match a.kind {
                Kind::Shapes => {
                    let classes = a.classes.iter().map(|c| Primitive::parse(c)).collect::<xconv::Result<Vec<_>>>()?;
                    gen_shapes(&classes, a.per_class, a.test_per_class, a.points, a.noise, &mut rng)?
                }
                Kind::Parts => gen_parts(a.per_class, a.test_per_class, a.points, &mut rng)?,
            };
            let m = data.save(&a.out, a.seed)?;
            println!("clouds={} out={}", m.entries.len(), a.out.display());
        }
        Command::Train(a) => {
            let mut cfg = load_config(&a.common)?;
            if let Some(dir) = &a.out {
                cfg.paths.checkpoint_dir = Some(dir.clone());
                cfg.paths.metrics = Some(dir.join("metrics.txt"));
            }
            if let Some(e) = a.epochs {
                cfg.optimizer.epochs = e;
            }
            if a.no_augment {
                cfg.augmentation.enabled = false;
            }
            let data = load_data(&cfg)?;
            let out = train(&cfg, &data, a.checkpoint.as_deref())?;
            for r in &out.history {
                println!("{}", r.line(cfg.seed));
            }
        }
        Command::Eval(a) => {
            let cfg = load_config(&a.common)?;
            let data = load_data(&cfg)?;
            let split = parse_split(&a.split)?;
            let (net, store) = load_model(&cfg, &a.checkpoint)?;
            let passes = a.passes.unwrap_or(cfg.eval.passes);
            let e = evaluate(&cfg, &net, &store, &data, split, passes)?;
            let text = e.to_kv(cfg.seed, split);
            match &a.out {
                Some(p) => write_out(p, &text)?,
                None => print!("{text}"),
            }
        }
        Command::Ablate(a) => {
            let mut cfg = load_config(&a.common)?;
            if let Some(e) = a.epochs {
                cfg.optimizer.epochs = e;
            }
            let seeds = if a.seeds.is_empty() {
                (0..3).map(|i| cfg.seed + i).collect()
            } else {
                a.seeds.clone()
            };
            let data = load_data(&cfg)?;
            let report = ablate(&cfg, &data, &seeds, worker_count())?;
            let json = serde_json::to_string_pretty(&report).map_err(|e| Error::State(e.to_string()))?;
            write_out(&a.out, &(json + "\n"))?;
            print!("{}", report.summary());
        }
        Command::Features(a) => {
            let mut cfg = load_config(&a.common)?;
            if let Some(l) = a.layer {
                cfg.features.layer = Some(l);
            }
            let data = load_data(&cfg)?;
            let full = load_model(&cfg, &a.checkpoint)?;
            let ablated = match &a.ablated_checkpoint {
                Some(p) => {
                    let mut c = cfg.clone();
                    c.network.variant = Variant::Ablated;
                    Some(load_model(&c, p)?)
                }
                None => None,
            };
            let (dump, conc) = feature_dump(
                &cfg,
                (&full.0, &full.1),
                ablated.as_ref().map(|(n, s)| (n, s)),
                &data,
                a.reps.unwrap_or(cfg.features.reps),
                a.draws.unwrap_or(cfg.features.draws),
            )?;
            write_out(&a.out, &dump.to_text())?;
            let summary = format!("seed={}\nlayer={}\n{}", cfg.seed, dump.layer, conc.to_kv());
            write_out(&PathBuf::from(format!("{}.summary", a.out.display())), &summary)?;
            print!("{summary}");
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Numeric(_) => 4,
        _ => 3,
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Dimension { .. } => "dimension",
        Error::Validation(_) => "validation",
        Error::State(_) => "state",
        Error::Config(_) => "config",
        Error::Format { .. } => "format",
        Error::Numeric(_) => "numeric",
        Error::Io(_) => "io",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error kind={} message={msg:?}", kind(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
