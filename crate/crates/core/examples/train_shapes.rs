//! Trains the shipped shape classifier on a freshly generated dataset.
//!
//! ```text
//! cargo run --release --example train_shapes [seed]
//! ```

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xconv::config::RunConfig;
use xconv::data::synth::{gen_shapes, Primitive};
use xconv::data::Split;
use xconv::train::{evaluate, train};

fn main() -> xconv::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let mut cfg = RunConfig::parse(include_str!("../../../configs/shapes_cls.toml"))?;
    cfg.seed = seed;
    cfg.paths = Default::default();
    let data = gen_shapes(&Primitive::ALL, 70, 20, 256, 0.01, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let t = Instant::now();
    let out = train(&cfg, &data, None)?;
    for r in &out.history {
        println!("{}", r.line(seed));
    }
    let eval = evaluate(&cfg, &out.network, &out.store, &data, Split::Test, 1)?;
    println!("test OA {:.4} after {:.1?}", eval.metrics.overall_accuracy, t.elapsed());
    Ok(())
}
