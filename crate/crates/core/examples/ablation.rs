//! Trains the classifier with and without the learned transformation on
//! identical batches and prints the comparison.
//!
//! Set `XCONV_THREADS` to bound the worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xconv::config::RunConfig;
use xconv::data::synth::{gen_shapes, Primitive};
use xconv::train::{ablate, worker_count};

fn main() -> xconv::Result<()> {
    let mut cfg = RunConfig::parse(include_str!("../../../configs/shapes_cls.toml"))?;
    cfg.paths = Default::default();
    cfg.optimizer.epochs = 20;
    let data = gen_shapes(&Primitive::ALL, 70, 20, 256, 0.01, &mut ChaCha8Rng::seed_from_u64(1))?;
    let report = ablate(&cfg, &data, &[1, 2, 3], worker_count())?;
    print!("{}", report.summary());
    Ok(())
}
