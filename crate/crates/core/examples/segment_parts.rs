//! Trains the shipped part-segmentation network and evaluates it with
//! multi-pass prediction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xconv::config::RunConfig;
use xconv::data::synth::gen_parts;
use xconv::data::Split;
use xconv::train::{evaluate, train};

fn main() -> xconv::Result<()> {
    let mut cfg = RunConfig::parse(include_str!("../../../configs/parts_seg.toml"))?;
    cfg.paths = Default::default();
    let data = gen_parts(40, 10, 256, &mut ChaCha8Rng::seed_from_u64(9))?;
    let out = train(&cfg, &data, None)?;
    for r in &out.history {
        println!("{}", r.line(cfg.seed));
    }
    for split in [Split::Train, Split::Test] {
        print!("{}", evaluate(&cfg, &out.network, &out.store, &data, split, cfg.eval.passes)?.to_kv(cfg.seed, split));
    }
    Ok(())
}
