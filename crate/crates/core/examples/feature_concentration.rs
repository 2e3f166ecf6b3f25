//! Measures how tightly a trained layer's features cluster per neighborhood
//! when the neighbor order is shuffled, before and after the transformation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xconv::config::RunConfig;
use xconv::data::synth::{gen_shapes, Primitive};
use xconv::train::{feature_dump, train};

fn main() -> xconv::Result<()> {
    let mut cfg = RunConfig::parse(include_str!("../../../configs/shapes_cls.toml"))?;
    cfg.paths = Default::default();
    let data = gen_shapes(&Primitive::ALL, 70, 20, 256, 0.01, &mut ChaCha8Rng::seed_from_u64(1))?;
    let out = train(&cfg, &data, None)?;
    let (dump, conc) = feature_dump(&cfg, (&out.network, &out.store), None, &data, cfg.features.reps, cfg.features.draws)?;
    println!("layer {} (K = {}, {} channels), {} rows", dump.layer, dump.k, dump.channels, dump.rows.len());
    print!("{}", conc.to_kv());
    println!("chance level {:.4}", 1.0 / conc.reps as f64);
    Ok(())
}
