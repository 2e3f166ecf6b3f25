//! Generates both synthetic datasets into a directory and reloads them.
//!
//! ```text
//! cargo run --release --example gen_dataset [out_dir]
//! ```

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xconv::data::synth::{gen_parts, gen_shapes, Primitive};
use xconv::data::{Dataset, Split};

fn main() -> xconv::Result<()> {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("xconv_datasets"));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let shapes = gen_shapes(&Primitive::ALL, 70, 20, 256, 0.01, &mut rng)?;
    let parts = gen_parts(40, 10, 256, &mut rng)?;
    for (name, data) in [("shapes", &shapes), ("parts", &parts)] {
        let dir = root.join(name);
        data.save(&dir, 1)?;
        let back = Dataset::load(&dir)?;
        println!(
            "{name}: {} train / {} test clouds, classes {:?}, written to {}",
            back.split_indices(Split::Train).len(),
            back.split_indices(Split::Test).len(),
            back.class_names,
            dir.display()
        );
    }
    Ok(())
}
