//! One X-Conv layer on a single neighborhood: reordering the neighbors, and
//! the parameter census of the full and the ablated operator.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xconv::xconv::{count_params, Variant, XConvParams, XConvSpec};
use xconv::{Graph, Mode, ParamStore, Tensor};

fn main() -> xconv::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let spec = XConvSpec::new(8, 1, 1, 0, 16);
    let mut store = ParamStore::new();
    let layer = XConvParams::register(&mut store, "demo", &spec, 3, Variant::Full, &mut rng)?;

    let rows: Vec<Vec<f64>> = (0..8).map(|i| vec![(i as f64).cos(), (i as f64).sin(), 0.1 * i as f64]).collect();
    let mut order: Vec<usize> = (0..8).collect();
    let run = |order: &[usize]| -> xconv::Result<Tensor> {
        let nb = Tensor::from_rows(&order.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>())?;
        let mut g = Graph::new();
        let out = layer.forward_single(&mut g, &store, &[0.0, 0.0, 0.0], &nb, None, 1.0, Mode::Infer)?;
        Ok(g.value(out).clone())
    };
    let base = run(&order)?;
    for trial in 0..3 {
        order.shuffle(&mut rng);
        println!("reordering {trial}: max output change {:.3e}", base.max_abs_diff(&run(&order)?));
    }

    let full = count_params(&spec, 3, Variant::Full);
    let ablated = count_params(&spec, 3, Variant::Ablated);
    println!("full layer {} params ({} in the transformation network), ablated {}", full.total, full.mlp_x, ablated.total);
    println!("registered: {}", layer.registered_count(&store));
    Ok(())
}
