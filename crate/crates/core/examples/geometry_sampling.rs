//! Farthest point sampling, k-nearest neighbors and dilated neighborhoods on a ring.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xconv::geometry::{dilated_sample, farthest_point_sample_from, knn, receptive_field};
use xconv::PointSet;

fn main() -> xconv::Result<()> {
    let n = 64;
    let points: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let t = i as f64 / n as f64 * std::f64::consts::TAU;
            vec![t.cos(), t.sin()]
        })
        .collect();
    let ring = PointSet::from_points(&points)?;

    let reps = farthest_point_sample_from(ring.coords(), 2, 8, 0)?;
    println!("8 farthest points from index 0: {reps:?}");

    let query = ring.point(0).to_vec();
    println!("5 nearest to index 0: {:?}", knn(&ring, &query, 5)?);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let nb = dilated_sample(&ring, 0, &query, 5, 3, &mut rng)?;
    println!("5 of the 15 nearest (d = 3): {:?}", nb.neighbor_indices);
    println!("receptive field of k=5, d=3 over {n} points: {:.3}", receptive_field(5, 3, n));
    Ok(())
}
