//! Neighborhood search and sampling against brute force.

mod common;

use common::criteria::{brute_knn, fps_is_greedy};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xconv::geometry::{
    dilated_sample_coords, farthest_point_sample_from, gaussian_count, knn_coords, random_downsample, receptive_field,
};
use xconv::PointSet;

fn cloud(dim: usize, max: usize) -> impl Strategy<Value = (usize, Vec<f64>)> {
    (1..=max).prop_flat_map(move |n| (Just(n), prop::collection::vec(-4i32..=4, n * dim)))
        .prop_map(|(n, v)| (n, v.into_iter().map(|x| x as f64 * 0.25).collect()))
}

proptest! {
    // Lattice coordinates make distance ties common.
    #[test]
    fn knn_matches_brute_force_with_ties((n, coords) in cloud(3, 60), q in prop::array::uniform3(-1.0f64..1.0), k_frac in 0.0f64..1.0) {
        let k = 1 + ((n - 1) as f64 * k_frac) as usize;
        prop_assert_eq!(knn_coords(&coords, 3, &q, k).unwrap(), brute_knn(&coords, 3, &q, k));
    }

    #[test]
    fn dilated_sample_is_distinct_subset_of_pool((n, coords) in cloud(2, 80), seed in any::<u64>(), k in 1usize..8, d in 1usize..5) {
        prop_assume!(k * d <= n);
        let q = [0.1, -0.2];
        let pool = brute_knn(&coords, 2, &q, k * d);
        let s = dilated_sample_coords(&coords, 2, &q, k, d, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut u = s.clone();
        u.sort_unstable();
        u.dedup();
        prop_assert_eq!(u.len(), k);
        prop_assert!(s.iter().all(|i| pool.contains(i)));
    }

    #[test]
    fn fps_is_deterministic_and_greedy((n, coords) in cloud(3, 50), m_frac in 0.0f64..1.0, seed_frac in 0.0f64..1.0) {
        let m = 1 + ((n - 1) as f64 * m_frac) as usize;
        let start = ((n - 1) as f64 * seed_frac) as usize;
        let a = farthest_point_sample_from(&coords, 3, m, start).unwrap();
        prop_assert_eq!(&a, &farthest_point_sample_from(&coords, 3, m, start).unwrap());
        prop_assert_eq!(a[0], start);
        prop_assert!(fps_is_greedy(&coords, 3, &a));
    }
}

#[test]
fn k_larger_than_cloud_is_rejected() {
    assert!(knn_coords(&[0.0, 0.0, 1.0, 1.0], 2, &[0.0, 0.0], 3).is_err());
}

#[test]
fn random_downsample_is_distinct() {
    let pts: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, 0.0]).collect();
    let cloud = PointSet::from_points(&pts).unwrap();
    let mut idx = random_downsample(&cloud, 12, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    idx.sort_unstable();
    idx.dedup();
    assert_eq!(idx.len(), 12);
}

#[test]
fn receptive_field_ratio() {
    assert_eq!(receptive_field(8, 2, 32), 0.5);
    assert_eq!(receptive_field(16, 4, 64), 1.0);
}

#[test]
fn gaussian_count_is_clamped_and_centered() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let draws: Vec<usize> = (0..4000).map(|_| gaussian_count(256, &mut rng)).collect();
    assert!(draws.iter().all(|&c| (1..=512).contains(&c)));
    let mean = draws.iter().sum::<usize>() as f64 / draws.len() as f64;
    let var = draws.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / draws.len() as f64;
    // Standard error of the mean is 32 / √4000 ≈ 0.5.
    assert!((mean - 256.0).abs() < 2.5, "mean count {mean}");
    assert!((var.sqrt() - 32.0).abs() < 2.0, "std {}", var.sqrt());
}
