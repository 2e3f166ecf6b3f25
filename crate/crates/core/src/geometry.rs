//! Point sets and the neighborhood machinery X-Conv layers are built on.
//!
//! All searches are exact and deterministic: distances are compared first,
//! ties go to the lower source index.

use std::cmp::Ordering;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// N points in `dim`-dimensional space with optional features and labels.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
    features: Option<Tensor>,
    pub point_labels: Option<Vec<usize>>,
    pub cloud_label: Option<usize>,
}

impl PointSet {
    /// `coords` is row-major `N×dim`.
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.is_empty() || !coords.len().is_multiple_of(dim) {
            return Err(Error::validation(format!(
                "point set needs N ≥ 1 points of dimension ≥ 1 (got {} values for dim {dim})",
                coords.len()
            )));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("point coordinates must be finite"));
        }
        Ok(PointSet {
            dim,
            coords,
            features: None,
            point_labels: None,
            cloud_label: None,
        })
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map_or(0, Vec::len);
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::validation("points have differing dimensions"));
        }
        Self::new(dim, points.concat())
    }

    /// Attaches an `N×C` feature matrix.
    pub fn with_features(mut self, features: Tensor) -> Result<Self> {
        if features.rank() != 2 || features.shape()[0] != self.len() {
            return Err(Error::dim("features", features.shape(), &[self.len()]));
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn with_point_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::dim("point_labels", &[labels.len()], &[self.len()]));
        }
        self.point_labels = Some(labels);
        Ok(self)
    }

    pub fn with_cloud_label(mut self, label: usize) -> Self {
        self.cloud_label = Some(label);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn features(&self) -> Option<&Tensor> {
        self.features.as_ref()
    }

    /// Feature channel count, 0 when there are no features.
    pub fn channels(&self) -> usize {
        self.features.as_ref().map_or(0, Tensor::cols)
    }

    /// A new set made of the given rows (repeats allowed), carrying features and labels.
    pub fn subset(&self, indices: &[usize]) -> Result<PointSet> {
        let mut coords = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            coords.extend_from_slice(self.point(i));
        }
        let mut out = PointSet::new(self.dim, coords)?;
        if let Some(f) = &self.features {
            let c = f.cols();
            let mut data = Vec::with_capacity(indices.len() * c);
            for &i in indices {
                data.extend_from_slice(f.row(i));
            }
            out.features = Some(Tensor::new(&[indices.len(), c], data)?);
        }
        out.point_labels = self
            .point_labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        out.cloud_label = self.cloud_label;
        Ok(out)
    }

    /// Radius of the origin-centred sphere enclosing every point.
    pub fn bounding_radius(&self) -> f64 {
        self.coords
            .chunks(self.dim)
            .map(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn centroid(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.dim];
        for p in self.coords.chunks(self.dim) {
            for (a, v) in c.iter_mut().zip(p) {
                *a += v;
            }
        }
        let n = self.len() as f64;
        c.iter_mut().for_each(|a| *a /= n);
        c
    }
}

/// The K neighbors chosen for one representative point.
#[derive(Clone, Debug, PartialEq)]
pub struct Neighborhood {
    pub rep_index: usize,
    pub rep_coord: Vec<f64>,
    pub neighbor_indices: Vec<usize>,
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn by_dist_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
}

/// k nearest rows of a raw `N×dim` coordinate buffer, sorted by distance.
pub fn knn_coords(coords: &[f64], dim: usize, query: &[f64], k: usize) -> Result<Vec<usize>> {
    let n = coords.len() / dim.max(1);
    if query.len() != dim {
        return Err(Error::dim("knn", &[query.len()], &[dim]));
    }
    if k > n {
        return Err(Error::validation(format!("k = {k} exceeds point count {n}")));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut d: Vec<(f64, usize)> = coords
        .chunks(dim)
        .enumerate()
        .map(|(i, p)| (sq_dist(p, query), i))
        .collect();
    if k < n {
        d.select_nth_unstable_by(k - 1, by_dist_then_index);
        d.truncate(k);
    }
    d.sort_unstable_by(by_dist_then_index);
    Ok(d.into_iter().map(|(_, i)| i).collect())
}

/// The `k` nearest points to `query`, nearest first.
pub fn knn(source: &PointSet, query: &[f64], k: usize) -> Result<Vec<usize>> {
    knn_coords(source.coords(), source.dim(), query, k)
}

/// `k` neighbors drawn uniformly without replacement from the `k·d` nearest.
pub fn dilated_sample_coords<R: Rng + ?Sized>(
    coords: &[f64],
    dim: usize,
    query: &[f64],
    k: usize,
    d: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if d == 0 || k == 0 {
        return Err(Error::validation("k and dilation must be ≥ 1"));
    }
    let pool = knn_coords(coords, dim, query, k * d)?;
    Ok(index::sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect())
}

pub fn dilated_sample<R: Rng + ?Sized>(
    source: &PointSet,
    rep_index: usize,
    query: &[f64],
    k: usize,
    d: usize,
    rng: &mut R,
) -> Result<Neighborhood> {
    Ok(Neighborhood {
        rep_index,
        rep_coord: query.to_vec(),
        neighbor_indices: dilated_sample_coords(source.coords(), source.dim(), query, k, d, rng)?,
    })
}

/// Greedy farthest point sampling starting from `seed`.
pub fn farthest_point_sample_from(coords: &[f64], dim: usize, m: usize, seed: usize) -> Result<Vec<usize>> {
    let n = coords.len() / dim.max(1);
    if m > n {
        return Err(Error::validation(format!("m = {m} exceeds point count {n}")));
    }
    if seed >= n {
        return Err(Error::validation(format!("seed index {seed} out of range")));
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    let mut chosen = Vec::with_capacity(m);
    let mut min_d = vec![f64::INFINITY; n];
    let mut current = seed;
    loop {
        chosen.push(current);
        if chosen.len() == m {
            break;
        }
        let cp = &coords[current * dim..(current + 1) * dim];
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for (i, p) in coords.chunks(dim).enumerate() {
            let dd = sq_dist(p, cp);
            if dd < min_d[i] {
                min_d[i] = dd;
            }
            if min_d[i] > best.0 {
                best = (min_d[i], i);
            }
        }
        current = best.1;
    }
    Ok(chosen)
}

/// Farthest point sampling with an rng-chosen starting point.
pub fn farthest_point_sample<R: Rng + ?Sized>(source: &PointSet, m: usize, rng: &mut R) -> Result<Vec<usize>> {
    let seed = rng.random_range(0..source.len());
    farthest_point_sample_from(source.coords(), source.dim(), m, seed)
}

/// `m` distinct indices chosen uniformly.
pub fn random_downsample<R: Rng + ?Sized>(source: &PointSet, m: usize, rng: &mut R) -> Result<Vec<usize>> {
    if m > source.len() {
        return Err(Error::validation(format!("m = {m} exceeds point count {}", source.len())));
    }
    Ok(index::sample(rng, source.len(), m).into_vec())
}

/// Moves `K×dim` neighbor coordinates into the frame centred at `rep`.
pub fn localize(neighbor_coords: &Tensor, rep: &[f64]) -> Result<Tensor> {
    let dim = neighbor_coords.cols();
    if dim != rep.len() {
        return Err(Error::dim("localize", neighbor_coords.shape(), &[rep.len()]));
    }
    let mut out = neighbor_coords.clone();
    for row in out.data_mut().chunks_mut(dim.max(1)) {
        for (v, r) in row.iter_mut().zip(rep) {
            *v -= r;
        }
    }
    Ok(out)
}

/// Fraction of the previous layer a representative point can reach, `min(1, k·d / n_prev)`.
pub fn receptive_field(k: usize, d: usize, n_prev: usize) -> f64 {
    ((k * d) as f64 / n_prev.max(1) as f64).min(1.0)
}

/// Point count drawn from `Normal(n_target, (n_target/8)²)`, rounded and clamped to `[1, 2·n_target]`.
pub fn gaussian_count<R: Rng + ?Sized>(n_target: usize, rng: &mut R) -> usize {
    let mean = n_target as f64;
    let normal = Normal::new(mean, mean / 8.0).expect("finite std");
    let n = normal.sample(rng).round();
    n.clamp(1.0, (2 * n_target).max(1) as f64) as usize
}

/// Draws exactly `n` points in shuffled order, with replacement only when `n > N`.
pub fn resample_to<R: Rng + ?Sized>(source: &PointSet, n: usize, rng: &mut R) -> Result<PointSet> {
    let len = source.len();
    let mut idx: Vec<usize> = if n <= len {
        index::sample(rng, len, n).into_vec()
    } else {
        let mut v: Vec<usize> = (0..len).collect();
        v.extend((len..n).map(|_| rng.random_range(0..len)));
        v
    };
    idx.shuffle(rng);
    source.subset(&idx)
}

/// Stochastic resampling used as training augmentation.
pub fn gaussian_resample<R: Rng + ?Sized>(source: &PointSet, n_target: usize, rng: &mut R) -> Result<PointSet> {
    let n = gaussian_count(n_target, rng);
    resample_to(source, n, rng)
}
