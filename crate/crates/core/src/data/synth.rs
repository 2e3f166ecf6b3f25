//! Synthetic datasets: surface samples of simple primitives.
//!
//! Every shape is built around the origin, rotated by a uniform angle about
//! the vertical (z) axis and scaled so its farthest point lies at distance 1.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::geometry::PointSet;
use crate::network::Task;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Primitive {
    Sphere,
    Cube,
    Ring,
}

impl Primitive {
    pub const ALL: [Primitive; 3] = [Primitive::Sphere, Primitive::Cube, Primitive::Ring];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Sphere => "sphere",
            Primitive::Cube => "cube",
            Primitive::Ring => "ring",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| Error::validation(format!("unknown shape class {name:?} (sphere, cube, ring)")))
    }

    /// A uniform sample from the primitive's surface.
    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> [f64; 3] {
        match self {
            Primitive::Sphere => unit_sphere(rng),
            Primitive::Cube => {
                let face = rng.random_range(0..6);
                let (u, v) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let s = if face % 2 == 0 { 1.0 } else { -1.0 };
                match face / 2 {
                    0 => [s, u, v],
                    1 => [u, s, v],
                    _ => [u, v, s],
                }
            }
            Primitive::Ring => torus(rng, 1.0, 0.25),
        }
    }
}

fn unit_sphere<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-12 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Uniform on the torus surface: the tube angle is accepted with probability
/// proportional to the local area element.
fn torus<R: Rng + ?Sized>(rng: &mut R, major: f64, minor: f64) -> [f64; 3] {
    let u = rng.random_range(0.0..2.0 * PI);
    let v = loop {
        let v = rng.random_range(0.0..2.0 * PI);
        if rng.random::<f64>() * (major + minor) <= major + minor * v.cos() {
            break v;
        }
    };
    let r = major + minor * v.cos();
    [r * u.cos(), r * u.sin(), minor * v.sin()]
}

/// Lateral surface of a z-aligned cylinder.
fn cylinder<R: Rng + ?Sized>(rng: &mut R, radius: f64, z0: f64, z1: f64) -> [f64; 3] {
    let a = rng.random_range(0.0..2.0 * PI);
    [radius * a.cos(), radius * a.sin(), rng.random_range(z0..z1)]
}

fn rotate_z(p: [f64; 3], angle: f64) -> [f64; 3] {
    let (s, c) = angle.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]]
}

/// Rotates about z and scales so the farthest point sits at radius 1.
fn finish<R: Rng + ?Sized>(points: &mut [[f64; 3]], rng: &mut R) {
    let angle = rng.random_range(0.0..2.0 * PI);
    let mut radius: f64 = 0.0;
    for p in points.iter_mut() {
        *p = rotate_z(*p, angle);
        radius = radius.max((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt());
    }
    if radius > 0.0 {
        for p in points.iter_mut() {
            p.iter_mut().for_each(|v| *v /= radius);
        }
    }
}

/// One classification cloud of the given primitive.
pub fn shape_cloud<R: Rng + ?Sized>(shape: Primitive, n_points: usize, noise_sigma: f64, rng: &mut R) -> Result<PointSet> {
    let noise = Normal::new(0.0, noise_sigma).map_err(|e| Error::validation(format!("noise sigma: {e}")))?;
    let mut pts: Vec<[f64; 3]> = (0..n_points)
        .map(|_| {
            let p = shape.sample(rng);
            if noise_sigma > 0.0 {
                [p[0] + noise.sample(rng), p[1] + noise.sample(rng), p[2] + noise.sample(rng)]
            } else {
                p
            }
        })
        .collect();
    finish(&mut pts, rng);
    PointSet::new(3, pts.concat())
}

/// `per_class` clouds of every requested primitive, interleaved by class.
///
/// The last `test_per_class` clouds of each class form the test split.
pub fn gen_shapes<R: Rng + ?Sized>(
    classes: &[Primitive],
    per_class: usize,
    test_per_class: usize,
    n_points: usize,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<Dataset> {
    if n_points < 8 {
        return Err(Error::validation("gen_shapes needs at least 8 points per cloud"));
    }
    if classes.is_empty() || test_per_class > per_class {
        return Err(Error::validation("need ≥ 1 class and test_per_class ≤ per_class"));
    }
    let mut clouds = Vec::new();
    let mut splits = Vec::new();
    for i in 0..per_class {
        for (label, &shape) in classes.iter().enumerate() {
            clouds.push(shape_cloud(shape, n_points, noise_sigma, rng)?.with_cloud_label(label));
            splits.push(if i < per_class - test_per_class { Split::Train } else { Split::Test });
        }
    }
    Dataset::new(
        Task::Classification,
        classes.iter().map(|c| c.name().to_string()).collect(),
        Vec::new(),
        clouds,
        splits,
    )
}

/// Two-part composite shapes for segmentation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Composite {
    /// Sphere head (part 0) on a thin stick (part 1).
    Lollipop,
    /// Dome cap (part 2) on a thick stem (part 3).
    Mushroom,
}

impl Composite {
    pub const ALL: [Composite; 2] = [Composite::Lollipop, Composite::Mushroom];

    pub fn name(self) -> &'static str {
        match self {
            Composite::Lollipop => "lollipop",
            Composite::Mushroom => "mushroom",
        }
    }

    pub fn parts(self) -> [usize; 2] {
        match self {
            Composite::Lollipop => [0, 1],
            Composite::Mushroom => [2, 3],
        }
    }

    /// Samples a point of the given local part (0 or 1) in the shape's own frame.
    pub fn sample<R: Rng + ?Sized>(self, part: usize, rng: &mut R) -> [f64; 3] {
        match (self, part) {
            (Composite::Lollipop, 0) => {
                let s = unit_sphere(rng);
                [0.5 * s[0], 0.5 * s[1], 0.6 + 0.5 * s[2]]
            }
            (Composite::Lollipop, _) => cylinder(rng, 0.12, -1.0, 0.0),
            (Composite::Mushroom, 0) => {
                let s = unit_sphere(rng);
                [0.7 * s[0], 0.7 * s[1], 0.1 + 0.7 * s[2].abs()]
            }
            (Composite::Mushroom, _) => cylinder(rng, 0.2, -0.9, 0.0),
        }
    }

    /// Unsigned distance from `p` (in the shape's own frame) to each part's surface.
    pub fn part_distances(self, p: [f64; 3]) -> [f64; 2] {
        let cyl = |r: f64, z0: f64, z1: f64| {
            let radial = (p[0] * p[0] + p[1] * p[1]).sqrt() - r;
            let dz = (z0 - p[2]).max(p[2] - z1).max(0.0);
            (radial * radial + dz * dz).sqrt()
        };
        match self {
            Composite::Lollipop => {
                let d = (p[0] * p[0] + p[1] * p[1] + (p[2] - 0.6).powi(2)).sqrt();
                [(d - 0.5).abs(), cyl(0.12, -1.0, 0.0)]
            }
            Composite::Mushroom => {
                let q = [p[0], p[1], (p[2] - 0.1).max(0.0)];
                let d = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
                let below = (0.1 - p[2]).max(0.0);
                [((d - 0.7).powi(2) + below * below).sqrt(), cyl(0.2, -0.9, 0.0)]
            }
        }
    }
}

/// One labelled composite cloud; each point's part is a fair coin flip.
pub fn part_cloud<R: Rng + ?Sized>(shape: Composite, n_points: usize, rng: &mut R) -> Result<PointSet> {
    let parts = shape.parts();
    let mut labels = Vec::with_capacity(n_points);
    let mut pts: Vec<[f64; 3]> = (0..n_points)
        .map(|_| {
            let local = usize::from(rng.random_bool(0.5));
            labels.push(parts[local]);
            shape.sample(local, rng)
        })
        .collect();
    finish(&mut pts, rng);
    PointSet::new(3, pts.concat())?.with_point_labels(labels)
}

/// `per_class` clouds of each composite; the last `test_per_class` of each are test clouds.
pub fn gen_parts<R: Rng + ?Sized>(per_class: usize, test_per_class: usize, n_points: usize, rng: &mut R) -> Result<Dataset> {
    if n_points < 8 {
        return Err(Error::validation("gen_parts needs at least 8 points per cloud"));
    }
    if test_per_class > per_class {
        return Err(Error::validation("test_per_class must not exceed per_class"));
    }
    let mut clouds = Vec::new();
    let mut splits = Vec::new();
    for i in 0..per_class {
        for (category, &shape) in Composite::ALL.iter().enumerate() {
            clouds.push(part_cloud(shape, n_points, rng)?.with_cloud_label(category));
            splits.push(if i < per_class - test_per_class { Split::Train } else { Split::Test });
        }
    }
    Dataset::new(
        Task::Segmentation,
        Composite::ALL.iter().map(|c| c.name().to_string()).collect(),
        Composite::ALL.iter().map(|c| c.parts().to_vec()).collect(),
        clouds,
        splits,
    )
}
