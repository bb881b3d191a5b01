//! Synthetic indoor scenes: a floor, four walls and box/sphere clutter.
//!
//! Class 0 is the floor, class 1 the walls, and every further class is a
//! clutter category (even offsets are boxes, odd offsets spheres). Each
//! point first draws its class from `class_weights`, then a location on a
//! surface of that class.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal};

use crate::cloud::{Point, PointCloud};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    /// Side length of the square room, meters.
    pub extent: f64,
    /// Wall height, meters.
    pub height: f64,
    pub num_points: usize,
    /// Relative point share per class; the length fixes the number of classes.
    pub class_weights: Vec<f64>,
    /// Number of clutter objects, spread round-robin over clutter classes.
    pub clutter: usize,
    /// Standard deviation of Gaussian position jitter, meters.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            extent: 8.0,
            height: 2.5,
            num_points: 50_000,
            class_weights: vec![0.8, 0.1, 0.1],
            clutter: 6,
            noise: 0.005,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Box { min: [f64; 3], size: [f64; 3] },
    Sphere { center: [f64; 3], radius: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Object {
    class: usize,
    shape: Shape,
    color: [f64; 3],
}

const FLOOR_COLOR: [f64; 3] = [0.55, 0.5, 0.45];
const WALL_COLOR: [f64; 3] = [0.85, 0.82, 0.75];
const COLOR_JITTER: f64 = 0.03;

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let c = self.class_weights.len();
        if c < 2 {
            return Err(Error::config("a scene needs at least two classes"));
        }
        if self.class_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || self.class_weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::config("class weights must be nonnegative with a positive sum"));
        }
        if !(self.extent > 2.0 && self.extent.is_finite()) || !(self.height > 0.0 && self.height.is_finite()) {
            return Err(Error::config("scene extent must exceed 2 m and height must be positive"));
        }
        if self.num_points == 0 {
            return Err(Error::config("scene needs at least one point"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config("noise must be finite and nonnegative"));
        }
        for class in 2..c {
            if self.class_weights[class] > 0.0 && self.clutter < class - 1 {
                return Err(Error::config(format!("clutter class {class} has weight but no object")));
            }
        }
        Ok(())
    }
}

fn jitter_color(base: [f64; 3], rng: &mut ChaCha8Rng, normal: &Normal<f64>) -> [f64; 3] {
    base.map(|c| (c + COLOR_JITTER * normal.sample(rng)).clamp(0.0, 1.0))
}

fn sample_box(min: [f64; 3], size: [f64; 3], rng: &mut ChaCha8Rng) -> [f64; 3] {
    let [sx, sy, sz] = size;
    // Top face plus four sides, weighted by area.
    let areas = [sx * sy, sx * sz, sx * sz, sy * sz, sy * sz];
    let face = WeightedIndex::new(areas).expect("box faces have positive area").sample(rng);
    let (u, v): (f64, f64) = (rng.random(), rng.random());
    let local = match face {
        0 => [u * sx, v * sy, sz],
        1 => [u * sx, 0.0, v * sz],
        2 => [u * sx, sy, v * sz],
        3 => [0.0, u * sy, v * sz],
        _ => [sx, u * sy, v * sz],
    };
    [min[0] + local[0], min[1] + local[1], min[2] + local[2]]
}

fn sample_sphere(center: [f64; 3], radius: f64, rng: &mut ChaCha8Rng, normal: &Normal<f64>) -> [f64; 3] {
    loop {
        let d = [normal.sample(rng), normal.sample(rng), normal.sample(rng)];
        let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if len > 1e-12 {
            return [0, 1, 2].map(|a| center[a] + radius * d[a] / len);
        }
    }
}

/// Builds a scene deterministically from `spec.seed`.
pub fn generate_scene(spec: &SceneSpec) -> Result<PointCloud> {
    spec.validate()?;
    let num_classes = spec.class_weights.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let clutter_classes = num_classes - 2;
    let mut objects = Vec::new();
    if clutter_classes > 0 {
        for i in 0..spec.clutter {
            let class = 2 + i % clutter_classes;
            let color = [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)];
            let shape = if (class - 2).is_multiple_of(2) {
                let size = [rng.random_range(0.4..1.2), rng.random_range(0.4..1.2), rng.random_range(0.4..1.0)];
                let min = [
                    rng.random_range(0.3..spec.extent - 0.3 - size[0]),
                    rng.random_range(0.3..spec.extent - 0.3 - size[1]),
                    0.0,
                ];
                Shape::Box { min, size }
            } else {
                let radius = rng.random_range(0.3..0.6);
                let center = [
                    rng.random_range(0.3 + radius..spec.extent - 0.3 - radius),
                    rng.random_range(0.3 + radius..spec.extent - 0.3 - radius),
                    radius,
                ];
                Shape::Sphere { center, radius }
            };
            objects.push(Object { class, shape, color });
        }
    }
    let by_class: Vec<Vec<usize>> =
        (0..num_classes).map(|c| objects.iter().enumerate().filter(|(_, o)| o.class == c).map(|(i, _)| i).collect()).collect();

    let class_dist = WeightedIndex::new(&spec.class_weights).map_err(|e| Error::config(e.to_string()))?;
    let e = spec.extent;
    let mut points = Vec::with_capacity(spec.num_points);
    for _ in 0..spec.num_points {
        let class = class_dist.sample(&mut rng);
        let (mut position, base) = match class {
            0 => ([rng.random_range(0.0..e), rng.random_range(0.0..e), 0.0], FLOOR_COLOR),
            1 => {
                let along = rng.random_range(0.0..e);
                let z = rng.random_range(0.0..spec.height);
                let pos = match rng.random_range(0..4) {
                    0 => [along, 0.0, z],
                    1 => [along, e, z],
                    2 => [0.0, along, z],
                    _ => [e, along, z],
                };
                (pos, WALL_COLOR)
            }
            _ => {
                let pool = &by_class[class];
                let obj = objects[pool[rng.random_range(0..pool.len())]];
                let pos = match obj.shape {
                    Shape::Box { min, size } => sample_box(min, size, &mut rng),
                    Shape::Sphere { center, radius } => sample_sphere(center, radius, &mut rng, &unit),
                };
                (pos, obj.color)
            }
        };
        if spec.noise > 0.0 {
            for c in &mut position {
                *c += spec.noise * unit.sample(&mut rng);
            }
        }
        let color = jitter_color(base, &mut rng, &unit);
        points.push(Point { position, color, gt_label: class });
    }
    PointCloud::new(points, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_floor_is_flat() {
        let spec = SceneSpec { class_weights: vec![1.0, 0.0], noise: 0.0, num_points: 2000, clutter: 0, ..Default::default() };
        let cloud = generate_scene(&spec).unwrap();
        assert!(cloud.points().iter().all(|p| p.position[2] == 0.0 && p.gt_label == 0));
    }

    #[test]
    fn class_shares_follow_weights() {
        let spec = SceneSpec { num_points: 10_000, ..Default::default() };
        let cloud = generate_scene(&spec).unwrap();
        let mut counts = [0usize; 3];
        for p in cloud.points() {
            counts[p.gt_label] += 1;
        }
        for (c, w) in counts.iter().zip([0.8, 0.1, 0.1]) {
            assert!((*c as f64 / 10_000.0 - w).abs() <= 0.02, "{counts:?}");
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let spec = SceneSpec { num_points: 3000, class_weights: vec![0.6, 0.2, 0.1, 0.1], clutter: 4, seed: 3, ..Default::default() };
        assert_eq!(generate_scene(&spec).unwrap(), generate_scene(&spec).unwrap());
        let other = SceneSpec { seed: 4, ..spec.clone() };
        assert_ne!(generate_scene(&spec).unwrap(), generate_scene(&other).unwrap());
    }

    #[test]
    fn degenerate_specs_rejected() {
        assert!(generate_scene(&SceneSpec { class_weights: vec![1.0], ..Default::default() }).is_err());
        assert!(generate_scene(&SceneSpec { clutter: 0, ..Default::default() }).is_err());
        assert!(generate_scene(&SceneSpec { class_weights: vec![0.0, 0.0], ..Default::default() }).is_err());
        assert!(generate_scene(&SceneSpec { num_points: 0, ..Default::default() }).is_err());
    }
}
