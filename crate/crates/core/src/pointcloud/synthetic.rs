//! Synthetic toy shapes (spheres, cubes, tori) for benchmarks and tests.
//! All generators are deterministic in the seed and return clouds already
//! normalized to the unit cube.

use rand_chacha::ChaCha8Rng;

use crate::random::{rng_stream, stream, uniform_open01};

use super::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Sphere,
    Cube,
    Torus,
}

fn unit(rng: &mut ChaCha8Rng) -> f64 {
    uniform_open01(rng)
}

/// Points uniform on a sphere surface.
pub fn sphere(rng: &mut ChaCha8Rng, n: usize, radius: f64) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| {
            let z = 2.0 * unit(rng) - 1.0;
            let phi = std::f64::consts::TAU * unit(rng);
            let r_xy = (1.0 - z * z).max(0.0).sqrt();
            [
                0.5 + radius * r_xy * phi.cos(),
                0.5 + radius * r_xy * phi.sin(),
                0.5 + radius * z,
            ]
        })
        .collect()
}

/// Points uniform on the surface of an axis-aligned cube.
pub fn cube(rng: &mut ChaCha8Rng, n: usize, half_side: f64) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| {
            let face = (unit(rng) * 6.0) as usize % 6;
            let u = 2.0 * unit(rng) - 1.0;
            let v = 2.0 * unit(rng) - 1.0;
            let h = half_side;
            let p = match face {
                0 => [h, u * h, v * h],
                1 => [-h, u * h, v * h],
                2 => [u * h, h, v * h],
                3 => [u * h, -h, v * h],
                4 => [u * h, v * h, h],
                _ => [u * h, v * h, -h],
            };
            [0.5 + p[0], 0.5 + p[1], 0.5 + p[2]]
        })
        .collect()
}

/// Points uniform in angle on a torus surface (major radius R, tube radius r).
pub fn torus(rng: &mut ChaCha8Rng, n: usize, major: f64, minor: f64) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| {
            let u = std::f64::consts::TAU * unit(rng);
            let v = std::f64::consts::TAU * unit(rng);
            [
                0.5 + (major + minor * v.cos()) * u.cos(),
                0.5 + (major + minor * v.cos()) * u.sin(),
                0.5 + minor * v.sin(),
            ]
        })
        .collect()
}

pub fn shape(rng: &mut ChaCha8Rng, kind: ShapeKind, n: usize) -> PointCloud {
    let pts = match kind {
        ShapeKind::Sphere => {
            let radius = 0.3 + 0.2 * unit(rng);
            sphere(rng, n, radius)
        }
        ShapeKind::Cube => {
            let half = 0.25 + 0.2 * unit(rng);
            cube(rng, n, half)
        }
        ShapeKind::Torus => {
            let major = 0.25 + 0.1 * unit(rng);
            let minor = 0.08 + 0.07 * unit(rng);
            torus(rng, n, major, minor)
        }
    };
    PointCloud::new(pts)
        .normalize_bbox()
        .expect("synthetic shapes have positive extent")
}

/// Deterministic dataset of `count` clouds with `points` points each,
/// cycling through sphere/cube/torus.
pub fn dataset(seed: u64, count: usize, points: usize) -> Vec<PointCloud> {
    let mut rng = rng_stream(seed, stream::DATA);
    (0..count)
        .map(|i| {
            let kind = match i % 3 {
                0 => ShapeKind::Sphere,
                1 => ShapeKind::Cube,
                _ => ShapeKind::Torus,
            };
            shape(&mut rng, kind, points)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_is_deterministic_and_normalized() {
        let a = dataset(11, 6, 64);
        let b = dataset(11, 6, 64);
        assert_eq!(a.len(), 6);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.points(), y.points());
            for p in x.points() {
                for c in 0..3 {
                    assert!(p[c] >= 0.0 && p[c] <= 1.0);
                }
            }
        }
    }
}
