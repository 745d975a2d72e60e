//! Sphere point clouds, random densities and target sampling.

use std::f64::consts::PI;

use num_complex::Complex64 as c64;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels::PointSet;

/// Diameter of the test sphere.
pub const SPHERE_DIAMETER: f64 = 2.0;

/// Wavenumber of a sphere of diameter `D` at dimensionless size `κD`.
pub fn sphere_kappa(kappa_d: f64) -> f64 {
    kappa_d / SPHERE_DIAMETER
}

/// `⌈4π (ppw/λ)² R²⌉` with `λ = 2πD/κD`.
pub fn sphere_point_count(kappa_d: f64, points_per_wavelength: f64) -> Result<usize> {
    if !(kappa_d > 0.0 && kappa_d.is_finite()) {
        return Err(Error::invalid(format!("kappa_D must be positive, got {kappa_d}")));
    }
    if !(points_per_wavelength > 0.0 && points_per_wavelength.is_finite()) {
        return Err(Error::invalid(format!(
            "points per wavelength must be positive, got {points_per_wavelength}"
        )));
    }
    let lambda = 2.0 * PI * SPHERE_DIAMETER / kappa_d;
    let r = SPHERE_DIAMETER / 2.0;
    let n = 4.0 * PI * (points_per_wavelength / lambda).powi(2) * r * r;
    Ok(n.ceil() as usize)
}

/// `n` points of the Fibonacci lattice on the unit sphere, with outward
/// normals equal to the positions.
pub fn fibonacci_sphere(n: usize) -> PointSet {
    let golden = PI * (3.0 - 5f64.sqrt());
    let positions: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            let z = 1.0 - (2 * i + 1) as f64 / n as f64;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            let p = [rho * phi.cos(), rho * phi.sin(), z];
            let len = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            [p[0] / len, p[1] / len, p[2] / len]
        })
        .collect();
    PointSet::new(positions.clone())
        .and_then(|p| p.with_normals(positions))
        .expect("lattice points are finite unit vectors")
}

/// Complex densities uniform on `[−1, 1]²`.
pub fn random_densities(n: usize, seed: u64) -> Vec<c64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| c64::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)))
        .collect()
}

/// Sphere sized for `κD` at the given sampling density, carrying seeded
/// densities.
pub fn sample_sphere(kappa_d: f64, points_per_wavelength: f64, seed: u64) -> Result<PointSet> {
    let n = sphere_point_count(kappa_d, points_per_wavelength)?;
    sphere_with_count(n, seed)
}

pub fn sphere_with_count(n: usize, seed: u64) -> Result<PointSet> {
    if n == 0 {
        return Err(Error::invalid("point count must be positive"));
    }
    fibonacci_sphere(n).with_densities(random_densities(n, seed))
}

/// `count` distinct indices below `n` in increasing order, or all of them
/// when `count ≥ n`.
pub fn sample_targets(n: usize, count: usize, seed: u64) -> Vec<usize> {
    if count >= n {
        return (0..n).collect();
    }
    // Decorrelate from the density stream, which uses the same seed.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut picked = index::sample(&mut rng, n, count).into_vec();
    picked.sort_unstable();
    picked
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_points() {
        let p = sphere_with_count(4, 1).unwrap();
        assert_eq!(p.len(), 4);
        for (x, n) in p.positions().iter().zip(p.normals().unwrap()) {
            assert!(((x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt() - 1.0).abs() < 1e-15);
            assert_eq!(x, n);
        }
    }

    #[test]
    fn counts_scale_with_area() {
        assert_eq!(sphere_point_count(4.0 * PI, 10.0).unwrap(), 1257);
        for kd in [2.0 * PI, 5.0, 12.0] {
            let a = sphere_point_count(kd, 10.0).unwrap() as i64;
            let b = sphere_point_count(2.0 * kd, 10.0).unwrap() as i64;
            assert!((b - 4 * a).abs() <= 4);
        }
        assert!(sphere_point_count(0.0, 10.0).is_err());
        assert!(sphere_point_count(1.0, -1.0).is_err());
    }

    #[test]
    fn deterministic() {
        let a = sample_sphere(4.0 * PI, 10.0, 42).unwrap();
        let b = sample_sphere(4.0 * PI, 10.0, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_sphere(4.0 * PI, 10.0, 43).unwrap();
        assert_ne!(a.densities(), c.densities());
        assert!(a.densities().unwrap().iter().all(|z| z.re.abs() <= 1.0 && z.im.abs() <= 1.0));
    }

    #[test]
    fn targets() {
        let t = sample_targets(1000, 500, 3);
        assert_eq!(t.len(), 500);
        assert!(t.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(t, sample_targets(1000, 500, 3));
        assert_eq!(sample_targets(10, 500, 3), (0..10).collect::<Vec<_>>());
    }
}
