//! Deterministic direction lattices on the unit sphere `S_m`.
//!
//! Extrema over `S_m` (the inf/sup in the order-index definitions, the
//! witness search in drift certificates) are evaluated over a fixed lattice
//! so results are reproducible and the approximation direction is known:
//! a lattice minimum over-estimates the true inf and under-estimates the sup.
//!
//! * `m = 1`: exactly `{−1, +1}`.
//! * `m = 2`: uniform angles.
//! * `m = 3`: Fibonacci sphere lattice.
//! * `m > 3`: Halton-sequence points pushed through Box–Muller and
//!   normalised — still fully deterministic.

use nalgebra::DVector;

/// Default lattice resolution for `m ≥ 2`.
pub const DEFAULT_RESOLUTION: usize = 256;

#[derive(Debug, Clone)]
pub struct DirectionGrid {
    dim: usize,
    dirs: Vec<DVector<f64>>,
}

impl DirectionGrid {
    /// Standard lattice with `resolution` points (ignored for `m = 1`).
    pub fn standard(dim: usize, resolution: usize) -> Self {
        assert!(dim >= 1, "dimension must be positive");
        let resolution = resolution.max(2);
        let dirs = match dim {
            1 => vec![
                DVector::from_vec(vec![1.0]),
                DVector::from_vec(vec![-1.0]),
            ],
            2 => (0..resolution)
                .map(|k| {
                    let angle = 2.0 * std::f64::consts::PI * (k as f64) / (resolution as f64);
                    DVector::from_vec(vec![angle.cos(), angle.sin()])
                })
                .collect(),
            3 => fibonacci_sphere(resolution),
            _ => halton_sphere(dim, resolution),
        };
        Self { dim, dirs }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.dirs.iter()
    }

    pub fn get(&self, idx: usize) -> &DVector<f64> {
        &self.dirs[idx]
    }
}

fn fibonacci_sphere(n: usize) -> Vec<DVector<f64>> {
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    (0..n)
        .map(|k| {
            let z = 1.0 - 2.0 * (k as f64 + 0.5) / (n as f64);
            let radius = (1.0 - z * z).max(0.0).sqrt();
            let phi = 2.0 * std::f64::consts::PI * (k as f64) / golden;
            DVector::from_vec(vec![radius * phi.cos(), radius * phi.sin(), z])
        })
        .collect()
}

/// Van der Corput radical inverse in the given base.
fn radical_inverse(mut k: usize, base: usize) -> f64 {
    let mut inv = 0.0;
    let mut denom = 1.0;
    while k > 0 {
        denom *= base as f64;
        inv += (k % base) as f64 / denom;
        k /= base;
    }
    inv
}

const PRIMES: [usize; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// `index`-th Halton point in `[0,1)^dim` (1-based index, prime bases).
/// Deterministic low-discrepancy sampling for box-shaped search regions.
pub(crate) fn halton_cube(index: usize, dim: usize) -> Vec<f64> {
    assert!(dim <= PRIMES.len(), "dimension too large for Halton sampling");
    (0..dim).map(|j| radical_inverse(index, PRIMES[j])).collect()
}

fn halton_sphere(dim: usize, n: usize) -> Vec<DVector<f64>> {
    assert!(2 * dim <= PRIMES.len(), "dimension too large for direction lattice");
    (0..n)
        .map(|k| {
            let mut coords = Vec::with_capacity(dim);
            for j in 0..dim {
                // Box–Muller on a Halton pair gives a deterministic Gaussian.
                let u1 = radical_inverse(k + 1, PRIMES[2 * j]).max(1e-12);
                let u2 = radical_inverse(k + 1, PRIMES[2 * j + 1]);
                let g = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                coords.push(g);
            }
            let mut v = DVector::from_vec(coords);
            let norm = v.norm();
            if norm < 1e-9 {
                v[0] = 1.0;
            } else {
                v /= norm;
            }
            v
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_grid_is_signs() {
        let g = DirectionGrid::standard(1, 256);
        assert_eq!(g.len(), 2);
        assert_eq!(g.get(0)[0], 1.0);
        assert_eq!(g.get(1)[0], -1.0);
    }

    #[test]
    fn all_directions_are_unit() {
        for dim in [2usize, 3, 5] {
            let g = DirectionGrid::standard(dim, 64);
            assert_eq!(g.len(), 64);
            for v in g.iter() {
                assert!((v.norm() - 1.0).abs() < 1e-12, "dim {dim}: |v| = {}", v.norm());
            }
        }
    }

    #[test]
    fn planar_grid_contains_axes() {
        let g = DirectionGrid::standard(2, 256);
        // 256 divides the circle so ±e1, ±e2 are exact lattice points.
        let hits = |target: [f64; 2]| {
            g.iter()
                .any(|v| (v[0] - target[0]).abs() < 1e-15 && (v[1] - target[1]).abs() < 1e-15)
        };
        assert!(hits([1.0, 0.0]));
        assert!(hits([0.0, 1.0]));
        assert!(hits([-1.0, 0.0]));
        assert!(hits([0.0, -1.0]));
    }

    #[test]
    fn fibonacci_sphere_covers_poles() {
        let g = DirectionGrid::standard(3, 512);
        let max_z = g.iter().map(|v| v[2]).fold(f64::MIN, f64::max);
        let min_z = g.iter().map(|v| v[2]).fold(f64::MAX, f64::min);
        assert!(max_z > 0.99);
        assert!(min_z < -0.99);
    }
}
