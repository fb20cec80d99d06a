//! Analytic ground-truth warps: affine jitter plus Gaussian bumps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::imaging::grid::ImageGrid;
use crate::registration::transform::{DisplacementField, Transformation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: [f64; 2],
    pub width: f64,
    pub amplitude: [f64; 2],
}

impl Bump {
    #[inline]
    fn weight(&self, x: [f64; 2]) -> f64 {
        let d = [x[0] - self.center[0], x[1] - self.center[1]];
        (-(d[0] * d[0] + d[1] * d[1]) / (2.0 * self.width * self.width)).exp()
    }
}

/// `φ(x) = A (x − c) + c + t + Σ_k a_k exp(−|x − p_k|² / 2w_k²)`, mapping a
/// subject's coordinates to the base anatomy. All lengths are in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthWarp {
    pub center: [f64; 2],
    pub matrix: [[f64; 2]; 2],
    pub translation: [f64; 2],
    pub bumps: Vec<Bump>,
}

impl Transformation<f64> for TruthWarp {
    fn map(&self, x: [f64; 2]) -> [f64; 2] {
        let d = [x[0] - self.center[0], x[1] - self.center[1]];
        let a = &self.matrix;
        let mut y = [
            a[0][0] * d[0] + a[0][1] * d[1] + self.center[0] + self.translation[0],
            a[1][0] * d[0] + a[1][1] * d[1] + self.center[1] + self.translation[1],
        ];
        for b in &self.bumps {
            let w = b.weight(x);
            y[0] += b.amplitude[0] * w;
            y[1] += b.amplitude[1] * w;
        }
        y
    }
}

impl TruthWarp {
    pub fn identity(grid: &ImageGrid) -> Self {
        let e = grid.extent();
        Self {
            center: [e[0] / 2.0, e[1] / 2.0],
            matrix: [[1.0, 0.0], [0.0, 1.0]],
            translation: [0.0, 0.0],
            bumps: Vec::new(),
        }
    }

    /// `∂φ_c/∂x_d` at `x`.
    pub fn jacobian(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        let mut j = self.matrix;
        for b in &self.bumps {
            let w = b.weight(x);
            let s = 1.0 / (b.width * b.width);
            let d = [x[0] - b.center[0], x[1] - b.center[1]];
            for c in 0..2 {
                for k in 0..2 {
                    j[c][k] -= b.amplitude[c] * w * d[k] * s;
                }
            }
        }
        j
    }

    pub fn det(&self, x: [f64; 2]) -> f64 {
        let j = self.jacobian(x);
        j[0][0] * j[1][1] - j[0][1] * j[1][0]
    }

    /// Smallest Jacobian determinant over the nodes and cell centers of `grid`.
    pub fn min_det(&self, grid: &ImageGrid) -> f64 {
        let (nw, nh) = grid.node_dims();
        let nodes = (0..nh).flat_map(|j| (0..nw).map(move |i| grid.node_position(i, j)));
        nodes
            .chain(grid.cell_centers())
            .map(|x| self.det(x))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn to_field(&self, grid: ImageGrid) -> DisplacementField<f64> {
        DisplacementField::from_transformation(grid, self)
    }

    /// Draws affine jitter and `count` bumps with amplitude up to `magnitude`
    /// pixels. Bumps that would push `det ∇φ` below `min_det` are redrawn, and
    /// after `retries` failed draws the bump is halved until it fits.
    pub fn random(
        rng: &mut impl Rng,
        grid: &ImageGrid,
        magnitude: f64,
        count: usize,
        min_det: f64,
        retries: usize,
    ) -> Self {
        let mut warp = Self::identity(grid);
        if magnitude <= 0.0 {
            return warp;
        }
        let e = grid.extent();
        let size = e[0].min(e[1]);
        // affine jitter grows with the magnitude: ±m/4 degrees, ±m/400 scale, ±m/4 px
        let angle = rng.gen_range(-1.0..=1.0) * magnitude / 4.0 * std::f64::consts::PI / 180.0;
        let scale = [
            1.0 + rng.gen_range(-1.0..=1.0) * magnitude / 400.0,
            1.0 + rng.gen_range(-1.0..=1.0) * magnitude / 400.0,
        ];
        let (s, c) = angle.sin_cos();
        warp.matrix = [[c * scale[0], -s * scale[1]], [s * scale[0], c * scale[1]]];
        warp.translation = [
            rng.gen_range(-1.0..=1.0) * magnitude / 4.0,
            rng.gen_range(-1.0..=1.0) * magnitude / 4.0,
        ];
        for _ in 0..count {
            let mut bump = random_bump(rng, e, size, magnitude);
            let mut attempt = 0;
            loop {
                warp.bumps.push(bump);
                if warp.min_det(grid) > min_det {
                    break;
                }
                warp.bumps.pop();
                attempt += 1;
                if attempt < retries {
                    bump = random_bump(rng, e, size, magnitude);
                } else {
                    bump.amplitude = [bump.amplitude[0] / 2.0, bump.amplitude[1] / 2.0];
                }
            }
        }
        warp
    }
}

fn random_bump(rng: &mut impl Rng, extent: [f64; 2], size: f64, magnitude: f64) -> Bump {
    let center = [
        extent[0] * rng.gen_range(0.25..0.75),
        extent[1] * rng.gen_range(0.25..0.8),
    ];
    let width = size * rng.gen_range(0.10..0.18);
    let dir = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
    let amp = magnitude * rng.gen_range(0.5..1.0);
    Bump {
        center,
        width,
        amplitude: [amp * dir.cos(), amp * dir.sin()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn jacobian_matches_finite_differences() {
        let g = ImageGrid::new(64, 64).unwrap();
        let w = TruthWarp::random(&mut ChaCha8Rng::seed_from_u64(3), &g, 6.0, 5, 0.2, 20);
        let h = 1e-5;
        for x in [[10.0, 20.0], [31.5, 40.2], [50.0, 12.0]] {
            let j = w.jacobian(x);
            for k in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[k] += h;
                xm[k] -= h;
                let (p, m) = (w.map(xp), w.map(xm));
                for c in 0..2 {
                    let fd = (p[c] - m[c]) / (2.0 * h);
                    assert!((fd - j[c][k]).abs() < 1e-7, "{fd} vs {}", j[c][k]);
                }
            }
        }
    }

    #[test]
    fn random_warps_never_fold() {
        let g = ImageGrid::new(48, 48).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let w = TruthWarp::random(&mut rng, &g, 12.0, 8, 0.2, 5);
            assert!(w.min_det(&g) > 0.2);
            assert!(w.to_field(g).min_jacobian_det() > 0.0);
        }
    }

    #[test]
    fn zero_magnitude_is_identity() {
        let g = ImageGrid::new(8, 8).unwrap();
        let w = TruthWarp::random(&mut ChaCha8Rng::seed_from_u64(0), &g, 0.0, 4, 0.2, 5);
        assert_eq!(w.map([3.0, 5.5]), [3.0, 5.5]);
        assert_eq!(w.to_field(g).max_abs(), 0.0);
    }
}
