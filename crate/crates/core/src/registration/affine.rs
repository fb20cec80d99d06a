//! Parametric pre-alignment: Gauss-Newton on the six affine parameters.

use crate::error::Result;
use crate::imaging::grid::ImageGrid;
use crate::imaging::image::ScalarImage;
use crate::registration::config::{AffineConfig, LineSearchConfig};
use crate::registration::distance::{ssd_terms, ssd_value};
use crate::registration::transform::{AffineTransform, Parametric, Transformation};
use crate::scalar::Real;

/// `y(x) = A (x − c) + c + t`. Centering keeps the normal equations well scaled.
#[derive(Debug, Clone)]
struct CenteredAffine<T> {
    params: Vec<T>,
    center: [T; 2],
}

impl<T: Real> CenteredAffine<T> {
    fn identity(center: [T; 2]) -> Self {
        let (o, z) = (T::one(), T::zero());
        Self {
            params: vec![o, z, z, o, z, z],
            center,
        }
    }

    fn to_affine(&self) -> AffineTransform<T> {
        let p = &self.params;
        let c = self.center;
        let m = [[p[0], p[1]], [p[2], p[3]]];
        let t = [
            c[0] + p[4] - (m[0][0] * c[0] + m[0][1] * c[1]),
            c[1] + p[5] - (m[1][0] * c[0] + m[1][1] * c[1]),
        ];
        AffineTransform::new(m, t)
    }

    #[inline]
    fn local(&self, c: [f64; 2]) -> (T, T) {
        (T::of(c[0]) - self.center[0], T::of(c[1]) - self.center[1])
    }
}

impl<T: Real> Transformation<T> for CenteredAffine<T> {
    fn map(&self, x: [T; 2]) -> [T; 2] {
        self.to_affine().map(x)
    }
}

impl<T: Real> Parametric<T> for CenteredAffine<T> {
    fn params(&self) -> &[T] {
        &self.params
    }

    fn with_params(&self, params: Vec<T>) -> Self {
        Self {
            params,
            center: self.center,
        }
    }

    fn cell_positions(&self, grid: &ImageGrid) -> Vec<[T; 2]> {
        let p = &self.params;
        grid.cell_centers()
            .into_iter()
            .map(|c| {
                let (x0, x1) = self.local(c);
                [
                    p[0] * x0 + p[1] * x1 + self.center[0] + p[4],
                    p[2] * x0 + p[3] * x1 + self.center[1] + p[5],
                ]
            })
            .collect()
    }

    fn add_transpose_jacobian(&self, grid: &ImageGrid, w: &[[T; 2]], out: &mut [T]) {
        for (c, wc) in grid.cell_centers().into_iter().zip(w) {
            let (x0, x1) = self.local(c);
            out[0] += wc[0] * x0;
            out[1] += wc[0] * x1;
            out[2] += wc[1] * x0;
            out[3] += wc[1] * x1;
            out[4] += wc[0];
            out[5] += wc[1];
        }
    }

    fn apply_jacobian(&self, grid: &ImageGrid, v: &[T]) -> Vec<[T; 2]> {
        grid.cell_centers()
            .into_iter()
            .map(|c| {
                let (x0, x1) = self.local(c);
                [v[0] * x0 + v[1] * x1 + v[4], v[2] * x0 + v[3] * x1 + v[5]]
            })
            .collect()
    }
}

/// Solves the small dense system `m x = b` by Gaussian elimination with partial
/// pivoting. Returns `None` when the matrix is numerically singular.
fn solve_dense<T: Real>(mut m: Vec<Vec<T>>, mut b: Vec<T>) -> Option<Vec<T>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&a, &c| {
            m[a][col]
                .abs()
                .partial_cmp(&m[c][col].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if !(m[pivot][col].abs() > T::zero()) {
            return None;
        }
        m.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..n {
                let v = m[col][k];
                m[row][k] -= f * v;
            }
            let bc = b[col];
            b[row] -= f * bc;
        }
    }
    let mut x = vec![T::zero(); n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in row + 1..n {
            s -= m[row][k] * x[k];
        }
        x[row] = s / m[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Affine pre-registration of `template` onto `reference` by Gauss-Newton from
/// the identity. Returns the best iterate; degenerate results (`det A ≤ min_det`)
/// fall back to the identity.
pub fn affine_preregister<T: Real>(
    template: &ScalarImage<T>,
    reference: &ScalarImage<T>,
    config: &AffineConfig,
    line_search: &LineSearchConfig,
) -> Result<AffineTransform<T>> {
    let grid = *reference.grid();
    let ext = grid.extent();
    let center = [T::of(ext[0] / 2.0), T::of(ext[1] / 2.0)];
    let mut y = CenteredAffine::identity(center);
    let mut terms = ssd_terms(template, reference, &y)?;
    let j0 = terms.value;
    let mut g = terms.gradient(&y, reference);
    let g0 = g.iter().map(|&v| v * v).sum::<T>().sqrt();
    if g0 == T::zero() || !config.enabled {
        return Ok(AffineTransform::identity());
    }
    let damping = T::of(1e-9);
    for _ in 0..config.max_iterations {
        // assemble the 6×6 Gauss-Newton matrix column by column
        let mut h = vec![vec![T::zero(); 6]; 6];
        for k in 0..6 {
            let mut e = vec![T::zero(); 6];
            e[k] = T::one();
            let mut col = vec![T::zero(); 6];
            terms.gauss_newton_apply(&y, reference, &e, &mut col);
            for r in 0..6 {
                h[r][k] = col[r];
            }
        }
        for k in 0..6 {
            let d = h[k][k];
            h[k][k] = d + damping * d.max(T::one());
        }
        let rhs: Vec<T> = g.iter().map(|&v| -v).collect();
        let mut dir = solve_dense(h, rhs.clone()).unwrap_or(rhs);
        let mut slope: T = g.iter().zip(&dir).map(|(&a, &b)| a * b).sum();
        if !(slope < T::zero()) {
            dir = g.iter().map(|&v| -v).collect();
            slope = -g.iter().map(|&v| v * v).sum::<T>();
        }
        let mut step = T::one();
        let mut accepted = None;
        for _ in 0..line_search.max_trials {
            let trial = y.with_params(
                y.params
                    .iter()
                    .zip(&dir)
                    .map(|(&p, &d)| p + step * d)
                    .collect(),
            );
            let v = ssd_value(template, reference, &trial)?;
            if v <= terms.value + T::of(line_search.c) * step * slope {
                accepted = Some(trial);
                break;
            }
            step *= T::of(line_search.factor);
        }
        let Some(next) = accepted else { break };
        let previous = terms.value;
        y = next;
        terms = ssd_terms(template, reference, &y)?;
        g = terms.gradient(&y, reference);
        let gnorm = g.iter().map(|&v| v * v).sum::<T>().sqrt();
        if (previous - terms.value).abs() <= T::of(1e-9) * (T::one() + j0.abs())
            || gnorm <= T::of(1e-6) * g0
        {
            break;
        }
    }
    let result = y.to_affine();
    if !result.is_finite() || !(result.det() > T::of(config.min_det)) {
        log::warn!(
            "affine pre-registration degenerated (det {:.3e}); using identity",
            result.det().as_f64()
        );
        return Ok(AffineTransform::identity());
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_solver_matches_known_solution() {
        let m = vec![
            vec![4.0, 1.0, 0.0],
            vec![1.0, 3.0, 1.0],
            vec![0.0, 1.0, 2.0],
        ];
        let x = [1.0, -2.0, 0.5];
        let b: Vec<f64> = m
            .iter()
            .map(|r| r.iter().zip(&x).map(|(a, b)| a * b).sum())
            .collect();
        let got = solve_dense(m, b).unwrap();
        for (g, e) in got.iter().zip(&x) {
            assert!((g - e).abs() < 1e-12);
        }
        assert!(solve_dense(vec![vec![0.0, 0.0], vec![0.0, 0.0]], vec![1.0, 1.0]).is_none());
    }

    #[test]
    fn centered_affine_converts_to_plain_affine() {
        let mut y = CenteredAffine::identity([4.0f64, 3.0]);
        y.params = vec![1.1, 0.2, -0.1, 0.9, 0.5, -0.25];
        let a = y.to_affine();
        let grid = ImageGrid::new(8, 6).unwrap();
        for (p, c) in y.cell_positions(&grid).iter().zip(grid.cell_centers()) {
            let q = a.map(c);
            assert!((p[0] - q[0]).abs() < 1e-12 && (p[1] - q[1]).abs() < 1e-12);
        }
    }
}
