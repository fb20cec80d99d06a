//! Each grid cell is split into four triangles sharing a virtual center node
//! whose value is the mean of the four corners. Nodal fields are linear on each
//! triangle, which gives exact gradients without the checkerboard null modes a
//! single cell-center difference would have.

use crate::imaging::grid::ImageGrid;
use crate::scalar::Real;

/// Corners in the order (i,j), (i+1,j), (i+1,j+1), (i,j+1).
pub(crate) const CORNERS: usize = 4;
pub(crate) const TRIANGLES: usize = 4;

/// Gradient stencils per triangle: `[du coefficients, dv coefficients]` over the
/// four corners, before division by the spacing along that axis.
/// Triangles: bottom (a,b,m), right (b,c,m), top (c,d,m), left (d,a,m).
pub(crate) const TRI_GRAD: [[[f64; CORNERS]; 2]; TRIANGLES] = [
    [[-1.0, 1.0, 0.0, 0.0], [-0.5, -0.5, 0.5, 0.5]],
    [[-0.5, 0.5, 0.5, -0.5], [0.0, -1.0, 1.0, 0.0]],
    [[0.0, 0.0, 1.0, -1.0], [-0.5, -0.5, 0.5, 0.5]],
    [[-0.5, 0.5, 0.5, -0.5], [-1.0, 0.0, 0.0, 1.0]],
];

#[inline]
pub(crate) fn corner_nodes(grid: &ImageGrid, i: usize, j: usize) -> [usize; CORNERS] {
    let nw = grid.width() + 1;
    let a = j * nw + i;
    [a, a + 1, a + nw + 1, a + nw]
}

/// Scaled stencils for one grid, in the scalar type of the computation.
pub(crate) struct Stencil<T> {
    pub grad: [[[T; CORNERS]; 2]; TRIANGLES],
    pub tri_area: T,
}

impl<T: Real> Stencil<T> {
    pub fn new(grid: &ImageGrid) -> Self {
        let [hu, hv] = grid.spacing();
        let mut grad = [[[T::zero(); CORNERS]; 2]; TRIANGLES];
        for (t, tri) in TRI_GRAD.iter().enumerate() {
            for k in 0..CORNERS {
                grad[t][0][k] = T::of(tri[0][k] / hu);
                grad[t][1][k] = T::of(tri[1][k] / hv);
            }
        }
        Self {
            grad,
            tri_area: T::of(grid.cell_area() / TRIANGLES as f64),
        }
    }

    /// Jacobian `G[c][d] = ∂_d u_c` of a nodal 2-vector field on triangle `t`,
    /// given the field at the four corners.
    #[inline]
    pub fn jacobian(&self, t: usize, corners: &[[T; 2]; CORNERS]) -> [[T; 2]; 2] {
        let mut g = [[T::zero(); 2]; 2];
        for (c, row) in g.iter_mut().enumerate() {
            for (d, entry) in row.iter_mut().enumerate() {
                let mut acc = T::zero();
                for k in 0..CORNERS {
                    acc += self.grad[t][d][k] * corners[k][c];
                }
                *entry = acc;
            }
        }
        g
    }

    /// Adds `scale · Σ_d dG[c][d] · stencil[d][k]` to every corner `k`, component `c`.
    #[inline]
    pub fn scatter(&self, t: usize, dg: &[[T; 2]; 2], scale: T, out: &mut [[T; 2]; CORNERS]) {
        for k in 0..CORNERS {
            for c in 0..2 {
                out[k][c] +=
                    scale * (dg[c][0] * self.grad[t][0][k] + dg[c][1] * self.grad[t][1][k]);
            }
        }
    }
}

#[inline]
pub(crate) fn gather<T: Real>(values: &[T], nodes: &[usize; CORNERS]) -> [[T; 2]; CORNERS] {
    let mut out = [[T::zero(); 2]; CORNERS];
    for (o, &n) in out.iter_mut().zip(nodes) {
        *o = [values[2 * n], values[2 * n + 1]];
    }
    out
}

#[inline]
pub(crate) fn scatter_add<T: Real>(
    out: &mut [T],
    nodes: &[usize; CORNERS],
    local: &[[T; 2]; CORNERS],
) {
    for (l, &n) in local.iter().zip(nodes) {
        out[2 * n] += l[0];
        out[2 * n + 1] += l[1];
    }
}

/// `det(I + G)`.
#[inline]
pub(crate) fn jacobian_det<T: Real>(g: &[[T; 2]; 2]) -> T {
    (T::one() + g[0][0]) * (T::one() + g[1][1]) - g[0][1] * g[1][0]
}
