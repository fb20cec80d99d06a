use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::grid::ImageGrid;
use crate::registration::mesh::{self, Stencil, CORNERS, TRIANGLES};
use crate::scalar::Real;

/// A spatial map `y: Ω → R²`.
pub trait Transformation<T: Real> {
    fn map(&self, x: [T; 2]) -> [T; 2];
}

/// A transformation driven by a flat parameter vector, as seen by the optimizers.
///
/// The distance term only needs `y` at the reference cell centers and the
/// Jacobian of those positions with respect to the parameters.
pub trait Parametric<T: Real>: Transformation<T> + Sized {
    fn params(&self) -> &[T];

    fn with_params(&self, params: Vec<T>) -> Self;

    /// `y(x_c)` for every cell center of `grid`, in storage order.
    fn cell_positions(&self, grid: &ImageGrid) -> Vec<[T; 2]>;

    /// `out += Jᵀ w`, where `w` holds one 2-vector per cell of `grid`.
    fn add_transpose_jacobian(&self, grid: &ImageGrid, w: &[[T; 2]], out: &mut [T]);

    /// `J v` as one 2-vector per cell of `grid`.
    fn apply_jacobian(&self, grid: &ImageGrid, v: &[T]) -> Vec<[T; 2]>;
}

/// The identity map.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl<T: Real> Transformation<T> for Identity {
    #[inline]
    fn map(&self, x: [T; 2]) -> [T; 2] {
        x
    }
}

impl<T: Real> Parametric<T> for Identity {
    fn params(&self) -> &[T] {
        &[]
    }

    fn with_params(&self, _: Vec<T>) -> Self {
        Identity
    }

    fn cell_positions(&self, grid: &ImageGrid) -> Vec<[T; 2]> {
        grid.cell_centers()
            .into_iter()
            .map(|c| [T::of(c[0]), T::of(c[1])])
            .collect()
    }

    fn add_transpose_jacobian(&self, _: &ImageGrid, _: &[[T; 2]], _: &mut [T]) {}

    fn apply_jacobian(&self, grid: &ImageGrid, _: &[T]) -> Vec<[T; 2]> {
        vec![[T::zero(); 2]; grid.len()]
    }
}

/// `y(x) = A x + t`, parameters ordered `(a11, a12, a21, a22, t1, t2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform<T> {
    params: [T; 6],
}

impl<T: Real> AffineTransform<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self {
            params: [o, z, z, o, z, z],
        }
    }

    pub fn new(matrix: [[T; 2]; 2], translation: [T; 2]) -> Self {
        Self {
            params: [
                matrix[0][0],
                matrix[0][1],
                matrix[1][0],
                matrix[1][1],
                translation[0],
                translation[1],
            ],
        }
    }

    pub fn from_params(params: [T; 6]) -> Self {
        Self { params }
    }

    pub fn translation(t: [T; 2]) -> Self {
        let mut a = Self::identity();
        a.params[4] = t[0];
        a.params[5] = t[1];
        a
    }

    /// Rotation by `angle` (radians, counter-clockwise in (u, v)) about `center`.
    pub fn rotation_about(angle: T, center: [T; 2]) -> Self {
        let (s, c) = angle.sin_cos();
        let m = [[c, -s], [s, c]];
        let t = [
            center[0] - (m[0][0] * center[0] + m[0][1] * center[1]),
            center[1] - (m[1][0] * center[0] + m[1][1] * center[1]),
        ];
        Self::new(m, t)
    }

    pub fn matrix(&self) -> [[T; 2]; 2] {
        [
            [self.params[0], self.params[1]],
            [self.params[2], self.params[3]],
        ]
    }

    pub fn offset(&self) -> [T; 2] {
        [self.params[4], self.params[5]]
    }

    pub fn det(&self) -> T {
        self.params[0] * self.params[3] - self.params[1] * self.params[2]
    }

    pub fn as_array(&self) -> [T; 6] {
        self.params
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn cast<U: Real>(&self) -> AffineTransform<U> {
        AffineTransform {
            params: self.params.map(|p| U::of(p.as_f64())),
        }
    }
}

impl<T: Real> Transformation<T> for AffineTransform<T> {
    #[inline]
    fn map(&self, x: [T; 2]) -> [T; 2] {
        let p = &self.params;
        [
            p[0] * x[0] + p[1] * x[1] + p[4],
            p[2] * x[0] + p[3] * x[1] + p[5],
        ]
    }
}

impl<T: Real> Parametric<T> for AffineTransform<T> {
    fn params(&self) -> &[T] {
        &self.params
    }

    fn with_params(&self, params: Vec<T>) -> Self {
        let mut p = [T::zero(); 6];
        p.copy_from_slice(&params);
        Self { params: p }
    }

    fn cell_positions(&self, grid: &ImageGrid) -> Vec<[T; 2]> {
        grid.cell_centers()
            .into_iter()
            .map(|c| self.map([T::of(c[0]), T::of(c[1])]))
            .collect()
    }

    fn add_transpose_jacobian(&self, grid: &ImageGrid, w: &[[T; 2]], out: &mut [T]) {
        for (c, wc) in grid.cell_centers().into_iter().zip(w) {
            let (x0, x1) = (T::of(c[0]), T::of(c[1]));
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
                let (x0, x1) = (T::of(c[0]), T::of(c[1]));
                [v[0] * x0 + v[1] * x1 + v[4], v[2] * x0 + v[3] * x1 + v[5]]
            })
            .collect()
    }
}

/// Nodal displacement field: `y(x) = x + u(x)` with `u` bilinear between the
/// `(width+1)×(height+1)` cell corners. Components are interleaved per node,
/// nodes row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField<T> {
    grid: ImageGrid,
    values: Vec<T>,
}

impl<T: Real> DisplacementField<T> {
    pub fn zeros(grid: ImageGrid) -> Self {
        Self {
            grid,
            values: vec![T::zero(); 2 * grid.node_count()],
        }
    }

    pub fn new(grid: ImageGrid, values: Vec<T>) -> Result<Self> {
        if values.len() != 2 * grid.node_count() {
            return Err(Error::Shape(format!(
                "displacement on {}x{} cells needs {} values, got {}",
                grid.width(),
                grid.height(),
                2 * grid.node_count(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite displacement".into()));
        }
        Ok(Self { grid, values })
    }

    /// Samples `u` at every node position.
    pub fn from_fn(grid: ImageGrid, mut f: impl FnMut([f64; 2]) -> [T; 2]) -> Self {
        let (nw, nh) = grid.node_dims();
        let mut values = Vec::with_capacity(2 * nw * nh);
        for j in 0..nh {
            for i in 0..nw {
                let u = f(grid.node_position(i, j));
                values.extend_from_slice(&u);
            }
        }
        Self { grid, values }
    }

    /// Nodal field whose `y` equals `transform` at every node.
    pub fn from_transformation(grid: ImageGrid, transform: &impl Transformation<T>) -> Self {
        Self::from_fn(grid, |p| {
            let x = [T::of(p[0]), T::of(p[1])];
            let y = transform.map(x);
            [y[0] - x[0], y[1] - x[1]]
        })
    }

    #[inline]
    pub fn grid(&self) -> &ImageGrid {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> [T; 2] {
        let n = j * (self.grid.width() + 1) + i;
        [self.values[2 * n], self.values[2 * n + 1]]
    }

    /// Bilinear displacement at `x`; outside `Ω` the boundary value is extended.
    pub fn displacement_at(&self, x: [T; 2]) -> [T; 2] {
        let [hu, hv] = self.grid.spacing();
        let (w, h) = (self.grid.width(), self.grid.height());
        let locate = |s: T, n: usize| -> (usize, T) {
            let s = s.max(T::zero()).min(T::of_usize(n));
            let i = s.floor().to_usize().unwrap_or(0).min(n - 1);
            (i, s - T::of_usize(i))
        };
        let (i, fu) = locate(x[0] / T::of(hu), w);
        let (j, fv) = locate(x[1] / T::of(hv), h);
        let one = T::one();
        let (a, b, c, d) = (
            self.node(i, j),
            self.node(i + 1, j),
            self.node(i + 1, j + 1),
            self.node(i, j + 1),
        );
        let mut out = [T::zero(); 2];
        for k in 0..2 {
            out[k] = (one - fu) * (one - fv) * a[k]
                + fu * (one - fv) * b[k]
                + fu * fv * c[k]
                + (one - fu) * fv * d[k];
        }
        out
    }

    /// Largest displacement component magnitude.
    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Bilinear upsampling of the nodal displacement onto `fine`.
    pub fn prolongate(&self, fine: ImageGrid) -> Result<Self> {
        if fine.extent() != self.grid.extent() {
            return Err(Error::Shape("prolongation must keep the domain".into()));
        }
        Ok(Self::from_fn(fine, |p| {
            self.displacement_at([T::of(p[0]), T::of(p[1])])
        }))
    }

    /// `det ∇y` on every triangle of every cell, four per cell in storage order.
    pub fn triangle_determinants(&self) -> Vec<T> {
        let st = Stencil::<T>::new(&self.grid);
        let mut out = Vec::with_capacity(self.grid.len() * TRIANGLES);
        for j in 0..self.grid.height() {
            for i in 0..self.grid.width() {
                let corners = mesh::gather(&self.values, &mesh::corner_nodes(&self.grid, i, j));
                for t in 0..TRIANGLES {
                    out.push(mesh::jacobian_det(&st.jacobian(t, &corners)));
                }
            }
        }
        out
    }

    /// Smallest `det ∇y` over all triangles.
    pub fn min_jacobian_det(&self) -> T {
        self.triangle_determinants()
            .into_iter()
            .fold(T::infinity(), |m, d| m.min(d))
    }

    pub fn cast<U: Real>(&self) -> DisplacementField<U> {
        DisplacementField {
            grid: self.grid,
            values: self.values.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

impl<T: Real> Transformation<T> for DisplacementField<T> {
    #[inline]
    fn map(&self, x: [T; 2]) -> [T; 2] {
        let u = self.displacement_at(x);
        [x[0] + u[0], x[1] + u[1]]
    }
}

impl<T: Real> Parametric<T> for DisplacementField<T> {
    fn params(&self) -> &[T] {
        &self.values
    }

    fn with_params(&self, params: Vec<T>) -> Self {
        assert_eq!(params.len(), self.values.len());
        Self {
            grid: self.grid,
            values: params,
        }
    }

    /// Cell centers displaced by the mean of the four corner displacements.
    fn cell_positions(&self, grid: &ImageGrid) -> Vec<[T; 2]> {
        assert!(grid.same_shape(&self.grid), "field and image grids differ");
        let quarter = T::of(0.25);
        let mut out = Vec::with_capacity(grid.len());
        for j in 0..grid.height() {
            for i in 0..grid.width() {
                let c = grid.cell_center(i, j);
                let corners = mesh::gather(&self.values, &mesh::corner_nodes(grid, i, j));
                let mut y = [T::of(c[0]), T::of(c[1])];
                for corner in &corners {
                    y[0] += quarter * corner[0];
                    y[1] += quarter * corner[1];
                }
                out.push(y);
            }
        }
        out
    }

    fn add_transpose_jacobian(&self, grid: &ImageGrid, w: &[[T; 2]], out: &mut [T]) {
        let quarter = T::of(0.25);
        for j in 0..grid.height() {
            for i in 0..grid.width() {
                let wc = w[grid.index(i, j)];
                let local = [[quarter * wc[0], quarter * wc[1]]; CORNERS];
                mesh::scatter_add(out, &mesh::corner_nodes(grid, i, j), &local);
            }
        }
    }

    fn apply_jacobian(&self, grid: &ImageGrid, v: &[T]) -> Vec<[T; 2]> {
        let quarter = T::of(0.25);
        let mut out = Vec::with_capacity(grid.len());
        for j in 0..grid.height() {
            for i in 0..grid.width() {
                let corners = mesh::gather(v, &mesh::corner_nodes(grid, i, j));
                let mut s = [T::zero(); 2];
                for corner in &corners {
                    s[0] += corner[0];
                    s[1] += corner[1];
                }
                out.push([quarter * s[0], quarter * s[1]]);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn affine_field_is_reproduced_exactly() {
        let grid = ImageGrid::new(8, 8).unwrap();
        let a = AffineTransform::new([[1.1, 0.2], [-0.1, 0.95]], [1.5, -2.0]);
        let field = DisplacementField::from_transformation(grid, &a);
        for &x in &[[0.3, 7.1], [4.0, 4.0], [2.25, 5.5]] {
            let y = field.map(x);
            let z = a.map(x);
            assert_relative_eq!(y[0], z[0], epsilon = 1e-12);
            assert_relative_eq!(y[1], z[1], epsilon = 1e-12);
        }
        for d in field.triangle_determinants() {
            assert_relative_eq!(d, a.det(), epsilon = 1e-12);
        }
    }

    #[test]
    fn prolongation_preserves_affine_fields() {
        let coarse = ImageGrid::with_extent(4, 4, [16.0, 16.0]).unwrap();
        let fine = ImageGrid::new(16, 16).unwrap();
        let a = AffineTransform::rotation_about(0.2f64, [8.0, 8.0]);
        let f = DisplacementField::from_transformation(coarse, &a)
            .prolongate(fine)
            .unwrap();
        let g = DisplacementField::from_transformation(fine, &a);
        for (x, y) in f.values().iter().zip(g.values()) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn cell_positions_match_map_at_centers() {
        let grid = ImageGrid::new(5, 4).unwrap();
        let f = DisplacementField::from_fn(grid, |p| [0.1 * p[0] * p[1], (p[0] - p[1]).sin()]);
        let pos = f.cell_positions(&grid);
        for j in 0..4 {
            for i in 0..5 {
                let c = grid.cell_center(i, j);
                let y = f.map(c);
                assert_relative_eq!(pos[grid.index(i, j)][0], y[0], epsilon = 1e-12);
                assert_relative_eq!(pos[grid.index(i, j)][1], y[1], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn jacobian_transpose_is_adjoint() {
        let grid = ImageGrid::new(6, 5).unwrap();
        let f = DisplacementField::<f64>::zeros(grid);
        let v: Vec<f64> = (0..f.values().len())
            .map(|k| ((k * 37) % 11) as f64 - 5.0)
            .collect();
        let w: Vec<[f64; 2]> = (0..grid.len())
            .map(|k| [((k * 13) % 7) as f64, ((k * 3) % 5) as f64 - 2.0])
            .collect();
        let jv = f.apply_jacobian(&grid, &v);
        let lhs: f64 = jv
            .iter()
            .zip(&w)
            .map(|(a, b)| a[0] * b[0] + a[1] * b[1])
            .sum();
        let mut jtw = vec![0.0; v.len()];
        f.add_transpose_jacobian(&grid, &w, &mut jtw);
        let rhs: f64 = jtw.iter().zip(&v).map(|(a, b)| a * b).sum();
        assert_relative_eq!(lhs, rhs, epsilon = 1e-10);

        let a = AffineTransform::<f64>::identity();
        let p = [0.3, -1.0, 2.0, 0.5, 1.0, -2.0];
        let jv = a.apply_jacobian(&grid, &p);
        let lhs: f64 = jv
            .iter()
            .zip(&w)
            .map(|(a, b)| a[0] * b[0] + a[1] * b[1])
            .sum();
        let mut jtw = vec![0.0; 6];
        a.add_transpose_jacobian(&grid, &w, &mut jtw);
        let rhs: f64 = jtw.iter().zip(&p).map(|(a, b)| a * b).sum();
        assert_relative_eq!(lhs, rhs, epsilon = 1e-10);
    }

    #[test]
    fn folding_is_visible_in_determinants() {
        let grid = ImageGrid::new(4, 4).unwrap();
        let mut f = DisplacementField::<f64>::zeros(grid);
        // push node (2,2) past its right neighbour
        let n = 2 * (2 * 5 + 2);
        f.values[n] = 1.5;
        assert!(f.min_jacobian_det() <= 0.0);
    }
}
