use crate::error::{Error, Result};
use crate::imaging::grid::ImageGrid;
use crate::scalar::Real;

/// Scalar samples on a cell-centered grid, continuous through bilinear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarImage<T> {
    grid: ImageGrid,
    values: Vec<T>,
}

impl<T: Real> ScalarImage<T> {
    pub fn new(grid: ImageGrid, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "image of {}x{} needs {} values, got {}",
                grid.width(),
                grid.height(),
                grid.len(),
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite sample at index {k}"
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: ImageGrid, value: T) -> Self {
        assert!(value.is_finite());
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    /// Builds an image by evaluating `f(i, j)` at every cell.
    pub fn from_fn(grid: ImageGrid, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.height() {
            for i in 0..grid.width() {
                values.push(f(i, j));
            }
        }
        Self::new(grid, values)
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
    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[self.grid.index(i, j)]
    }

    pub fn mean(&self) -> T {
        self.values.iter().copied().sum::<T>() / T::of_usize(self.values.len())
    }

    pub fn min_max(&self) -> (T, T) {
        self.values
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Converts the samples to another scalar type.
    pub fn cast<U: Real>(&self) -> ScalarImage<U> {
        ScalarImage {
            grid: self.grid,
            values: self
                .values
                .iter()
                .map(|v| U::from_f64(v.as_f64()).unwrap_or_else(U::zero))
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Result<Self> {
        Self::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    #[inline]
    fn sample_or_zero(&self, i: isize, j: isize) -> T {
        if i < 0 || j < 0 || i >= self.grid.width() as isize || j >= self.grid.height() as isize {
            T::zero()
        } else {
            self.values[j as usize * self.grid.width() + i as usize]
        }
    }

    /// Bilinear value and spatial gradient at `x`.
    ///
    /// Outside the hull of cell centers the image is padded with zero-valued
    /// ghost cells, so values fall linearly to zero half a pixel beyond `Ω`.
    #[inline]
    pub fn sample_with_gradient(&self, x: [T; 2]) -> (T, [T; 2]) {
        let [hu, hv] = self.grid.spacing();
        let (hu, hv) = (T::of(hu), T::of(hv));
        let s = x[0] / hu - T::half();
        let t = x[1] / hv - T::half();
        let sf = s.floor();
        let tf = t.floor();
        let w = T::of_usize(self.grid.width());
        let h = T::of_usize(self.grid.height());
        if !(sf >= -T::one() && tf >= -T::one() && sf < w && tf < h) {
            return (T::zero(), [T::zero(); 2]);
        }
        let (fu, fv) = (s - sf, t - tf);
        let i0 = sf.to_isize().unwrap_or(-2);
        let j0 = tf.to_isize().unwrap_or(-2);
        let v00 = self.sample_or_zero(i0, j0);
        let v10 = self.sample_or_zero(i0 + 1, j0);
        let v01 = self.sample_or_zero(i0, j0 + 1);
        let v11 = self.sample_or_zero(i0 + 1, j0 + 1);
        let one = T::one();
        let value = (one - fu) * (one - fv) * v00
            + fu * (one - fv) * v10
            + (one - fu) * fv * v01
            + fu * fv * v11;
        let du = ((one - fv) * (v10 - v00) + fv * (v11 - v01)) / hu;
        let dv = ((one - fu) * (v01 - v00) + fu * (v11 - v10)) / hv;
        (value, [du, dv])
    }

    #[inline]
    pub fn sample(&self, x: [T; 2]) -> T {
        self.sample_with_gradient(x).0
    }

    /// Evaluates the continuous image model at arbitrary points of the plane.
    pub fn interpolate(&self, points: &[[T; 2]]) -> Result<Vec<T>> {
        if let Some(p) = points
            .iter()
            .find(|p| !(p[0].is_finite() && p[1].is_finite()))
        {
            return Err(Error::InvalidInput(format!(
                "non-finite interpolation point {p:?}"
            )));
        }
        Ok(points.iter().map(|&p| self.sample(p)).collect())
    }

    /// Half-resolution image; each coarse cell is the mean of its 2×2 children.
    pub fn restrict(&self) -> Result<Self> {
        let coarse = self.grid.coarsen()?;
        let quarter = T::of(0.25);
        Self::from_fn(coarse, |i, j| {
            (self.get(2 * i, 2 * j)
                + self.get(2 * i + 1, 2 * j)
                + self.get(2 * i, 2 * j + 1)
                + self.get(2 * i + 1, 2 * j + 1))
                * quarter
        })
    }

    /// Repeated restriction until the width equals `width`.
    pub fn restrict_to_width(&self, width: usize) -> Result<Self> {
        let mut img = self.clone();
        while img.grid.width() > width {
            img = img.restrict()?;
        }
        if img.grid.width() != width {
            return Err(Error::Resolution(format!(
                "width {} is not reachable from {} by halving",
                width,
                self.grid.width()
            )));
        }
        Ok(img)
    }
}
