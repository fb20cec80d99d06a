use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cell-centered rectangular grid over `Ω = [0, extent_u] × [0, extent_v]`.
///
/// Cell `(i, j)` covers `[i·hu, (i+1)·hu] × [j·hv, (j+1)·hv]` and its sample
/// sits at the cell center. Storage is row-major with one row per constant `v`.
/// At native resolution the spacing is one pixel; coarser grids keep `Ω` and
/// widen the spacing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    extent: [f64; 2],
}

impl ImageGrid {
    /// Native-resolution grid with unit pixel spacing.
    pub fn new(width: usize, height: usize) -> Result<Self> {
        Self::with_extent(width, height, [width as f64, height as f64])
    }

    pub fn with_extent(width: usize, height: usize, extent: [f64; 2]) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!(
                "grid must have at least one cell per axis, got {width}x{height}"
            )));
        }
        if !(extent[0] > 0.0 && extent[1] > 0.0 && extent[0].is_finite() && extent[1].is_finite()) {
            return Err(Error::InvalidInput(format!(
                "invalid domain extent {extent:?}"
            )));
        }
        Ok(Self {
            width,
            height,
            extent,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn extent(&self) -> [f64; 2] {
        self.extent
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn spacing(&self) -> [f64; 2] {
        [
            self.extent[0] / self.width as f64,
            self.extent[1] / self.height as f64,
        ]
    }

    #[inline]
    pub fn cell_area(&self) -> f64 {
        let h = self.spacing();
        h[0] * h[1]
    }

    #[inline]
    pub fn domain_area(&self) -> f64 {
        self.extent[0] * self.extent[1]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.width && j < self.height);
        j * self.width + i
    }

    #[inline]
    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        let h = self.spacing();
        [(i as f64 + 0.5) * h[0], (j as f64 + 0.5) * h[1]]
    }

    /// Cell centers in storage order.
    pub fn cell_centers(&self) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(self.len());
        for j in 0..self.height {
            for i in 0..self.width {
                out.push(self.cell_center(i, j));
            }
        }
        out
    }

    /// Cell containing `x`, or `None` when `x` lies outside `Ω`.
    pub fn cell_containing(&self, x: [f64; 2]) -> Option<(usize, usize)> {
        let h = self.spacing();
        let s = x[0] / h[0];
        let t = x[1] / h[1];
        if !(s >= 0.0 && t >= 0.0) {
            return None;
        }
        let (i, j) = (s.floor() as usize, t.floor() as usize);
        // The far boundary belongs to the last cell.
        let i = if s == self.width as f64 {
            self.width - 1
        } else {
            i
        };
        let j = if t == self.height as f64 {
            self.height - 1
        } else {
            j
        };
        (i < self.width && j < self.height).then_some((i, j))
    }

    /// Number of nodes (cell corners) per axis.
    #[inline]
    pub fn node_dims(&self) -> (usize, usize) {
        (self.width + 1, self.height + 1)
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        (self.width + 1) * (self.height + 1)
    }

    #[inline]
    pub fn node_position(&self, i: usize, j: usize) -> [f64; 2] {
        let h = self.spacing();
        [i as f64 * h[0], j as f64 * h[1]]
    }

    /// Half-resolution grid over the same domain.
    pub fn coarsen(&self) -> Result<Self> {
        if !self.width.is_multiple_of(2) || !self.height.is_multiple_of(2) {
            return Err(Error::Resolution(format!(
                "cannot halve a {}x{} grid: both dimensions must be even",
                self.width, self.height
            )));
        }
        Self::with_extent(self.width / 2, self.height / 2, self.extent)
    }

    /// Grid with `width` cells along u over the same domain, keeping the aspect ratio.
    pub fn at_width(&self, width: usize) -> Result<Self> {
        if width == 0 || !self.width.is_multiple_of(width) && !width.is_multiple_of(self.width) {
            return Err(Error::Resolution(format!(
                "width {width} is not a power-of-two multiple or divisor of {}",
                self.width
            )));
        }
        let height = if width <= self.width {
            let f = self.width / width;
            if !self.height.is_multiple_of(f) {
                return Err(Error::Resolution(format!(
                    "height {} is not divisible by {f}",
                    self.height
                )));
            }
            self.height / f
        } else {
            self.height * (width / self.width)
        };
        Self::with_extent(width, height, self.extent)
    }

    pub fn same_shape(&self, other: &ImageGrid) -> bool {
        self.width == other.width && self.height == other.height && self.extent == other.extent
    }

    pub(crate) fn ensure_same(&self, other: &ImageGrid, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: {}x{} over {:?} vs {}x{} over {:?}",
                self.width, self.height, self.extent, other.width, other.height, other.extent
            )))
        }
    }
}
