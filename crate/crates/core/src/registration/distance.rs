//! Sum-of-squared-differences distance with midpoint quadrature.

use crate::error::Result;
use crate::imaging::image::ScalarImage;
use crate::registration::transform::Parametric;
use crate::scalar::Real;

/// Residuals and template gradients at the transformed cell centers.
#[derive(Debug, Clone)]
pub struct SsdTerms<T> {
    pub value: T,
    pub residuals: Vec<T>,
    pub template_gradients: Vec<[T; 2]>,
    pub cell_area: T,
}

/// `½ Σ_c (T(y_c) − R(x_c))² · |cell|` plus the pieces needed for derivatives.
pub fn ssd_terms<T: Real, Y: Parametric<T>>(
    template: &ScalarImage<T>,
    reference: &ScalarImage<T>,
    y: &Y,
) -> Result<SsdTerms<T>> {
    template
        .grid()
        .ensure_same(reference.grid(), "template vs reference")?;
    let grid = reference.grid();
    let positions = y.cell_positions(grid);
    let cell_area = T::of(grid.cell_area());
    let mut residuals = Vec::with_capacity(grid.len());
    let mut grads = Vec::with_capacity(grid.len());
    let mut sum = T::zero();
    for (p, &r) in positions.iter().zip(reference.values()) {
        let (t, g) = template.sample_with_gradient(*p);
        let res = t - r;
        sum += res * res;
        residuals.push(res);
        grads.push(g);
    }
    Ok(SsdTerms {
        value: T::half() * sum * cell_area,
        residuals,
        template_gradients: grads,
        cell_area,
    })
}

/// SSD value only, for line searches.
pub fn ssd_value<T: Real, Y: Parametric<T>>(
    template: &ScalarImage<T>,
    reference: &ScalarImage<T>,
    y: &Y,
) -> Result<T> {
    template
        .grid()
        .ensure_same(reference.grid(), "template vs reference")?;
    let grid = reference.grid();
    let sum: T = y
        .cell_positions(grid)
        .iter()
        .zip(reference.values())
        .map(|(p, &r)| {
            let d = template.sample(*p) - r;
            d * d
        })
        .sum();
    Ok(T::half() * sum * T::of(grid.cell_area()))
}

impl<T: Real> SsdTerms<T> {
    /// Gradient with respect to the parameters of `y`: `Jᵀ (|cell| · r · ∇T)`.
    pub fn gradient<Y: Parametric<T>>(&self, y: &Y, reference: &ScalarImage<T>) -> Vec<T> {
        let w: Vec<[T; 2]> = self
            .residuals
            .iter()
            .zip(&self.template_gradients)
            .map(|(&r, g)| [self.cell_area * r * g[0], self.cell_area * r * g[1]])
            .collect();
        let mut out = vec![T::zero(); y.params().len()];
        y.add_transpose_jacobian(reference.grid(), &w, &mut out);
        out
    }

    /// Gauss-Newton matrix action `Jᵀ diag(|cell| ∇T ∇Tᵀ) J v`.
    pub fn gauss_newton_apply<Y: Parametric<T>>(
        &self,
        y: &Y,
        reference: &ScalarImage<T>,
        v: &[T],
        out: &mut [T],
    ) {
        let grid = reference.grid();
        let jv = y.apply_jacobian(grid, v);
        let w: Vec<[T; 2]> = jv
            .iter()
            .zip(&self.template_gradients)
            .map(|(d, g)| {
                let s = self.cell_area * (g[0] * d[0] + g[1] * d[1]);
                [s * g[0], s * g[1]]
            })
            .collect();
        y.add_transpose_jacobian(grid, &w, out);
    }
}

/// SSD value and its gradient with respect to the transformation parameters.
pub fn ssd_distance<T: Real, Y: Parametric<T>>(
    template: &ScalarImage<T>,
    reference: &ScalarImage<T>,
    y: &Y,
) -> Result<(T, Vec<T>)> {
    let terms = ssd_terms(template, reference, y)?;
    let grad = terms.gradient(y, reference);
    Ok((terms.value, grad))
}
