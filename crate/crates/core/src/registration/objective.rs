use crate::error::Result;
use crate::imaging::image::ScalarImage;
use crate::registration::distance::{ssd_terms, ssd_value, SsdTerms};
use crate::registration::regularizer::{Regularizer, RegularizerEval};
use crate::registration::transform::DisplacementField;
use crate::scalar::Real;

/// `J(y) = D_SSD(T[y], R) + α · S(y − y_ref)` on one resolution level.
#[derive(Debug, Clone)]
pub struct Objective<'a, T> {
    pub template: &'a ScalarImage<T>,
    pub reference: &'a ScalarImage<T>,
    pub alpha: T,
    pub regularizer: Regularizer<T>,
    /// Displacement the quadratic regularizer terms are measured from.
    pub reference_field: Option<&'a [T]>,
}

/// Value split, gradient and cached linearization at one iterate.
#[derive(Debug, Clone)]
pub struct ObjectiveEval<T> {
    pub value: T,
    pub distance: T,
    pub regularizer: T,
    pub gradient: Vec<T>,
    ssd: SsdTerms<T>,
    reg: RegularizerEval<T>,
}

impl<T: Real> ObjectiveEval<T> {
    pub fn is_feasible(&self) -> bool {
        self.value.is_finite()
    }
}

/// Value triple without derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue<T> {
    pub value: T,
    pub distance: T,
    pub regularizer: T,
}

impl<'a, T: Real> Objective<'a, T> {
    pub fn new(
        template: &'a ScalarImage<T>,
        reference: &'a ScalarImage<T>,
        alpha: T,
        regularizer: Regularizer<T>,
    ) -> Self {
        Self {
            template,
            reference,
            alpha,
            regularizer,
            reference_field: None,
        }
    }

    pub fn with_reference_field(mut self, field: &'a [T]) -> Self {
        self.reference_field = Some(field);
        self
    }

    pub fn evaluate(&self, y: &DisplacementField<T>) -> Result<ObjectiveEval<T>> {
        self.template
            .grid()
            .ensure_same(y.grid(), "template vs displacement grid")?;
        let ssd = ssd_terms(self.template, self.reference, y)?;
        let reg = self.regularizer.evaluate(y, self.reference_field);
        let value = ssd.value + self.alpha * reg.value;
        let gradient = if reg.is_feasible() {
            let mut g = ssd.gradient(y, self.reference);
            for (gi, ri) in g.iter_mut().zip(&reg.gradient) {
                *gi += self.alpha * *ri;
            }
            g
        } else {
            Vec::new()
        };
        Ok(ObjectiveEval {
            value,
            distance: ssd.value,
            regularizer: reg.value,
            gradient,
            ssd,
            reg,
        })
    }

    pub fn value(&self, y: &DisplacementField<T>) -> Result<ObjectiveValue<T>> {
        let distance = ssd_value(self.template, self.reference, y)?;
        let regularizer = self.regularizer.value(y, self.reference_field);
        Ok(ObjectiveValue {
            value: distance + self.alpha * regularizer,
            distance,
            regularizer,
        })
    }

    /// Gauss-Newton matrix action `(Jᵣᵀ Jᵣ + α H_S) v`.
    pub fn gauss_newton_apply(
        &self,
        eval: &ObjectiveEval<T>,
        y: &DisplacementField<T>,
        v: &[T],
    ) -> Vec<T> {
        let mut out = vec![T::zero(); v.len()];
        eval.ssd.gauss_newton_apply(y, self.reference, v, &mut out);
        if self.alpha != T::zero() {
            let mut reg = vec![T::zero(); v.len()];
            self.regularizer
                .gauss_newton_apply(&eval.reg, y, v, &mut reg);
            for (o, r) in out.iter_mut().zip(reg) {
                *o += self.alpha * r;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::grid::ImageGrid;
    use crate::registration::distance::ssd_distance;
    use approx::assert_relative_eq;

    fn pair(g: ImageGrid) -> (ScalarImage<f64>, ScalarImage<f64>) {
        let t = ScalarImage::from_fn(g, |i, j| {
            ((i as f64) * 0.5).sin() * ((j as f64) * 0.3).cos()
        })
        .unwrap();
        let r = ScalarImage::from_fn(g, |i, j| {
            ((i as f64) * 0.5 + 0.2).sin() * ((j as f64) * 0.3).cos()
        })
        .unwrap();
        (t, r)
    }

    #[test]
    fn alpha_zero_reduces_to_distance() {
        let g = ImageGrid::new(8, 8).unwrap();
        let (t, r) = pair(g);
        let y = DisplacementField::from_fn(g, |p| [0.1 * (p[1] * 0.4).sin(), 0.05 * p[0] / 8.0]);
        let obj = Objective::new(&t, &r, 0.0, Regularizer::hyperelastic());
        let e = obj.evaluate(&y).unwrap();
        let (d, grad) = ssd_distance(&t, &r, &y).unwrap();
        assert_relative_eq!(e.value, d, epsilon = 1e-14);
        for (a, b) in e.gradient.iter().zip(&grad) {
            assert_relative_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn identity_on_equal_images_is_zero() {
        let g = ImageGrid::new(8, 8).unwrap();
        let (t, _) = pair(g);
        let obj = Objective::new(&t, &t, 500.0, Regularizer::hyperelastic());
        let e = obj.evaluate(&DisplacementField::zeros(g)).unwrap();
        assert_eq!(e.value, 0.0);
        assert!(e.gradient.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gauss_newton_matrix_is_symmetric() {
        let g = ImageGrid::new(6, 6).unwrap();
        let (t, r) = pair(g);
        let y = DisplacementField::from_fn(g, |p| {
            [0.2 * (p[1] * 0.4).sin(), -0.1 * (p[0] * 0.3).cos()]
        });
        let obj = Objective::new(&t, &r, 2.0, Regularizer::hyperelastic());
        let e = obj.evaluate(&y).unwrap();
        let n = y.values().len();
        let a: Vec<f64> = (0..n).map(|k| ((k * 7) % 5) as f64 - 2.0).collect();
        let b: Vec<f64> = (0..n).map(|k| ((k * 11) % 3) as f64 - 1.0).collect();
        let ha = obj.gauss_newton_apply(&e, &y, &a);
        let hb = obj.gauss_newton_apply(&e, &y, &b);
        let ab: f64 = ha.iter().zip(&b).map(|(x, y)| x * y).sum();
        let ba: f64 = hb.iter().zip(&a).map(|(x, y)| x * y).sum();
        assert_relative_eq!(ab, ba, max_relative = 1e-10);
        let aa: f64 = ha.iter().zip(&a).map(|(x, y)| x * y).sum();
        assert!(aa >= 0.0);
    }
}
