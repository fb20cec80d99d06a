//! Deformation energies on the nodal displacement field.
//!
//! Both energies are integrated exactly on the four-triangle split of each
//! cell (see `mesh`). The quadratic parts act on `u − u_ref`, where `u_ref`
//! is an optional reference displacement (the affine pre-alignment during
//! multilevel registration, zero otherwise). The hyperelastic volume term
//! always acts on the absolute map `y = x + u`.
//!
//! Elastic:       `∫ μ/4 Σ_ij (∂_i u_j + ∂_j u_i)² + λ/2 (div u)²`
//! Hyperelastic:  `α_L ∫ |∇u|² + α_V ∫ ψ(det ∇y)`, `ψ(v) = ((v−1)²/v)²`, `ψ = +∞` for `v ≤ 0`.

use serde::{Deserialize, Serialize};

use crate::registration::mesh::{self, Stencil, CORNERS, TRIANGLES};
use crate::registration::transform::DisplacementField;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegularizerKind {
    Elastic,
    Hyperelastic,
}

impl std::str::FromStr for RegularizerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "elastic" => Ok(Self::Elastic),
            "hyperelastic" => Ok(Self::Hyperelastic),
            other => Err(format!(
                "unknown regularizer {other:?} (elastic|hyperelastic)"
            )),
        }
    }
}

impl std::fmt::Display for RegularizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Elastic => "elastic",
            Self::Hyperelastic => "hyperelastic",
        })
    }
}

/// A regularizer with its material constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularizer<T> {
    Elastic { mu: T, lambda: T },
    Hyperelastic { length: T, volume: T },
}

impl<T: Real> Regularizer<T> {
    pub fn elastic() -> Self {
        Regularizer::Elastic {
            mu: T::one(),
            lambda: T::zero(),
        }
    }

    pub fn hyperelastic() -> Self {
        Regularizer::Hyperelastic {
            length: T::one(),
            volume: T::one(),
        }
    }

    pub fn kind(&self) -> RegularizerKind {
        match self {
            Regularizer::Elastic { .. } => RegularizerKind::Elastic,
            Regularizer::Hyperelastic { .. } => RegularizerKind::Hyperelastic,
        }
    }
}

/// Value, gradient and the data needed for Gauss-Newton products.
#[derive(Debug, Clone)]
pub struct RegularizerEval<T> {
    /// `+∞` when some triangle has `det ∇y ≤ 0` under the hyperelastic energy.
    pub value: T,
    pub gradient: Vec<T>,
    /// Per triangle (hyperelastic only): `|tri| · α_V · 2 φ'(v)²` and `∂v/∂G`.
    volume_terms: Vec<(T, [[T; 2]; 2])>,
}

impl<T: Real> RegularizerEval<T> {
    pub fn is_feasible(&self) -> bool {
        self.value.is_finite()
    }
}

/// `φ(v) = (v−1)²/v`, so `ψ = φ²`.
#[inline]
fn phi<T: Real>(v: T) -> T {
    let d = v - T::one();
    d * d / v
}

/// `φ'(v) = (v² − 1)/v²`.
#[inline]
fn phi_prime<T: Real>(v: T) -> T {
    (v * v - T::one()) / (v * v)
}

/// `∂ det(I+G) / ∂G`.
#[inline]
fn det_gradient<T: Real>(g: &[[T; 2]; 2]) -> [[T; 2]; 2] {
    [
        [T::one() + g[1][1], -g[1][0]],
        [-g[0][1], T::one() + g[0][0]],
    ]
}

#[inline]
fn contract<T: Real>(a: &[[T; 2]; 2], b: &[[T; 2]; 2]) -> T {
    a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1]
}

/// Elastic energy density and its derivative with respect to `G[c][d] = ∂_d u_c`.
#[inline]
fn elastic_density<T: Real>(mu: T, lambda: T, g: &[[T; 2]; 2]) -> (T, [[T; 2]; 2]) {
    let two = T::of(2.0);
    let shear = g[0][1] + g[1][0];
    let div = g[0][0] + g[1][1];
    let e = mu * (g[0][0] * g[0][0] + g[1][1] * g[1][1] + T::half() * shear * shear)
        + T::half() * lambda * div * div;
    let de = [
        [two * mu * g[0][0] + lambda * div, mu * shear],
        [mu * shear, two * mu * g[1][1] + lambda * div],
    ];
    (e, de)
}

impl<T: Real> Regularizer<T> {
    /// Evaluates the energy of `field`, measuring the quadratic part relative to `reference`.
    pub fn evaluate(
        &self,
        field: &DisplacementField<T>,
        reference: Option<&[T]>,
    ) -> RegularizerEval<T> {
        self.run(field, reference, true)
    }

    /// Energy only.
    pub fn value(&self, field: &DisplacementField<T>, reference: Option<&[T]>) -> T {
        self.run(field, reference, false).value
    }

    fn run(
        &self,
        field: &DisplacementField<T>,
        reference: Option<&[T]>,
        derivatives: bool,
    ) -> RegularizerEval<T> {
        let grid = *field.grid();
        let st = Stencil::<T>::new(&grid);
        let u = field.values();
        if let Some(r) = reference {
            assert_eq!(r.len(), u.len(), "reference displacement length");
        }
        let mut gradient = if derivatives {
            vec![T::zero(); u.len()]
        } else {
            Vec::new()
        };
        let mut volume_terms = Vec::new();
        if derivatives && matches!(self, Regularizer::Hyperelastic { .. }) {
            volume_terms.reserve(grid.len() * TRIANGLES);
        }
        let two = T::of(2.0);
        let mut total = T::zero();
        for j in 0..grid.height() {
            for i in 0..grid.width() {
                let nodes = mesh::corner_nodes(&grid, i, j);
                let abs = mesh::gather(u, &nodes);
                let rel = match reference {
                    Some(r) => {
                        let base = mesh::gather(r, &nodes);
                        let mut d = abs;
                        for k in 0..CORNERS {
                            d[k][0] -= base[k][0];
                            d[k][1] -= base[k][1];
                        }
                        d
                    }
                    None => abs,
                };
                let mut local = [[T::zero(); 2]; CORNERS];
                for t in 0..TRIANGLES {
                    let g_rel = st.jacobian(t, &rel);
                    match *self {
                        Regularizer::Elastic { mu, lambda } => {
                            let (e, de) = elastic_density(mu, lambda, &g_rel);
                            total += st.tri_area * e;
                            if derivatives {
                                st.scatter(t, &de, st.tri_area, &mut local);
                            }
                        }
                        Regularizer::Hyperelastic { length, volume } => {
                            total += st.tri_area * length * contract(&g_rel, &g_rel);
                            let g_abs = if reference.is_some() {
                                st.jacobian(t, &abs)
                            } else {
                                g_rel
                            };
                            let v = mesh::jacobian_det(&g_abs);
                            if !(v > T::zero()) {
                                return RegularizerEval {
                                    value: T::infinity(),
                                    gradient: Vec::new(),
                                    volume_terms: Vec::new(),
                                };
                            }
                            let p = phi(v);
                            total += st.tri_area * volume * p * p;
                            if derivatives {
                                let dv = det_gradient(&g_abs);
                                let pp = phi_prime(v);
                                let dl = [
                                    [two * length * g_rel[0][0], two * length * g_rel[0][1]],
                                    [two * length * g_rel[1][0], two * length * g_rel[1][1]],
                                ];
                                st.scatter(t, &dl, st.tri_area, &mut local);
                                st.scatter(t, &dv, st.tri_area * volume * two * p * pp, &mut local);
                                volume_terms.push((st.tri_area * volume * two * pp * pp, dv));
                            }
                        }
                    }
                }
                if derivatives {
                    mesh::scatter_add(&mut gradient, &nodes, &local);
                }
            }
        }
        RegularizerEval {
            value: total,
            gradient,
            volume_terms,
        }
    }

    /// `out += H v`, with `H` the exact Hessian of the quadratic parts and the
    /// Gauss-Newton approximation `2 φ'² ∇v ∇vᵀ` of the volume penalty.
    pub fn gauss_newton_apply(
        &self,
        eval: &RegularizerEval<T>,
        field: &DisplacementField<T>,
        v: &[T],
        out: &mut [T],
    ) {
        let grid = *field.grid();
        let st = Stencil::<T>::new(&grid);
        let two = T::of(2.0);
        let mut tri = 0usize;
        for j in 0..grid.height() {
            for i in 0..grid.width() {
                let nodes = mesh::corner_nodes(&grid, i, j);
                let dir = mesh::gather(v, &nodes);
                let mut local = [[T::zero(); 2]; CORNERS];
                for t in 0..TRIANGLES {
                    let gv = st.jacobian(t, &dir);
                    match *self {
                        Regularizer::Elastic { mu, lambda } => {
                            let (_, de) = elastic_density(mu, lambda, &gv);
                            st.scatter(t, &de, st.tri_area, &mut local);
                        }
                        Regularizer::Hyperelastic { length, .. } => {
                            let dl = [
                                [two * length * gv[0][0], two * length * gv[0][1]],
                                [two * length * gv[1][0], two * length * gv[1][1]],
                            ];
                            st.scatter(t, &dl, st.tri_area, &mut local);
                            let (w, dv) = &eval.volume_terms[tri];
                            st.scatter(t, dv, *w * contract(dv, &gv), &mut local);
                            tri += 1;
                        }
                    }
                }
                mesh::scatter_add(out, &nodes, &local);
            }
        }
    }
}

/// Linear-elastic energy (μ = 1, λ = 0) and its gradient.
pub fn elastic_regularizer<T: Real>(u: &DisplacementField<T>) -> (T, Vec<T>) {
    let eval = Regularizer::elastic().evaluate(u, None);
    (eval.value, eval.gradient)
}

/// Hyperelastic energy (α_L = α_V = 1) and its gradient; the value is `+∞`
/// (with an empty gradient) when the map folds.
pub fn hyperelastic_regularizer<T: Real>(u: &DisplacementField<T>) -> (T, Vec<T>) {
    let eval = Regularizer::hyperelastic().evaluate(u, None);
    (eval.value, eval.gradient)
}
