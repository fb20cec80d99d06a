//! Atlas-based segmentation of 2-D DENSE MRI bundles.
//!
//! Templates from a labeled bank are ranked by image similarity, registered
//! onto the target with a multilevel Gauss-Newton scheme and their masks fused
//! by per-class voting.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod imaging;
pub mod phantom;
pub mod registration;
pub mod scalar;

pub use error::{Error, FormatError, Result};
pub use scalar::Real;

pub type Image = imaging::ScalarImage<f64>;
pub type Image32 = imaging::ScalarImage<f32>;
pub type Field = registration::DisplacementField<f64>;
pub type Field32 = registration::DisplacementField<f32>;
pub type Affine = registration::AffineTransform<f64>;
pub type Registration = registration::RegistrationResult<f64>;
