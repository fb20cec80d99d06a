//! Variational registration: SSD distance, elastic and hyperelastic
//! regularizers, affine pre-alignment and multilevel Gauss-Newton.

pub mod affine;
pub mod config;
pub mod derivative_check;
pub mod distance;
mod mesh;
pub mod multilevel;
pub mod objective;
pub mod regularizer;
pub mod solver;
pub mod transform;

pub use affine::affine_preregister;
pub use config::{default_levels, RegistrationConfig};
pub use derivative_check::{derivative_check, TaylorReport};
pub use distance::ssd_distance;
pub use multilevel::{
    multilevel_register, register_images, RegistrationResult, RegistrationStatus,
};
pub use objective::Objective;
pub use regularizer::{
    elastic_regularizer, hyperelastic_regularizer, Regularizer, RegularizerKind,
};
pub use solver::{gauss_newton_solve, LevelHistory, StopReason};
pub use transform::{AffineTransform, DisplacementField, Identity, Parametric, Transformation};
