use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::imaging::bundle::SubjectBundle;
use crate::imaging::image::ScalarImage;
use crate::imaging::io::{write_f32_file, write_json};
use crate::registration::affine::affine_preregister;
use crate::registration::config::RegistrationConfig;
use crate::registration::objective::Objective;
use crate::registration::solver::{gauss_newton_solve, LevelHistory, StopReason};
use crate::registration::transform::{AffineTransform, DisplacementField};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state", content = "reason")]
pub enum RegistrationStatus {
    Converged,
    /// The native level used up its iteration budget; the iterate is still a
    /// monotone improvement over the starting guess.
    IterationLimit,
    /// The native level broke down (line search exhausted on a descent direction).
    Failed(String),
}

/// Outcome of a multilevel registration.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult<T> {
    /// Nodal displacement at native resolution.
    pub field: DisplacementField<T>,
    pub pre_affine: AffineTransform<T>,
    pub levels: Vec<LevelHistory>,
    pub status: RegistrationStatus,
}

impl<T: Real> RegistrationResult<T> {
    pub fn converged(&self) -> bool {
        self.status == RegistrationStatus::Converged
    }

    pub fn failed(&self) -> bool {
        matches!(self.status, RegistrationStatus::Failed(_))
    }

    /// Smallest triangle determinant over every accepted iterate of every level.
    pub fn min_accepted_det(&self) -> f64 {
        self.levels
            .iter()
            .flat_map(|l| l.iterations.iter().map(|r| r.min_jacobian_det))
            .fold(f64::INFINITY, f64::min)
    }
}

fn status_from(stop: StopReason) -> RegistrationStatus {
    match stop {
        s if s.is_converged() => RegistrationStatus::Converged,
        StopReason::MaxIterations => RegistrationStatus::IterationLimit,
        _ => RegistrationStatus::Failed("line search exhausted its trials".into()),
    }
}

/// Coarse-to-fine registration of two images on a common native grid.
///
/// The coarsest level first fits an affine map; it is converted to a nodal
/// displacement and also serves as the reference the quadratic regularizer
/// terms are measured from. Each level's result, bilinearly upsampled, starts
/// the next level.
pub fn register_images<T: Real>(
    template: &ScalarImage<T>,
    reference: &ScalarImage<T>,
    config: &RegistrationConfig,
) -> Result<RegistrationResult<T>> {
    template
        .grid()
        .ensure_same(reference.grid(), "template vs reference")?;
    let native = *reference.grid();
    let schedule = config.schedule_for(native.width())?;

    // pyramids, coarse to fine
    let mut pyramid = Vec::with_capacity(schedule.len());
    for &w in &schedule {
        pyramid.push((
            template.restrict_to_width(w)?,
            reference.restrict_to_width(w)?,
        ));
    }

    let (t0, r0) = &pyramid[0];
    let pre_affine = affine_preregister(t0, r0, &config.affine, &config.line_search)?;
    let regularizer = config.regularizer::<T>();
    let alpha = T::of(config.alpha);

    let mut y = DisplacementField::from_transformation(*t0.grid(), &pre_affine);
    let mut levels = Vec::with_capacity(schedule.len());
    for (k, (t, r)) in pyramid.iter().enumerate() {
        if k > 0 {
            y = y.prolongate(*t.grid())?;
        }
        let anchor = DisplacementField::from_transformation(*t.grid(), &pre_affine);
        let objective =
            Objective::new(t, r, alpha, regularizer).with_reference_field(anchor.values());
        let (next, history) = gauss_newton_solve(&objective, y, config)?;
        log::debug!(
            "level {}x{}: {} iterations, stop {:?}, J {:.6e}",
            history.width,
            history.height,
            history.iterations.len() - 1,
            history.stop,
            history
                .iterations
                .last()
                .map(|r| r.objective)
                .unwrap_or(f64::NAN)
        );
        y = next;
        levels.push(history);
    }
    let status = status_from(levels.last().expect("non-empty schedule").stop);
    Ok(RegistrationResult {
        field: y,
        pre_affine,
        levels,
        status,
    })
}

/// Registers the normalized magnitude channel of `template` onto `reference`.
pub fn multilevel_register(
    template: &SubjectBundle,
    reference: &SubjectBundle,
    config: &RegistrationConfig,
) -> Result<RegistrationResult<f64>> {
    if !template.grid().same_shape(reference.grid()) {
        return Err(Error::Shape(format!(
            "template {} and reference {} differ in resolution",
            template.id(),
            reference.id()
        )));
    }
    for b in [template, reference] {
        if !b.is_normalized() {
            log::warn!("subject {} magnitude is not flagged as normalized", b.id());
        }
    }
    register_images(
        &template.magnitude().cast::<f64>(),
        &reference.magnitude().cast::<f64>(),
        config,
    )
}

/// `result.json` layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultSummary {
    pub config: RegistrationConfig,
    pub width: usize,
    pub height: usize,
    pub pre_affine: [f64; 6],
    pub status: RegistrationStatus,
    pub converged: bool,
    pub min_jacobian_det: f64,
    pub max_displacement: f64,
    pub levels: Vec<LevelHistory>,
}

impl<T: Real> RegistrationResult<T> {
    pub fn summary(&self, config: &RegistrationConfig) -> ResultSummary {
        ResultSummary {
            config: config.clone(),
            width: self.field.grid().width(),
            height: self.field.grid().height(),
            pre_affine: self.pre_affine.as_array().map(|v| v.as_f64()),
            status: self.status.clone(),
            converged: self.converged(),
            min_jacobian_det: self.field.min_jacobian_det().as_f64(),
            max_displacement: self.field.max_abs().as_f64(),
            levels: self.levels.clone(),
        }
    }

    /// Writes `result.json` and `displacement.f32` (nodal u, interleaved) into `dir`.
    pub fn write(&self, config: &RegistrationConfig, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
        write_json(&dir.join("result.json"), &self.summary(config))?;
        let values: Vec<f32> = self
            .field
            .values()
            .iter()
            .map(|v| v.as_f64() as f32)
            .collect();
        write_f32_file(&values, dir.join("displacement.f32"))?;
        Ok(())
    }
}
