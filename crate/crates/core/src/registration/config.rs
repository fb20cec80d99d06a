use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registration::regularizer::{Regularizer, RegularizerKind};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LineSearchConfig {
    /// Armijo sufficient-decrease constant.
    pub c: f64,
    pub factor: f64,
    pub max_trials: usize,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        Self {
            c: 1e-4,
            factor: 0.5,
            max_trials: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CgConfig {
    pub relative_residual: f64,
    pub max_iterations: usize,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self {
            relative_residual: 1e-2,
            max_iterations: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AffineConfig {
    pub enabled: bool,
    pub max_iterations: usize,
    /// Results with `det A` at or below this are replaced by the identity.
    pub min_det: f64,
}

impl Default for AffineConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            max_iterations: 50,
            min_det: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaterialConfig {
    pub elastic_mu: f64,
    pub elastic_lambda: f64,
    pub hyperelastic_length: f64,
    pub hyperelastic_volume: f64,
}

impl Default for MaterialConfig {
    fn default() -> Self {
        Self {
            elastic_mu: 1.0,
            elastic_lambda: 0.0,
            hyperelastic_length: 1.0,
            hyperelastic_volume: 1.0,
        }
    }
}

/// Solver settings for one template-to-reference registration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationConfig {
    pub alpha: f64,
    pub regularizer: RegularizerKind,
    /// Widths of the levels, coarse to fine, ending at the native width.
    pub levels: Vec<usize>,
    pub max_iterations: usize,
    /// Stop once `‖∇J‖ ≤ tol_grad · ‖∇J₀‖` on a level.
    pub tol_grad: f64,
    /// Together with `tol_obj`: stop once `‖Δu‖∞ ≤ tol_step · (1 + ‖u‖∞)`.
    pub tol_step: f64,
    /// Together with `tol_step`: stop once `|ΔJ| ≤ tol_obj · (1 + |J₀|)`.
    pub tol_obj: f64,
    pub line_search: LineSearchConfig,
    pub cg: CgConfig,
    pub material: MaterialConfig,
    pub affine: AffineConfig,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            alpha: 500.0,
            regularizer: RegularizerKind::Hyperelastic,
            levels: vec![32, 64, 128, 256],
            max_iterations: 30,
            tol_grad: 1e-3,
            tol_step: 1e-4,
            tol_obj: 1e-6,
            line_search: LineSearchConfig::default(),
            cg: CgConfig::default(),
            material: MaterialConfig::default(),
            affine: AffineConfig::default(),
        }
    }
}

/// Powers of two from 32 (or the native width, if smaller) up to `native`.
pub fn default_levels(native: usize) -> Vec<usize> {
    let mut levels = Vec::new();
    let mut w = native;
    while w >= 32 || levels.is_empty() {
        levels.push(w);
        if !w.is_multiple_of(2) || w / 2 < 32 {
            break;
        }
        w /= 2;
    }
    levels.reverse();
    levels
}

impl RegistrationConfig {
    pub fn regularizer<T: Real>(&self) -> Regularizer<T> {
        let m = &self.material;
        match self.regularizer {
            RegularizerKind::Elastic => Regularizer::Elastic {
                mu: T::of(m.elastic_mu),
                lambda: T::of(m.elastic_lambda),
            },
            RegularizerKind::Hyperelastic => Regularizer::Hyperelastic {
                length: T::of(m.hyperelastic_length),
                volume: T::of(m.hyperelastic_volume),
            },
        }
    }

    /// Checks scalar settings independent of image size.
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be finite and non-negative");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive");
        }
        for (name, v) in [
            ("tol_grad", self.tol_grad),
            ("tol_step", self.tol_step),
            ("tol_obj", self.tol_obj),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be finite and non-negative"
                )));
            }
        }
        let ls = &self.line_search;
        if !(ls.c > 0.0 && ls.c < 1.0 && ls.factor > 0.0 && ls.factor < 1.0 && ls.max_trials > 0) {
            return bad("line search needs 0 < c < 1, 0 < factor < 1, max_trials > 0");
        }
        if !(self.cg.relative_residual > 0.0) || self.cg.max_iterations == 0 {
            return bad("cg needs a positive tolerance and iteration budget");
        }
        let m = &self.material;
        if !(m.elastic_mu >= 0.0
            && m.elastic_lambda >= 0.0
            && m.hyperelastic_length >= 0.0
            && m.hyperelastic_volume >= 0.0)
        {
            return bad("material constants must be non-negative");
        }
        Ok(())
    }

    /// Validates the level schedule against a native width: strictly increasing
    /// powers of two ending at `native`.
    pub fn schedule_for(&self, native: usize) -> Result<Vec<usize>> {
        self.validate()?;
        if !native.is_power_of_two() {
            return Err(Error::Config(format!(
                "native width {native} is not a power of two"
            )));
        }
        if self.levels.is_empty() {
            return Err(Error::Config("level schedule is empty".into()));
        }
        if self.levels.iter().any(|l| !l.is_power_of_two() || *l < 2) {
            return Err(Error::Config(format!(
                "levels {:?} must be powers of two",
                self.levels
            )));
        }
        if self.levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "levels {:?} must be strictly increasing",
                self.levels
            )));
        }
        if *self.levels.last().unwrap() != native {
            return Err(Error::Config(format!(
                "level schedule {:?} must end at the native width {native}",
                self.levels
            )));
        }
        Ok(self.levels.clone())
    }
}
