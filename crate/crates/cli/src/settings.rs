//! Resolved pipeline settings: defaults, then the `--config` file, then flags.

use std::path::Path;

use atlasseg::fusion::FusionConfig;
use atlasseg::imaging::DEFAULT_BINS;
use atlasseg::phantom::PhantomSpec;
use atlasseg::registration::{RegistrationConfig, RegularizerKind};
use atlasseg::{Error, Result};
use serde::{Deserialize, Serialize};

/// Everything a run can be configured with. The config file uses the same
/// field names; absent fields keep their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub registration: RegistrationConfig,
    /// When false the level schedule is derived from the input resolution.
    pub explicit_levels: bool,
    pub n: usize,
    pub threshold: f64,
    pub n_values: Vec<usize>,
    pub thresholds: Vec<f64>,
    pub csf_cutoff: Option<f64>,
    pub bins: usize,
    pub exclude_self: bool,
    pub phantom: PhantomSpec,
}

impl Default for Settings {
    fn default() -> Self {
        let fusion = FusionConfig::default();
        let grid = atlasseg::evaluation::GridSearchConfig::default();
        Self {
            registration: RegistrationConfig::default(),
            explicit_levels: false,
            n: fusion.n,
            threshold: fusion.threshold,
            n_values: grid.n_values,
            thresholds: grid.thresholds,
            csf_cutoff: None,
            bins: DEFAULT_BINS,
            exclude_self: true,
            phantom: PhantomSpec::default(),
        }
    }
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut s: Settings = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        // a file that names levels pins them
        if text.contains("\"levels\"") {
            s.explicit_levels = true;
        }
        Ok(s)
    }

    pub fn apply_registration(&mut self, flags: &RegistrationFlags) {
        let r = &mut self.registration;
        if let Some(v) = flags.alpha {
            r.alpha = v;
        }
        if let Some(v) = flags.regularizer {
            r.regularizer = v;
        }
        if let Some(v) = &flags.levels {
            r.levels = v.clone();
            self.explicit_levels = true;
        }
        if let Some(v) = flags.max_iter {
            r.max_iterations = v;
        }
        if let Some(v) = flags.tol_grad {
            r.tol_grad = v;
        }
        if let Some(v) = flags.tol_step {
            r.tol_step = v;
        }
        if let Some(v) = flags.tol_obj {
            r.tol_obj = v;
        }
    }

    /// Registration settings for inputs of the given native width.
    pub fn registration_for(&self, native: usize) -> RegistrationConfig {
        let mut r = self.registration.clone();
        if !self.explicit_levels {
            r.levels = atlasseg::registration::default_levels(native);
        }
        r
    }

    pub fn fusion_for(&self, native: usize) -> FusionConfig {
        FusionConfig {
            n: self.n,
            threshold: self.threshold,
            registration: self.registration_for(native),
        }
    }
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct RegistrationFlags {
    /// Regularization weight
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Regularizer: elastic or hyperelastic
    #[arg(long)]
    pub regularizer: Option<RegularizerKind>,
    /// Level widths, coarse to fine, ending at the native width (e.g. 32,64,128,256)
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<usize>>,
    /// Gauss-Newton iterations per level
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Relative gradient tolerance
    #[arg(long)]
    pub tol_grad: Option<f64>,
    /// Step tolerance
    #[arg(long)]
    pub tol_step: Option<f64>,
    /// Relative objective tolerance
    #[arg(long)]
    pub tol_obj: Option<f64>,
}
