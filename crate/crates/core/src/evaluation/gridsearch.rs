//! Search over the number of fused templates and the fusion threshold.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::evaluation::{evaluate_subject, mean, EvaluationRecord};
use crate::fusion::{
    fuse_outcomes, register_best_templates, template_records, AtlasBank, SegmentOptions,
    TemplateRecord,
};
use crate::imaging::bundle::SubjectBundle;
use crate::imaging::io::write_json;
use crate::registration::RegistrationConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSearchConfig {
    pub n_values: Vec<usize>,
    pub thresholds: Vec<f64>,
    pub registration: RegistrationConfig,
    pub csf_cutoff: Option<f64>,
    pub exclude_self: bool,
}

impl Default for GridSearchConfig {
    fn default() -> Self {
        Self {
            n_values: vec![1, 5, 10, 20],
            thresholds: vec![0.3, 0.5, 0.7],
            registration: RegistrationConfig::default(),
            csf_cutoff: None,
            exclude_self: true,
        }
    }
}

impl GridSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_values.is_empty() || self.thresholds.is_empty() {
            return Err(Error::Config(
                "n_values and thresholds must be non-empty".into(),
            ));
        }
        if self.n_values.contains(&0) {
            return Err(Error::Config("every n must be at least 1".into()));
        }
        if let Some(t) = self.thresholds.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::Config(format!(
                "threshold {t} must lie strictly between 0 and 1"
            )));
        }
        self.registration.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub n: usize,
    pub threshold: f64,
    pub mean_dice_full: f64,
    /// Mean relative biomarker error over subjects and structures; `None`
    /// when no subject has a peak image.
    pub mean_biomarker_error: Option<f64>,
    /// Structures whose predicted region was empty, left out of the mean error.
    pub missing_biomarkers: usize,
    pub records: Vec<EvaluationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectTemplates {
    pub subject: String,
    pub templates: Vec<TemplateRecord>,
}

/// `report.json` of a grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub subjects: Vec<String>,
    pub n_values: Vec<usize>,
    pub thresholds: Vec<f64>,
    /// Row-major over `n_values` × `thresholds`.
    pub cells: Vec<GridCell>,
    pub selected_n: usize,
    pub selected_threshold: f64,
    pub selected_mean_dice: f64,
    pub templates: Vec<SubjectTemplates>,
}

impl GridSearchResult {
    pub fn cell(&self, n: usize, threshold: f64) -> Option<&GridCell> {
        self.cells
            .iter()
            .find(|c| c.n == n && c.threshold == threshold)
    }

    /// Writes `report.json` and `grid.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
        write_json(&dir.join("report.json"), self)?;
        let mut csv = String::from("n,threshold,mean_dice_full,mean_biomarker_error,selected\n");
        for c in &self.cells {
            let _ = writeln!(
                csv,
                "{},{},{},{},{}",
                c.n,
                c.threshold,
                c.mean_dice_full,
                c.mean_biomarker_error
                    .map_or(String::new(), |v| v.to_string()),
                (c.n == self.selected_n && c.threshold == self.selected_threshold) as u8
            );
        }
        let path = dir.join("grid.csv");
        std::fs::write(&path, csv).map_err(|e| FormatError::io(&path, e))?;
        Ok(())
    }
}

/// Evaluates every `(n, threshold)` pair on `subjects`.
///
/// Each subject is registered once against its `max(n_values)` best templates;
/// every cell fuses a prefix of those cached warps. The selected cell maximizes
/// mean full-mask Dice; ties go to the smaller `n`, then the threshold nearest 0.5.
pub fn grid_search(
    bank: &AtlasBank,
    subjects: &[SubjectBundle],
    config: &GridSearchConfig,
) -> Result<GridSearchResult> {
    config.validate()?;
    if subjects.is_empty() {
        return Err(Error::InvalidInput(
            "grid search needs at least one subject".into(),
        ));
    }
    let max_n = *config.n_values.iter().max().expect("validated non-empty");
    let options = SegmentOptions {
        exclude_self: config.exclude_self,
    };
    for s in subjects {
        s.require_mask()?;
        let available = bank
            .subjects()
            .iter()
            .filter(|b| !(options.exclude_self && b.id() == s.id()))
            .count();
        if max_n > available {
            return Err(Error::Config(format!(
                "n = {max_n} exceeds the {available} templates available for {}",
                s.id()
            )));
        }
    }

    let per_subject = subjects
        .par_iter()
        .map(|s| {
            let outcomes = register_best_templates(s, bank, max_n, &config.registration, options)?;
            let truth = s.require_mask()?;
            let mut records = Vec::with_capacity(config.n_values.len() * config.thresholds.len());
            for &n in &config.n_values {
                for &t in &config.thresholds {
                    let (_, hard) = fuse_outcomes(&outcomes, n, t)?;
                    records.push(evaluate_subject(
                        s.id(),
                        truth,
                        &hard,
                        s.peak_dense(),
                        config.csf_cutoff,
                    )?);
                }
            }
            Ok((
                SubjectTemplates {
                    subject: s.id().to_string(),
                    templates: template_records(&outcomes),
                },
                records,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut cells = Vec::new();
    let mut k = 0;
    for &n in &config.n_values {
        for &t in &config.thresholds {
            let records: Vec<EvaluationRecord> =
                per_subject.iter().map(|(_, r)| r[k].clone()).collect();
            let errors: Vec<f64> = records.iter().flat_map(|r| r.errors()).collect();
            let missing = records
                .iter()
                .filter_map(|r| r.relative_error.as_ref())
                .map(|e| e.cerebellum.is_none() as usize + e.brain_stem.is_none() as usize)
                .sum();
            cells.push(GridCell {
                n,
                threshold: t,
                mean_dice_full: mean(records.iter().map(|r| r.dice_full))
                    .expect("non-empty subjects"),
                mean_biomarker_error: mean(errors),
                missing_biomarkers: missing,
                records,
            });
            k += 1;
        }
    }

    let best = cells
        .iter()
        .min_by(|a, b| {
            b.mean_dice_full
                .total_cmp(&a.mean_dice_full)
                .then(a.n.cmp(&b.n))
                .then(
                    (a.threshold - 0.5)
                        .abs()
                        .total_cmp(&(b.threshold - 0.5).abs()),
                )
                .then(a.threshold.total_cmp(&b.threshold))
        })
        .expect("non-empty grid");
    Ok(GridSearchResult {
        subjects: subjects.iter().map(|s| s.id().to_string()).collect(),
        n_values: config.n_values.clone(),
        thresholds: config.thresholds.clone(),
        selected_n: best.n,
        selected_threshold: best.threshold,
        selected_mean_dice: best.mean_dice_full,
        cells,
        templates: per_subject.into_iter().map(|(t, _)| t).collect(),
    })
}
