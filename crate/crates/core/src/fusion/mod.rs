//! Template ranking, per-template registration and label fusion.

use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::imaging::bundle::SubjectBundle;
use crate::imaging::grid::ImageGrid;
use crate::imaging::io::{write_f32_file, write_json, write_mask_file};
use crate::imaging::mask::{Label, LabelMask};
use crate::imaging::warp::warp_mask;
use crate::registration::distance::ssd_value;
use crate::registration::multilevel::{
    multilevel_register, RegistrationResult, RegistrationStatus,
};
use crate::registration::transform::Identity;
use crate::registration::RegistrationConfig;

/// Labeled subjects used as templates. All share one grid; ids are unique.
#[derive(Debug, Clone, PartialEq)]
pub struct AtlasBank {
    subjects: Vec<SubjectBundle>,
}

impl AtlasBank {
    pub fn new(subjects: Vec<SubjectBundle>) -> Result<Self> {
        let first = subjects
            .first()
            .ok_or_else(|| Error::InvalidInput("atlas bank is empty".into()))?;
        let grid = *first.grid();
        let mut seen = HashSet::new();
        for s in &subjects {
            grid.ensure_same(s.grid(), &format!("bank subject {}", s.id()))?;
            if s.mask().is_none() {
                return Err(Error::InvalidInput(format!(
                    "bank subject {} has no mask",
                    s.id()
                )));
            }
            if !seen.insert(s.id().to_string()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate subject id {} in bank",
                    s.id()
                )));
            }
        }
        Ok(Self { subjects })
    }

    pub fn subjects(&self) -> &[SubjectBundle] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn grid(&self) -> &ImageGrid {
        self.subjects[0].grid()
    }

    pub fn get(&self, id: &str) -> Option<&SubjectBundle> {
        self.subjects.iter().find(|s| s.id() == id)
    }

    pub fn ids(&self) -> Vec<&str> {
        self.subjects.iter().map(|s| s.id()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    /// Number of best-ranked templates to register and average.
    pub n: usize,
    /// Per-class probability a pixel must exceed to be labeled.
    pub threshold: f64,
    pub registration: RegistrationConfig,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            n: 10,
            threshold: 0.5,
            registration: RegistrationConfig::default(),
        }
    }
}

impl FusionConfig {
    pub fn validate(&self, available: usize) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "threshold {} must lie strictly between 0 and 1",
                self.threshold
            )));
        }
        if self.n > available {
            return Err(Error::Config(format!(
                "n = {} exceeds the {available} available templates",
                self.n
            )));
        }
        self.registration.validate()
    }
}

/// Per-class template agreement. Probabilities are `count / n` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    grid: ImageGrid,
    n: u32,
    cerebellum: Vec<u32>,
    brainstem: Vec<u32>,
}

impl SoftMask {
    pub fn grid(&self) -> &ImageGrid {
        &self.grid
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn cerebellum_counts(&self) -> &[u32] {
        &self.cerebellum
    }

    pub fn brainstem_counts(&self) -> &[u32] {
        &self.brainstem
    }

    pub fn p_cerebellum(&self) -> Vec<f64> {
        self.cerebellum
            .iter()
            .map(|&c| c as f64 / self.n as f64)
            .collect()
    }

    pub fn p_brainstem(&self) -> Vec<f64> {
        self.brainstem
            .iter()
            .map(|&c| c as f64 / self.n as f64)
            .collect()
    }

    /// Thresholds the soft mask: a class is assigned when its probability
    /// exceeds `threshold`; if both do, the larger wins and an exact tie stays background.
    pub fn harden(&self, threshold: f64) -> LabelMask {
        let n = self.n as f64;
        let labels = self
            .cerebellum
            .iter()
            .zip(&self.brainstem)
            .map(|(&c, &b)| {
                let (pc, pb) = (c as f64 / n, b as f64 / n);
                match (pc > threshold, pb > threshold) {
                    (true, false) => Label::Cerebellum,
                    (false, true) => Label::BrainStem,
                    (true, true) if c > b => Label::Cerebellum,
                    (true, true) if b > c => Label::BrainStem,
                    _ => Label::Background,
                }
            })
            .map(|l| l as u8)
            .collect();
        LabelMask::new(self.grid, labels).expect("fused labels are valid")
    }
}

/// Averages per-class indicators of the warped masks and thresholds the result.
pub fn fuse(warped_masks: &[LabelMask], threshold: f64) -> Result<(SoftMask, LabelMask)> {
    let first = warped_masks
        .first()
        .ok_or_else(|| Error::InvalidInput("no masks to fuse".into()))?;
    if !threshold.is_finite() {
        return Err(Error::InvalidInput("threshold must be finite".into()));
    }
    let grid = *first.grid();
    let mut cerebellum = vec![0u32; grid.len()];
    let mut brainstem = vec![0u32; grid.len()];
    for m in warped_masks {
        grid.ensure_same(m.grid(), "fused masks")?;
        for ((c, b), &l) in cerebellum
            .iter_mut()
            .zip(brainstem.iter_mut())
            .zip(m.labels())
        {
            *c += (l == Label::Cerebellum as u8) as u32;
            *b += (l == Label::BrainStem as u8) as u32;
        }
    }
    let soft = SoftMask {
        grid,
        n: warped_masks.len() as u32,
        cerebellum,
        brainstem,
    };
    let hard = soft.harden(threshold);
    Ok((soft, hard))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedTemplate {
    pub id: String,
    pub ssd: f64,
}

/// Orders templates by SSD of the magnitude images under the identity,
/// most similar first; ties broken by id.
pub fn rank_candidates(
    reference: &SubjectBundle,
    candidates: &[&SubjectBundle],
) -> Result<Vec<RankedTemplate>> {
    let r = reference.magnitude().cast::<f64>();
    let mut ranked = candidates
        .iter()
        .map(|c| {
            let t = c.magnitude().cast::<f64>();
            Ok(RankedTemplate {
                id: c.id().to_string(),
                ssd: ssd_value(&t, &r, &Identity)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| a.ssd.total_cmp(&b.ssd).then_with(|| a.id.cmp(&b.id)));
    Ok(ranked)
}

/// Ranks every bank subject against `reference`.
pub fn rank_templates(reference: &SubjectBundle, bank: &AtlasBank) -> Result<Vec<RankedTemplate>> {
    let all: Vec<&SubjectBundle> = bank.subjects().iter().collect();
    rank_candidates(reference, &all)
}

/// One template's registration and warped mask.
#[derive(Debug, Clone)]
pub struct TemplateOutcome {
    pub id: String,
    pub rank: usize,
    pub ssd: f64,
    pub result: std::result::Result<(RegistrationResult<f64>, LabelMask), String>,
}

impl TemplateOutcome {
    /// Whether the warped mask takes part in fusion.
    pub fn usable(&self) -> bool {
        matches!(&self.result, Ok((r, _)) if !r.failed())
    }

    pub fn warped_mask(&self) -> Option<&LabelMask> {
        match &self.result {
            Ok((r, m)) if !r.failed() => Some(m),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentOptions {
    /// Drop the bank entry whose id equals the reference id.
    pub exclude_self: bool,
}

impl Default for SegmentOptions {
    fn default() -> Self {
        Self { exclude_self: true }
    }
}

/// Ranks the candidates and registers the `count` best onto `reference`,
/// in parallel on the current rayon pool. Outcomes come back in rank order.
pub fn register_best_templates(
    reference: &SubjectBundle,
    bank: &AtlasBank,
    count: usize,
    registration: &RegistrationConfig,
    options: SegmentOptions,
) -> Result<Vec<TemplateOutcome>> {
    if !reference.grid().same_shape(bank.grid()) {
        return Err(Error::Shape(format!(
            "reference {} does not match the bank resolution",
            reference.id()
        )));
    }
    let candidates: Vec<&SubjectBundle> = bank
        .subjects()
        .iter()
        .filter(|s| !(options.exclude_self && s.id() == reference.id()))
        .collect();
    if count > candidates.len() {
        return Err(Error::Config(format!(
            "n = {count} exceeds the {} available templates",
            candidates.len()
        )));
    }
    let ranked = rank_candidates(reference, &candidates)?;
    let outcomes = ranked
        .into_iter()
        .take(count)
        .enumerate()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(rank, r)| {
            let template = bank.get(&r.id).expect("ranked id comes from the bank");
            let result = multilevel_register(template, reference, registration)
                .map(|res| {
                    let mask = template.mask().expect("bank subjects carry masks");
                    let warped = warp_mask(mask, &res.field, reference.grid());
                    (res, warped)
                })
                .map_err(|e| e.to_string());
            match &result {
                Err(e) => log::warn!(
                    "registration of {} onto {} failed: {e}",
                    r.id,
                    reference.id()
                ),
                Ok((res, _)) if res.failed() => {
                    log::warn!(
                        "registration of {} onto {} did not converge; skipped",
                        r.id,
                        reference.id()
                    )
                }
                _ => {}
            }
            TemplateOutcome {
                id: r.id,
                rank,
                ssd: r.ssd,
                result,
            }
        })
        .collect();
    Ok(outcomes)
}

/// Fuses the first `n` ranked outcomes, skipping failed registrations.
pub fn fuse_outcomes(
    outcomes: &[TemplateOutcome],
    n: usize,
    threshold: f64,
) -> Result<(SoftMask, LabelMask)> {
    let masks: Vec<LabelMask> = outcomes
        .iter()
        .take(n)
        .filter_map(|o| o.warped_mask().cloned())
        .collect();
    if masks.is_empty() {
        return Err(Error::Segmentation(format!(
            "all {} registrations failed",
            n.min(outcomes.len())
        )));
    }
    fuse(&masks, threshold)
}

/// Full segmentation of one subject.
#[derive(Debug, Clone)]
pub struct Segmentation {
    pub subject: String,
    pub hard: LabelMask,
    pub soft: SoftMask,
    pub templates: Vec<TemplateOutcome>,
}

/// Registers the `n` most similar templates onto `reference`, warps their
/// masks and fuses them at the configured threshold.
pub fn segment(
    reference: &SubjectBundle,
    bank: &AtlasBank,
    config: &FusionConfig,
    options: SegmentOptions,
) -> Result<Segmentation> {
    let available = bank
        .subjects()
        .iter()
        .filter(|s| !(options.exclude_self && s.id() == reference.id()))
        .count();
    config.validate(available)?;
    let templates =
        register_best_templates(reference, bank, config.n, &config.registration, options)?;
    let (soft, hard) = fuse_outcomes(&templates, config.n, config.threshold)?;
    Ok(Segmentation {
        subject: reference.id().to_string(),
        hard,
        soft,
        templates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateRecord {
    pub id: String,
    pub rank: usize,
    pub ssd: f64,
    pub used: bool,
    pub status: Option<RegistrationStatus>,
    pub converged: bool,
    pub min_jacobian_det: Option<f64>,
    pub error: Option<String>,
}

/// Serializable view of registration outcomes.
pub fn template_records(outcomes: &[TemplateOutcome]) -> Vec<TemplateRecord> {
    outcomes
        .iter()
        .map(|t| match &t.result {
            Ok((r, _)) => TemplateRecord {
                id: t.id.clone(),
                rank: t.rank,
                ssd: t.ssd,
                used: t.usable(),
                status: Some(r.status.clone()),
                converged: r.converged(),
                min_jacobian_det: Some(r.field.min_jacobian_det()),
                error: None,
            },
            Err(e) => TemplateRecord {
                id: t.id.clone(),
                rank: t.rank,
                ssd: t.ssd,
                used: false,
                status: None,
                converged: false,
                min_jacobian_det: None,
                error: Some(e.clone()),
            },
        })
        .collect()
}

/// `segmentation.json` layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationSummary {
    pub subject: String,
    pub n: usize,
    pub threshold: f64,
    pub templates_used: usize,
    pub templates: Vec<TemplateRecord>,
}

impl Segmentation {
    pub fn summary(&self, config: &FusionConfig) -> SegmentationSummary {
        let templates = template_records(&self.templates);
        SegmentationSummary {
            subject: self.subject.clone(),
            n: config.n,
            threshold: config.threshold,
            templates_used: templates.iter().filter(|t| t.used).count(),
            templates,
        }
    }

    /// Writes `hard_mask.u8`, `soft_cerebellum.f32`, `soft_brainstem.f32` and `segmentation.json`.
    pub fn write(&self, config: &FusionConfig, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
        write_mask_file(&self.hard, dir.join("hard_mask.u8"))?;
        let pc: Vec<f32> = self.soft.p_cerebellum().iter().map(|&p| p as f32).collect();
        let pb: Vec<f32> = self.soft.p_brainstem().iter().map(|&p| p as f32).collect();
        write_f32_file(&pc, dir.join("soft_cerebellum.f32"))?;
        write_f32_file(&pb, dir.join("soft_brainstem.f32"))?;
        write_json(&dir.join("segmentation.json"), &self.summary(config))
    }
}
