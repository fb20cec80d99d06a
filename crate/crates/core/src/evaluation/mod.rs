//! Overlap and biomarker metrics, grid search over fusion parameters, and
//! method comparison reports.

pub mod gridsearch;
pub mod report;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::image::ScalarImage;
use crate::imaging::mask::{LabelMask, Region};
use crate::scalar::Real;

pub use gridsearch::{grid_search, GridCell, GridSearchConfig, GridSearchResult};
pub use report::{compare_report, read_compare_report, CompareInput, CompareReport};

/// Dice index `2|A∩B| / (|A|+|B|)` of the pixels whose label falls in `region`.
/// Two empty regions agree perfectly and score 1.
pub fn dice(a: &LabelMask, b: &LabelMask, region: Region) -> Result<f64> {
    a.grid().ensure_same(b.grid(), "dice operands")?;
    let (mut both, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.labels().iter().zip(b.labels()) {
        let (x, y) = (region.contains(x), region.contains(y));
        both += (x && y) as usize;
        na += x as usize;
        nb += y as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

/// Mean peak displacement over one labeled region. With `csf_cutoff`, pixels
/// above the cutoff are left out.
pub fn biomarker<T: Real>(
    peak: &ScalarImage<T>,
    mask: &LabelMask,
    region: Region,
    csf_cutoff: Option<f64>,
) -> Result<f64> {
    peak.grid().ensure_same(mask.grid(), "peak image vs mask")?;
    if region == Region::Full {
        return Err(Error::InvalidInput(
            "biomarkers are defined per structure, not for the full mask".into(),
        ));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (&v, &l) in peak.values().iter().zip(mask.labels()) {
        let v = v.as_f64();
        if region.contains(l) && csf_cutoff.is_none_or(|c| v <= c) {
            sum += v;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyRegion(format!(
            "no {} pixels{}",
            region.name(),
            if csf_cutoff.is_some() {
                " below the cutoff"
            } else {
                ""
            }
        )));
    }
    Ok(sum / count as f64)
}

/// `|pred − truth| / truth`.
pub fn relative_error(pred: f64, truth: f64) -> Result<f64> {
    if !(truth > 0.0) || !pred.is_finite() || !truth.is_finite() {
        return Err(Error::InvalidInput(format!(
            "relative error needs a positive finite truth, got pred {pred}, truth {truth}"
        )));
    }
    Ok((pred - truth).abs() / truth)
}

/// A value for each labeled structure.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PerRegion<T> {
    pub cerebellum: T,
    pub brain_stem: T,
}

impl<T> PerRegion<T> {
    pub const REGIONS: [Region; 2] = [Region::Cerebellum, Region::BrainStem];

    pub fn from_fn(mut f: impl FnMut(Region) -> T) -> Self {
        Self {
            cerebellum: f(Region::Cerebellum),
            brain_stem: f(Region::BrainStem),
        }
    }

    pub fn try_from_fn<E>(
        mut f: impl FnMut(Region) -> std::result::Result<T, E>,
    ) -> std::result::Result<Self, E> {
        Ok(Self {
            cerebellum: f(Region::Cerebellum)?,
            brain_stem: f(Region::BrainStem)?,
        })
    }

    pub fn get(&self, region: Region) -> &T {
        match region {
            Region::BrainStem => &self.brain_stem,
            _ => &self.cerebellum,
        }
    }
}

/// Scores of one predicted mask against the true mask of a subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub subject: String,
    pub dice: PerRegion<f64>,
    pub dice_full: f64,
    pub biomarker_true: Option<PerRegion<f64>>,
    /// `None` for a structure the prediction does not contain.
    pub biomarker_pred: Option<PerRegion<Option<f64>>>,
    pub relative_error: Option<PerRegion<Option<f64>>>,
}

impl EvaluationRecord {
    /// Relative biomarker errors that could be computed.
    pub fn errors(&self) -> Vec<f64> {
        self.relative_error
            .iter()
            .flat_map(|e| [e.cerebellum, e.brain_stem])
            .flatten()
            .collect()
    }
}

/// Dice per structure and for the full mask, plus biomarkers when a peak image is given.
pub fn evaluate_subject<T: Real>(
    subject: &str,
    truth: &LabelMask,
    predicted: &LabelMask,
    peak: Option<&ScalarImage<T>>,
    csf_cutoff: Option<f64>,
) -> Result<EvaluationRecord> {
    let d = PerRegion::try_from_fn(|r| dice(truth, predicted, r))?;
    let dice_full = dice(truth, predicted, Region::Full)?;
    let (mut bt, mut bp, mut re) = (None, None, None);
    if let Some(peak) = peak {
        let t = PerRegion::try_from_fn(|r| biomarker(peak, truth, r, csf_cutoff))?;
        let p = PerRegion::try_from_fn(|r| match biomarker(peak, predicted, r, csf_cutoff) {
            Ok(v) => Ok(Some(v)),
            Err(Error::EmptyRegion(_)) => Ok(None),
            Err(e) => Err(e),
        })?;
        let e =
            PerRegion::try_from_fn(|r| p.get(r).map(|v| relative_error(v, *t.get(r))).transpose())?;
        bt = Some(t);
        bp = Some(p);
        re = Some(e);
    }
    Ok(EvaluationRecord {
        subject: subject.to_string(),
        dice: d,
        dice_full,
        biomarker_true: bt,
        biomarker_pred: bp,
        relative_error: re,
    })
}

pub(crate) fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}
