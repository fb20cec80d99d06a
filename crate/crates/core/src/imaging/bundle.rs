use crate::error::{Error, Result};
use crate::imaging::grid::ImageGrid;
use crate::imaging::image::ScalarImage;
use crate::imaging::mask::LabelMask;
use crate::imaging::preprocess::GateStack;

pub const DEFAULT_UNIT: &str = "um";

/// Everything recorded for one subject: magnitude image, DENSE reductions,
/// optional ground-truth mask and optional raw gate stack.
///
/// Arrays are held at storage precision (binary32).
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectBundle {
    id: String,
    magnitude: ScalarImage<f32>,
    mean_dense: Option<ScalarImage<f32>>,
    peak_dense: Option<ScalarImage<f32>>,
    mask: Option<LabelMask>,
    gates: Option<GateStack<f32>>,
    cardiac_gate_count: u32,
    normalized: bool,
    unit: String,
}

impl SubjectBundle {
    pub fn new(id: impl Into<String>, magnitude: ScalarImage<f32>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
            return Err(Error::InvalidInput(format!("invalid subject id {id:?}")));
        }
        Ok(Self {
            id,
            magnitude,
            mean_dense: None,
            peak_dense: None,
            mask: None,
            gates: None,
            cardiac_gate_count: 0,
            normalized: false,
            unit: DEFAULT_UNIT.to_string(),
        })
    }

    pub fn with_dense(mut self, mean: ScalarImage<f32>, peak: ScalarImage<f32>) -> Result<Self> {
        self.grid()
            .ensure_same(mean.grid(), "mean DENSE vs magnitude")?;
        self.grid()
            .ensure_same(peak.grid(), "peak DENSE vs magnitude")?;
        self.mean_dense = Some(mean);
        self.peak_dense = Some(peak);
        Ok(self)
    }

    pub fn with_mask(mut self, mask: LabelMask) -> Result<Self> {
        self.grid().ensure_same(mask.grid(), "mask vs magnitude")?;
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn without_mask(mut self) -> Self {
        self.mask = None;
        self
    }

    pub fn with_gates(mut self, gates: GateStack<f32>) -> Result<Self> {
        self.grid()
            .ensure_same(gates.grid(), "gate stack vs magnitude")?;
        self.cardiac_gate_count = gates.len() as u32;
        self.gates = Some(gates);
        Ok(self)
    }

    pub fn without_gates(mut self) -> Self {
        self.gates = None;
        self
    }

    pub fn with_gate_count(mut self, count: u32) -> Self {
        self.cardiac_gate_count = count;
        self
    }

    pub fn with_magnitude(mut self, magnitude: ScalarImage<f32>, normalized: bool) -> Result<Self> {
        self.grid()
            .ensure_same(magnitude.grid(), "replacement magnitude")?;
        self.magnitude = magnitude;
        self.normalized = normalized;
        Ok(self)
    }

    pub fn with_normalized(mut self, normalized: bool) -> Self {
        self.normalized = normalized;
        self
    }

    pub fn with_unit(mut self, unit: impl Into<String>) -> Self {
        self.unit = unit.into();
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn grid(&self) -> &ImageGrid {
        self.magnitude.grid()
    }

    pub fn magnitude(&self) -> &ScalarImage<f32> {
        &self.magnitude
    }

    pub fn mean_dense(&self) -> Option<&ScalarImage<f32>> {
        self.mean_dense.as_ref()
    }

    pub fn peak_dense(&self) -> Option<&ScalarImage<f32>> {
        self.peak_dense.as_ref()
    }

    pub fn mask(&self) -> Option<&LabelMask> {
        self.mask.as_ref()
    }

    pub fn gates(&self) -> Option<&GateStack<f32>> {
        self.gates.as_ref()
    }

    pub fn cardiac_gate_count(&self) -> u32 {
        self.cardiac_gate_count
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn unit(&self) -> &str {
        &self.unit
    }

    pub fn require_mask(&self) -> Result<&LabelMask> {
        self.mask
            .as_ref()
            .ok_or_else(|| Error::InvalidInput(format!("subject {} has no mask", self.id)))
    }

    pub fn require_peak(&self) -> Result<&ScalarImage<f32>> {
        self.peak_dense.as_ref().ok_or_else(|| {
            Error::InvalidInput(format!("subject {} has no peak DENSE channel", self.id))
        })
    }
}
