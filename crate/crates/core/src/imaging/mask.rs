use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::grid::ImageGrid;

/// Per-pixel class id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Label {
    Background = 0,
    Cerebellum = 1,
    BrainStem = 2,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Background, Label::Cerebellum, Label::BrainStem];

    pub fn from_u8(code: u8) -> Option<Self> {
        match code {
            0 => Some(Label::Background),
            1 => Some(Label::Cerebellum),
            2 => Some(Label::BrainStem),
            _ => None,
        }
    }
}

/// Set of foreground classes a metric is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Cerebellum,
    BrainStem,
    /// Union of cerebellum and brain stem.
    Full,
}

impl Region {
    #[inline]
    pub fn contains(self, code: u8) -> bool {
        match self {
            Region::Cerebellum => code == Label::Cerebellum as u8,
            Region::BrainStem => code == Label::BrainStem as u8,
            Region::Full => code == Label::Cerebellum as u8 || code == Label::BrainStem as u8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::Cerebellum => "cerebellum",
            Region::BrainStem => "brainstem",
            Region::Full => "full",
        }
    }

    pub fn label(self) -> Option<Label> {
        match self {
            Region::Cerebellum => Some(Label::Cerebellum),
            Region::BrainStem => Some(Label::BrainStem),
            Region::Full => None,
        }
    }
}

/// Segmentation mask: `code = χ_cerebellum + 2·χ_brainstem` per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    grid: ImageGrid,
    labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(grid: ImageGrid, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != grid.len() {
            return Err(Error::Shape(format!(
                "mask of {}x{} needs {} labels, got {}",
                grid.width(),
                grid.height(),
                grid.len(),
                labels.len()
            )));
        }
        if let Some(k) = labels.iter().position(|&l| l > 2) {
            return Err(Error::InvalidInput(format!(
                "label {} at index {k} is outside {{0,1,2}}",
                labels[k]
            )));
        }
        Ok(Self { grid, labels })
    }

    pub fn background(grid: ImageGrid) -> Self {
        Self {
            grid,
            labels: vec![0; grid.len()],
        }
    }

    /// Encodes two disjoint indicator sets.
    pub fn from_indicators(
        grid: ImageGrid,
        cerebellum: &[bool],
        brainstem: &[bool],
    ) -> Result<Self> {
        if cerebellum.len() != grid.len() || brainstem.len() != grid.len() {
            return Err(Error::Shape("indicator length differs from grid".into()));
        }
        let labels = cerebellum
            .iter()
            .zip(brainstem)
            .enumerate()
            .map(|(k, (&c, &b))| {
                if c && b {
                    Err(Error::InvalidInput(format!(
                        "cell {k} is marked as both cerebellum and brain stem"
                    )))
                } else {
                    Ok(c as u8 + 2 * b as u8)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { grid, labels })
    }

    pub fn from_fn(grid: ImageGrid, mut f: impl FnMut(usize, usize) -> Label) -> Self {
        let mut labels = Vec::with_capacity(grid.len());
        for j in 0..grid.height() {
            for i in 0..grid.width() {
                labels.push(f(i, j) as u8);
            }
        }
        Self { grid, labels }
    }

    #[inline]
    pub fn grid(&self) -> &ImageGrid {
        &self.grid
    }

    #[inline]
    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Label {
        Label::from_u8(self.labels[self.grid.index(i, j)]).expect("validated label")
    }

    pub fn indicator(&self, region: Region) -> Vec<bool> {
        self.labels.iter().map(|&l| region.contains(l)).collect()
    }

    pub fn count(&self, region: Region) -> usize {
        self.labels.iter().filter(|&&l| region.contains(l)).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoding_matches_indicator_sum() {
        let g = ImageGrid::new(3, 1).unwrap();
        let m =
            LabelMask::from_indicators(g, &[true, false, false], &[false, true, false]).unwrap();
        assert_eq!(m.labels(), &[1, 2, 0]);
        assert_eq!(m.count(Region::Full), 2);
        assert_eq!(m.indicator(Region::BrainStem), vec![false, true, false]);
    }

    #[test]
    fn overlapping_indicators_are_rejected() {
        let g = ImageGrid::new(2, 1).unwrap();
        assert!(LabelMask::from_indicators(g, &[true, false], &[true, false]).is_err());
    }

    #[test]
    fn labels_outside_range_are_rejected() {
        let g = ImageGrid::new(2, 1).unwrap();
        assert!(matches!(
            LabelMask::new(g, vec![0, 3]),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(LabelMask::new(g, vec![0]), Err(Error::Shape(_))));
    }
}
