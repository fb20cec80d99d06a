//! Intensity normalization and temporal reduction of DENSE gate stacks.

use crate::error::{Error, Result};
use crate::imaging::bundle::SubjectBundle;
use crate::imaging::grid::ImageGrid;
use crate::imaging::image::ScalarImage;
use crate::scalar::Real;

pub const DEFAULT_BINS: usize = 64;

/// Output of [`histogram_equalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Equalized<T> {
    pub image: ScalarImage<T>,
    /// Set when the input was constant and the CDF carried no information.
    pub degenerate: bool,
}

/// Maps every intensity to the empirical CDF of its histogram bin.
///
/// Bins split `[min, max]` of the input uniformly. Each pixel becomes the
/// fraction of pixels whose bin is at or below its own, so the output lies in
/// `(0, 1]`, the map is monotone, and the output CDF evaluated at any attained
/// level `v` equals `v` up to one bin of mass.
pub fn histogram_equalize<T: Real>(image: &ScalarImage<T>, bins: usize) -> Result<Equalized<T>> {
    if bins < 2 {
        return Err(Error::InvalidInput(format!(
            "bins must be >= 2, got {bins}"
        )));
    }
    let (lo, hi) = image.min_max();
    if !(hi > lo) {
        return Ok(Equalized {
            image: ScalarImage::constant(*image.grid(), T::half()),
            degenerate: true,
        });
    }
    let (lo, hi) = (lo.as_f64(), hi.as_f64());
    let scale = bins as f64 / (hi - lo);
    let bin_of = |v: T| (((v.as_f64() - lo) * scale) as usize).min(bins - 1);

    let mut counts = vec![0usize; bins];
    for &v in image.values() {
        counts[bin_of(v)] += 1;
    }
    let n = image.values().len() as f64;
    let mut cdf = Vec::with_capacity(bins);
    let mut acc = 0usize;
    for c in counts {
        acc += c;
        cdf.push(T::of(acc as f64 / n));
    }
    let out = image.map(|v| cdf[bin_of(v)])?;
    Ok(Equalized {
        image: out,
        degenerate: false,
    })
}

/// Displacement magnitude per cardiac gate, all on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GateStack<T> {
    grid: ImageGrid,
    gates: Vec<ScalarImage<T>>,
}

impl<T: Real> GateStack<T> {
    pub fn new(gates: Vec<ScalarImage<T>>) -> Result<Self> {
        let first = gates
            .first()
            .ok_or_else(|| Error::InvalidInput("gate stack is empty".into()))?;
        let grid = *first.grid();
        for (k, g) in gates.iter().enumerate() {
            grid.ensure_same(g.grid(), &format!("gate {k}"))?;
        }
        Ok(Self { grid, gates })
    }

    pub fn grid(&self) -> &ImageGrid {
        &self.grid
    }

    pub fn gates(&self) -> &[ScalarImage<T>] {
        &self.gates
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }
}

/// Per-pixel mean and maximum over the gates.
pub fn temporal_reduce<T: Real>(stack: &GateStack<T>) -> (ScalarImage<T>, ScalarImage<T>) {
    let n = stack.grid.len();
    let mut sum = vec![T::zero(); n];
    let mut peak = vec![T::neg_infinity(); n];
    for gate in &stack.gates {
        for ((s, p), &v) in sum.iter_mut().zip(peak.iter_mut()).zip(gate.values()) {
            *s += v;
            *p = p.max(v);
        }
    }
    let count = T::of_usize(stack.gates.len());
    let mean: Vec<T> = sum
        .into_iter()
        .zip(&peak)
        // the division can round a hair above the maximum when all gates agree
        .map(|(s, &p)| (s / count).min(p))
        .collect();
    (
        ScalarImage::new(stack.grid, mean).expect("finite mean of finite gates"),
        ScalarImage::new(stack.grid, peak).expect("finite peak of finite gates"),
    )
}

/// Equalizes the magnitude channel and, when a gate stack is present, derives
/// the mean and peak channels from it. Bundles already flagged as normalized
/// are returned unchanged.
pub fn preprocess_bundle(bundle: &SubjectBundle, bins: usize) -> Result<SubjectBundle> {
    if bundle.is_normalized() {
        return Ok(bundle.clone());
    }
    let eq = histogram_equalize(bundle.magnitude(), bins)?;
    if eq.degenerate {
        log::warn!("subject {} has a constant magnitude image", bundle.id());
    }
    let mut out = bundle.clone().with_magnitude(eq.image, true)?;
    if let Some(stack) = bundle.gates() {
        let (mean, peak) = temporal_reduce(stack);
        out = out.with_dense(mean, peak)?;
    }
    Ok(out)
}
