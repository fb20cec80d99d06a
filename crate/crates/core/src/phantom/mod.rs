//! Deterministic synthetic subjects with known masks, DENSE channels and warps.
//!
//! Every subject is the canonical anatomy pulled back through its own truth
//! warp `φ`: the value at `x` is the anatomy at `φ(x)`, so masks and
//! displacements are exact rather than resampled.

mod anatomy;
mod warp;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::fusion::AtlasBank;
use crate::imaging::bundle::{SubjectBundle, DEFAULT_UNIT};
use crate::imaging::grid::ImageGrid;
use crate::imaging::image::ScalarImage;
use crate::imaging::io::{write_f32_file, write_json, write_subjects_with_index};
use crate::imaging::mask::LabelMask;
use crate::imaging::preprocess::{temporal_reduce, GateStack};
use crate::registration::transform::Transformation;

use anatomy::Anatomy;
pub use warp::{Bump, TruthWarp};

pub const TRUTH_WARP_FILE: &str = "truth_warp.f32";
pub const PHANTOM_FILE: &str = "phantom.json";

/// RNG stream of the shared anatomy texture.
const ANATOMY_STREAM: u64 = u64::MAX;
/// RNG stream of the base subject's noise.
const BASE_STREAM: u64 = u64::MAX - 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub seed: u64,
    pub resolution: usize,
    pub bank_size: usize,
    pub test_size: usize,
    /// Bump amplitude of the truth warps in pixels; also scales the affine jitter.
    pub deform_mag: f64,
    pub bumps: usize,
    /// Lower bound on `det ∇φ` every truth warp must respect.
    pub min_det: f64,
    /// Magnitude noise standard deviation.
    pub noise_sigma: f64,
    /// Relative per-subject jitter of the tissue contrast levels.
    pub contrast_jitter: f64,
    pub tissue_mu: f64,
    pub cerebellum_mu: f64,
    pub brainstem_mu: f64,
    pub csf_mu: f64,
    /// DENSE noise standard deviation, in the displacement unit.
    pub dense_sigma: f64,
    /// Number of cardiac gates. With `emit_gates` the stack is stored and the
    /// mean/peak channels are reduced from it.
    pub gate_count: u32,
    pub emit_gates: bool,
    pub unit: String,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            resolution: 256,
            bank_size: 51,
            test_size: 12,
            deform_mag: 8.0,
            bumps: 6,
            min_det: 0.2,
            noise_sigma: 0.02,
            contrast_jitter: 0.05,
            tissue_mu: 60.0,
            cerebellum_mu: 90.0,
            brainstem_mu: 120.0,
            csf_mu: 600.0,
            dense_sigma: 6.0,
            gate_count: 20,
            emit_gates: false,
            unit: DEFAULT_UNIT.to_string(),
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.resolution < 8 {
            return fail(format!("resolution {} is below 8", self.resolution));
        }
        if self.bank_size + self.test_size == 0 {
            return fail("bank_size and test_size are both zero".into());
        }
        let reals = [
            ("deform_mag", self.deform_mag),
            ("noise_sigma", self.noise_sigma),
            ("contrast_jitter", self.contrast_jitter),
            ("dense_sigma", self.dense_sigma),
            ("tissue_mu", self.tissue_mu),
            ("cerebellum_mu", self.cerebellum_mu),
            ("brainstem_mu", self.brainstem_mu),
        ];
        for (name, v) in reals {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(self.min_det > 0.0 && self.min_det < 1.0) {
            return fail(format!("min_det {} must lie in (0, 1)", self.min_det));
        }
        if self.contrast_jitter >= 1.0 {
            return fail("contrast_jitter must be below 1".into());
        }
        let regions = self
            .tissue_mu
            .max(self.cerebellum_mu)
            .max(self.brainstem_mu);
        if !(self.csf_mu > regions) {
            return fail(format!(
                "csf_mu {} must exceed every region mean ({regions})",
                self.csf_mu
            ));
        }
        if self.emit_gates && self.gate_count == 0 {
            return fail("emit_gates needs gate_count >= 1".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> ImageGrid {
        ImageGrid::new(self.resolution, self.resolution).expect("validated resolution")
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    fn anatomy(&self) -> Anatomy {
        Anatomy::new(&mut self.rng(ANATOMY_STREAM), self.resolution)
    }
}

/// A generated bundle (with its true mask) and the warp that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSubject {
    pub bundle: SubjectBundle,
    pub truth: TruthWarp,
}

impl PhantomSubject {
    /// Writes the bundle and `truth_warp.f32` (nodal displacement of `φ`, interleaved).
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        crate::imaging::io::write_bundle(&self.bundle, dir)?;
        write_truth(&self.truth, self.bundle.grid(), dir)
    }
}

fn write_truth(truth: &TruthWarp, grid: &ImageGrid, dir: &Path) -> Result<()> {
    let field = truth.to_field(*grid);
    let values: Vec<f32> = field.values().iter().map(|&v| v as f32).collect();
    write_f32_file(&values, dir.join(TRUTH_WARP_FILE))?;
    Ok(())
}

fn render(
    spec: &PhantomSpec,
    anatomy: &Anatomy,
    id: String,
    truth: TruthWarp,
    rng: &mut ChaCha8Rng,
) -> Result<PhantomSubject> {
    let grid = spec.grid();
    let r = spec.resolution as f64;
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let dense = Normal::new(0.0, spec.dense_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let cj = spec.contrast_jitter;
    let contrast = [
        1.0 + rng.gen_range(-cj..=cj),
        1.0 + rng.gen_range(-cj..=cj),
        1.0 + rng.gen_range(-cj..=cj),
    ];

    let centers = grid.cell_centers();
    let positions: Vec<[f64; 2]> = centers
        .iter()
        .map(|&x| {
            let y = truth.map(x);
            [y[0] / r, y[1] / r]
        })
        .collect();

    let magnitude: Vec<f32> = positions
        .iter()
        .map(|&p| (anatomy.magnitude(p, contrast) + noise.sample(rng)) as f32)
        .collect();
    let labels: Vec<u8> = positions.iter().map(|&p| anatomy.label(p) as u8).collect();
    let peak: Vec<f64> = positions
        .iter()
        .map(|&p| {
            let w = anatomy.weights(p);
            let base = anatomy.peak(p, spec.tissue_mu, spec.cerebellum_mu, spec.brainstem_mu);
            let csf = spec.csf_mu * rng.gen_range(0.6..1.0);
            let v = base + dense.sample(rng) * w.brain;
            (v + (csf - v) * w.csf).max(0.0)
        })
        .collect();

    let mut bundle = SubjectBundle::new(id, ScalarImage::new(grid, magnitude)?)?
        .with_mask(LabelMask::new(grid, labels)?)?
        .with_unit(spec.unit.clone())
        .with_gate_count(spec.gate_count);
    if spec.emit_gates {
        // displacement magnitude over the cycle follows |sin| with per-gate noise
        let g = spec.gate_count as usize;
        let gates = (0..g)
            .map(|k| {
                let s = (std::f64::consts::PI * (k as f64 + 0.5) / g as f64)
                    .sin()
                    .abs();
                let vals = peak
                    .iter()
                    .map(|&p| (p * s + 0.1 * spec.dense_sigma * dense_unit(rng)).max(0.0) as f32)
                    .collect();
                ScalarImage::new(grid, vals)
            })
            .collect::<Result<Vec<_>>>()?;
        let stack = GateStack::new(gates)?;
        let (mean, peak) = temporal_reduce(&stack);
        bundle = bundle.with_dense(mean, peak)?.with_gates(stack)?;
    } else {
        let mean: Vec<f32> = peak
            .iter()
            .map(|&p| (0.62 * p + 0.1 * spec.dense_sigma * dense_unit(rng)).clamp(0.0, p) as f32)
            .collect();
        let peak: Vec<f32> = peak.iter().map(|&p| p as f32).collect();
        bundle = bundle.with_dense(ScalarImage::new(grid, mean)?, ScalarImage::new(grid, peak)?)?;
    }
    Ok(PhantomSubject { bundle, truth })
}

fn dense_unit(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

/// The undeformed anatomy with its own noise realization.
pub fn generate_base(spec: &PhantomSpec) -> Result<PhantomSubject> {
    spec.validate()?;
    let mut rng = spec.rng(BASE_STREAM);
    let truth = TruthWarp::identity(&spec.grid());
    render(spec, &spec.anatomy(), "base".into(), truth, &mut rng)
}

/// Subject number `stream`, deformed by a random truth warp.
pub fn generate_subject(
    spec: &PhantomSpec,
    id: impl Into<String>,
    stream: u64,
) -> Result<PhantomSubject> {
    spec.validate()?;
    subject(spec, &spec.anatomy(), id.into(), stream)
}

fn subject(
    spec: &PhantomSpec,
    anatomy: &Anatomy,
    id: String,
    stream: u64,
) -> Result<PhantomSubject> {
    let mut rng = spec.rng(stream);
    let grid = spec.grid();
    let truth = TruthWarp::random(
        &mut rng,
        &grid,
        spec.deform_mag,
        spec.bumps,
        spec.min_det,
        20,
    );
    debug_assert!(truth.min_det(&grid) > spec.min_det);
    render(spec, anatomy, id, truth, &mut rng)
}

pub fn bank_id(index: usize) -> String {
    format!("bank_{index:03}")
}

pub fn test_id(index: usize) -> String {
    format!("test_{index:03}")
}

/// A generated bank plus held-out test subjects.
#[derive(Debug, Clone)]
pub struct PhantomSet {
    pub spec: PhantomSpec,
    pub bank: Vec<PhantomSubject>,
    pub test: Vec<PhantomSubject>,
}

impl PhantomSet {
    pub fn atlas_bank(&self) -> Result<AtlasBank> {
        AtlasBank::new(self.bank.iter().map(|s| s.bundle.clone()).collect())
    }

    /// Writes `phantom.json`, `bank/` and `test/` (each with `bank.json`) under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
        for (name, subjects) in [("bank", &self.bank), ("test", &self.test)] {
            let sub = dir.join(name);
            let bundles: Vec<SubjectBundle> = subjects.iter().map(|s| s.bundle.clone()).collect();
            write_subjects_with_index(&bundles, &sub)?;
            for s in subjects.iter() {
                write_truth(&s.truth, s.bundle.grid(), &sub.join(s.bundle.id()))?;
            }
        }
        write_json(&dir.join(PHANTOM_FILE), &self.spec)
    }
}

/// Generates `bank_size` bank subjects (streams `0..bank_size`) and
/// `test_size` test subjects (the following streams), in parallel.
pub fn generate_bank(spec: &PhantomSpec) -> Result<PhantomSet> {
    spec.validate()?;
    let anatomy = spec.anatomy();
    let jobs: Vec<(String, u64)> = (0..spec.bank_size)
        .map(|i| (bank_id(i), i as u64))
        .chain((0..spec.test_size).map(|i| (test_id(i), (spec.bank_size + i) as u64)))
        .collect();
    let mut subjects = jobs
        .into_par_iter()
        .map(|(id, stream)| subject(spec, &anatomy, id, stream))
        .collect::<Result<Vec<_>>>()?;
    let test = subjects.split_off(spec.bank_size);
    Ok(PhantomSet {
        spec: spec.clone(),
        bank: subjects,
        test,
    })
}
