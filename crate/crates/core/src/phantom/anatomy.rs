//! Analytic "head" in normalized coordinates `p ∈ [0,1]²` (u across, v down).

use std::f64::consts::PI;

use rand::Rng;

use crate::imaging::mask::Label;

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    center: [f64; 2],
    radii: [f64; 2],
    angle: f64,
}

impl Ellipse {
    const fn new(center: [f64; 2], radii: [f64; 2], angle: f64) -> Self {
        Self {
            center,
            radii,
            angle,
        }
    }

    /// Approximate signed distance, negative inside.
    fn level(&self, p: [f64; 2]) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let d = [p[0] - self.center[0], p[1] - self.center[1]];
        let a = (c * d[0] + s * d[1]) / self.radii[0];
        let b = (-s * d[0] + c * d[1]) / self.radii[1];
        ((a * a + b * b).sqrt() - 1.0) * self.radii[0].min(self.radii[1])
    }
}

const HEAD: Ellipse = Ellipse::new([0.5, 0.5], [0.44, 0.46], 0.0);
const BRAIN: Ellipse = Ellipse::new([0.5, 0.5], [0.40, 0.42], 0.0);
const VENTRICLES: [Ellipse; 2] = [
    Ellipse::new([0.42, 0.36], [0.045, 0.09], 0.25),
    Ellipse::new([0.58, 0.36], [0.045, 0.09], -0.25),
];
const CEREBELLUM: Ellipse = Ellipse::new([0.61, 0.66], [0.15, 0.095], -0.26);
const BRAIN_STEM: Ellipse = Ellipse::new([0.39, 0.70], [0.05, 0.13], 0.35);

/// Inner and outer offsets of the synthetic CSF band around the labeled structures.
const CSF_GAP: f64 = 0.012;
const CSF_OUTER: f64 = 0.04;

const BACKGROUND: f64 = 0.02;
const SKULL: f64 = 0.85;
const TISSUE: f64 = 0.5;
const VENTRICLE: f64 = 0.15;
const CSF: f64 = 0.12;
const CEREBELLUM_LEVEL: f64 = 0.72;
const BRAIN_STEM_LEVEL: f64 = 0.34;
const TEXTURE: f64 = 0.08;
const TEXTURE_WAVES: usize = 12;
/// Curved stripes inside the cerebellum, centered below and right of it.
const FOLIA_CENTER: [f64; 2] = [0.78, 0.92];
const FOLIA_FREQ: f64 = 24.0;
const FOLIA: f64 = 0.1;

/// Per-structure weights at one point, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Weights {
    pub head: f64,
    pub brain: f64,
    pub ventricle: f64,
    pub csf: f64,
    pub cerebellum: f64,
    pub brain_stem: f64,
}

/// Canonical anatomy plus a seed-dependent interior texture.
#[derive(Debug, Clone)]
pub(crate) struct Anatomy {
    waves: Vec<([f64; 2], f64)>,
    /// Edge width in normalized units.
    edge: f64,
}

fn smooth_inside(level: f64, edge: f64) -> f64 {
    0.5 * (1.0 - (level / edge).tanh())
}

impl Anatomy {
    pub fn new(rng: &mut impl Rng, resolution: usize) -> Self {
        let waves = (0..TEXTURE_WAVES)
            .map(|_| {
                let freq = rng.gen_range(4.0..16.0);
                let dir = rng.gen_range(0.0..PI);
                let phase = rng.gen_range(0.0..2.0 * PI);
                ([freq * dir.cos(), freq * dir.sin()], phase)
            })
            .collect();
        Self {
            waves,
            edge: 0.6 / resolution as f64,
        }
    }

    pub fn label(&self, p: [f64; 2]) -> Label {
        if CEREBELLUM.level(p) < 0.0 {
            Label::Cerebellum
        } else if BRAIN_STEM.level(p) < 0.0 {
            Label::BrainStem
        } else {
            Label::Background
        }
    }

    pub fn weights(&self, p: [f64; 2]) -> Weights {
        let e = self.edge;
        let near = CEREBELLUM.level(p).min(BRAIN_STEM.level(p));
        let cerebellum = smooth_inside(CEREBELLUM.level(p), e);
        Weights {
            head: smooth_inside(HEAD.level(p), e),
            brain: smooth_inside(BRAIN.level(p), e),
            ventricle: VENTRICLES
                .iter()
                .map(|v| smooth_inside(v.level(p), e))
                .fold(0.0, f64::max),
            csf: smooth_inside(near - CSF_OUTER, e) * (1.0 - smooth_inside(near - CSF_GAP, e)),
            cerebellum,
            brain_stem: smooth_inside(BRAIN_STEM.level(p), e) * (1.0 - cerebellum),
        }
    }

    fn texture(&self, p: [f64; 2]) -> f64 {
        let s: f64 = self
            .waves
            .iter()
            .map(|(k, phase)| (2.0 * PI * (k[0] * p[0] + k[1] * p[1]) + phase).sin())
            .sum();
        TEXTURE * s / (self.waves.len() as f64).sqrt()
    }

    fn folia(&self, p: [f64; 2]) -> f64 {
        let d = ((p[0] - FOLIA_CENTER[0]).powi(2) + (p[1] - FOLIA_CENTER[1]).powi(2)).sqrt();
        FOLIA * (2.0 * PI * FOLIA_FREQ * d).sin()
    }

    /// Noise-free magnitude. `contrast` scales the tissue, cerebellum and
    /// brain stem levels.
    pub fn magnitude(&self, p: [f64; 2], contrast: [f64; 3]) -> f64 {
        let w = self.weights(p);
        let mut v = BACKGROUND;
        v += (SKULL - v) * w.head;
        v += (TISSUE * contrast[0] + self.texture(p) - v) * w.brain;
        v += (VENTRICLE - v) * w.ventricle * w.brain;
        v += (CSF - v) * w.csf;
        v += (CEREBELLUM_LEVEL * contrast[1] + self.texture(p) + self.folia(p) - v) * w.cerebellum;
        v += (BRAIN_STEM_LEVEL * contrast[2] + self.texture(p) - v) * w.brain_stem;
        v
    }

    /// Noise-free peak displacement before the CSF band is added: constant
    /// over each labeled structure, the tissue level fading out at the brain edge elsewhere.
    pub fn peak(&self, p: [f64; 2], tissue: f64, cerebellum: f64, brain_stem: f64) -> f64 {
        match self.label(p) {
            Label::Cerebellum => cerebellum,
            Label::BrainStem => brain_stem,
            Label::Background => tissue * self.weights(p).brain,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    #[allow(clippy::assertions_on_constants)]
    fn structures_do_not_overlap_and_are_placed_as_expected() {
        let a = Anatomy::new(&mut ChaCha8Rng::seed_from_u64(1), 128);
        assert_eq!(a.label(CEREBELLUM.center), Label::Cerebellum);
        assert_eq!(a.label(BRAIN_STEM.center), Label::BrainStem);
        assert_eq!(a.label([0.5, 0.2]), Label::Background);
        // the stem sits left of and below the cerebellum
        assert!(BRAIN_STEM.center[0] < CEREBELLUM.center[0]);
        assert!(BRAIN_STEM.center[1] > CEREBELLUM.center[1]);
        // the labeled structures stay inside the brain
        for e in [CEREBELLUM, BRAIN_STEM] {
            for k in 0..64 {
                let t = k as f64 / 64.0 * 2.0 * PI;
                let (s, c) = e.angle.sin_cos();
                let q = [e.radii[0] * t.cos(), e.radii[1] * t.sin()];
                let p = [
                    e.center[0] + c * q[0] - s * q[1],
                    e.center[1] + s * q[0] + c * q[1],
                ];
                assert!(BRAIN.level(p) < -CSF_OUTER);
            }
        }
    }

    #[test]
    fn csf_band_surrounds_the_labeled_region() {
        let a = Anatomy::new(&mut ChaCha8Rng::seed_from_u64(1), 256);
        let c = CEREBELLUM.center;
        // walk up from the cerebellum center: inside, gap, band, tissue
        let probe = |dv: f64| a.weights([c[0], c[1] - dv]);
        let edge = {
            let mut t = 0.0;
            while CEREBELLUM.level([c[0], c[1] - t]) < 0.0 {
                t += 1e-4;
            }
            t
        };
        assert!(probe(edge + 0.5 * (CSF_GAP + CSF_OUTER)).csf > 0.99);
        assert!(probe(0.0).csf < 1e-6);
        assert!(probe(edge + 2.0 * CSF_OUTER).csf < 1e-6);
    }
}
