//! Seeded Gaussian mixtures used as stand-in latents.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::frame::FrameSet;

/// Mixture family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    /// Spherical components with spreads drawn uniformly from the range.
    Isotropic,
    /// Components with an independent spread per axis, drawn log-uniformly.
    Anisotropic,
    /// Components whose overall spreads are spaced geometrically from
    /// `spread_min` to `spread_max`, each with a random axis profile. The
    /// resulting scale mixture has tails far heavier than any one component.
    HeavyTailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub components: usize,
    pub dim: usize,
    pub spread_min: f64,
    pub spread_max: f64,
    /// Standard deviation of the component centers around the origin.
    pub center_spread: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(kind: SynthKind, components: usize, dim: usize) -> Self {
        // Heavy-tailed components overlap by default so that no single
        // partition of space isolates one spread.
        let (spread_min, spread_max, center_spread) = match kind {
            SynthKind::Isotropic => (1.0, 1.0, 3.0),
            SynthKind::Anisotropic => (0.2, 2.0, 3.0),
            SynthKind::HeavyTailed => (0.1, 2.0, 1.0),
        };
        SynthSpec {
            kind,
            components,
            dim,
            spread_min,
            spread_max,
            center_spread,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_spreads(mut self, min: f64, max: f64) -> Self {
        self.spread_min = min;
        self.spread_max = max;
        self
    }

    pub fn with_center_spread(mut self, s: f64) -> Self {
        self.center_spread = s;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.components == 0 {
            return Err(Error::invalid("component count must be at least 1"));
        }
        if self.dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        let finite = [self.spread_min, self.spread_max, self.center_spread].iter().all(|v| v.is_finite());
        if !finite || self.spread_min <= 0.0 || self.spread_max < self.spread_min || self.center_spread < 0.0 {
            return Err(Error::invalid(format!(
                "spreads must satisfy 0 < min <= max, got [{}, {}], center {}",
                self.spread_min, self.spread_max, self.center_spread
            )));
        }
        if self.kind == SynthKind::HeavyTailed && self.components > 1 && self.spread_max < 10.0 * self.spread_min {
            return Err(Error::invalid("heavy-tailed mixtures need a spread ratio of at least 10"));
        }
        Ok(())
    }
}

struct Component {
    center: Vec<f64>,
    /// Per-axis standard deviation.
    axes: Vec<f64>,
}

fn components(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<Component> {
    let (lo, hi) = (spec.spread_min, spec.spread_max);
    let log_uniform = |rng: &mut ChaCha8Rng| (lo.ln() + rng.random::<f64>() * (hi / lo).ln()).exp();
    (0..spec.components)
        .map(|c| {
            let center = (0..spec.dim)
                .map(|_| spec.center_spread * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let axes = match spec.kind {
                SynthKind::Isotropic => vec![lo + rng.random::<f64>() * (hi - lo); spec.dim],
                SynthKind::Anisotropic => (0..spec.dim).map(|_| log_uniform(rng)).collect(),
                SynthKind::HeavyTailed => {
                    let t = if spec.components == 1 {
                        0.0
                    } else {
                        c as f64 / (spec.components - 1) as f64
                    };
                    let spread = lo * (hi / lo).powf(t);
                    let profile: Vec<f64> = (0..spec.dim).map(|_| 0.5 + 1.5 * rng.random::<f64>()).collect();
                    // Rescale so the RMS axis spread equals `spread`.
                    let rms = (profile.iter().map(|p| p * p).sum::<f64>() / spec.dim as f64).sqrt();
                    profile.iter().map(|p| spread * p / rms).collect()
                }
            };
            Component { center, axes }
        })
        .collect()
}

/// Draws `count` frames and the component each came from.
pub fn synth_generate_labeled(spec: &SynthSpec, count: usize) -> Result<(FrameSet, Vec<usize>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let comps = components(spec, &mut rng);
    let mut data = Vec::with_capacity(count * spec.dim);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let c = rng.random_range(0..comps.len());
        let comp = &comps[c];
        for (m, s) in comp.center.iter().zip(&comp.axes) {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push((m + s * z) as f32);
        }
        labels.push(c);
    }
    Ok((FrameSet::from_flat(spec.dim, data)?, labels))
}

/// Draws `count` frames from the mixture described by `spec`.
pub fn synth_generate(spec: &SynthSpec, count: usize) -> Result<FrameSet> {
    synth_generate_labeled(spec, count).map(|(f, _)| f)
}
