//! Synthetic sign-like sequences with a planted informative window.
//!
//! Frames inside `[start, end)` follow a smooth per-class trajectory; frames
//! outside are i.i.d. Gaussian noise drawn the same way for every class.
//! Classes come in pairs that trace the *same* curve in opposite directions,
//! so the two members of a pair share every first-order frame statistic and
//! only temporal order separates them.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Sample, SkeletonSequence, Split};
use crate::error::{Error, Result};
use crate::rng::tagged_rng;

/// Within-window jitter relative to `noise_scale`.
const SIGNAL_NOISE_RATIO: f64 = 0.1;
const HARMONICS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub class_count: usize,
    pub samples_per_class: usize,
    pub n_frames: usize,
    pub landmark_count: usize,
    pub coord_dim: usize,
    pub signal_start_fraction: f64,
    pub signal_end_fraction: f64,
    pub noise_scale: f64,
    /// Seed for per-sample draws.
    pub seed: u64,
    /// Seed for the class prototypes. Datasets generated with the same family
    /// share class definitions, so train and test splits use one family and
    /// differ only in `seed`.
    pub family: u64,
    pub split: Split,
    /// Sequence length recorded in the dataset; defaults to `n_frames`.
    pub max_len: Option<usize>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            class_count: 10,
            samples_per_class: 20,
            n_frames: 24,
            landmark_count: 8,
            coord_dim: 2,
            signal_start_fraction: 1.0 / 3.0,
            signal_end_fraction: 0.25,
            noise_scale: 0.5,
            seed: 0,
            family: 0,
            split: Split::Train,
            max_len: None,
        }
    }
}

/// `⌈n·fraction⌉`, tolerant of the representation error in fractions such
/// as `1/3` so that `24 · (1/3)` gives 8 rather than 9.
pub fn ceil_fraction(n: usize, fraction: f64) -> usize {
    let x = n as f64 * fraction;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r.max(0.0) as usize
    } else {
        x.ceil().max(0.0) as usize
    }
}

impl SyntheticConfig {
    /// The informative frame range `[start, end)`.
    pub fn signal_window(&self) -> (usize, usize) {
        let start = ceil_fraction(self.n_frames, self.signal_start_fraction);
        let end = self
            .n_frames
            .saturating_sub(ceil_fraction(self.n_frames, self.signal_end_fraction));
        (start, end)
    }

    pub fn validate(&self) -> Result<()> {
        let frac_ok = |f: f64| (0.0..1.0).contains(&f);
        if !frac_ok(self.signal_start_fraction) || !frac_ok(self.signal_end_fraction) {
            return Err(Error::arg("signal fractions must lie in [0, 1)"));
        }
        if self.signal_start_fraction >= 1.0 - self.signal_end_fraction {
            return Err(Error::arg(
                "signal_start_fraction must be below 1 - signal_end_fraction",
            ));
        }
        if self.class_count == 0 || self.samples_per_class == 0 || self.n_frames == 0 {
            return Err(Error::arg("class_count, samples_per_class and n_frames must be positive"));
        }
        if self.landmark_count == 0 || !(2..=3).contains(&self.coord_dim) {
            return Err(Error::arg("landmark_count must be positive and coord_dim 2 or 3"));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::arg("noise_scale must be finite and nonnegative"));
        }
        let (start, end) = self.signal_window();
        if start >= end {
            return Err(Error::arg(format!(
                "signal window [{start}, {end}) is empty for {} frames",
                self.n_frames
            )));
        }
        Ok(())
    }
}

struct Family {
    anchors: Vec<f64>,
    /// Per pair, per coordinate: `HARMONICS` (amplitude, phase) terms.
    curves: Vec<Vec<[(f64, f64); HARMONICS]>>,
}

impl Family {
    fn new(cfg: &SyntheticConfig) -> Self {
        let coords = cfg.landmark_count * cfg.coord_dim;
        let mut rng = tagged_rng(cfg.family, "synthetic-family", &[]);
        let anchors = (0..coords).map(|_| rng.random_range(-0.5..0.5)).collect();
        let amp = Normal::new(0.0, 0.35).expect("valid normal");
        let pairs = cfg.class_count.div_ceil(2);
        let curves = (0..pairs)
            .map(|_| {
                (0..coords)
                    .map(|_| {
                        let mut terms = [(0.0, 0.0); HARMONICS];
                        for t in terms.iter_mut() {
                            *t = (amp.sample(&mut rng), rng.random_range(0.0..2.0 * PI));
                        }
                        terms
                    })
                    .collect()
            })
            .collect();
        Self { anchors, curves }
    }

    /// Position of coordinate `c` for `class` at progress `s ∈ [0, 1]`.
    fn position(&self, class: usize, c: usize, s: f64) -> f64 {
        let s = if class % 2 == 0 { s } else { 1.0 - s };
        let curve: f64 = self.curves[class / 2][c]
            .iter()
            .enumerate()
            .map(|(m, &(a, phi))| a * (PI * (m + 1) as f64 * s + phi).sin())
            .sum();
        self.anchors[c] + curve
    }
}

/// Generates `class_count × samples_per_class` labelled sequences.
///
/// Deterministic in `(family, seed)`; samples are interleaved by class.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let family = Family::new(cfg);
    let (start, end) = cfg.signal_window();
    let width = end - start;
    let coords = cfg.landmark_count * cfg.coord_dim;
    let noise = Normal::new(0.0, cfg.noise_scale).expect("valid normal");
    let jitter = Normal::new(0.0, cfg.noise_scale * SIGNAL_NOISE_RATIO).expect("valid normal");

    let mut samples = Vec::with_capacity(cfg.class_count * cfg.samples_per_class);
    for i in 0..cfg.samples_per_class {
        for class in 0..cfg.class_count {
            let mut rng = tagged_rng(cfg.seed, "synthetic-sample", &[class as u64, i as u64]);
            let gain: f64 = rng.random_range(0.8..1.2);
            let mut data = Vec::with_capacity(cfg.n_frames * coords);
            for t in 0..cfg.n_frames {
                if (start..end).contains(&t) {
                    let s = (t - start) as f64 / (width.max(2) - 1) as f64;
                    for c in 0..coords {
                        let anchor = family.anchors[c];
                        let p = anchor + gain * (family.position(class, c, s) - anchor);
                        data.push((p + jitter.sample(&mut rng)) as f32);
                    }
                } else {
                    data.extend((0..coords).map(|_| noise.sample(&mut rng) as f32));
                }
            }
            samples.push(Sample {
                id: format!("{}-c{class:03}-{i:05}", cfg.split),
                label: Some(class),
                sequence: SkeletonSequence::new(cfg.landmark_count, cfg.coord_dim, data)?,
            });
        }
    }
    let dataset = Dataset {
        samples,
        class_count: cfg.class_count,
        split: cfg.split,
        landmark_count: cfg.landmark_count,
        coord_dim: cfg.coord_dim,
        max_len: cfg.max_len.unwrap_or(cfg.n_frames),
    };
    dataset.validate()?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceil_fraction_tolerates_thirds() {
        assert_eq!(ceil_fraction(24, 1.0 / 3.0), 8);
        assert_eq!(ceil_fraction(24, 0.25), 6);
        assert_eq!(ceil_fraction(64, 1.0 / 3.0), 22);
        assert_eq!(ceil_fraction(64, 0.25), 16);
        assert_eq!(ceil_fraction(10, 0.0), 0);
    }

    #[test]
    fn sizes_and_labels() {
        let cfg = SyntheticConfig { class_count: 10, samples_per_class: 20, ..Default::default() };
        let d = generate_synthetic(&cfg).unwrap();
        assert_eq!(d.len(), 200);
        let mut counts = [0usize; 10];
        for s in &d.samples {
            counts[s.label.unwrap()] += 1;
        }
        assert!(counts.iter().all(|&c| c == 20));
    }

    #[test]
    fn deterministic_in_seed() {
        let cfg = SyntheticConfig { samples_per_class: 3, ..Default::default() };
        assert_eq!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&cfg).unwrap());
        let other = SyntheticConfig { seed: 1, ..cfg.clone() };
        assert_ne!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&other).unwrap());
    }

    #[test]
    fn rejects_bad_fractions() {
        for (a, b) in [(0.6, 0.5), (1.0, 0.1), (-0.1, 0.2), (0.5, 1.0)] {
            let cfg = SyntheticConfig {
                signal_start_fraction: a,
                signal_end_fraction: b,
                ..Default::default()
            };
            assert!(matches!(generate_synthetic(&cfg), Err(Error::Argument(_))), "{a} {b}");
        }
    }

    #[test]
    fn paired_classes_share_frames_in_reverse_order() {
        let cfg = SyntheticConfig { noise_scale: 0.0, samples_per_class: 1, ..Default::default() };
        let family = Family::new(&cfg);
        for c in 0..cfg.landmark_count * cfg.coord_dim {
            for s in [0.0, 0.2, 0.7, 1.0] {
                assert!((family.position(0, c, s) - family.position(1, c, 1.0 - s)).abs() < 1e-12);
            }
        }
    }
}
