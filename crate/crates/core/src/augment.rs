//! Positive-pair generation: temporal permutation of frame ranges, the part
//! permutation pair (degrade prefix and suffix, keep the centre intact) and
//! classical rigid/noise augmentations applied to whole sequences.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::synthetic::ceil_fraction;
use crate::data::SkeletonSequence;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Shuffles frames `first..=last` uniformly at random; every other frame is
/// copied through untouched.
pub fn temporal_permutation(
    seq: &SkeletonSequence,
    first: usize,
    last: usize,
    rng: &mut Rng,
) -> Result<SkeletonSequence> {
    let n = seq.n_frames();
    if first > last || last >= n {
        return Err(Error::arg(format!(
            "permutation range [{first}, {last}] invalid for {n} frames"
        )));
    }
    let mut order: Vec<usize> = (first..=last).collect();
    order.shuffle(rng);
    let mut out = seq.clone();
    for (dst, &src) in (first..=last).zip(&order) {
        out.frame_mut(dst).copy_from_slice(seq.frame(src));
    }
    Ok(out)
}

/// Permutes the half-open range `[start, end)`; empty ranges are a no-op
/// that consumes no randomness.
fn permute_range(seq: &SkeletonSequence, start: usize, end: usize, rng: &mut Rng) -> Result<SkeletonSequence> {
    if start >= end {
        return Ok(seq.clone());
    }
    temporal_permutation(seq, start, end - 1, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartPermutationConfig {
    pub ks_fraction: f64,
    pub ke_fraction: f64,
    /// Explicit prefix length; overrides `ks_fraction`.
    pub ks: Option<usize>,
    /// Explicit suffix length; overrides `ke_fraction`.
    pub ke: Option<usize>,
}

impl Default for PartPermutationConfig {
    fn default() -> Self {
        Self {
            ks_fraction: 1.0 / 3.0,
            ke_fraction: 0.25,
            ks: None,
            ke: None,
        }
    }
}

impl PartPermutationConfig {
    pub fn explicit(ks: usize, ke: usize) -> Self {
        Self {
            ks: Some(ks),
            ke: Some(ke),
            ..Self::default()
        }
    }

    /// Prefix and suffix lengths `(ks, ke)` for an `n`-frame sequence.
    pub fn boundaries(&self, n: usize) -> Result<(usize, usize)> {
        for f in [self.ks_fraction, self.ke_fraction] {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::arg(format!("boundary fraction {f} outside [0, 1)")));
            }
        }
        let ks = self.ks.unwrap_or_else(|| ceil_fraction(n, self.ks_fraction));
        let ke = self.ke.unwrap_or_else(|| ceil_fraction(n, self.ke_fraction));
        if ks + ke >= n {
            return Err(Error::arg(format!(
                "central region empty: ks={ks} + ke={ke} >= {n} frames"
            )));
        }
        Ok((ks, ke))
    }
}

/// Two views whose first `ks` and last `ke` frames are independently
/// shuffled (fresh draws per view and per segment). Frames `[ks, n-ke)` are
/// bit-identical to the input in both views.
pub fn part_permutation_pair(
    seq: &SkeletonSequence,
    cfg: &PartPermutationConfig,
    rng: &mut Rng,
) -> Result<(SkeletonSequence, SkeletonSequence)> {
    let n = seq.n_frames();
    let (ks, ke) = cfg.boundaries(n)?;
    let view = |rng: &mut Rng| -> Result<SkeletonSequence> {
        let v = permute_range(seq, 0, ks, rng)?;
        permute_range(&v, n - ke, n, rng)
    };
    let v1 = view(rng)?;
    let v2 = view(rng)?;
    Ok((v1, v2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentPosition {
    First,
    Last,
}

impl fmt::Display for SegmentPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SegmentPosition::First => "first",
            SegmentPosition::Last => "last",
        })
    }
}

/// Two views with the first (or last) `k` frames shuffled by two
/// independent permutations, the rest untouched.
pub fn segment_permutation_pair(
    seq: &SkeletonSequence,
    k: usize,
    position: SegmentPosition,
    rng: &mut Rng,
) -> Result<(SkeletonSequence, SkeletonSequence)> {
    let n = seq.n_frames();
    if k < 1 || k > n {
        return Err(Error::arg(format!("segment length {k} outside [1, {n}]")));
    }
    let (start, end) = match position {
        SegmentPosition::First => (0, k),
        SegmentPosition::Last => (n - k, n),
    };
    let v1 = permute_range(seq, start, end, rng)?;
    let v2 = permute_range(seq, start, end, rng)?;
    Ok((v1, v2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassicalAugmentSpec {
    pub rotation_max_deg: f64,
    /// Std of additive coordinate noise (the skeleton stand-in for blur).
    pub noise_sigma: f64,
    pub flip_prob: f64,
    pub translation_max: f64,
}

impl Default for ClassicalAugmentSpec {
    fn default() -> Self {
        Self {
            rotation_max_deg: 15.0,
            noise_sigma: 0.01,
            flip_prob: 0.5,
            translation_max: 0.1,
        }
    }
}

impl ClassicalAugmentSpec {
    pub fn identity() -> Self {
        Self {
            rotation_max_deg: 0.0,
            noise_sigma: 0.0,
            flip_prob: 0.0,
            translation_max: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.rotation_max_deg) || !ok(self.noise_sigma) || !ok(self.translation_max) {
            return Err(Error::arg("augmentation magnitudes must be finite and nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::arg(format!("flip_prob {} outside [0, 1]", self.flip_prob)));
        }
        Ok(())
    }
}

/// Rotates every frame in the x-y plane by `angle` radians about that
/// frame's landmark centroid.
pub fn rotate_about_centroid(seq: &SkeletonSequence, angle: f64) -> SkeletonSequence {
    let d = seq.coord_dim();
    let l = seq.landmarks();
    let (sin, cos) = angle.sin_cos();
    let mut out = seq.clone();
    for t in 0..seq.n_frames() {
        let src = seq.frame(t);
        let (mut cx, mut cy) = (0.0f64, 0.0f64);
        for j in 0..l {
            cx += f64::from(src[j * d]);
            cy += f64::from(src[j * d + 1]);
        }
        cx /= l as f64;
        cy /= l as f64;
        let dst = out.frame_mut(t);
        for j in 0..l {
            let x = f64::from(src[j * d]) - cx;
            let y = f64::from(src[j * d + 1]) - cy;
            dst[j * d] = (cx + cos * x - sin * y) as f32;
            dst[j * d + 1] = (cy + sin * x + cos * y) as f32;
        }
    }
    out
}

/// Rotation about each frame's landmark centroid (x-y plane), horizontal
/// flip, global translation and i.i.d. Gaussian coordinate noise.
///
/// Angle, flip and shift are drawn once per sequence. Zero magnitudes skip
/// the corresponding step entirely, so the all-zero spec is an exact identity.
pub fn classical_augment(
    seq: &SkeletonSequence,
    spec: &ClassicalAugmentSpec,
    rng: &mut Rng,
) -> Result<SkeletonSequence> {
    spec.validate()?;
    let d = seq.coord_dim();
    let mut out = seq.clone();

    if spec.rotation_max_deg > 0.0 {
        let m = spec.rotation_max_deg.to_radians();
        let angle: f64 = rng.random_range(-m..=m);
        out = rotate_about_centroid(seq, angle);
    }

    if spec.flip_prob > 0.0 && rng.random::<f64>() < spec.flip_prob {
        for v in out.as_mut_slice().iter_mut().step_by(d) {
            *v = -*v;
        }
    }

    if spec.translation_max > 0.0 {
        let t = spec.translation_max;
        let shift: Vec<f64> = (0..d).map(|_| rng.random_range(-t..=t)).collect();
        for (i, v) in out.as_mut_slice().iter_mut().enumerate() {
            *v = (f64::from(*v) + shift[i % d]) as f32;
        }
    }

    if spec.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
        for v in out.as_mut_slice() {
            *v = (f64::from(*v) + noise.sample(rng)) as f32;
        }
    }
    Ok(out)
}

/// How positive pairs are produced during pretraining.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    PartPermutation,
    Classical,
    /// Part permutation followed by an independent classical augmentation
    /// of each view.
    Combined,
}

impl FromStr for AugmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "part_permutation" => Ok(AugmentMode::PartPermutation),
            "classical" => Ok(AugmentMode::Classical),
            "combined" => Ok(AugmentMode::Combined),
            other => Err(Error::arg(format!(
                "unknown augmentation mode {other:?} (expected part_permutation, classical or combined)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub mode: AugmentMode,
    pub part_permutation: PartPermutationConfig,
    pub classical: ClassicalAugmentSpec,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            mode: AugmentMode::PartPermutation,
            part_permutation: PartPermutationConfig::default(),
            classical: ClassicalAugmentSpec::default(),
        }
    }
}

pub fn make_positive_pair(
    seq: &SkeletonSequence,
    cfg: &AugmentConfig,
    rng: &mut Rng,
) -> Result<(SkeletonSequence, SkeletonSequence)> {
    match cfg.mode {
        AugmentMode::PartPermutation => part_permutation_pair(seq, &cfg.part_permutation, rng),
        AugmentMode::Classical => {
            let a = classical_augment(seq, &cfg.classical, rng)?;
            let b = classical_augment(seq, &cfg.classical, rng)?;
            Ok((a, b))
        }
        AugmentMode::Combined => {
            let (a, b) = part_permutation_pair(seq, &cfg.part_permutation, rng)?;
            Ok((
                classical_augment(&a, &cfg.classical, rng)?,
                classical_augment(&b, &cfg.classical, rng)?,
            ))
        }
    }
}
