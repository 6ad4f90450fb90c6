//! Skeleton sequences, labelled datasets and their on-disk format.
//!
//! A [`SkeletonSequence`] stores its frames as one flat row-major `f32`
//! buffer of shape `frames × landmarks × coord_dim`. That is also the
//! layout of the per-sample payload files written by [`save_dataset`].

mod io;
pub mod synthetic;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_dataset, save_dataset, Manifest, ManifestSample, MANIFEST_FILE, MANIFEST_VERSION};
pub use synthetic::{generate_synthetic, SyntheticConfig};

/// Landmark count used when nothing else is configured (hands plus pose).
pub const DEFAULT_LANDMARKS: usize = 75;
pub const DEFAULT_COORD_DIM: usize = 2;
pub const DEFAULT_MAX_LEN: usize = 64;

#[derive(Clone, PartialEq)]
pub struct SkeletonSequence {
    landmarks: usize,
    coord_dim: usize,
    data: Vec<f32>,
}

impl fmt::Debug for SkeletonSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SkeletonSequence")
            .field("frames", &self.n_frames())
            .field("landmarks", &self.landmarks)
            .field("coord_dim", &self.coord_dim)
            .finish()
    }
}

impl SkeletonSequence {
    /// Wraps a flat `frames × landmarks × coord_dim` buffer.
    ///
    /// Only the buffer shape is checked here; use [`SkeletonSequence::validate`]
    /// for the full invariant set.
    pub fn new(landmarks: usize, coord_dim: usize, data: Vec<f32>) -> Result<Self> {
        if landmarks == 0 || coord_dim == 0 {
            return Err(Error::arg("landmark count and coordinate dimension must be positive"));
        }
        let frame = landmarks * coord_dim;
        if data.len() % frame != 0 {
            return Err(Error::arg(format!(
                "buffer of {} values is not a whole number of {landmarks}x{coord_dim} frames",
                data.len()
            )));
        }
        Ok(Self {
            landmarks,
            coord_dim,
            data,
        })
    }

    pub fn from_frames(landmarks: usize, coord_dim: usize, frames: &[Vec<f32>]) -> Result<Self> {
        let frame = landmarks * coord_dim;
        let mut data = Vec::with_capacity(frames.len() * frame);
        for (i, f) in frames.iter().enumerate() {
            if f.len() != frame {
                return Err(Error::arg(format!(
                    "frame {i} has {} values, expected {frame}",
                    f.len()
                )));
            }
            data.extend_from_slice(f);
        }
        Self::new(landmarks, coord_dim, data)
    }

    pub fn zeros(n_frames: usize, landmarks: usize, coord_dim: usize) -> Self {
        Self {
            landmarks,
            coord_dim,
            data: vec![0.0; n_frames * landmarks * coord_dim],
        }
    }

    pub fn landmarks(&self) -> usize {
        self.landmarks
    }

    pub fn coord_dim(&self) -> usize {
        self.coord_dim
    }

    /// Number of values per frame (`landmarks × coord_dim`).
    pub fn frame_size(&self) -> usize {
        self.landmarks * self.coord_dim
    }

    pub fn n_frames(&self) -> usize {
        self.data.len() / self.frame_size()
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        let fs = self.frame_size();
        &self.data[i * fs..(i + 1) * fs]
    }

    pub fn frame_mut(&mut self, i: usize) -> &mut [f32] {
        let fs = self.frame_size();
        &mut self.data[i * fs..(i + 1) * fs]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.frame_size())
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Raw little-endian bytes of frames `[start, end)`.
    pub fn frame_bytes(&self, start: usize, end: usize) -> Vec<u8> {
        let fs = self.frame_size();
        self.data[start * fs..end * fs]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect()
    }

    /// Checks every invariant and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.landmarks == 0 {
            problems.push("landmark count is zero".to_string());
        }
        if !(2..=3).contains(&self.coord_dim) {
            problems.push(format!("coordinate dimension {} is not 2 or 3", self.coord_dim));
        }
        if self.data.is_empty() {
            problems.push("sequence has zero frames".to_string());
        }
        if self.landmarks > 0 && self.coord_dim > 0 {
            for (i, frame) in self.frames().enumerate() {
                if let Some(j) = frame.iter().position(|v| !v.is_finite()) {
                    problems.push(format!(
                        "frame {i} has non-finite value {} at landmark {} coordinate {}",
                        frame[j],
                        j / self.coord_dim,
                        j % self.coord_dim
                    ));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Number of frames before the trailing run of all-zero padding frames.
    /// Never less than one.
    pub fn unpadded_len(&self) -> usize {
        let mut n = self.n_frames();
        while n > 1 && self.frame(n - 1).iter().all(|&v| v == 0.0) {
            n -= 1;
        }
        n
    }
}

pub fn validate(seq: &SkeletonSequence) -> Result<()> {
    seq.validate()
}

/// Truncates to the first `target_n` frames or appends all-zero frames
/// until the sequence is exactly `target_n` long.
pub fn pad_or_truncate(seq: &SkeletonSequence, target_n: usize) -> Result<SkeletonSequence> {
    if target_n < 1 {
        return Err(Error::arg("target sequence length must be at least 1"));
    }
    let fs = seq.frame_size();
    let mut data = Vec::with_capacity(target_n * fs);
    let keep = seq.n_frames().min(target_n);
    data.extend_from_slice(&seq.data[..keep * fs]);
    data.resize(target_n * fs, 0.0);
    Ok(SkeletonSequence {
        landmarks: seq.landmarks,
        coord_dim: seq.coord_dim,
        data,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Unlabeled,
}

impl Split {
    pub fn is_labeled(self) -> bool {
        !matches!(self, Split::Unlabeled)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Unlabeled => "unlabeled",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "unlabeled" => Ok(Split::Unlabeled),
            other => Err(Error::arg(format!("unknown split {other:?} (expected train, test or unlabeled)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub label: Option<usize>,
    pub sequence: SkeletonSequence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub class_count: usize,
    pub split: Split,
    pub landmark_count: usize,
    pub coord_dim: usize,
    /// Sequence length every sample is normalized to before training.
    pub max_len: usize,
}

impl Dataset {
    pub fn empty(split: Split, class_count: usize, landmark_count: usize, coord_dim: usize, max_len: usize) -> Self {
        Self {
            samples: Vec::new(),
            class_count,
            split,
            landmark_count,
            coord_dim,
            max_len,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn frame_size(&self) -> usize {
        self.landmark_count * self.coord_dim
    }

    /// True when every sample carries a label.
    pub fn is_labeled(&self) -> bool {
        self.samples.iter().all(|s| s.label.is_some())
    }

    /// Labels of all samples; fails if any sample is unlabeled.
    pub fn labels(&self) -> Result<Vec<usize>> {
        self.samples
            .iter()
            .map(|s| {
                s.label
                    .ok_or_else(|| Error::arg(format!("sample {} has no label", s.id)))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.max_len == 0 {
            problems.push("max_len is zero".to_string());
        }
        let mut ids = HashSet::with_capacity(self.samples.len());
        for (i, s) in self.samples.iter().enumerate() {
            if !ids.insert(s.id.as_str()) {
                problems.push(format!("duplicate sample id {:?}", s.id));
            }
            let seq = &s.sequence;
            if seq.landmarks() != self.landmark_count || seq.coord_dim() != self.coord_dim {
                problems.push(format!(
                    "sample {i} ({}) has shape {}x{}, dataset declares {}x{}",
                    s.id,
                    seq.landmarks(),
                    seq.coord_dim(),
                    self.landmark_count,
                    self.coord_dim
                ));
            }
            if let Err(Error::Validation(p)) = seq.validate() {
                problems.extend(p.into_iter().map(|m| format!("sample {i} ({}): {m}", s.id)));
            }
            match s.label {
                Some(l) if l >= self.class_count => problems.push(format!(
                    "sample {i} ({}) label {l} outside [0, {})",
                    s.id, self.class_count
                )),
                None if self.split.is_labeled() => {
                    problems.push(format!("sample {i} ({}) is unlabeled in a {} split", s.id, self.split))
                }
                _ => {}
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Copy of the dataset with every sequence padded or truncated to `max_len`.
    pub fn normalized(&self) -> Result<Dataset> {
        let samples = self
            .samples
            .iter()
            .map(|s| {
                Ok(Sample {
                    id: s.id.clone(),
                    label: s.label,
                    sequence: pad_or_truncate(&s.sequence, self.max_len)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            samples,
            ..self.clone_header()
        })
    }

    /// Same metadata, no samples.
    pub fn clone_header(&self) -> Dataset {
        Dataset::empty(self.split, self.class_count, self.landmark_count, self.coord_dim, self.max_len)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            ..self.clone_header()
        }
    }

    pub fn with_split(mut self, split: Split) -> Dataset {
        self.split = split;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> SkeletonSequence {
        let data = (0..n * 4).map(|v| v as f32 + 1.0).collect();
        SkeletonSequence::new(2, 2, data).unwrap()
    }

    #[test]
    fn pad_or_truncate_identity_at_target() {
        let s = ramp(64);
        assert_eq!(pad_or_truncate(&s, 64).unwrap(), s);
    }

    #[test]
    fn truncation_keeps_prefix() {
        let s = ramp(70);
        let t = pad_or_truncate(&s, 64).unwrap();
        assert_eq!(t.n_frames(), 64);
        assert_eq!(t.as_slice(), &s.as_slice()[..64 * 4]);
    }

    #[test]
    fn padding_appends_zero_frames() {
        let s = ramp(60);
        let t = pad_or_truncate(&s, 64).unwrap();
        assert_eq!(t.n_frames(), 64);
        assert_eq!(&t.as_slice()[..60 * 4], s.as_slice());
        for i in 60..64 {
            assert!(t.frame(i).iter().all(|&v| v == 0.0));
        }
        assert_eq!(t.unpadded_len(), 60);
    }

    #[test]
    fn pad_rejects_zero_target() {
        assert!(matches!(pad_or_truncate(&ramp(3), 0), Err(Error::Argument(_))));
    }

    #[test]
    fn validate_accepts_well_formed() {
        assert!(ramp(5).validate().is_ok());
    }

    #[test]
    fn validate_names_nan_frame() {
        let mut s = ramp(5);
        s.frame_mut(3)[1] = f32::NAN;
        match s.validate() {
            Err(Error::Validation(p)) => {
                assert_eq!(p.len(), 1);
                assert!(p[0].contains("frame 3"), "{p:?}");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn validate_rejects_zero_frames() {
        let s = SkeletonSequence::new(2, 2, Vec::new()).unwrap();
        assert!(matches!(s.validate(), Err(Error::Validation(_))));
    }

    #[test]
    fn new_rejects_ragged_buffer() {
        assert!(SkeletonSequence::new(2, 2, vec![0.0; 7]).is_err());
    }

    #[test]
    fn dataset_validation_catches_heterogeneous_shapes_and_labels() {
        let mut d = Dataset::empty(Split::Train, 2, 2, 2, 4);
        d.samples.push(Sample { id: "a".into(), label: Some(0), sequence: ramp(4) });
        d.samples.push(Sample {
            id: "b".into(),
            label: Some(5),
            sequence: SkeletonSequence::zeros(4, 3, 2),
        });
        d.samples.push(Sample { id: "a".into(), label: None, sequence: ramp(4) });
        let Err(Error::Validation(p)) = d.validate() else { panic!() };
        assert_eq!(p.len(), 4, "{p:?}");
    }

    proptest::proptest! {
        #[test]
        fn pad_or_truncate_is_idempotent(n in 1usize..40, target in 1usize..40) {
            let s = ramp(n);
            let once = pad_or_truncate(&s, target).unwrap();
            let twice = pad_or_truncate(&once, target).unwrap();
            proptest::prop_assert_eq!(once, twice);
        }
    }
}
