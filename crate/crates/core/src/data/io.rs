use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, Sample, SkeletonSequence, Split};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;
const FRAMES_DIR: &str = "frames";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub landmark_count: usize,
    pub coord_dim: usize,
    pub max_len: usize,
    pub class_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    pub samples: Vec<ManifestSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSample {
    pub id: String,
    pub label: Option<usize>,
    /// Payload path relative to the dataset directory.
    pub file: String,
    pub n_frames: usize,
}

fn payload_name(index: usize) -> String {
    format!("{FRAMES_DIR}/{index:06}.f32")
}

/// Writes `manifest.json` plus one raw little-endian `f32` payload per sample.
///
/// The dataset is validated before anything touches the filesystem, and the
/// output is a pure function of the dataset, so repeated saves are
/// byte-identical.
pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let root = path.as_ref();
    dataset.validate()?;

    let frames_dir = root.join(FRAMES_DIR);
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;

    let mut entries = Vec::with_capacity(dataset.len());
    for (i, s) in dataset.samples.iter().enumerate() {
        let file = payload_name(i);
        let bytes: Vec<u8> = s.sequence.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect();
        let p = root.join(&file);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        entries.push(ManifestSample {
            id: s.id.clone(),
            label: s.label,
            file,
            n_frames: s.sequence.n_frames(),
        });
    }

    let manifest = Manifest {
        version: MANIFEST_VERSION,
        landmark_count: dataset.landmark_count,
        coord_dim: dataset.coord_dim,
        max_len: dataset.max_len,
        class_count: dataset.class_count,
        split: Some(dataset.split),
        samples: entries,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    let mp = root.join(MANIFEST_FILE);
    fs::write(&mp, text).map_err(|e| Error::io(&mp, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let root = path.as_ref();
    let mp = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mp).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::format(&mp, "manifest not found"),
        _ => Error::io(&mp, e),
    })?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::format(&mp, e.to_string()))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::format(
            &mp,
            format!("unsupported manifest version {}", manifest.version),
        ));
    }
    if manifest.landmark_count == 0 || !(2..=3).contains(&manifest.coord_dim) {
        return Err(Error::format(&mp, "landmark_count must be positive and coord_dim 2 or 3"));
    }

    let frame = manifest.landmark_count * manifest.coord_dim;
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for entry in &manifest.samples {
        let p = resolve_payload(root, &entry.file, &mp)?;
        let bytes = fs::read(&p).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::integrity(&p, "payload file missing"),
            _ => Error::io(&p, e),
        })?;
        let expected = entry.n_frames * frame * 4;
        if bytes.len() != expected {
            return Err(Error::integrity(
                &p,
                format!(
                    "sample {} declares {} frames ({expected} bytes) but payload has {} bytes",
                    entry.id,
                    entry.n_frames,
                    bytes.len()
                ),
            ));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let sequence = SkeletonSequence::new(manifest.landmark_count, manifest.coord_dim, data)?;
        samples.push(Sample {
            id: entry.id.clone(),
            label: entry.label,
            sequence,
        });
    }

    let split = manifest.split.unwrap_or_else(|| {
        if samples.iter().all(|s| s.label.is_some()) {
            Split::Train
        } else {
            Split::Unlabeled
        }
    });
    let dataset = Dataset {
        samples,
        class_count: manifest.class_count,
        split,
        landmark_count: manifest.landmark_count,
        coord_dim: manifest.coord_dim,
        max_len: manifest.max_len,
    };
    dataset.validate()?;
    Ok(dataset)
}

fn resolve_payload(root: &Path, file: &str, manifest: &Path) -> Result<PathBuf> {
    let rel = Path::new(file);
    if rel.is_absolute() || rel.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
        return Err(Error::format(
            manifest,
            format!("payload path {file:?} escapes the dataset directory"),
        ));
    }
    Ok(root.join(rel))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dataset(n_samples: usize, n_frames: usize) -> Dataset {
        let mut d = Dataset::empty(Split::Train, 3, 2, 2, 8);
        for i in 0..n_samples {
            let data = (0..n_frames * 4).map(|v| (v * (i + 1)) as f32 * 0.01 - 0.5).collect();
            d.samples.push(Sample {
                id: format!("s{i}"),
                label: Some(i % 3),
                sequence: SkeletonSequence::new(2, 2, data).unwrap(),
            });
        }
        d
    }

    #[test]
    fn manifest_lists_every_sample() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&dataset(3, 5), dir.path()).unwrap();
        let m: Manifest =
            serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(m.samples.len(), 3);
        assert_eq!(m.version, 1);
        assert_eq!(m.samples[1].n_frames, 5);
    }

    #[test]
    fn repeated_saves_are_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let d = dataset(4, 6);
        save_dataset(&d, a.path()).unwrap();
        save_dataset(&d, b.path()).unwrap();
        save_dataset(&d, b.path()).unwrap();
        for f in [MANIFEST_FILE.to_string(), payload_name(0), payload_name(3)] {
            assert_eq!(fs::read(a.path().join(&f)).unwrap(), fs::read(b.path().join(&f)).unwrap());
        }
    }

    #[test]
    fn truncated_payload_is_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&dataset(1, 64), dir.path()).unwrap();
        let p = dir.path().join(payload_name(0));
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..63 * 4 * 4]).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Integrity { .. })));
    }

    #[test]
    fn empty_manifest_loads() {
        let dir = tempfile::tempdir().unwrap();
        let d = Dataset::empty(Split::Unlabeled, 0, 75, 2, 64);
        save_dataset(&d, dir.path()).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), d);
    }

    #[test]
    fn heterogeneous_dataset_is_rejected_before_writing() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("out");
        let mut d = dataset(2, 4);
        d.samples[1].sequence = SkeletonSequence::zeros(4, 3, 2);
        assert!(matches!(save_dataset(&d, &target), Err(Error::Validation(_))));
        assert!(!target.exists());
    }

    #[test]
    fn missing_and_corrupt_manifests_are_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Format { .. })));
        fs::write(dir.path().join(MANIFEST_FILE), "{ not json").unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Format { .. })));
    }

    #[test]
    fn non_finite_payload_is_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&dataset(1, 2), dir.path()).unwrap();
        let p = dir.path().join(payload_name(0));
        let mut bytes = fs::read(&p).unwrap();
        bytes[4..8].copy_from_slice(&f32::INFINITY.to_le_bytes());
        fs::write(&p, bytes).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Validation(_))));
    }

    fn arb_dataset() -> impl Strategy<Value = Dataset> {
        (1usize..5, prop_oneof![Just(2usize), Just(3usize)], 1usize..4).prop_flat_map(|(l, d, c)| {
            prop::collection::vec(
                (1usize..6, prop::option::of(0..c))
                    .prop_flat_map(move |(n, label)| {
                        (prop::collection::vec(-1.0f32..1.0, n * l * d), Just(label))
                    }),
                0..6,
            )
            .prop_map(move |rows| {
                let mut ds = Dataset::empty(Split::Unlabeled, c, l, d, 16);
                for (i, (data, label)) in rows.into_iter().enumerate() {
                    ds.samples.push(Sample {
                        id: format!("id-{i}"),
                        label,
                        sequence: SkeletonSequence::new(l, d, data).unwrap(),
                    });
                }
                ds
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn load_after_save_is_identity(d in arb_dataset()) {
            let dir = tempfile::tempdir().unwrap();
            save_dataset(&d, dir.path()).unwrap();
            prop_assert_eq!(load_dataset(dir.path()).unwrap(), d);
        }
    }
}
