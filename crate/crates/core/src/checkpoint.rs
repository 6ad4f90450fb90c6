//! On-disk checkpoints: `checkpoint.json` plus one raw little-endian `f32`
//! file per named parameter.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Component, Path};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, ModelParams};
use crate::rng::RngState;
use crate::tape::Mat;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const CHECKPOINT_VERSION: u32 = 1;
const PARAMS_DIR: &str = "params";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    /// Optimizer steps taken to produce these parameters.
    pub step: u64,
    pub rng_state: RngState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointIndex {
    pub version: u32,
    pub config: ModelConfig,
    pub step: u64,
    pub rng_state: RngState,
    pub parameters: Vec<ParameterEntry>,
}

impl Checkpoint {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let root = dir.as_ref();
        let pdir = root.join(PARAMS_DIR);
        fs::create_dir_all(&pdir).map_err(|e| Error::io(&pdir, e))?;
        let mut parameters = Vec::new();
        for (name, t) in self.model.params.iter() {
            let file = format!("{PARAMS_DIR}/{name}.f32");
            let bytes: Vec<u8> = t.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
            let p = root.join(&file);
            fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
            parameters.push(ParameterEntry {
                name: name.clone(),
                shape: [t.nrows(), t.ncols()],
                file,
            });
        }
        let index = CheckpointIndex {
            version: CHECKPOINT_VERSION,
            config: self.model.config.clone(),
            step: self.step,
            rng_state: self.rng_state.clone(),
            parameters,
        };
        let mut text = serde_json::to_string_pretty(&index).expect("index serializes");
        text.push('\n');
        let ip = root.join(CHECKPOINT_FILE);
        fs::write(&ip, text).map_err(|e| Error::io(&ip, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let root = dir.as_ref();
        let ip = root.join(CHECKPOINT_FILE);
        let text = fs::read_to_string(&ip).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::format(&ip, "checkpoint index not found"),
            _ => Error::io(&ip, e),
        })?;
        let index: CheckpointIndex = serde_json::from_str(&text).map_err(|e| Error::format(&ip, e.to_string()))?;
        if index.version != CHECKPOINT_VERSION {
            return Err(Error::format(&ip, format!("unsupported checkpoint version {}", index.version)));
        }
        let mut tensors = BTreeMap::new();
        for entry in &index.parameters {
            let rel = Path::new(&entry.file);
            if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
                return Err(Error::format(&ip, format!("parameter path {:?} escapes the checkpoint", entry.file)));
            }
            let p = root.join(rel);
            let bytes = fs::read(&p).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::integrity(&p, "parameter file missing"),
                _ => Error::io(&p, e),
            })?;
            let [r, c] = entry.shape;
            if bytes.len() != r * c * 4 {
                return Err(Error::integrity(
                    &p,
                    format!("{} declares {r}x{c} but file has {} bytes", entry.name, bytes.len()),
                ));
            }
            let values: Vec<f64> = bytes
                .chunks_exact(4)
                .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
                .collect();
            let m = Mat::from_shape_vec((r, c), values).expect("size checked");
            if tensors.insert(entry.name.clone(), m).is_some() {
                return Err(Error::format(&ip, format!("duplicate parameter {}", entry.name)));
            }
        }
        let params = ModelParams::from_tensors(tensors)?;
        let model = Model::new(index.config, params).map_err(|e| Error::format(&ip, e.to_string()))?;
        index.rng_state.restore().map_err(|e| Error::format(&ip, e.to_string()))?;
        Ok(Self {
            model,
            step: index.step,
            rng_state: index.rng_state,
        })
    }
}
