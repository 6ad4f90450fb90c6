//! Run configuration: a profile of defaults, a JSON file merged over it,
//! and command-line overrides on top.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use signssl::boundary::StopRule;
use signssl::eval::EvalConfig;
use signssl::model::ModelConfig;
use signssl::profile;
use signssl::trainer::PretrainConfig;
use signssl::{Error, Result};

pub const RUN_RECORD_FILE: &str = "run.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Paper,
    Tiny,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "tiny" => Ok(Profile::Tiny),
            other => Err(Error::Argument(format!("unknown profile {other:?} (expected paper or tiny)"))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Paper => "paper",
            Profile::Tiny => "tiny",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Input checkpoint directory for evaluation commands.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundaryConfig {
    pub stop_rule: StopRule,
    /// Pretraining epochs per candidate segment length.
    pub epochs: usize,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        Self { stop_rule: StopRule::PaperLiteral, epochs: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferConfig {
    pub source: String,
    pub target: String,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self { source: "source".into(), target: "target".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Overrides the pretraining and evaluation seeds when set.
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub data: DataPaths,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub eval: EvalConfig,
    pub boundary: BoundaryConfig,
    pub transfer: TransferConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::profile(Profile::Paper)
    }
}

impl RunConfig {
    pub fn profile(profile: Profile) -> Self {
        let base = Self {
            seed: None,
            output_dir: None,
            data: DataPaths::default(),
            model: ModelConfig::default(),
            pretrain: PretrainConfig::default(),
            eval: EvalConfig::default(),
            boundary: BoundaryConfig::default(),
            transfer: TransferConfig::default(),
        };
        match profile {
            Profile::Paper => base,
            Profile::Tiny => Self {
                model: profile::tiny_model(),
                pretrain: profile::tiny_pretrain(),
                eval: profile::tiny_eval(),
                ..base
            },
        }
    }

    /// Applies the top-level seed to every section that draws randomness.
    pub fn resolve_seed(&mut self) {
        if let Some(seed) = self.seed {
            self.pretrain.seed = seed;
            self.eval.seed = seed;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.pretrain.validate()?;
        self.eval.validate()?;
        if self.boundary.epochs < 1 {
            return Err(Error::Argument("boundary.epochs must be at least 1".into()));
        }
        for path in [&self.data.train, &self.data.test, &self.data.checkpoint].into_iter().flatten() {
            if !path.exists() {
                return Err(Error::Argument(format!("path {} does not exist", path.display())));
            }
        }
        Ok(())
    }
}

/// Recursively overlays `patch` on `base`; objects merge key by key, any
/// other value replaces.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Resolves `patch` over the profile defaults. Unknown keys are rejected by
/// name.
pub fn resolve(profile: Profile, patch: Value) -> Result<RunConfig> {
    if !patch.is_object() {
        return Err(Error::Argument("config must be a JSON object".into()));
    }
    let mut value = serde_json::to_value(RunConfig::profile(profile)).expect("config serializes");
    merge(&mut value, patch);
    let mut cfg: RunConfig =
        serde_json::from_value(value).map_err(|e| Error::Argument(format!("invalid config: {e}")))?;
    cfg.resolve_seed();
    Ok(cfg)
}

/// Reads a JSON config file without resolving it.
pub fn read_patch(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Argument(format!("config file {} does not exist", path.display()))
        } else {
            Error::Io { path: path.to_path_buf(), source: e }
        }
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Reads a JSON config file and resolves it over `profile`.
#[allow(dead_code)]
pub fn load_config(path: &Path, profile: Profile) -> Result<RunConfig> {
    resolve(profile, read_patch(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub command: String,
    pub profile: Profile,
    pub config: RunConfig,
    /// Output-relative path to lowercase hex SHA-256.
    pub artifacts: std::collections::BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Hashes every regular file under `root` except the run record itself.
pub fn hash_tree(root: &Path) -> Result<std::collections::BTreeMap<String, String>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = std::fs::read_dir(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::Io { path: dir.clone(), source: e })?;
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).expect("under root");
                let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
                if key != RUN_RECORD_FILE {
                    out.insert(key, sha256_file(&path)?);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn empty_object_gives_paper_defaults() {
        let cfg = resolve(Profile::Paper, json!({})).unwrap();
        assert_eq!(cfg.model.encoder.blocks, 12);
        assert_eq!(cfg.model.encoder.heads, 8);
        assert_eq!(cfg.model.encoder.embed_dim, 512);
        assert_eq!(cfg.model.encoder.dropout, 0.1);
        assert_eq!(cfg.pretrain.learning_rate, 0.001);
    }

    #[test]
    fn tiny_profile_shape() {
        let cfg = RunConfig::profile(Profile::Tiny);
        assert_eq!(cfg.model.encoder.blocks, 2);
        assert_eq!(cfg.model.encoder.embed_dim, 64);
        assert_eq!(cfg.pretrain.batch_size, 32);
        assert_eq!(cfg.pretrain.epochs, 20);
        cfg.model.validate().unwrap();
    }

    #[test]
    fn unknown_key_is_named() {
        let err = resolve(Profile::Paper, json!({"pretrain": {"epochz": 3}})).unwrap_err();
        assert!(err.to_string().contains("epochz"), "{err}");
        assert!(err.is_usage_error());
    }

    #[test]
    fn nested_merge_keeps_siblings() {
        let cfg = resolve(Profile::Tiny, json!({"model": {"encoder": {"blocks": 3}}})).unwrap();
        assert_eq!(cfg.model.encoder.blocks, 3);
        assert_eq!(cfg.model.encoder.embed_dim, 64);
    }

    #[test]
    fn seed_propagates() {
        let cfg = resolve(Profile::Paper, json!({"seed": 7})).unwrap();
        assert_eq!(cfg.pretrain.seed, 7);
        assert_eq!(cfg.eval.seed, 7);
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = resolve(Profile::Tiny, json!({"eval": {"repeats": 2}})).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back = resolve(Profile::Paper, serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn load_config_reads_files() {
        let dir = std::env::temp_dir().join(format!("signssl-config-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let good = dir.join("good.json");
        std::fs::write(&good, r#"{"pretrain": {"epochs": 3}}"#).unwrap();
        assert_eq!(load_config(&good, Profile::Tiny).unwrap().pretrain.epochs, 3);
        let bad = dir.join("bad.json");
        std::fs::write(&bad, "{").unwrap();
        assert!(matches!(load_config(&bad, Profile::Tiny), Err(Error::Format { .. })));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn missing_path_is_named() {
        let mut cfg = RunConfig::profile(Profile::Tiny);
        cfg.data.train = Some(PathBuf::from("/nonexistent/train-set"));
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("/nonexistent/train-set"));
    }
}
