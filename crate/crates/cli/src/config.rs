use std::path::{Path, PathBuf};

use emoseq::autodiff::{Checkpoint, CHECKPOINT_MAGIC};
use emoseq::models::CheckpointMeta;
use emoseq::{Architecture, ModelConfig, OovPolicy, Partition, SynthConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SEED_ENV: &str = "EMOSEQ_SEED";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub annotations: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Every setting of a run after merging the config file and flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    pub paths: Paths,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub oov: OovPolicy,
    /// Episode counts for train/dev/test; `None` scales 77/11/9.
    pub split_targets: Option<(usize, usize, usize)>,
    pub partition: Partition,
    /// `episode/scene` for attention export.
    pub scene: Option<String>,
    pub contexts: Vec<usize>,
    pub architectures: Vec<Architecture>,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: String::new(),
            seed: 0,
            paths: Paths::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            oov: OovPolicy::default(),
            split_targets: None,
            partition: Partition::Test,
            scene: None,
            contexts: (1..=5).collect(),
            architectures: Architecture::ALL.to_vec(),
            synth: SynthConfig::default(),
        }
    }
}

fn extract(value: serde_json::Value, path: &Path) -> Result<(RunConfig, bool), CliError> {
    let value = match value {
        serde_json::Value::Object(mut map) if map.get("config").is_some_and(|c| c.is_object()) => {
            map.remove("config").expect("checked")
        }
        other => other,
    };
    let has_seed = value.get("seed").is_some();
    let cfg = serde_json::from_value(value)
        .map_err(|e| CliError::Usage(format!("{}: invalid config: {e}", path.display())))?;
    Ok((cfg, has_seed))
}

/// Reads a config file: a bare `RunConfig`, any JSON artifact with a
/// `config` field, a training log (first line), or a checkpoint.
pub fn load(path: &Path) -> Result<(RunConfig, bool), CliError> {
    let bytes = std::fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.starts_with(CHECKPOINT_MAGIC) {
        let ck = Checkpoint::from_bytes(&bytes)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let meta: CheckpointMeta = serde_json::from_str(&ck.meta)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        return extract(meta.provenance, path);
    }
    let text = String::from_utf8(bytes)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let value = match serde_json::from_str(&text) {
        Ok(v) => v,
        Err(first) => {
            let line = text.lines().next().unwrap_or_default();
            serde_json::from_str(line).map_err(|_| {
                CliError::Usage(format!("{}: invalid config: {first}", path.display()))
            })?
        }
    };
    extract(value, path)
}

/// Seed precedence: flag, then config file, then `EMOSEQ_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={v} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

impl RunConfig {
    /// Copies the run seed into every seeded component.
    pub fn propagate_seed(&mut self) {
        self.model.seed = self.seed;
        self.train.seed = self.seed;
        self.synth.seed = self.seed;
    }

    pub fn require(&self, path: &Option<PathBuf>, flag: &str) -> Result<PathBuf, CliError> {
        path.clone()
            .ok_or_else(|| CliError::Usage(format!("`{}` needs --{flag}", self.command)))
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn artifact_configs_are_unwrapped() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            seed: 9,
            command: "train".into(),
            ..RunConfig::default()
        };
        let artifact = serde_json::json!({"config": cfg, "metrics": {}});
        let path = dir.path().join("a.json");
        std::fs::write(&path, artifact.to_string()).unwrap();
        let (back, has_seed) = load(&path).unwrap();
        assert_eq!(back, cfg);
        assert!(has_seed);

        let log = dir.path().join("log.ndjson");
        std::fs::write(&log, format!("{}\n{}\n", artifact, artifact)).unwrap();
        assert_eq!(load(&log).unwrap().0, cfg);
    }

    #[test]
    fn partial_configs_take_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(
            &path,
            r#"{"model": {"architecture": "scnn-v", "filters": 5}}"#,
        )
        .unwrap();
        let (cfg, has_seed) = load(&path).unwrap();
        assert!(!has_seed);
        assert_eq!(cfg.model.filters, 5);
        assert_eq!(cfg.model.architecture, Architecture::ScnnV);
        assert_eq!(cfg.model.max_tokens, ModelConfig::default().max_tokens);

        std::fs::write(&path, r#"{"modle": {}}"#).unwrap();
        assert!(matches!(load(&path), Err(CliError::Usage(_))));
    }
}
