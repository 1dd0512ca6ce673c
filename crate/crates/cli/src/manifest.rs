use std::fs;
use std::path::{Path, PathBuf};

use phlearn::Result;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

/// Record of one command invocation. The embedded config reproduces every
/// output of the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub command: String,
    pub experiment: String,
    pub seed: u64,
    pub config_hash: String,
    /// Parameter file read by the command and its SHA-256.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params_hash: Option<String>,
    pub files: Vec<String>,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(command: &str, cfg: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            experiment: cfg.experiment.name().to_string(),
            seed: cfg.seed,
            config_hash: cfg.hash()?,
            params: None,
            params_hash: None,
            files: Vec::new(),
            config: cfg.clone(),
        })
    }

    pub fn with_params(mut self, path: &Path, text: &str) -> Self {
        self.params = Some(path.to_path_buf());
        self.params_hash = Some(hex::encode(Sha256::digest(text.as_bytes())));
        self
    }

    /// Writes `<dir>/<command>.manifest.toml` and returns its path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(format!("{}.manifest.toml", self.command));
        fs::write(&path, toml::to_string(self)?)?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(toml::from_str(&fs::read_to_string(path)?)?)
    }
}
