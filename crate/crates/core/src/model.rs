//! On-disk model directories: a `manifest.json` plus backend payload files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::SplitRatios;
use crate::detection::TrainingConfig;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Environment variable naming the directory that holds trained models.
pub const MODEL_DIR_ENV: &str = "DEBIAS_MODEL_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Detection,
    Recognition,
    Infilling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub ratios: SplitRatios,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub model_id: String,
    pub task: Task,
    pub backend: String,
    pub config: TrainingConfig,
    /// Backend-specific construction options.
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub options: serde_json::Value,
    /// Order-independent hash of the training examples.
    pub training_fingerprint: String,
    #[serde(default)]
    pub metrics: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitInfo>,
    #[serde(default)]
    pub version: String,
}

impl Manifest {
    pub fn new(model_id: &str, task: Task, backend: &str, config: TrainingConfig) -> Self {
        Self {
            model_id: model_id.to_string(),
            task,
            backend: backend.to_string(),
            config,
            options: serde_json::Value::Null,
            training_fingerprint: String::new(),
            metrics: serde_json::Value::Null,
            split: None,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let raw = fs::read_to_string(&path).map_err(|e| Error::Model(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&raw).map_err(|e| Error::Model(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(self)?;
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn expect_task(&self, task: Task) -> Result<()> {
        if self.task != task {
            return Err(Error::Model(format!(
                "model `{}` is a {:?} model, expected {:?}",
                self.model_id, self.task, task
            )));
        }
        Ok(())
    }
}

/// Resolves model ids to directories.
#[derive(Debug, Clone)]
pub struct ModelStore {
    root: PathBuf,
}

impl ModelStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// Uses `$DEBIAS_MODEL_DIR`, falling back to `./models`.
    pub fn from_env() -> Self {
        Self::new(std::env::var_os(MODEL_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("models")))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// An id is either a directory holding a manifest, or a name under the
    /// store root.
    pub fn resolve(&self, id: &str) -> Result<PathBuf> {
        let direct = PathBuf::from(id);
        if direct.join(MANIFEST_FILE).is_file() {
            return Ok(direct);
        }
        let under_root = self.root.join(id);
        if under_root.join(MANIFEST_FILE).is_file() {
            return Ok(under_root);
        }
        Err(Error::Model(format!(
            "model `{id}` not found (looked in `{}` and `{}`)",
            direct.display(),
            under_root.display()
        )))
    }

    pub fn path_for(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_vec(value)?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let raw = fs::read(path).map_err(|e| Error::Model(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&raw).map_err(|e| Error::Model(format!("{}: {e}", path.display())))
}
