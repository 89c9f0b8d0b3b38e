//! Binary bias classification behind a backend-agnostic interface.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backends::BackendRegistry;
use crate::dataset::{fingerprint, AnnotatedExample, Label};
use crate::error::{Error, Result};
use crate::evaluation::ConfusionCounts;
use crate::model::{Manifest, Task};

/// Default decision threshold on the bias probability.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Ties classify as biased, so borderline texts still go through rewriting.
pub fn label_for(probability: f64, threshold: f64) -> Label {
    Label::from_biased(probability >= threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub probability: f64,
    pub label: Label,
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Inputs longer than this many backend tokens are truncated.
    pub max_sequence_length: usize,
    pub num_labels: usize,
    pub learning_rate: f64,
    /// Fraction of optimizer steps spent on linear learning-rate warm-up.
    pub warmup_ratio: f64,
    /// L2 penalty (decoupled weight decay for transformer backends).
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            epochs: 10,
            max_sequence_length: 512,
            num_labels: 2,
            learning_rate: 5e-5,
            warmup_ratio: 0.1,
            weight_decay: 0.01,
            seed: 42,
        }
    }
}

impl TrainingConfig {
    pub const KEYS: &'static [&'static str] = &[
        "batch_size",
        "epochs",
        "max_sequence_length",
        "num_labels",
        "learning_rate",
        "warmup_ratio",
        "weight_decay",
        "seed",
    ];

    pub fn validate(&self, num_labels: usize) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.max_sequence_length == 0 {
            return Err(Error::Config("batch_size, epochs and max_sequence_length must be positive".into()));
        }
        if self.num_labels != num_labels {
            return Err(Error::Config(format!(
                "num_labels must be {num_labels} for this task, got {}",
                self.num_labels
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("warmup_ratio must lie in [0, 1) and weight_decay be non-negative".into()));
        }
        Ok(())
    }
}

/// A trainable binary classifier returning P(biased).
///
/// Training is driven epoch by epoch from [`train_detector`], which owns
/// dev evaluation and checkpoint selection.
pub trait DetectorBackend: Send + Sync {
    fn backend_name(&self) -> &str;

    /// Construction options persisted in the manifest and handed back to
    /// the registry on load.
    fn options(&self) -> serde_json::Value {
        serde_json::Value::Null
    }

    /// Prepares internal state (vocabulary, optimizer, ...) for training.
    fn begin_training(&mut self, examples: &[(&str, Label)], config: &TrainingConfig) -> Result<()>;

    /// Runs one pass over the training data; returns the mean training loss.
    fn train_epoch(&mut self, epoch: usize) -> Result<f64>;

    /// One probability in `[0, 1]` per input text, in input order.
    fn predict_proba(&self, texts: &[&str]) -> Result<Vec<f64>>;

    /// Length of `text` in the backend's own tokens.
    fn sequence_length(&self, text: &str) -> usize;

    /// Independent copy of the current trained state.
    fn checkpoint(&self) -> Result<Box<dyn DetectorBackend>>;

    /// Writes the backend payload into `dir` (the manifest is written separately).
    fn save(&self, dir: &Path) -> Result<()>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: Option<f64>,
    pub dev_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub model_id: String,
    pub backend: String,
    pub train_examples: usize,
    pub dev_examples: usize,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_dev_f1: Option<f64>,
}

/// A trained, immutable detector.
pub struct Detector {
    manifest: Manifest,
    backend: Box<dyn DetectorBackend>,
    threshold: f64,
}

impl std::fmt::Debug for Detector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Detector")
            .field("model_id", &self.manifest.model_id)
            .field("backend", &self.manifest.backend)
            .field("threshold", &self.threshold)
            .finish()
    }
}

impl Detector {
    pub fn new(manifest: Manifest, backend: Box<dyn DetectorBackend>) -> Self {
        Self {
            manifest,
            backend,
            threshold: DEFAULT_THRESHOLD,
        }
    }

    /// Wraps an already-usable backend (e.g. a stub) under `model_id`.
    pub fn from_backend(model_id: &str, backend: Box<dyn DetectorBackend>) -> Self {
        let mut manifest = Manifest::new(model_id, Task::Detection, backend.backend_name(), TrainingConfig::default());
        manifest.options = backend.options();
        Self::new(manifest, backend)
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::Config(format!("threshold must lie in [0, 1], got {threshold}")));
        }
        self.threshold = threshold;
        Ok(self)
    }

    pub fn model_id(&self) -> &str {
        &self.manifest.model_id
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn manifest_mut(&mut self) -> &mut Manifest {
        &mut self.manifest
    }

    /// Raw probabilities, checked against the backend contract.
    pub fn predict_proba(&self, texts: &[&str]) -> Result<Vec<f64>> {
        let max_len = self.manifest.config.max_sequence_length;
        for text in texts {
            let len = self.backend.sequence_length(text);
            if len > max_len {
                log::warn!("input of {len} tokens truncated to {max_len} tokens");
            }
        }
        let probs = self.backend.predict_proba(texts)?;
        if probs.len() != texts.len() {
            return Err(Error::Contract(format!(
                "detector returned {} probabilities for {} texts",
                probs.len(),
                texts.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Contract(format!("detector probability {p} outside [0, 1]")));
        }
        Ok(probs)
    }

    pub fn detect(&self, text: &str) -> Result<DetectionResult> {
        Ok(self.detect_batch(&[text])?.remove(0))
    }

    pub fn detect_batch(&self, texts: &[&str]) -> Result<Vec<DetectionResult>> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(Error::EmptyText);
        }
        let probs = self.predict_proba(texts)?;
        Ok(probs
            .into_iter()
            .map(|probability| DetectionResult {
                probability,
                label: label_for(probability, self.threshold),
                model_id: self.manifest.model_id.clone(),
            })
            .collect())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.manifest.write(dir)?;
        self.backend.save(dir)
    }

    pub fn load(dir: &Path, registry: &BackendRegistry) -> Result<Self> {
        let manifest = Manifest::read(dir)?;
        manifest.expect_task(Task::Detection)?;
        let backend = registry.load_detector(&manifest, dir)?;
        Ok(Self::new(manifest, backend))
    }
}

fn bce(probs: &[f64], labels: &[Label]) -> f64 {
    let eps = 1e-12;
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, l)| {
            let p = p.clamp(eps, 1.0 - eps);
            if l.is_biased() {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    total / probs.len().max(1) as f64
}

/// Trains `backend` to minimize binary cross-entropy and keeps the epoch
/// with the best dev F1 (the last epoch when `dev` is empty).
pub fn train_detector(
    train: &[AnnotatedExample],
    dev: &[AnnotatedExample],
    mut backend: Box<dyn DetectorBackend>,
    config: &TrainingConfig,
    model_id: &str,
) -> Result<(Detector, TrainingReport)> {
    config.validate(2)?;
    if train.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let biased = train.iter().filter(|e| e.label.is_biased()).count();
    if biased == 0 || biased == train.len() {
        return Err(Error::InvalidInput("training set must contain both BIASED and NON_BIASED examples".into()));
    }

    let pairs: Vec<(&str, Label)> = train.iter().map(|e| (e.text.as_str(), e.label)).collect();
    backend.begin_training(&pairs, config)?;

    let dev_texts: Vec<&str> = dev.iter().map(|e| e.text.as_str()).collect();
    let dev_labels: Vec<Label> = dev.iter().map(|e| e.label).collect();

    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, Box<dyn DetectorBackend>)> = None;
    for epoch in 0..config.epochs {
        let train_loss = backend.train_epoch(epoch)?;
        let (dev_loss, dev_f1) = if dev.is_empty() {
            (None, None)
        } else {
            let probs = backend.predict_proba(&dev_texts)?;
            let predicted: Vec<Label> = probs.iter().map(|&p| label_for(p, DEFAULT_THRESHOLD)).collect();
            let counts = ConfusionCounts::from_labels(&dev_labels, &predicted);
            (Some(bce(&probs, &dev_labels)), Some(counts.metrics().f1.unwrap_or(0.0)))
        };
        log::info!("epoch {epoch}: train loss {train_loss:.4}, dev loss {dev_loss:?}, dev F1 {dev_f1:?}");
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            dev_loss,
            dev_f1,
        });
        if let Some(f1) = dev_f1 {
            if best.as_ref().is_none_or(|(_, b, _)| f1 > *b) {
                best = Some((epoch, f1, backend.checkpoint()?));
            }
        }
    }

    let (best_epoch, best_dev_f1, chosen) = match best {
        Some((epoch, f1, checkpoint)) => (epoch, Some(f1), checkpoint),
        None => (config.epochs - 1, None, backend),
    };

    let report = TrainingReport {
        model_id: model_id.to_string(),
        backend: chosen.backend_name().to_string(),
        train_examples: train.len(),
        dev_examples: dev.len(),
        epochs,
        best_epoch,
        best_dev_f1,
    };
    let mut manifest = Manifest::new(model_id, Task::Detection, chosen.backend_name(), config.clone());
    manifest.options = chosen.options();
    manifest.training_fingerprint = fingerprint(train);
    manifest.metrics = serde_json::json!({
        "best_epoch": best_epoch,
        "best_dev_f1": best_dev_f1,
    });
    Ok((Detector::new(manifest, chosen), report))
}
