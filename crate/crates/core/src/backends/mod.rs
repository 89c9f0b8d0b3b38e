//! Concrete backends and the name → factory registry.
//!
//! | name           | kind       | notes                                        |
//! |----------------|------------|----------------------------------------------|
//! | `tfidf-logreg` | detector   | TF-IDF features + logistic regression        |
//! | `logreg-tagger`| recognizer | per-token multinomial logistic regression    |
//! | `lexicon`      | recognizer | phrase list from training spans + user lists |
//! | `ngram`        | infiller   | bigram context model                         |
//! | `table`        | all three  | lookup tables, for tests and pinned outputs  |
//!
//! With the `transformers` feature, a `distilbert` detector, a
//! `distilbert-tagger` recognizer and an `mlm` infiller are added.

pub mod lexicon;
pub mod ngram_infiller;
pub mod reference_detector;
pub mod sequence_labeler;
pub mod stub;
#[cfg(feature = "transformers")]
pub mod transformer;

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::Value;

use crate::detection::{DetectorBackend, TrainingConfig};
use crate::error::{Error, Result};
use crate::masking::{validate_infiller, InfillerBackend};
use crate::dataset::fingerprint;
use crate::model::{Manifest, Task};
use crate::recognition::RecognizerBackend;

type Create<T> = Box<dyn Fn(&Value) -> Result<Box<T>> + Send + Sync>;
type Load<T> = Box<dyn Fn(&Manifest, &Path) -> Result<Box<T>> + Send + Sync>;
type Build<T> = Box<dyn Fn(&[String], &Value) -> Result<Box<T>> + Send + Sync>;

/// Builds untrained detectors and restores saved ones.
pub struct DetectorFactory {
    pub create: Create<dyn DetectorBackend>,
    pub load: Load<dyn DetectorBackend>,
    pub default_config: TrainingConfig,
}

pub struct RecognizerFactory {
    pub create: Create<dyn RecognizerBackend>,
    pub load: Load<dyn RecognizerBackend>,
    pub default_config: TrainingConfig,
}

/// Infillers are built from a raw text corpus (possibly ignored, e.g. for
/// pretrained models) plus options.
pub struct InfillerFactory {
    pub build: Build<dyn InfillerBackend>,
    pub load: Load<dyn InfillerBackend>,
}

#[derive(Default)]
pub struct BackendRegistry {
    detectors: BTreeMap<String, DetectorFactory>,
    recognizers: BTreeMap<String, RecognizerFactory>,
    infillers: BTreeMap<String, InfillerFactory>,
}

impl std::fmt::Debug for BackendRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BackendRegistry")
            .field("detectors", &self.detectors.keys().collect::<Vec<_>>())
            .field("recognizers", &self.recognizers.keys().collect::<Vec<_>>())
            .field("infillers", &self.infillers.keys().collect::<Vec<_>>())
            .finish()
    }
}

fn insert_unique<T>(map: &mut BTreeMap<String, T>, kind: &str, name: &str, value: T) -> Result<()> {
    if map.contains_key(name) {
        return Err(Error::Config(format!("{kind} backend `{name}` is already registered")));
    }
    map.insert(name.to_string(), value);
    Ok(())
}

fn lookup<'a, T>(map: &'a BTreeMap<String, T>, kind: &str, name: &str) -> Result<&'a T> {
    map.get(name).ok_or_else(|| {
        Error::Model(format!(
            "unknown {kind} backend `{name}` (available: {})",
            map.keys().cloned().collect::<Vec<_>>().join(", ")
        ))
    })
}

impl BackendRegistry {
    /// An empty registry.
    pub fn new() -> Self {
        Self::default()
    }

    /// Every backend compiled into this build.
    pub fn with_defaults() -> Self {
        let mut registry = Self::new();
        reference_detector::register(&mut registry).expect("fresh registry");
        sequence_labeler::register(&mut registry).expect("fresh registry");
        lexicon::register(&mut registry).expect("fresh registry");
        ngram_infiller::register(&mut registry).expect("fresh registry");
        stub::register(&mut registry).expect("fresh registry");
        #[cfg(feature = "transformers")]
        transformer::register(&mut registry).expect("fresh registry");
        registry
    }

    pub fn register_detector(&mut self, name: &str, factory: DetectorFactory) -> Result<()> {
        insert_unique(&mut self.detectors, "detector", name, factory)
    }

    pub fn register_recognizer(&mut self, name: &str, factory: RecognizerFactory) -> Result<()> {
        insert_unique(&mut self.recognizers, "recognizer", name, factory)
    }

    pub fn register_infiller(&mut self, name: &str, factory: InfillerFactory) -> Result<()> {
        insert_unique(&mut self.infillers, "infiller", name, factory)
    }

    pub fn detector_names(&self) -> Vec<&str> {
        self.detectors.keys().map(String::as_str).collect()
    }

    pub fn recognizer_names(&self) -> Vec<&str> {
        self.recognizers.keys().map(String::as_str).collect()
    }

    pub fn infiller_names(&self) -> Vec<&str> {
        self.infillers.keys().map(String::as_str).collect()
    }

    pub fn create_detector(&self, name: &str, options: &Value) -> Result<Box<dyn DetectorBackend>> {
        (lookup(&self.detectors, "detector", name)?.create)(options)
    }

    pub fn detector_config(&self, name: &str) -> Result<TrainingConfig> {
        Ok(lookup(&self.detectors, "detector", name)?.default_config.clone())
    }

    pub fn load_detector(&self, manifest: &Manifest, dir: &Path) -> Result<Box<dyn DetectorBackend>> {
        (lookup(&self.detectors, "detector", &manifest.backend)?.load)(manifest, dir)
    }

    pub fn create_recognizer(&self, name: &str, options: &Value) -> Result<Box<dyn RecognizerBackend>> {
        (lookup(&self.recognizers, "recognizer", name)?.create)(options)
    }

    pub fn recognizer_config(&self, name: &str) -> Result<TrainingConfig> {
        Ok(lookup(&self.recognizers, "recognizer", name)?.default_config.clone())
    }

    pub fn load_recognizer(&self, manifest: &Manifest, dir: &Path) -> Result<Box<dyn RecognizerBackend>> {
        (lookup(&self.recognizers, "recognizer", &manifest.backend)?.load)(manifest, dir)
    }

    /// Builds an infiller and rejects it unless it passes the contract
    /// validator.
    pub fn build_infiller(&self, name: &str, corpus: &[String], options: &Value) -> Result<Box<dyn InfillerBackend>> {
        let infiller = (lookup(&self.infillers, "infiller", name)?.build)(corpus, options)?;
        ensure_valid(infiller)
    }

    /// Restores an infiller and rejects it unless it passes the contract
    /// validator.
    pub fn load_infiller(&self, manifest: &Manifest, dir: &Path) -> Result<Box<dyn InfillerBackend>> {
        ensure_valid(self.load_infiller_unchecked(manifest, dir)?)
    }

    /// Restores an infiller without running the contract validator.
    pub fn load_infiller_unchecked(&self, manifest: &Manifest, dir: &Path) -> Result<Box<dyn InfillerBackend>> {
        (lookup(&self.infillers, "infiller", &manifest.backend)?.load)(manifest, dir)
    }
}

/// Writes an infiller model directory: manifest plus backend payload.
pub fn save_infiller(
    infiller: &dyn InfillerBackend,
    dir: &Path,
    model_id: &str,
    options: &Value,
    corpus: &[String],
) -> Result<Manifest> {
    let mut manifest = Manifest::new(model_id, Task::Infilling, infiller.backend_name(), TrainingConfig::default());
    manifest.options = options.clone();
    manifest.training_fingerprint = fingerprint(corpus);
    manifest.write(dir)?;
    infiller.save(dir)?;
    Ok(manifest)
}

fn ensure_valid(infiller: Box<dyn InfillerBackend>) -> Result<Box<dyn InfillerBackend>> {
    let report = validate_infiller(infiller.as_ref());
    if !report.is_clean() {
        return Err(Error::Contract(format!(
            "infiller `{}` violates its contract: {}",
            report.backend,
            report.violations.join("; ")
        )));
    }
    Ok(infiller)
}

/// Reads an optional typed field from backend options.
pub(crate) fn option<T: serde::de::DeserializeOwned>(options: &Value, key: &str) -> Result<Option<T>> {
    match options.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v.clone())
            .map(Some)
            .map_err(|e| Error::Config(format!("backend option `{key}`: {e}"))),
    }
}
