//! Span-level bias recognition ("which words carry the bias").

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backends::BackendRegistry;
use crate::dataset::{fingerprint, repair_bio, DatasetRecord, Tag, TokenTagSequence};
use crate::detection::{EpochRecord, TrainingConfig, TrainingReport};
use crate::error::{Error, Result};
use crate::evaluation::ConfusionCounts;
use crate::model::{Manifest, Task};
use crate::text::{match_phrases, resolve_overlaps, word_tokenize, CharOffsets, MatchPolicy, Token};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSpan {
    pub start: usize,
    pub end: usize,
    pub surface: String,
    pub score: f64,
}

/// A trainable sequence labeler over word tokens.
pub trait RecognizerBackend: Send + Sync {
    fn backend_name(&self) -> &str;

    /// Construction options persisted in the manifest and handed back to
    /// the registry on load.
    fn options(&self) -> serde_json::Value {
        serde_json::Value::Null
    }

    fn tokenize(&self, text: &str) -> Vec<Token> {
        word_tokenize(text)
    }

    fn begin_training(&mut self, train: &[TokenTagSequence], config: &TrainingConfig) -> Result<()>;

    /// One pass over the training data; returns the mean training loss.
    fn train_epoch(&mut self, epoch: usize) -> Result<f64>;

    /// Tag and tag confidence for each token.
    fn predict_tags(&self, tokens: &[&str]) -> Result<Vec<(Tag, f64)>>;

    /// Raw span predictions; may overlap or be unsorted; [`Recognizer`]
    /// cleans them up.
    fn predict(&self, text: &str) -> Result<Vec<BiasSpan>> {
        let tokens = self.tokenize(text);
        let words: Vec<&str> = tokens.iter().map(|t| t.text.as_str()).collect();
        let tagged = self.predict_tags(&words)?;
        if tagged.len() != tokens.len() {
            return Err(Error::Contract(format!(
                "recognizer tagged {} of {} tokens",
                tagged.len(),
                tokens.len()
            )));
        }
        Ok(spans_from_tags(text, &tokens, &tagged))
    }

    fn checkpoint(&self) -> Result<Box<dyn RecognizerBackend>>;

    fn save(&self, dir: &Path) -> Result<()>;
}

/// Decodes B/I runs into spans scored by their mean tag confidence.
pub fn spans_from_tags(text: &str, tokens: &[Token], tagged: &[(Tag, f64)]) -> Vec<BiasSpan> {
    let mut tags: Vec<Tag> = tagged.iter().map(|(t, _)| *t).collect();
    repair_bio(&mut tags);
    let offsets = CharOffsets::new(text);
    let mut spans = Vec::new();
    let mut i = 0;
    while i < tags.len() {
        if tags[i] != Tag::Begin {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < tags.len() && tags[j] == Tag::Inside {
            j += 1;
        }
        let (start, end) = (tokens[i].start, tokens[j - 1].end);
        let score = tagged[i..j].iter().map(|(_, s)| *s).sum::<f64>() / (j - i) as f64;
        spans.push(BiasSpan {
            start,
            end,
            surface: offsets.slice(start, end).unwrap_or_default().to_string(),
            score,
        });
        i = j;
    }
    spans
}

/// Enforces span invariants against `text`: drops empty or out-of-bounds
/// spans, recomputes surfaces, clamps scores into `[0, 1]` and resolves
/// overlaps (earliest start, then longest, then highest score).
pub fn normalize_spans(text: &str, raw: Vec<BiasSpan>) -> Vec<BiasSpan> {
    let offsets = CharOffsets::new(text);
    let valid: Vec<BiasSpan> = raw
        .into_iter()
        .filter_map(|mut span| {
            if span.start >= span.end || span.end > offsets.len() {
                log::warn!("dropping invalid span ({}, {})", span.start, span.end);
                return None;
            }
            span.surface = offsets.slice(span.start, span.end)?.to_string();
            span.score = if span.score.is_nan() { 0.0 } else { span.score.clamp(0.0, 1.0) };
            Some(span)
        })
        .collect();
    resolve_overlaps(valid, |s| (s.start, s.end, s.score))
}

/// Phrase list used by the lexicon backend.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    phrases: BTreeSet<String>,
}

impl Lexicon {
    pub fn new<I: IntoIterator<Item = S>, S: AsRef<str>>(phrases: I) -> Self {
        let mut lexicon = Self::default();
        lexicon.extend(phrases);
        lexicon
    }

    pub fn extend<I: IntoIterator<Item = S>, S: AsRef<str>>(&mut self, phrases: I) {
        for phrase in phrases {
            let normalized = phrase.as_ref().split_whitespace().collect::<Vec<_>>().join(" ");
            if !normalized.is_empty() {
                self.phrases.insert(normalized);
            }
        }
    }

    /// Union of the biased words of every record.
    pub fn from_records(records: &[DatasetRecord]) -> Self {
        Self::new(records.iter().flat_map(|r| r.biased_words.iter()))
    }

    /// One phrase per line; blank lines and `#` comments are skipped.
    pub fn parse(content: &str) -> Self {
        Self::new(
            content
                .lines()
                .map(|l| l.split_once('#').map_or(l, |(before, _)| before).trim())
                .filter(|l| !l.is_empty()),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&content))
    }

    pub fn to_file_string(&self) -> String {
        self.phrases.iter().map(|p| format!("{p}\n")).collect()
    }

    pub fn phrases(&self) -> impl Iterator<Item = &str> {
        self.phrases.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }
}

/// Every lexicon phrase found in `text`, using the same matcher as span
/// derivation, with score 1.0.
pub fn lexicon_recognize(lexicon: &Lexicon, text: &str) -> Vec<BiasSpan> {
    let phrases: Vec<&str> = lexicon.phrases().collect();
    let offsets = CharOffsets::new(text);
    match_phrases(text, &phrases, MatchPolicy::AllOccurrences)
        .matches
        .into_iter()
        .map(|m| BiasSpan {
            start: m.start,
            end: m.end,
            surface: offsets.slice(m.start, m.end).unwrap_or_default().to_string(),
            score: 1.0,
        })
        .collect()
}

/// A trained, immutable recognizer.
pub struct Recognizer {
    manifest: Manifest,
    backend: Box<dyn RecognizerBackend>,
}

impl std::fmt::Debug for Recognizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Recognizer")
            .field("model_id", &self.manifest.model_id)
            .field("backend", &self.manifest.backend)
            .finish()
    }
}

impl Recognizer {
    pub fn new(manifest: Manifest, backend: Box<dyn RecognizerBackend>) -> Self {
        Self { manifest, backend }
    }

    pub fn from_backend(model_id: &str, backend: Box<dyn RecognizerBackend>) -> Self {
        let config = TrainingConfig {
            num_labels: 3,
            ..TrainingConfig::default()
        };
        let mut manifest = Manifest::new(model_id, Task::Recognition, backend.backend_name(), config);
        manifest.options = backend.options();
        Self::new(manifest, backend)
    }

    pub fn model_id(&self) -> &str {
        &self.manifest.model_id
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn manifest_mut(&mut self) -> &mut Manifest {
        &mut self.manifest
    }

    pub fn tokenize(&self, text: &str) -> Vec<Token> {
        self.backend.tokenize(text)
    }

    /// Sorted, non-overlapping spans; an empty list is a valid outcome.
    pub fn recognize(&self, text: &str) -> Result<Vec<BiasSpan>> {
        if text.trim().is_empty() {
            return Err(Error::EmptyText);
        }
        let raw = self.backend.predict(text)?;
        Ok(normalize_spans(text, raw))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.manifest.write(dir)?;
        self.backend.save(dir)
    }

    pub fn load(dir: &Path, registry: &BackendRegistry) -> Result<Self> {
        let manifest = Manifest::read(dir)?;
        manifest.expect_task(Task::Recognition)?;
        let backend = registry.load_recognizer(&manifest, dir)?;
        Ok(Self::new(manifest, backend))
    }
}

fn token_counts(backend: &dyn RecognizerBackend, sequences: &[TokenTagSequence]) -> Result<ConfusionCounts> {
    let mut counts = ConfusionCounts::default();
    for seq in sequences {
        let words: Vec<&str> = seq.tokens.iter().map(String::as_str).collect();
        let predicted = backend.predict_tags(&words)?;
        for (gold, (pred, _)) in seq.tags.iter().zip(&predicted) {
            counts.add(gold.is_bias(), pred.is_bias());
        }
    }
    Ok(counts)
}

/// Trains a recognizer and keeps the epoch with the best token-level dev F1.
pub fn train_recognizer(
    train: &[TokenTagSequence],
    dev: &[TokenTagSequence],
    mut backend: Box<dyn RecognizerBackend>,
    config: &TrainingConfig,
    model_id: &str,
) -> Result<(Recognizer, TrainingReport)> {
    config.validate(3)?;
    if train.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    for (i, seq) in train.iter().chain(dev).enumerate() {
        seq.validate().map_err(|e| Error::InvalidInput(format!("sequence {i}: {e}")))?;
    }
    if !train.iter().any(|s| s.tags.contains(&Tag::Begin)) {
        return Err(Error::InvalidInput("training data has no B-BIAS tags".into()));
    }

    backend.begin_training(train, config)?;
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, Box<dyn RecognizerBackend>)> = None;
    for epoch in 0..config.epochs {
        let train_loss = backend.train_epoch(epoch)?;
        let dev_f1 = if dev.is_empty() {
            None
        } else {
            Some(token_counts(backend.as_ref(), dev)?.metrics().f1.unwrap_or(0.0))
        };
        log::info!("epoch {epoch}: train loss {train_loss:.4}, dev token F1 {dev_f1:?}");
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            dev_loss: None,
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
    let mut manifest = Manifest::new(model_id, Task::Recognition, chosen.backend_name(), config.clone());
    manifest.options = chosen.options();
    manifest.training_fingerprint = fingerprint(train);
    manifest.metrics = serde_json::json!({
        "best_epoch": best_epoch,
        "best_dev_token_f1": best_dev_f1,
    });
    Ok((Recognizer::new(manifest, chosen), report))
}
