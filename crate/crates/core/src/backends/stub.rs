//! Deterministic lookup-table backends.
//!
//! Every stub counts its calls through a shared [`CallCounter`], so tests
//! can assert that a stage was (or was not) reached.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{option, BackendRegistry, DetectorFactory, InfillerFactory, RecognizerFactory};
use crate::dataset::{Label, Tag, TokenTagSequence};
use crate::detection::{DetectorBackend, TrainingConfig};
use crate::error::{Error, Result};
use crate::masking::{require_single_mask, InfillerBackend, DEFAULT_MASK_TOKEN};
use crate::model::{read_json, write_json, Manifest};
use crate::recognition::{lexicon_recognize, BiasSpan, Lexicon, RecognizerBackend};
use crate::text::char_len;

pub const NAME: &str = "table";
const TABLE_FILE: &str = "table.json";

#[derive(Debug, Clone, Default)]
pub struct CallCounter(Arc<AtomicUsize>);

impl CallCounter {
    pub fn get(&self) -> usize {
        self.0.load(Ordering::SeqCst)
    }

    fn bump(&self) {
        self.0.fetch_add(1, Ordering::SeqCst);
    }
}

/// What a table backend does for inputs it has no entry for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Missing {
    Error,
    Default(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DetectorTable {
    table: BTreeMap<String, f64>,
    missing: Missing,
}

/// Text → probability lookup. "Training" memorizes the labels.
#[derive(Debug, Clone)]
pub struct TableDetector {
    data: DetectorTable,
    calls: CallCounter,
}

impl TableDetector {
    pub fn new(entries: impl IntoIterator<Item = (String, f64)>, missing: Missing) -> Self {
        Self {
            data: DetectorTable {
                table: entries.into_iter().collect(),
                missing,
            },
            calls: CallCounter::default(),
        }
    }

    /// Counts `predict_proba` calls.
    pub fn calls(&self) -> CallCounter {
        self.calls.clone()
    }

    fn lookup(&self, text: &str) -> Result<f64> {
        match (self.data.table.get(text), self.data.missing) {
            (Some(&p), _) => Ok(p),
            (None, Missing::Default(p)) => Ok(p),
            (None, Missing::Error) => Err(Error::Backend(format!("no table entry for {text:?}"))),
        }
    }
}

impl DetectorBackend for TableDetector {
    fn backend_name(&self) -> &str {
        NAME
    }

    fn begin_training(&mut self, examples: &[(&str, Label)], _config: &TrainingConfig) -> Result<()> {
        for (text, label) in examples {
            let p = if label.is_biased() { 1.0 } else { 0.0 };
            self.data.table.insert(text.to_string(), p);
        }
        Ok(())
    }

    fn train_epoch(&mut self, _epoch: usize) -> Result<f64> {
        Ok(0.0)
    }

    fn predict_proba(&self, texts: &[&str]) -> Result<Vec<f64>> {
        self.calls.bump();
        texts.iter().map(|t| self.lookup(t)).collect()
    }

    fn sequence_length(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }

    fn checkpoint(&self) -> Result<Box<dyn DetectorBackend>> {
        Ok(Box::new(self.clone()))
    }

    fn save(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(TABLE_FILE), &self.data)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RecognizerTable {
    /// The same raw spans for every input.
    Fixed(Vec<BiasSpan>),
    Lexicon(Lexicon),
    Table(BTreeMap<String, Vec<BiasSpan>>),
}

/// Span lookup: fixed output, a phrase lexicon, or text → spans.
#[derive(Debug, Clone)]
pub struct TableRecognizer {
    data: RecognizerTable,
    calls: CallCounter,
}

impl TableRecognizer {
    pub fn fixed(spans: Vec<BiasSpan>) -> Self {
        Self::with(RecognizerTable::Fixed(spans))
    }

    pub fn lexicon<I: IntoIterator<Item = S>, S: AsRef<str>>(phrases: I) -> Self {
        Self::with(RecognizerTable::Lexicon(Lexicon::new(phrases)))
    }

    /// Texts missing from the table yield no spans.
    pub fn table(entries: impl IntoIterator<Item = (String, Vec<BiasSpan>)>) -> Self {
        Self::with(RecognizerTable::Table(entries.into_iter().collect()))
    }

    fn with(data: RecognizerTable) -> Self {
        Self {
            data,
            calls: CallCounter::default(),
        }
    }

    /// Counts `predict` and `predict_tags` calls.
    pub fn calls(&self) -> CallCounter {
        self.calls.clone()
    }

    fn spans(&self, text: &str) -> Vec<BiasSpan> {
        match &self.data {
            RecognizerTable::Fixed(spans) => spans.clone(),
            RecognizerTable::Lexicon(lexicon) => lexicon_recognize(lexicon, text),
            RecognizerTable::Table(table) => table.get(text).cloned().unwrap_or_default(),
        }
    }
}

/// Tags tokens by overlap with spans over the space-joined token text.
pub(crate) fn tags_from_spans(tokens: &[&str], spans: impl Fn(&str) -> Vec<BiasSpan>) -> Vec<(Tag, f64)> {
    let mut joined = String::new();
    let mut offsets = Vec::with_capacity(tokens.len());
    for (i, token) in tokens.iter().enumerate() {
        if i > 0 {
            joined.push(' ');
        }
        let start = char_len(&joined);
        joined.push_str(token);
        offsets.push((start, char_len(&joined)));
    }
    let mut tagged = vec![(Tag::Outside, 1.0); tokens.len()];
    for span in spans(&joined) {
        let mut first = true;
        for (i, &(start, end)) in offsets.iter().enumerate() {
            if start < span.end && span.start < end && tagged[i].0 == Tag::Outside {
                tagged[i] = (if first { Tag::Begin } else { Tag::Inside }, span.score);
                first = false;
            }
        }
    }
    tagged
}

impl RecognizerBackend for TableRecognizer {
    fn backend_name(&self) -> &str {
        NAME
    }

    fn begin_training(&mut self, _train: &[TokenTagSequence], _config: &TrainingConfig) -> Result<()> {
        Err(Error::Backend("the table recognizer is not trainable".into()))
    }

    fn train_epoch(&mut self, _epoch: usize) -> Result<f64> {
        Err(Error::Backend("the table recognizer is not trainable".into()))
    }

    fn predict_tags(&self, tokens: &[&str]) -> Result<Vec<(Tag, f64)>> {
        self.calls.bump();
        Ok(tags_from_spans(tokens, |t| self.spans(t)))
    }

    fn predict(&self, text: &str) -> Result<Vec<BiasSpan>> {
        self.calls.bump();
        Ok(self.spans(text))
    }

    fn checkpoint(&self) -> Result<Box<dyn RecognizerBackend>> {
        Ok(Box::new(self.clone()))
    }

    fn save(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(TABLE_FILE), &self.data)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct InfillerTable {
    #[serde(default)]
    table: BTreeMap<String, Vec<(String, f64)>>,
    #[serde(default)]
    default: Vec<(String, f64)>,
    #[serde(default = "default_mask")]
    mask: String,
}

fn default_mask() -> String {
    DEFAULT_MASK_TOKEN.to_string()
}

/// Masked text → proposals lookup, returned as stored (truncated to `k`).
#[derive(Debug, Clone)]
pub struct TableInfiller {
    data: InfillerTable,
    calls: CallCounter,
}

impl TableInfiller {
    pub fn new(entries: impl IntoIterator<Item = (String, Vec<(String, f64)>)>, default: Vec<(String, f64)>) -> Self {
        Self {
            data: InfillerTable {
                table: entries.into_iter().collect(),
                default,
                mask: default_mask(),
            },
            calls: CallCounter::default(),
        }
    }

    /// The same proposals for every input.
    pub fn uniform(proposals: Vec<(String, f64)>) -> Self {
        Self::new([], proposals)
    }

    pub fn with_mask(mut self, mask: &str) -> Self {
        self.data.mask = mask.to_string();
        self
    }

    pub fn calls(&self) -> CallCounter {
        self.calls.clone()
    }
}

impl InfillerBackend for TableInfiller {
    fn backend_name(&self) -> &str {
        NAME
    }

    fn mask_token(&self) -> &str {
        &self.data.mask
    }

    fn fill(&self, text: &str, k: usize) -> Result<Vec<(String, f64)>> {
        self.calls.bump();
        require_single_mask(text, &self.data.mask)?;
        let proposals = self.data.table.get(text).unwrap_or(&self.data.default);
        Ok(proposals.iter().take(k).cloned().collect())
    }

    fn save(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(TABLE_FILE), &self.data)
    }
}

type FillFn = dyn Fn(&str) -> Vec<(String, f64)> + Send + Sync;

/// Infiller driven by a closure over the masked text.
pub struct FnInfiller {
    mask: String,
    f: Box<FillFn>,
    strict: bool,
    calls: CallCounter,
}

impl FnInfiller {
    pub fn new(mask: &str, f: impl Fn(&str) -> Vec<(String, f64)> + Send + Sync + 'static) -> Self {
        Self {
            mask: mask.to_string(),
            f: Box::new(f),
            strict: true,
            calls: CallCounter::default(),
        }
    }

    /// Skips the single-mask check (a deliberately broken backend).
    pub fn accept_any_input(mut self) -> Self {
        self.strict = false;
        self
    }

    pub fn calls(&self) -> CallCounter {
        self.calls.clone()
    }
}

impl InfillerBackend for FnInfiller {
    fn backend_name(&self) -> &str {
        "fn"
    }

    fn mask_token(&self) -> &str {
        &self.mask
    }

    fn fill(&self, text: &str, k: usize) -> Result<Vec<(String, f64)>> {
        self.calls.bump();
        if self.strict {
            require_single_mask(text, &self.mask)?;
        }
        let mut out = (self.f)(text);
        out.truncate(k);
        Ok(out)
    }
}

pub(crate) fn register(registry: &mut BackendRegistry) -> Result<()> {
    registry.register_detector(
        NAME,
        DetectorFactory {
            create: Box::new(|options| {
                let missing = option(options, "missing")?.unwrap_or(Missing::Error);
                let table: BTreeMap<String, f64> = option(options, "table")?.unwrap_or_default();
                Ok(Box::new(TableDetector::new(table, missing)))
            }),
            load: Box::new(|_: &Manifest, dir| {
                let data: DetectorTable = read_json(&dir.join(TABLE_FILE))?;
                Ok(Box::new(TableDetector {
                    data,
                    calls: CallCounter::default(),
                }))
            }),
            default_config: TrainingConfig {
                epochs: 1,
                ..TrainingConfig::default()
            },
        },
    )?;
    registry.register_recognizer(
        NAME,
        RecognizerFactory {
            create: Box::new(|options| {
                let phrases: Vec<String> = option(options, "phrases")?.unwrap_or_default();
                Ok(Box::new(TableRecognizer::lexicon(phrases)))
            }),
            load: Box::new(|_: &Manifest, dir| {
                let data: RecognizerTable = read_json(&dir.join(TABLE_FILE))?;
                Ok(Box::new(TableRecognizer::with(data)))
            }),
            default_config: TrainingConfig {
                num_labels: 3,
                epochs: 1,
                ..TrainingConfig::default()
            },
        },
    )?;
    registry.register_infiller(
        NAME,
        InfillerFactory {
            build: Box::new(|_corpus, options| {
                let data: InfillerTable = if options.is_null() {
                    InfillerTable {
                        mask: default_mask(),
                        ..InfillerTable::default()
                    }
                } else {
                    serde_json::from_value(options.clone()).map_err(|e| Error::Config(format!("table infiller: {e}")))?
                };
                Ok(Box::new(TableInfiller {
                    data,
                    calls: CallCounter::default(),
                }))
            }),
            load: Box::new(|_: &Manifest, dir| {
                let data: InfillerTable = read_json(&dir.join(TABLE_FILE))?;
                Ok(Box::new(TableInfiller {
                    data,
                    calls: CallCounter::default(),
                }))
            }),
        },
    )
}
