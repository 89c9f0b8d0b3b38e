//! Phrase-lexicon recognizer: "training" collects the surfaces of every
//! tagged span, on top of any user-supplied phrase lists.

use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use super::stub::tags_from_spans;
use super::{option, BackendRegistry, RecognizerFactory};
use crate::dataset::{Tag, TokenTagSequence};
use crate::detection::TrainingConfig;
use crate::error::{Error, Result};
use crate::model::Manifest;
use crate::recognition::{lexicon_recognize, BiasSpan, Lexicon, RecognizerBackend};
use crate::text::word_tokenize;

pub const NAME: &str = "lexicon";
const LEXICON_FILE: &str = "lexicon.txt";

#[derive(Debug, Clone, Default)]
pub struct LexiconRecognizer {
    user: Lexicon,
    lexicon: Lexicon,
    /// Phrases re-spelled as space-joined word tokens, for tag prediction.
    tokenized: Lexicon,
}

impl LexiconRecognizer {
    /// Starts from the user phrase list; training adds to it.
    pub fn new(user: Lexicon) -> Self {
        let mut out = Self {
            user: user.clone(),
            ..Self::default()
        };
        out.set(user);
        out
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    fn set(&mut self, lexicon: Lexicon) {
        self.tokenized = Lexicon::new(lexicon.phrases().map(|p| {
            word_tokenize(p).into_iter().map(|t| t.text).collect::<Vec<_>>().join(" ")
        }));
        self.lexicon = lexicon;
    }

    pub fn default_config() -> TrainingConfig {
        TrainingConfig {
            epochs: 1,
            num_labels: 3,
            ..TrainingConfig::default()
        }
    }
}

/// Surface text of each B/I run, rebuilt from tokens and their offsets.
pub fn tagged_phrases(seq: &TokenTagSequence) -> Vec<String> {
    let mut phrases = Vec::new();
    let mut current: Option<(String, usize)> = None;
    for ((token, tag), &(start, end)) in seq.tokens.iter().zip(&seq.tags).zip(&seq.offsets) {
        match (tag, current.as_mut()) {
            (Tag::Inside, Some((text, last_end))) => {
                if start > *last_end {
                    text.push(' ');
                }
                text.push_str(token);
                *last_end = end;
            }
            (Tag::Begin | Tag::Inside, _) => {
                phrases.extend(current.take().map(|(t, _)| t));
                current = Some((token.clone(), end));
            }
            (Tag::Outside, _) => phrases.extend(current.take().map(|(t, _)| t)),
        }
    }
    phrases.extend(current.map(|(t, _)| t));
    phrases
}

impl RecognizerBackend for LexiconRecognizer {
    fn backend_name(&self) -> &str {
        NAME
    }

    fn options(&self) -> Value {
        json!({ "phrases": self.user.phrases().collect::<Vec<_>>() })
    }

    fn begin_training(&mut self, train: &[TokenTagSequence], _config: &TrainingConfig) -> Result<()> {
        let mut lexicon = self.user.clone();
        lexicon.extend(train.iter().flat_map(tagged_phrases));
        self.set(lexicon);
        Ok(())
    }

    fn train_epoch(&mut self, _epoch: usize) -> Result<f64> {
        Ok(0.0)
    }

    fn predict_tags(&self, tokens: &[&str]) -> Result<Vec<(Tag, f64)>> {
        Ok(tags_from_spans(tokens, |t| lexicon_recognize(&self.tokenized, t)))
    }

    fn predict(&self, text: &str) -> Result<Vec<BiasSpan>> {
        Ok(lexicon_recognize(&self.lexicon, text))
    }

    fn checkpoint(&self) -> Result<Box<dyn RecognizerBackend>> {
        Ok(Box::new(self.clone()))
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(LEXICON_FILE);
        fs::write(&path, self.lexicon.to_file_string()).map_err(|e| Error::io(&path, e))
    }
}

fn load(manifest: &Manifest, dir: &Path) -> Result<LexiconRecognizer> {
    let path = dir.join(LEXICON_FILE);
    let content = fs::read_to_string(&path).map_err(|e| Error::Model(format!("{}: {e}", path.display())))?;
    let user: Vec<String> = option(&manifest.options, "phrases")?.unwrap_or_default();
    let mut out = LexiconRecognizer::new(Lexicon::new(user));
    out.set(Lexicon::parse(&content));
    Ok(out)
}

pub(crate) fn register(registry: &mut BackendRegistry) -> Result<()> {
    registry.register_recognizer(
        NAME,
        RecognizerFactory {
            create: Box::new(|options| {
                let phrases: Vec<String> = option(options, "phrases")?.unwrap_or_default();
                Ok(Box::new(LexiconRecognizer::new(Lexicon::new(phrases))))
            }),
            load: Box::new(|manifest, dir| Ok(Box::new(load(manifest, dir)?))),
            default_config: LexiconRecognizer::default_config(),
        },
    )
}
