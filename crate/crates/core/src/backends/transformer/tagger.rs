//! Token classification over B/I/O. Each word is labelled through its
//! first subword; continuation subwords are ignored in the loss.

use std::path::Path;

use candle_core::{Tensor, D};
use candle_nn::{linear, Linear, Module, Optimizer, VarBuilder};
use candle_transformers::models::distilbert::Config;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{backend_err, resolve_base, Encoder, Schedule, TransformerOptions, TAGGER};
use crate::dataset::{Tag, TokenTagSequence};
use crate::detection::TrainingConfig;
use crate::error::{Error, Result};
use crate::model::Manifest;
use crate::recognition::RecognizerBackend;

const CLASSES: usize = Tag::ALL.len();

pub(crate) struct Head {
    classifier: Linear,
}

fn head(vb: VarBuilder, config: &Config) -> candle_core::Result<Head> {
    Ok(Head {
        classifier: linear(config.dim, CLASSES, vb.pp("classifier"))?,
    })
}

fn class(tag: Tag) -> u32 {
    Tag::ALL.iter().position(|t| *t == tag).expect("known tag") as u32
}

/// Subword ids and, per subword, the class of the word it starts.
struct Row {
    ids: Vec<u32>,
    targets: Vec<Option<u32>>,
}

struct Training {
    rows: Vec<Row>,
    config: TrainingConfig,
    optimizer: candle_nn::AdamW,
    schedule: Schedule,
}

pub struct DistilBertTagger {
    options: TransformerOptions,
    max_len: usize,
    encoder: Option<Encoder<Head>>,
    training: Option<Training>,
}

/// Index of the first subword of each word, if it survived truncation.
fn first_subwords(word_ids: &[Option<usize>], words: usize) -> Vec<Option<usize>> {
    let mut first = vec![None; words];
    for (i, w) in word_ids.iter().enumerate() {
        if let Some(w) = *w {
            if w < words && first[w].is_none() {
                first[w] = Some(i);
            }
        }
    }
    first
}

impl DistilBertTagger {
    pub fn new(options: TransformerOptions) -> Self {
        Self {
            options,
            max_len: 512,
            encoder: None,
            training: None,
        }
    }

    pub fn load(manifest: &Manifest, dir: &Path) -> Result<Self> {
        Ok(Self {
            options: serde_json::from_value(manifest.options.clone()).unwrap_or_default(),
            max_len: manifest.config.max_sequence_length,
            encoder: Some(Encoder::load(dir, head, true, manifest.config.seed)?),
            training: None,
        })
    }

    fn encoder(&self) -> Result<&Encoder<Head>> {
        self.encoder
            .as_ref()
            .ok_or_else(|| Error::Backend(format!("{TAGGER} recognizer is not trained")))
    }

    /// Logits `(b, t, 3)`.
    fn logits(encoder: &Encoder<Head>, rows: &[Vec<u32>]) -> Result<Tensor> {
        let (ids, mask) = encoder.batch(rows)?;
        let hidden = encoder.hidden(&ids, &mask)?;
        encoder.head.classifier.forward(&hidden).map_err(backend_err)
    }
}

impl RecognizerBackend for DistilBertTagger {
    fn backend_name(&self) -> &str {
        TAGGER
    }

    fn options(&self) -> serde_json::Value {
        self.options.to_value()
    }

    fn begin_training(&mut self, train: &[TokenTagSequence], config: &TrainingConfig) -> Result<()> {
        let base = resolve_base(&self.options.base)?;
        let encoder = Encoder::load(&base, head, false, config.seed)?;
        self.max_len = config.max_sequence_length;
        let mut rows = Vec::with_capacity(train.len());
        for seq in train {
            let words: Vec<&str> = seq.tokens.iter().map(String::as_str).collect();
            let (ids, word_ids) = encoder.encode_words(&words, self.max_len)?;
            let mut targets = vec![None; ids.len()];
            for (w, first) in first_subwords(&word_ids, words.len()).into_iter().enumerate() {
                if let Some(i) = first {
                    targets[i] = Some(class(seq.tags[w]));
                }
            }
            rows.push(Row { ids, targets });
        }
        let batches = rows.len().div_ceil(config.batch_size);
        self.training = Some(Training {
            rows,
            config: config.clone(),
            optimizer: encoder.optimizer(config)?,
            schedule: Schedule::new(config, batches),
        });
        self.encoder = Some(encoder);
        Ok(())
    }

    fn train_epoch(&mut self, epoch: usize) -> Result<f64> {
        let (Some(encoder), Some(state)) = (self.encoder.as_ref(), self.training.as_mut()) else {
            return Err(Error::Backend("train_epoch called before begin_training".into()));
        };
        let mut order: Vec<usize> = (0..state.rows.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(state.config.seed.wrapping_add(epoch as u64)));
        let (mut total, mut batches) = (0.0, 0);
        for batch in order.chunks(state.config.batch_size) {
            let rows: Vec<Vec<u32>> = batch.iter().map(|&i| state.rows[i].ids.clone()).collect();
            let width = rows.iter().map(Vec::len).max().unwrap_or(1);
            let (mut positions, mut targets) = (Vec::new(), Vec::new());
            for (b, &i) in batch.iter().enumerate() {
                for (t, target) in state.rows[i].targets.iter().enumerate() {
                    if let Some(c) = target {
                        positions.push((b * width + t) as u32);
                        targets.push(*c);
                    }
                }
            }
            if positions.is_empty() {
                continue;
            }
            let logits = Self::logits(encoder, &rows)?;
            let positions = Tensor::new(positions.as_slice(), &encoder.device).map_err(backend_err)?;
            let targets = Tensor::new(targets.as_slice(), &encoder.device).map_err(backend_err)?;
            let loss = logits
                .reshape(((), CLASSES))
                .and_then(|l| l.index_select(&positions, 0))
                .and_then(|l| candle_nn::loss::cross_entropy(&l, &targets))
                .map_err(backend_err)?;
            state.schedule.advance(&mut state.optimizer);
            state.optimizer.backward_step(&loss).map_err(backend_err)?;
            total += loss.to_scalar::<f32>().map_err(backend_err)? as f64;
            batches += 1;
        }
        Ok(total / batches.max(1) as f64)
    }

    fn predict_tags(&self, tokens: &[&str]) -> Result<Vec<(Tag, f64)>> {
        if tokens.is_empty() {
            return Ok(Vec::new());
        }
        let encoder = self.encoder()?;
        let (ids, word_ids) = encoder.encode_words(tokens, self.max_len)?;
        let probs = candle_nn::ops::softmax(&Self::logits(encoder, &[ids])?, D::Minus1)
            .and_then(|p| p.squeeze(0))
            .and_then(|p| p.to_vec2::<f32>())
            .map_err(backend_err)?;
        // Words cut off by truncation are outside any span.
        Ok(first_subwords(&word_ids, tokens.len())
            .into_iter()
            .map(|first| match first {
                Some(i) => {
                    let row = &probs[i];
                    let best = (0..CLASSES).max_by(|&a, &b| row[a].total_cmp(&row[b])).expect("classes");
                    (Tag::ALL[best], f64::from(row[best]))
                }
                None => (Tag::Outside, 1.0),
            })
            .collect())
    }

    fn checkpoint(&self) -> Result<Box<dyn RecognizerBackend>> {
        Ok(Box::new(Self {
            options: self.options.clone(),
            max_len: self.max_len,
            encoder: Some(self.encoder()?.duplicate()?),
            training: None,
        }))
    }

    fn save(&self, dir: &Path) -> Result<()> {
        self.encoder()?.save(dir)
    }
}
