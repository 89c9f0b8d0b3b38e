//! Sequence classification: `[CLS]` state → dense + ReLU → two logits.

use std::path::Path;

use candle_core::{Tensor, D};
use candle_nn::{linear, Linear, Module, Optimizer, VarBuilder};
use candle_transformers::models::distilbert::Config;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{backend_err, resolve_base, Encoder, Schedule, TransformerOptions, DETECTOR};
use crate::dataset::Label;
use crate::detection::{DetectorBackend, TrainingConfig};
use crate::error::{Error, Result};
use crate::model::Manifest;

pub(crate) struct Head {
    pre_classifier: Linear,
    classifier: Linear,
}

fn head(vb: VarBuilder, config: &Config) -> candle_core::Result<Head> {
    Ok(Head {
        pre_classifier: linear(config.dim, config.dim, vb.pp("pre_classifier"))?,
        classifier: linear(config.dim, 2, vb.pp("classifier"))?,
    })
}

struct Training {
    rows: Vec<Vec<u32>>,
    labels: Vec<u32>,
    config: TrainingConfig,
    optimizer: candle_nn::AdamW,
    schedule: Schedule,
}

pub struct DistilBertDetector {
    options: TransformerOptions,
    max_len: usize,
    encoder: Option<Encoder<Head>>,
    training: Option<Training>,
}

impl DistilBertDetector {
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
            .ok_or_else(|| Error::Backend(format!("{DETECTOR} detector is not trained")))
    }

    fn logits(encoder: &Encoder<Head>, rows: &[Vec<u32>]) -> Result<Tensor> {
        let (ids, mask) = encoder.batch(rows)?;
        let hidden = encoder.hidden(&ids, &mask)?;
        let cls = hidden.narrow(1, 0, 1).and_then(|t| t.squeeze(1)).map_err(backend_err)?;
        let x = encoder.head.pre_classifier.forward(&cls).and_then(|t| t.relu()).map_err(backend_err)?;
        encoder.head.classifier.forward(&x).map_err(backend_err)
    }
}

impl DetectorBackend for DistilBertDetector {
    fn backend_name(&self) -> &str {
        DETECTOR
    }

    fn options(&self) -> serde_json::Value {
        self.options.to_value()
    }

    fn begin_training(&mut self, examples: &[(&str, Label)], config: &TrainingConfig) -> Result<()> {
        let base = resolve_base(&self.options.base)?;
        let encoder = Encoder::load(&base, head, false, config.seed)?;
        self.max_len = config.max_sequence_length;
        let rows = examples
            .iter()
            .map(|(text, _)| encoder.encode_text(text, self.max_len))
            .collect::<Result<Vec<_>>>()?;
        let labels = examples.iter().map(|(_, l)| u32::from(l.is_biased())).collect();
        let batches = rows.len().div_ceil(config.batch_size);
        self.training = Some(Training {
            rows,
            labels,
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
            let rows: Vec<Vec<u32>> = batch.iter().map(|&i| state.rows[i].clone()).collect();
            let labels: Vec<u32> = batch.iter().map(|&i| state.labels[i]).collect();
            let targets = Tensor::new(labels.as_slice(), &encoder.device).map_err(backend_err)?;
            let logits = Self::logits(encoder, &rows)?;
            let loss = candle_nn::loss::cross_entropy(&logits, &targets).map_err(backend_err)?;
            state.schedule.advance(&mut state.optimizer);
            state.optimizer.backward_step(&loss).map_err(backend_err)?;
            total += loss.to_scalar::<f32>().map_err(backend_err)? as f64;
            batches += 1;
        }
        Ok(total / batches.max(1) as f64)
    }

    fn predict_proba(&self, texts: &[&str]) -> Result<Vec<f64>> {
        let encoder = self.encoder()?;
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(32) {
            let rows = chunk
                .iter()
                .map(|t| encoder.encode_text(t, self.max_len))
                .collect::<Result<Vec<_>>>()?;
            let probs = candle_nn::ops::softmax(&Self::logits(encoder, &rows)?, D::Minus1)
                .and_then(|p| p.narrow(1, 1, 1))
                .and_then(|p| p.flatten_all())
                .and_then(|p| p.to_vec1::<f32>())
                .map_err(backend_err)?;
            out.extend(probs.into_iter().map(f64::from));
        }
        Ok(out)
    }

    fn sequence_length(&self, text: &str) -> usize {
        match self.encoder() {
            Ok(e) => e.tokenizer.encode(text, true).map(|enc| enc.len()).unwrap_or(0),
            Err(_) => text.split_whitespace().count(),
        }
    }

    fn checkpoint(&self) -> Result<Box<dyn DetectorBackend>> {
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
