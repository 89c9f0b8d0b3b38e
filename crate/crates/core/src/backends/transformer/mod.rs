//! Pretrained DistilBERT backends on candle (CPU).
//!
//! Weights are never downloaded. A `base` option names either a directory
//! or a subdirectory of `$DEBIAS_WEIGHTS_DIR` holding the usual Hugging Face
//! export: `config.json`, `tokenizer.json` and `model.safetensors`.
//! Fine-tuned models are saved in the same layout inside the model directory.

mod detector;
mod mlm;
mod tagger;

use std::collections::HashMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW, VarBuilder, VarMap};
use candle_transformers::models::distilbert::{Config, DistilBertModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokenizers::Tokenizer;

use super::{option, BackendRegistry, DetectorFactory, InfillerFactory, RecognizerFactory};
use crate::detection::TrainingConfig;
use crate::error::{Error, Result};

pub use detector::DistilBertDetector;
pub use mlm::MlmInfiller;
pub use tagger::DistilBertTagger;

pub const DETECTOR: &str = "distilbert";
pub const TAGGER: &str = "distilbert-tagger";
pub const MLM: &str = "mlm";

pub const WEIGHTS_ENV: &str = "DEBIAS_WEIGHTS_DIR";
const CONFIG_FILE: &str = "config.json";
const TOKENIZER_FILE: &str = "tokenizer.json";
const WEIGHTS_FILE: &str = "model.safetensors";
const ENCODER_PREFIX: &str = "distilbert";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformerOptions {
    /// Directory, or name under `$DEBIAS_WEIGHTS_DIR`, of the pretrained model.
    pub base: String,
}

impl Default for TransformerOptions {
    fn default() -> Self {
        Self {
            base: "distilbert-base-uncased".into(),
        }
    }
}

impl TransformerOptions {
    fn from_value(options: &Value) -> Result<Self> {
        let mut out = Self::default();
        if let Some(base) = option(options, "base")? {
            out.base = base;
        }
        Ok(out)
    }

    fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("options serialize")
    }
}

pub(crate) fn backend_err(e: impl Display) -> Error {
    Error::Backend(e.to_string())
}

/// Locates the pretrained export for `base`.
pub fn resolve_base(base: &str) -> Result<PathBuf> {
    let direct = PathBuf::from(base);
    let dir = if direct.is_dir() {
        direct
    } else {
        match std::env::var_os(WEIGHTS_ENV) {
            Some(root) => PathBuf::from(root).join(base),
            None => {
                return Err(Error::Model(format!(
                    "pretrained model `{base}` not found; set {WEIGHTS_ENV} to a directory containing it"
                )))
            }
        }
    };
    for file in [CONFIG_FILE, TOKENIZER_FILE, WEIGHTS_FILE] {
        if !dir.join(file).is_file() {
            return Err(Error::Model(format!("{}: missing {file}", dir.display())));
        }
    }
    Ok(dir)
}

fn read_config(dir: &Path) -> Result<String> {
    let path = dir.join(CONFIG_FILE);
    std::fs::read_to_string(&path).map_err(|e| Error::io(path, e))
}

fn load_config(dir: &Path) -> Result<Config> {
    let raw = read_config(dir)?;
    serde_json::from_str(&raw).map_err(|e| Error::Model(format!("{}: {e}", dir.join(CONFIG_FILE).display())))
}

fn load_tokenizer(dir: &Path) -> Result<Tokenizer> {
    Tokenizer::from_file(dir.join(TOKENIZER_FILE))
        .map_err(|e| Error::Model(format!("{}: {e}", dir.join(TOKENIZER_FILE).display())))
}

/// Builds a head on top of the encoder output.
pub(crate) type HeadBuilder<H> = fn(VarBuilder, &Config) -> candle_core::Result<H>;

/// DistilBERT encoder plus a task head, all parameters in one [`VarMap`].
pub(crate) struct Encoder<H> {
    pub tokenizer: Tokenizer,
    pub config: Config,
    raw_config: String,
    varmap: VarMap,
    pub model: DistilBertModel,
    pub head: H,
    build_head: HeadBuilder<H>,
    pub device: Device,
}

impl<H> Encoder<H> {
    /// Encoder weights from `dir`; head weights from `dir` when present,
    /// freshly initialized otherwise (unless `require_head`).
    pub fn load(dir: &Path, build_head: HeadBuilder<H>, require_head: bool, seed: u64) -> Result<Self> {
        let device = Device::Cpu;
        let config = load_config(dir)?;
        let raw_config = read_config(dir)?;
        let tokenizer = load_tokenizer(dir)?;
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, DType::F32, &device);
        let model = DistilBertModel::load(vb.pp(ENCODER_PREFIX), &config).map_err(backend_err)?;
        let head = build_head(vb, &config).map_err(backend_err)?;

        let weights = dir.join(WEIGHTS_FILE);
        let tensors = candle_core::safetensors::load(&weights, &device)
            .map_err(|e| Error::Model(format!("{}: {e}", weights.display())))?;
        assign(&varmap, &tensors, require_head, seed).map_err(|e| Error::Model(format!("{}: {e}", weights.display())))?;
        Ok(Self {
            tokenizer,
            config,
            raw_config,
            varmap,
            model,
            head,
            build_head,
            device,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let config = dir.join(CONFIG_FILE);
        std::fs::write(&config, &self.raw_config).map_err(|e| Error::io(config, e))?;
        self.tokenizer
            .save(dir.join(TOKENIZER_FILE), false)
            .map_err(|e| Error::Model(e.to_string()))?;
        self.varmap.save(dir.join(WEIGHTS_FILE)).map_err(backend_err)
    }

    /// Deep copy of every parameter.
    pub fn duplicate(&self) -> Result<Self> {
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, DType::F32, &self.device);
        let model = DistilBertModel::load(vb.pp(ENCODER_PREFIX), &self.config).map_err(backend_err)?;
        let head = (self.build_head)(vb, &self.config).map_err(backend_err)?;
        let tensors: HashMap<String, Tensor> = self
            .varmap
            .data()
            .lock()
            .expect("varmap lock")
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect();
        assign(&varmap, &tensors, true, 0).map_err(backend_err)?;
        Ok(Self {
            tokenizer: self.tokenizer.clone(),
            config: self.config.clone(),
            raw_config: self.raw_config.clone(),
            varmap,
            model,
            head,
            build_head: self.build_head,
            device: self.device.clone(),
        })
    }

    pub fn optimizer(&self, config: &TrainingConfig) -> Result<AdamW> {
        let params = ParamsAdamW {
            lr: config.learning_rate,
            weight_decay: config.weight_decay,
            ..ParamsAdamW::default()
        };
        AdamW::new(self.varmap.all_vars(), params).map_err(backend_err)
    }

    /// Token ids of `text` with special tokens, cut to `max_len` while
    /// keeping the closing separator.
    pub fn encode_text(&self, text: &str, max_len: usize) -> Result<Vec<u32>> {
        let encoding = self.tokenizer.encode(text, true).map_err(backend_err)?;
        Ok(truncate(encoding.get_ids(), max_len))
    }

    /// Ids plus the word index of each subword for pre-split words.
    pub fn encode_words(&self, words: &[&str], max_len: usize) -> Result<(Vec<u32>, Vec<Option<usize>>)> {
        let encoding = self.tokenizer.encode(words.to_vec(), true).map_err(backend_err)?;
        let ids = truncate(encoding.get_ids(), max_len);
        let mut word_ids: Vec<Option<usize>> =
            encoding.get_word_ids().iter().map(|w| w.map(|w| w as usize)).take(ids.len()).collect();
        if ids.len() < encoding.get_ids().len() {
            *word_ids.last_mut().expect("non-empty") = None;
        }
        Ok((ids, word_ids))
    }

    /// Padded batch: ids `(b, t)` and the padding mask `(b, 1, 1, t)`.
    pub fn batch(&self, rows: &[Vec<u32>]) -> Result<(Tensor, Tensor)> {
        let width = rows.iter().map(Vec::len).max().unwrap_or(1).max(1);
        let pad = self.config.pad_token_id as u32;
        let mut ids = Vec::with_capacity(rows.len() * width);
        let mut mask = Vec::with_capacity(rows.len() * width);
        for row in rows {
            ids.extend(row.iter().copied().chain(std::iter::repeat(pad)).take(width));
            mask.extend((0..width).map(|i| u8::from(i >= row.len())));
        }
        let ids = Tensor::from_vec(ids, (rows.len(), width), &self.device).map_err(backend_err)?;
        let mask = Tensor::from_vec(mask, (rows.len(), 1, 1, width), &self.device).map_err(backend_err)?;
        Ok((ids, mask))
    }

    /// Encoder output `(b, t, dim)`.
    pub fn hidden(&self, ids: &Tensor, mask: &Tensor) -> Result<Tensor> {
        self.model.forward(ids, mask).map_err(backend_err)
    }
}

fn truncate(ids: &[u32], max_len: usize) -> Vec<u32> {
    if ids.len() <= max_len || max_len < 2 {
        return ids.to_vec();
    }
    let mut out = ids[..max_len - 1].to_vec();
    out.push(*ids.last().expect("non-empty"));
    out
}

/// Copies checkpoint tensors into the variables. Encoder weights are
/// looked up with and without the `distilbert.` prefix. Head parameters
/// absent from the checkpoint get seeded init: zero biases, weights
/// uniform with standard deviation 0.02.
fn assign(varmap: &VarMap, tensors: &HashMap<String, Tensor>, require_all: bool, seed: u64) -> candle_core::Result<()> {
    let vars = varmap.data().lock().expect("varmap lock");
    let mut names: Vec<&String> = vars.keys().collect();
    names.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for name in names {
        let var = &vars[name];
        let bare = name.strip_prefix("distilbert.");
        let found = tensors.get(name).or_else(|| bare.and_then(|b| tensors.get(b)));
        match found {
            Some(t) => set(var, t)?,
            None if bare.is_some() || require_all => candle_core::bail!("missing tensor `{name}`"),
            None => {
                log::info!("initializing `{name}`");
                let n = var.elem_count();
                let values: Vec<f32> = if name.ends_with("bias") {
                    vec![0.0; n]
                } else {
                    let bound = 0.02 * 3f32.sqrt();
                    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                };
                var.set(&Tensor::from_vec(values, var.shape(), var.device())?)?;
            }
        }
    }
    Ok(())
}

fn set(var: &Var, tensor: &Tensor) -> candle_core::Result<()> {
    var.set(&tensor.to_dtype(DType::F32)?)
}

/// Linear warm-up then linear decay to zero.
pub(crate) struct Schedule {
    pub base_lr: f64,
    pub warmup: usize,
    pub total: usize,
    pub step: usize,
}

impl Schedule {
    pub fn new(config: &TrainingConfig, batches_per_epoch: usize) -> Self {
        let total = (batches_per_epoch * config.epochs).max(1);
        Self {
            base_lr: config.learning_rate,
            warmup: (config.warmup_ratio * total as f64).round() as usize,
            total,
            step: 0,
        }
    }

    pub fn advance(&mut self, optimizer: &mut AdamW) {
        let s = self.step as f64;
        let lr = if self.step < self.warmup {
            self.base_lr * (s + 1.0) / self.warmup as f64
        } else {
            self.base_lr * ((self.total - self.step.min(self.total)) as f64 / (self.total - self.warmup).max(1) as f64)
        };
        optimizer.set_learning_rate(lr);
        self.step += 1;
    }
}

fn default_config(batch_size: usize) -> TrainingConfig {
    TrainingConfig {
        batch_size,
        epochs: 10,
        max_sequence_length: 512,
        learning_rate: 5e-5,
        warmup_ratio: 0.1,
        weight_decay: 0.01,
        ..TrainingConfig::default()
    }
}

pub(crate) fn register(registry: &mut BackendRegistry) -> Result<()> {
    registry.register_detector(
        DETECTOR,
        DetectorFactory {
            create: Box::new(|options| Ok(Box::new(DistilBertDetector::new(TransformerOptions::from_value(options)?)))),
            load: Box::new(|manifest, dir| Ok(Box::new(DistilBertDetector::load(manifest, dir)?))),
            default_config: default_config(16),
        },
    )?;
    registry.register_recognizer(
        TAGGER,
        RecognizerFactory {
            create: Box::new(|options| Ok(Box::new(DistilBertTagger::new(TransformerOptions::from_value(options)?)))),
            load: Box::new(|manifest, dir| Ok(Box::new(DistilBertTagger::load(manifest, dir)?))),
            default_config: TrainingConfig {
                num_labels: 3,
                ..default_config(16)
            },
        },
    )?;
    registry.register_infiller(
        MLM,
        InfillerFactory {
            build: Box::new(|_corpus, options| Ok(Box::new(MlmInfiller::new(TransformerOptions::from_value(options)?)?))),
            load: Box::new(|manifest, _dir| {
                Ok(Box::new(MlmInfiller::new(TransformerOptions::from_value(&manifest.options)?)?))
            }),
        },
    )
}
