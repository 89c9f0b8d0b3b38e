//! TF-IDF features with a logistic-regression head.
//!
//! Term extraction follows the common scikit-learn defaults: lowercase runs
//! of two or more word characters, smoothed idf and L2-normalized rows.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{option, BackendRegistry, DetectorFactory};
use crate::dataset::Label;
use crate::detection::{DetectorBackend, TrainingConfig};
use crate::error::{Error, Result};
use crate::model::{read_json, write_json, Manifest};
use crate::text::is_word_char;

pub const NAME: &str = "tfidf-logreg";
const MODEL_FILE: &str = "tfidf_logreg.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TfidfOptions {
    /// Largest word n-gram used as a feature.
    pub ngram_max: usize,
    /// Terms seen in fewer training documents are dropped.
    pub min_df: usize,
    /// Use `1 + ln(tf)` instead of raw counts.
    pub sublinear_tf: bool,
}

impl Default for TfidfOptions {
    fn default() -> Self {
        Self {
            ngram_max: 1,
            min_df: 1,
            sublinear_tf: false,
        }
    }
}

impl TfidfOptions {
    fn from_value(options: &Value) -> Result<Self> {
        let mut out = Self::default();
        if let Some(n) = option(options, "ngram_max")? {
            out.ngram_max = n;
        }
        if let Some(n) = option(options, "min_df")? {
            out.min_df = n;
        }
        if let Some(b) = option(options, "sublinear_tf")? {
            out.sublinear_tf = b;
        }
        if out.ngram_max == 0 || out.min_df == 0 {
            return Err(Error::Config("ngram_max and min_df must be at least 1".into()));
        }
        Ok(out)
    }
}

/// Lowercased runs of at least two word characters.
pub fn terms(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut len = 0;
    for c in text.chars() {
        if is_word_char(c) {
            current.extend(c.to_lowercase());
            len += 1;
        } else {
            if len >= 2 {
                out.push(std::mem::take(&mut current));
            }
            current.clear();
            len = 0;
        }
    }
    if len >= 2 {
        out.push(current);
    }
    out
}

type SparseRow = Vec<(u32, f64)>;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Vectorizer {
    options: TfidfOptions,
    max_tokens: usize,
    terms: Vec<String>,
    idf: Vec<f64>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vectorizer {
    fn fit(docs: &[&str], options: TfidfOptions, max_tokens: usize) -> Self {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for doc in docs {
            let mut seen: Vec<String> = Self::analyze(doc, &options, max_tokens);
            seen.sort();
            seen.dedup();
            for term in seen {
                *df.entry(term).or_default() += 1;
            }
        }
        let n = docs.len() as f64;
        let (terms, idf): (Vec<String>, Vec<f64>) = df
            .into_iter()
            .filter(|(_, count)| *count >= options.min_df)
            .map(|(term, count)| (term, ((1.0 + n) / (1.0 + count as f64)).ln() + 1.0))
            .unzip();
        let mut vectorizer = Self {
            options,
            max_tokens,
            terms,
            idf,
            index: HashMap::new(),
        };
        vectorizer.build_index();
        vectorizer
    }

    fn build_index(&mut self) {
        self.index = self.terms.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
    }

    fn analyze(text: &str, options: &TfidfOptions, max_tokens: usize) -> Vec<String> {
        let mut words = terms(text);
        words.truncate(max_tokens);
        let mut out = Vec::with_capacity(words.len() * options.ngram_max);
        for n in 1..=options.ngram_max {
            for window in words.windows(n) {
                out.push(window.join(" "));
            }
        }
        out
    }

    fn transform(&self, text: &str) -> SparseRow {
        let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
        for term in Self::analyze(text, &self.options, self.max_tokens) {
            if let Some(&i) = self.index.get(&term) {
                *counts.entry(i).or_default() += 1.0;
            }
        }
        let mut row: SparseRow = counts
            .into_iter()
            .map(|(i, tf)| {
                let tf = if self.options.sublinear_tf { 1.0 + tf.ln() } else { tf };
                (i, tf * self.idf[i as usize])
            })
            .collect();
        let norm = row.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|(_, v)| *v /= norm);
        }
        row
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Model {
    vectorizer: Vectorizer,
    weights: Vec<f64>,
    bias: f64,
}

impl Model {
    fn logit(&self, row: &SparseRow) -> f64 {
        self.bias + row.iter().map(|&(i, v)| self.weights[i as usize] * v).sum::<f64>()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Adam state plus the featurized training set.
#[derive(Debug)]
struct TrainState {
    rows: Vec<SparseRow>,
    targets: Vec<f64>,
    config: TrainingConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
    total_steps: usize,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl TrainState {
    /// Linear warm-up, then linear decay to zero.
    fn learning_rate(&self) -> f64 {
        let lr = self.config.learning_rate;
        let warmup = (self.config.warmup_ratio * self.total_steps as f64).round() as usize;
        let step = self.step + 1;
        if step <= warmup {
            return lr * step as f64 / warmup as f64;
        }
        let remaining = self.total_steps.saturating_sub(warmup).max(1);
        lr * (1.0 - (step - warmup - 1) as f64 / remaining as f64)
    }

    /// One Adam step on a minibatch; index `dim` holds the bias.
    fn update(&mut self, model: &mut Model, batch: &[usize]) -> f64 {
        let dim = model.weights.len();
        let mut grad = vec![0.0; dim + 1];
        let mut loss = 0.0;
        for &j in batch {
            let row = &self.rows[j];
            let p = sigmoid(model.logit(row));
            let y = self.targets[j];
            loss -= y * p.max(1e-12).ln() + (1.0 - y) * (1.0 - p).max(1e-12).ln();
            let err = p - y;
            for &(i, v) in row {
                grad[i as usize] += err * v;
            }
            grad[dim] += err;
        }
        let scale = 1.0 / batch.len() as f64;
        let lr = self.learning_rate();
        self.step += 1;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
        for (i, g) in grad.iter().enumerate() {
            let param = if i < dim { model.weights[i] } else { model.bias };
            let decay = if i < dim { self.config.weight_decay * param } else { 0.0 };
            let g = g * scale + decay;
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let delta = lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + EPS);
            if i < dim {
                model.weights[i] -= delta;
            } else {
                model.bias -= delta;
            }
        }
        loss
    }
}

#[derive(Debug, Default)]
pub struct TfidfLogReg {
    options: TfidfOptions,
    model: Option<Model>,
    state: Option<TrainState>,
}

impl TfidfLogReg {
    pub fn new(options: TfidfOptions) -> Self {
        Self {
            options,
            model: None,
            state: None,
        }
    }

    fn model(&self) -> Result<&Model> {
        self.model
            .as_ref()
            .ok_or_else(|| Error::Model(format!("{NAME} detector has not been trained")))
    }

    /// Default hyper-parameters for this backend.
    pub fn default_config() -> TrainingConfig {
        TrainingConfig {
            batch_size: 16,
            epochs: 10,
            learning_rate: 0.05,
            warmup_ratio: 0.0,
            weight_decay: 1e-4,
            ..TrainingConfig::default()
        }
    }
}

impl DetectorBackend for TfidfLogReg {
    fn backend_name(&self) -> &str {
        NAME
    }

    fn options(&self) -> Value {
        serde_json::to_value(&self.options).unwrap_or(Value::Null)
    }

    fn begin_training(&mut self, examples: &[(&str, Label)], config: &TrainingConfig) -> Result<()> {
        let biased = examples.iter().filter(|(_, l)| l.is_biased()).count();
        if biased == 0 || biased == examples.len() {
            return Err(Error::InvalidInput("logistic regression needs examples of both classes".into()));
        }
        let docs: Vec<&str> = examples.iter().map(|(t, _)| *t).collect();
        let vectorizer = Vectorizer::fit(&docs, self.options.clone(), config.max_sequence_length);
        let dim = vectorizer.terms.len();
        let rows = docs.iter().map(|d| vectorizer.transform(d)).collect();
        let targets = examples.iter().map(|(_, l)| if l.is_biased() { 1.0 } else { 0.0 }).collect();
        let steps_per_epoch = examples.len().div_ceil(config.batch_size);
        self.model = Some(Model {
            vectorizer,
            weights: vec![0.0; dim],
            bias: 0.0,
        });
        self.state = Some(TrainState {
            rows,
            targets,
            config: config.clone(),
            m: vec![0.0; dim + 1],
            v: vec![0.0; dim + 1],
            step: 0,
            total_steps: steps_per_epoch * config.epochs,
        });
        Ok(())
    }

    fn train_epoch(&mut self, epoch: usize) -> Result<f64> {
        let (Some(model), Some(state)) = (self.model.as_mut(), self.state.as_mut()) else {
            return Err(Error::Backend("train_epoch called before begin_training".into()));
        };
        let mut order: Vec<usize> = (0..state.rows.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(state.config.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let mut loss = 0.0;
        for batch in order.chunks(state.config.batch_size) {
            loss += state.update(model, batch);
        }
        Ok(loss / order.len() as f64)
    }

    fn predict_proba(&self, texts: &[&str]) -> Result<Vec<f64>> {
        let model = self.model()?;
        Ok(texts
            .iter()
            .map(|t| sigmoid(model.logit(&model.vectorizer.transform(t))))
            .collect())
    }

    fn sequence_length(&self, text: &str) -> usize {
        terms(text).len()
    }

    fn checkpoint(&self) -> Result<Box<dyn DetectorBackend>> {
        Ok(Box::new(Self {
            options: self.options.clone(),
            model: Some(self.model()?.clone()),
            state: None,
        }))
    }

    fn save(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(MODEL_FILE), self.model()?)
    }
}

fn load(_manifest: &Manifest, dir: &Path) -> Result<TfidfLogReg> {
    let mut model: Model = read_json(&dir.join(MODEL_FILE))?;
    if model.weights.len() != model.vectorizer.terms.len() || model.vectorizer.idf.len() != model.vectorizer.terms.len() {
        return Err(Error::Model(format!("{}: inconsistent model dimensions", dir.display())));
    }
    model.vectorizer.build_index();
    Ok(TfidfLogReg {
        options: model.vectorizer.options.clone(),
        model: Some(model),
        state: None,
    })
}

pub(crate) fn register(registry: &mut BackendRegistry) -> Result<()> {
    registry.register_detector(
        NAME,
        DetectorFactory {
            create: Box::new(|options| Ok(Box::new(TfidfLogReg::new(TfidfOptions::from_value(options)?)))),
            load: Box::new(|manifest, dir| Ok(Box::new(load(manifest, dir)?))),
            default_config: TfidfLogReg::default_config(),
        },
    )
}
