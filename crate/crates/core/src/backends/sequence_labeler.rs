//! Per-token multinomial logistic regression over B/I/O with windowed
//! lexical features, trained with Adagrad.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{option, BackendRegistry, RecognizerFactory};
use crate::dataset::{Tag, TokenTagSequence};
use crate::detection::TrainingConfig;
use crate::error::{Error, Result};
use crate::model::{read_json, write_json, Manifest};
use crate::recognition::RecognizerBackend;

pub const NAME: &str = "logreg-tagger";
const MODEL_FILE: &str = "tagger.json";
const CLASSES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaggerOptions {
    /// Class weights are `(n / (3 * count_c)) ^ balance`; 0 disables.
    pub balance: f64,
}

impl Default for TaggerOptions {
    fn default() -> Self {
        Self { balance: 0.5 }
    }
}

fn shape(word: &str) -> &'static str {
    let mut chars = word.chars();
    let first = chars.next().unwrap_or(' ');
    if word.chars().all(|c| !c.is_alphanumeric()) {
        "punct"
    } else if word.chars().all(char::is_numeric) {
        "digit"
    } else if word.chars().all(char::is_uppercase) {
        "upper"
    } else if first.is_uppercase() {
        "title"
    } else if word.chars().all(char::is_lowercase) {
        "lower"
    } else {
        "mixed"
    }
}

/// Feature strings for token `i`.
pub fn features(tokens: &[String], i: usize) -> Vec<String> {
    let word = |j: isize| -> String {
        if j < 0 {
            "<s>".into()
        } else {
            tokens.get(j as usize).map_or_else(|| "</s>".into(), |t| t.to_lowercase())
        }
    };
    let i_signed = i as isize;
    let w = word(i_signed);
    let chars: Vec<char> = w.chars().collect();
    let suffix: String = chars[chars.len().saturating_sub(3)..].iter().collect();
    let prefix: String = chars[..chars.len().min(3)].iter().collect();
    let mut out = vec![
        "bias".to_string(),
        format!("w={w}"),
        format!("p1={}", word(i_signed - 1)),
        format!("n1={}", word(i_signed + 1)),
        format!("p2={}", word(i_signed - 2)),
        format!("n2={}", word(i_signed + 2)),
        format!("p1w={}|{w}", word(i_signed - 1)),
        format!("wn1={w}|{}", word(i_signed + 1)),
        format!("suf3={suffix}"),
        format!("pre3={prefix}"),
        format!("shape={}", shape(&tokens[i])),
    ];
    if w.contains('-') {
        out.push("hyphen".into());
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Model {
    options: TaggerOptions,
    features: Vec<String>,
    weights: Vec<[f64; CLASSES]>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Model {
    fn build_index(&mut self) {
        self.index = self.features.iter().enumerate().map(|(i, f)| (f.clone(), i)).collect();
    }

    fn active(&self, tokens: &[String], i: usize) -> Vec<usize> {
        features(tokens, i).iter().filter_map(|f| self.index.get(f).copied()).collect()
    }

    fn probs(&self, active: &[usize]) -> [f64; CLASSES] {
        let mut z = [0.0; CLASSES];
        for &f in active {
            for (c, zc) in z.iter_mut().enumerate() {
                *zc += self.weights[f][c];
            }
        }
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        [exp[0] / sum, exp[1] / sum, exp[2] / sum]
    }
}

#[derive(Debug)]
struct TrainState {
    /// (active features, gold class) per training token.
    tokens: Vec<(Vec<usize>, usize)>,
    class_weight: [f64; CLASSES],
    accum: Vec<[f64; CLASSES]>,
    config: TrainingConfig,
}

#[derive(Debug, Default)]
pub struct LogRegTagger {
    options: TaggerOptions,
    model: Option<Model>,
    state: Option<TrainState>,
}

impl LogRegTagger {
    pub fn new(options: TaggerOptions) -> Self {
        Self {
            options,
            ..Self::default()
        }
    }

    pub fn default_config() -> TrainingConfig {
        TrainingConfig {
            batch_size: 32,
            epochs: 10,
            num_labels: 3,
            learning_rate: 0.1,
            warmup_ratio: 0.0,
            weight_decay: 1e-5,
            ..TrainingConfig::default()
        }
    }

    fn model(&self) -> Result<&Model> {
        self.model
            .as_ref()
            .ok_or_else(|| Error::Model(format!("{NAME} recognizer has not been trained")))
    }
}

const TAGS: [Tag; CLASSES] = [Tag::Begin, Tag::Inside, Tag::Outside];

impl RecognizerBackend for LogRegTagger {
    fn backend_name(&self) -> &str {
        NAME
    }

    fn options(&self) -> Value {
        serde_json::to_value(&self.options).unwrap_or(Value::Null)
    }

    fn begin_training(&mut self, train: &[TokenTagSequence], config: &TrainingConfig) -> Result<()> {
        let mut feature_ids: BTreeMap<String, usize> = BTreeMap::new();
        for seq in train {
            for i in 0..seq.tokens.len() {
                for f in features(&seq.tokens, i) {
                    feature_ids.entry(f).or_default();
                }
            }
        }
        let mut model = Model {
            options: self.options.clone(),
            features: feature_ids.keys().cloned().collect(),
            weights: vec![[0.0; CLASSES]; feature_ids.len()],
            index: HashMap::new(),
        };
        model.build_index();

        let mut tokens = Vec::new();
        let mut counts = [0usize; CLASSES];
        for seq in train {
            for (i, tag) in seq.tags.iter().enumerate() {
                tokens.push((model.active(&seq.tokens, i), tag.index()));
                counts[tag.index()] += 1;
            }
        }
        let n = tokens.len() as f64;
        let class_weight = counts.map(|c| {
            if c == 0 {
                1.0
            } else {
                (n / (CLASSES as f64 * c as f64)).powf(self.options.balance)
            }
        });
        self.state = Some(TrainState {
            tokens,
            class_weight,
            accum: vec![[0.0; CLASSES]; model.features.len()],
            config: config.clone(),
        });
        self.model = Some(model);
        Ok(())
    }

    fn train_epoch(&mut self, epoch: usize) -> Result<f64> {
        let (Some(model), Some(state)) = (self.model.as_mut(), self.state.as_mut()) else {
            return Err(Error::Backend("train_epoch called before begin_training".into()));
        };
        let mut order: Vec<usize> = (0..state.tokens.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(state.config.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let lr = state.config.learning_rate;
        let decay = state.config.weight_decay;
        let mut loss = 0.0;
        for batch in order.chunks(state.config.batch_size) {
            let mut grad: HashMap<usize, [f64; CLASSES]> = HashMap::new();
            for &t in batch {
                let (active, gold) = &state.tokens[t];
                let p = model.probs(active);
                let w = state.class_weight[*gold];
                loss -= w * p[*gold].max(1e-12).ln();
                for &f in active {
                    let g = grad.entry(f).or_insert([0.0; CLASSES]);
                    for c in 0..CLASSES {
                        g[c] += w * (p[c] - if c == *gold { 1.0 } else { 0.0 });
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let mut touched: Vec<_> = grad.into_iter().collect();
            touched.sort_by_key(|(f, _)| *f);
            for (f, g) in touched {
                for c in 0..CLASSES {
                    let gc = g[c] * scale + decay * model.weights[f][c];
                    state.accum[f][c] += gc * gc;
                    model.weights[f][c] -= lr * gc / (state.accum[f][c].sqrt() + 1e-8);
                }
            }
        }
        Ok(loss / order.len().max(1) as f64)
    }

    fn predict_tags(&self, tokens: &[&str]) -> Result<Vec<(Tag, f64)>> {
        let model = self.model()?;
        let owned: Vec<String> = tokens.iter().map(|t| t.to_string()).collect();
        Ok((0..owned.len())
            .map(|i| {
                let p = model.probs(&model.active(&owned, i));
                let best = (0..CLASSES).fold(0, |b, c| if p[c] > p[b] { c } else { b });
                (TAGS[best], p[best])
            })
            .collect())
    }

    fn checkpoint(&self) -> Result<Box<dyn RecognizerBackend>> {
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

fn load(_manifest: &Manifest, dir: &Path) -> Result<LogRegTagger> {
    let mut model: Model = read_json(&dir.join(MODEL_FILE))?;
    if model.weights.len() != model.features.len() {
        return Err(Error::Model(format!("{}: inconsistent model dimensions", dir.display())));
    }
    model.build_index();
    Ok(LogRegTagger {
        options: model.options.clone(),
        model: Some(model),
        state: None,
    })
}

pub(crate) fn register(registry: &mut BackendRegistry) -> Result<()> {
    registry.register_recognizer(
        NAME,
        RecognizerFactory {
            create: Box::new(|options: &Value| {
                let mut opts = TaggerOptions::default();
                if let Some(b) = option(options, "balance")? {
                    opts.balance = b;
                }
                Ok(Box::new(LogRegTagger::new(opts)))
            }),
            load: Box::new(|manifest, dir| Ok(Box::new(load(manifest, dir)?))),
            default_config: LogRegTagger::default_config(),
        },
    )
}
