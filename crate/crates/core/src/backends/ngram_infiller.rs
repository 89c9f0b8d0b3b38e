//! Bigram fill-in model: scores each vocabulary word `w` by
//! `P(w | left) * P(right | w)` with add-alpha smoothing, normalized over
//! the candidate vocabulary.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{option, BackendRegistry, InfillerFactory};
use crate::error::{Error, Result};
use crate::masking::{require_single_mask, InfillerBackend, DEFAULT_MASK_TOKEN};
use crate::model::{read_json, write_json, Manifest};
use crate::text::word_tokenize;

pub const NAME: &str = "ngram";
const MODEL_FILE: &str = "ngram.json";
const START: &str = "<s>";
const END: &str = "</s>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NgramOptions {
    pub alpha: f64,
    /// Words rarer than this are never proposed (they still count as context).
    pub min_count: u64,
}

impl Default for NgramOptions {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            min_count: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Counts {
    options: NgramOptions,
    words: Vec<String>,
    unigrams: Vec<u64>,
    /// `(left, right, count)` over word ids.
    bigrams: Vec<(u32, u32, u64)>,
}

#[derive(Debug, Clone)]
pub struct NgramInfiller {
    counts: Counts,
    ids: HashMap<String, u32>,
    bigrams: HashMap<(u32, u32), u64>,
    /// Sum of bigram counts with each word on the left.
    left_totals: Vec<u64>,
    candidates: Vec<u32>,
}

fn normalize(token: &str) -> String {
    token.to_lowercase()
}

impl NgramInfiller {
    pub fn train<S: AsRef<str>>(corpus: &[S], options: NgramOptions) -> Result<Self> {
        if !(options.alpha.is_finite() && options.alpha > 0.0) {
            return Err(Error::Config("ngram alpha must be positive".into()));
        }
        let mut ids: HashMap<String, u32> = HashMap::new();
        let mut words: Vec<String> = Vec::new();
        let mut unigrams: Vec<u64> = Vec::new();
        let mut bigrams: HashMap<(u32, u32), u64> = HashMap::new();
        let intern = |w: String, ids: &mut HashMap<String, u32>, words: &mut Vec<String>, unigrams: &mut Vec<u64>| {
            *ids.entry(w.clone()).or_insert_with(|| {
                words.push(w);
                unigrams.push(0);
                (words.len() - 1) as u32
            })
        };
        for marker in [START, END] {
            intern(marker.to_string(), &mut ids, &mut words, &mut unigrams);
        }
        for text in corpus {
            let mut prev = ids[START];
            let tokens = word_tokenize(text.as_ref());
            for token in tokens.iter().map(|t| normalize(&t.text)).chain(std::iter::once(END.to_string())) {
                let id = intern(token, &mut ids, &mut words, &mut unigrams);
                unigrams[id as usize] += 1;
                *bigrams.entry((prev, id)).or_default() += 1;
                prev = id;
            }
        }
        let mut triples: Vec<(u32, u32, u64)> = bigrams.into_iter().map(|((a, b), c)| (a, b, c)).collect();
        triples.sort_unstable();
        Ok(Self::from_counts(Counts {
            options,
            words,
            unigrams,
            bigrams: triples,
        }))
    }

    fn from_counts(counts: Counts) -> Self {
        let ids: HashMap<String, u32> = counts.words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        let mut left_totals = vec![0; counts.words.len()];
        let mut bigrams = HashMap::with_capacity(counts.bigrams.len());
        for &(a, b, c) in &counts.bigrams {
            left_totals[a as usize] += c;
            bigrams.insert((a, b), c);
        }
        let candidates = counts
            .words
            .iter()
            .enumerate()
            .filter(|(i, w)| {
                counts.unigrams[*i] >= counts.options.min_count
                    && w.as_str() != START
                    && w.as_str() != END
                    && w.chars().any(char::is_alphabetic)
            })
            .map(|(i, _)| i as u32)
            .collect();
        Self {
            counts,
            ids,
            bigrams,
            left_totals,
            candidates,
        }
    }

    pub fn vocabulary_size(&self) -> usize {
        self.candidates.len()
    }

    fn conditional(&self, left: Option<u32>, right: Option<u32>) -> f64 {
        let alpha = self.counts.options.alpha;
        let v = self.counts.words.len() as f64;
        let pair = match (left, right) {
            (Some(a), Some(b)) => self.bigrams.get(&(a, b)).copied().unwrap_or(0),
            _ => 0,
        };
        let total = left.map_or(0, |a| self.left_totals[a as usize]);
        (pair as f64 + alpha) / (total as f64 + alpha * v)
    }
}

impl InfillerBackend for NgramInfiller {
    fn backend_name(&self) -> &str {
        NAME
    }

    fn mask_token(&self) -> &str {
        DEFAULT_MASK_TOKEN
    }

    fn fill(&self, text: &str, k: usize) -> Result<Vec<(String, f64)>> {
        require_single_mask(text, DEFAULT_MASK_TOKEN)?;
        let at = text.find(DEFAULT_MASK_TOKEN).unwrap_or_default();
        let (before, after) = (&text[..at], &text[at + DEFAULT_MASK_TOKEN.len()..]);
        let left = word_tokenize(before).last().map_or(START.to_string(), |t| normalize(&t.text));
        let right = word_tokenize(after).first().map_or(END.to_string(), |t| normalize(&t.text));
        let (left, right) = (self.ids.get(&left).copied(), self.ids.get(&right).copied());

        let mut scored: Vec<(u32, f64)> = self
            .candidates
            .iter()
            .map(|&w| (w, self.conditional(left, Some(w)) * self.conditional(Some(w), right)))
            .collect();
        let total: f64 = scored.iter().map(|(_, s)| s).sum();
        if total <= 0.0 {
            return Ok(Vec::new());
        }
        scored.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.counts.words[a.0 as usize].cmp(&self.counts.words[b.0 as usize]))
        });
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(w, s)| (self.counts.words[w as usize].clone(), (s / total).clamp(f64::MIN_POSITIVE, 1.0)))
            .collect())
    }

    fn save(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(MODEL_FILE), &self.counts)
    }
}

fn options_from(value: &Value) -> Result<NgramOptions> {
    let mut options = NgramOptions::default();
    if let Some(a) = option(value, "alpha")? {
        options.alpha = a;
    }
    if let Some(m) = option(value, "min_count")? {
        options.min_count = m;
    }
    Ok(options)
}

pub(crate) fn register(registry: &mut BackendRegistry) -> Result<()> {
    registry.register_infiller(
        NAME,
        InfillerFactory {
            build: Box::new(|corpus, options| Ok(Box::new(NgramInfiller::train(corpus, options_from(options)?)?))),
            load: Box::new(|_: &Manifest, dir| {
                let counts: Counts = read_json(&dir.join(MODEL_FILE))?;
                Ok(Box::new(NgramInfiller::from_counts(counts)))
            }),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::validate_infiller;

    fn model() -> NgramInfiller {
        let corpus = [
            "the storm hit the coast",
            "the storm hit the town",
            "a flood hit the town",
            "the debate hit a nerve",
        ];
        NgramInfiller::train(&corpus, NgramOptions::default()).unwrap()
    }

    #[test]
    fn prefers_attested_context() {
        let out = model().fill("the [MASK] hit the coast", 3).unwrap();
        assert_eq!(out[0].0, "storm");
        assert!(out.windows(2).all(|w| w[0].1 >= w[1].1));
        let sum: f64 = model().fill("the [MASK] hit", 100).unwrap().iter().map(|(_, p)| p).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn k_larger_than_vocabulary_returns_everything() {
        let m = model();
        assert_eq!(m.fill("[MASK]", 10_000).unwrap().len(), m.vocabulary_size());
    }

    #[test]
    fn contract_holds() {
        let report = validate_infiller(&model());
        assert!(report.is_clean(), "{:?}", report.violations);
    }

    #[test]
    fn exact_probability() {
        // Independent computation for "the [MASK] hit" with alpha = 0.1.
        let m = model();
        let v = m.counts.words.len() as f64;
        let p = |pair: f64, total: f64| (pair + 0.1) / (total + 0.1 * v);
        // c(the, storm) = 2, c(the, .) = 6; c(storm, hit) = 2, c(storm, .) = 2
        let storm = p(2.0, 6.0) * p(2.0, 2.0);
        let total: f64 = m
            .candidates
            .iter()
            .map(|&w| {
                let the = m.ids["the"];
                let hit = m.ids["hit"];
                m.conditional(Some(the), Some(w)) * m.conditional(Some(w), Some(hit))
            })
            .sum();
        let out = m.fill("the [MASK] hit", 1).unwrap();
        assert_eq!(out[0].0, "storm");
        assert!((out[0].1 - storm / total).abs() < 1e-12);
    }
}
