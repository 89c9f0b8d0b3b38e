//! Classification and token-level recognition metrics.
//!
//! Undefined ratios (zero denominators) are `None` and serialize as `null`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{fingerprint, to_token_tags, AnnotatedExample, Label, Span};
use crate::detection::Detector;
use crate::error::{Error, Result};
use crate::recognition::Recognizer;
use crate::text::{CharOffsets, Tokenize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CoreMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    /// Positive class is `true`.
    pub fn from_bools(gold: &[bool], predicted: &[bool]) -> Self {
        let mut c = Self::default();
        for (&g, &p) in gold.iter().zip(predicted) {
            c.add(g, p);
        }
        c
    }

    /// Positive class is [`Label::Biased`].
    pub fn from_labels(gold: &[Label], predicted: &[Label]) -> Self {
        let mut c = Self::default();
        for (g, p) in gold.iter().zip(predicted) {
            c.add(g.is_biased(), p.is_biased());
        }
        c
    }

    pub fn add(&mut self, gold: bool, predicted: bool) {
        match (gold, predicted) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// The same counts seen from the negative class.
    pub fn swapped(&self) -> Self {
        Self {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }

    /// Precision, recall, F1 and accuracy.
    ///
    /// F1 is the harmonic mean of P and R when both are defined, and 0 when
    /// both are 0.
    pub fn metrics(&self) -> CoreMetrics {
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        };
        CoreMetrics {
            precision,
            recall,
            f1,
            accuracy: ratio(self.tp + self.tn, self.total()),
        }
    }
}

/// Free-function form of [`ConfusionCounts::metrics`].
pub fn metrics(counts: &ConfusionCounts) -> CoreMetrics {
    counts.metrics()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub support: u64,
}

impl ClassMetrics {
    fn from_counts(c: &ConfusionCounts) -> Self {
        let m = c.metrics();
        Self {
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            support: c.tp + c.fn_,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanMetrics {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: String,
    pub model_id: String,
    pub dataset_fingerprint: String,
    pub examples: usize,
    pub positive_class: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub counts: ConfusionCounts,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: Option<f64>,
    pub per_class: BTreeMap<String, ClassMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub span_level: Option<SpanMetrics>,
    pub notes: Vec<String>,
}

/// Document-level detection metrics with BIASED as the positive class.
pub fn evaluate_detection(detector: &Detector, test: &[AnnotatedExample]) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::InvalidInput("test set is empty".into()));
    }
    let texts: Vec<&str> = test.iter().map(|e| e.text.as_str()).collect();
    let mut predicted = Vec::with_capacity(test.len());
    for chunk in texts.chunks(256) {
        predicted.extend(detector.detect_batch(chunk)?.into_iter().map(|r| r.label));
    }
    let gold: Vec<Label> = test.iter().map(|e| e.label).collect();
    let counts = ConfusionCounts::from_labels(&gold, &predicted);
    let m = counts.metrics();

    let mut per_class = BTreeMap::new();
    per_class.insert(Label::Biased.to_string(), ClassMetrics::from_counts(&counts));
    per_class.insert(Label::NonBiased.to_string(), ClassMetrics::from_counts(&counts.swapped()));

    Ok(MetricsReport {
        task: "detection".into(),
        model_id: detector.model_id().to_string(),
        dataset_fingerprint: fingerprint(test),
        examples: test.len(),
        positive_class: Label::Biased.to_string(),
        threshold: Some(detector.threshold()),
        counts,
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
        accuracy: m.accuracy,
        per_class,
        span_level: None,
        notes: vec!["precision/recall/F1 are for the positive class BIASED".into()],
    })
}

/// Token-level recognition metrics, plus exact-match span metrics.
///
/// Gold and predicted spans are both projected onto the tokens from
/// `tokenize` with the same overlap rule; B and I collapse into one
/// positive class.
pub fn evaluate_recognition(
    recognizer: &Recognizer,
    test: &[AnnotatedExample],
    tokenize: Tokenize<'_>,
) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::InvalidInput("test set is empty".into()));
    }
    let mut counts = ConfusionCounts::default();
    let (mut span_tp, mut span_fp, mut span_fn) = (0u64, 0u64, 0u64);
    for example in test {
        let predicted_spans = if example.text.trim().is_empty() {
            Vec::new()
        } else {
            recognizer.recognize(&example.text)?
        };
        let offsets = CharOffsets::new(&example.text);
        let predicted = AnnotatedExample {
            text: example.text.clone(),
            spans: predicted_spans
                .iter()
                .map(|s| Span {
                    start: s.start,
                    end: s.end,
                    surface: offsets.slice(s.start, s.end).unwrap_or_default().to_string(),
                })
                .collect(),
            label: example.label,
            warnings: Vec::new(),
        };
        let gold_tags = to_token_tags(example, tokenize)?;
        let pred_tags = to_token_tags(&predicted, tokenize)?;
        for (g, p) in gold_tags.tags.iter().zip(&pred_tags.tags) {
            counts.add(g.is_bias(), p.is_bias());
        }

        let gold_set: BTreeSet<(usize, usize)> = example.spans.iter().map(|s| (s.start, s.end)).collect();
        let pred_set: BTreeSet<(usize, usize)> = predicted.spans.iter().map(|s| (s.start, s.end)).collect();
        let hits = gold_set.intersection(&pred_set).count() as u64;
        span_tp += hits;
        span_fp += pred_set.len() as u64 - hits;
        span_fn += gold_set.len() as u64 - hits;
    }
    let m = counts.metrics();
    let span_m = ConfusionCounts::new(span_tp, span_fp, span_fn, 0).metrics();

    let mut per_class = BTreeMap::new();
    per_class.insert("BIAS".to_string(), ClassMetrics::from_counts(&counts));
    per_class.insert("O".to_string(), ClassMetrics::from_counts(&counts.swapped()));

    Ok(MetricsReport {
        task: "recognition".into(),
        model_id: recognizer.model_id().to_string(),
        dataset_fingerprint: fingerprint(test),
        examples: test.len(),
        positive_class: "BIAS".into(),
        threshold: None,
        counts,
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
        accuracy: m.accuracy,
        per_class,
        span_level: Some(SpanMetrics {
            tp: span_tp,
            fp: span_fp,
            fn_: span_fn,
            precision: span_m.precision,
            recall: span_m.recall,
            f1: span_m.f1,
        }),
        notes: vec![
            "token-level binary scoring: B-BIAS and I-BIAS count as positive".into(),
            "accuracy is the fraction of tokens whose binary tag is correct".into(),
            "span_level uses exact (start, end) matches".into(),
        ],
    })
}

fn pct(value: Option<f64>) -> String {
    value.map_or_else(|| "n/a".to_string(), |v| format!("{:.1}%", v * 100.0))
}

/// Aligned plain-text table: `Model PREC REC F1 [ACC]`.
pub fn render_table(rows: &[(&str, &MetricsReport)], with_accuracy: bool) -> String {
    let width = rows.iter().map(|(name, _)| name.len()).max().unwrap_or(0).max(5);
    let mut out = String::new();
    let _ = write!(out, "{:<width$}  {:>7}  {:>7}  {:>7}", "Model", "PREC", "REC", "F1");
    if with_accuracy {
        let _ = write!(out, "  {:>7}", "ACC");
    }
    out.push('\n');
    for (name, report) in rows {
        let _ = write!(
            out,
            "{:<width$}  {:>7}  {:>7}  {:>7}",
            name,
            pct(report.precision),
            pct(report.recall),
            pct(report.f1)
        );
        if with_accuracy {
            let _ = write!(out, "  {:>7}", pct(report.accuracy));
        }
        out.push('\n');
    }
    out
}
