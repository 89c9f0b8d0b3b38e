//! Detector re-scoring of rewrites and the acceptance rule.

use serde::{Deserialize, Serialize};

use crate::detection::Detector;
use crate::error::{Error, Result};
use crate::masking::FillCandidate;
use crate::pipeline::AuditTrace;
use crate::recognition::BiasSpan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DebiasStatus {
    UnbiasedInput,
    Debiased,
    BestEffort,
    NoSpansFound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rescored {
    pub text: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateOutcome {
    pub text: String,
    pub probability: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub candidates: Vec<CandidateOutcome>,
    pub status: DebiasStatus,
}

fn by_probability(a: &Rescored, b: &Rescored) -> std::cmp::Ordering {
    a.probability.total_cmp(&b.probability).then_with(|| a.text.cmp(&b.text))
}

/// Detector probability for each candidate, least biased first; equal
/// probabilities are ordered by text.
pub fn rescore(detector: &Detector, candidates: &[FillCandidate]) -> Result<Vec<Rescored>> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no candidates to rescore".into()));
    }
    let texts: Vec<&str> = candidates.iter().map(|c| c.text.as_str()).collect();
    let probs = detector.predict_proba(&texts)?;
    let mut rescored: Vec<Rescored> = texts
        .into_iter()
        .zip(probs)
        .map(|(text, probability)| Rescored {
            text: text.to_string(),
            probability,
        })
        .collect();
    rescored.sort_by(by_probability);
    Ok(rescored)
}

/// A rewrite is accepted when it falls under the threshold or is less
/// biased than the text it replaces.
pub fn is_accepted(probability: f64, original_probability: f64, threshold: f64) -> bool {
    probability < threshold || probability < original_probability
}

/// Flags each rescored candidate and derives the status. `rescored` must be
/// sorted ascending by probability.
pub fn select(original_probability: f64, rescored: &[Rescored], threshold: f64) -> Result<Selection> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!("threshold must lie in [0, 1], got {threshold}")));
    }
    if rescored.is_empty() {
        return Err(Error::InvalidInput("no rescored candidates to select from".into()));
    }
    if rescored.windows(2).any(|w| w[0].probability > w[1].probability) {
        return Err(Error::InvalidInput("rescored candidates are not sorted by probability".into()));
    }
    let candidates: Vec<CandidateOutcome> = rescored
        .iter()
        .map(|r| CandidateOutcome {
            text: r.text.clone(),
            probability: r.probability,
            accepted: is_accepted(r.probability, original_probability, threshold),
        })
        .collect();
    let status = if candidates.iter().any(|c| c.accepted) {
        DebiasStatus::Debiased
    } else {
        DebiasStatus::BestEffort
    };
    Ok(Selection { candidates, status })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasResult {
    pub original_text: String,
    pub original_probability: f64,
    pub status: DebiasStatus,
    /// The recommended text: the least biased candidate, or the input when
    /// there are no candidates.
    pub text: String,
    pub candidates: Vec<CandidateOutcome>,
    /// Recognized spans, in char offsets of `original_text`.
    pub spans: Vec<BiasSpan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
    pub trace: AuditTrace,
}

impl DebiasResult {
    pub fn accepted(&self) -> impl Iterator<Item = &CandidateOutcome> {
        self.candidates.iter().filter(|c| c.accepted)
    }
}
