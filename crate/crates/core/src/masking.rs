//! Bias masking and sequential ("mask shifting") infilling.
//!
//! Slots are filled left to right, one mask at a time. While slot `i` is
//! being filled, slots before it carry the hypothesis tokens and slots after
//! it keep their original words, so the infiller always sees exactly one
//! placeholder.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recognition::BiasSpan;
use crate::text::{whitespace_tokenize, CharOffsets};

pub const DEFAULT_MASK_TOKEN: &str = "[MASK]";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    /// One slot per whitespace-delimited word inside a span.
    #[default]
    #[serde(alias = "WORD")]
    Word,
    /// One slot per span.
    #[serde(alias = "SPAN")]
    Span,
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "word" => Ok(Self::Word),
            "span" => Ok(Self::Span),
            _ => Err(Error::Config(format!("granularity must be `word` or `span`, got `{s}`"))),
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Word => "word",
            Self::Span => "span",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSlot {
    pub start: usize,
    pub end: usize,
    pub original: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedText {
    original: String,
    slots: Vec<MaskSlot>,
}

impl MaskedText {
    /// Checks that slots are sorted, disjoint, non-empty, in bounds and that
    /// each `original` matches the text.
    pub fn new(original: impl Into<String>, slots: Vec<MaskSlot>) -> Result<Self> {
        let original = original.into();
        let offsets = CharOffsets::new(&original);
        let mut prev_end = 0;
        for (i, slot) in slots.iter().enumerate() {
            if slot.start >= slot.end || slot.end > offsets.len() || slot.start < prev_end {
                return Err(Error::InvalidInput(format!(
                    "slot {i} ({}, {}) is empty, out of bounds or overlaps its predecessor",
                    slot.start, slot.end
                )));
            }
            if offsets.slice(slot.start, slot.end) != Some(slot.original.as_str()) {
                return Err(Error::InvalidInput(format!("slot {i} surface does not match the text")));
            }
            prev_end = slot.end;
        }
        Ok(Self { original, slots })
    }

    pub fn original(&self) -> &str {
        &self.original
    }

    pub fn slots(&self) -> &[MaskSlot] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Renders with `fills[i]` in slot `i`, or `mask` where the fill is `None`.
    pub fn render(&self, fills: &[Option<&str>], mask: &str) -> String {
        let offsets = CharOffsets::new(&self.original);
        let mut out = String::with_capacity(self.original.len());
        let mut cursor = 0;
        for (i, slot) in self.slots.iter().enumerate() {
            out.push_str(&self.original[offsets.byte(cursor)..offsets.byte(slot.start)]);
            out.push_str(fills.get(i).copied().flatten().unwrap_or(mask));
            cursor = slot.end;
        }
        out.push_str(&self.original[offsets.byte(cursor)..]);
        out
    }

    /// Every slot masked.
    pub fn render_masked(&self, mask: &str) -> String {
        self.render(&[], mask)
    }

    /// Slots before `prefix.len()` take the prefix tokens; the rest keep
    /// their original words.
    pub fn render_prefix<S: AsRef<str>>(&self, prefix: &[S]) -> String {
        let fills: Vec<Option<&str>> = self
            .slots
            .iter()
            .enumerate()
            .map(|(i, slot)| Some(prefix.get(i).map_or(slot.original.as_str(), AsRef::as_ref)))
            .collect();
        self.render(&fills, "")
    }

    /// The infiller input for slot `prefix.len()`: earlier slots filled from
    /// `prefix`, the current slot masked, later slots original.
    pub fn render_step<S: AsRef<str>>(&self, prefix: &[S], mask: &str) -> String {
        let current = prefix.len();
        let fills: Vec<Option<&str>> = self
            .slots
            .iter()
            .enumerate()
            .map(|(i, slot)| match i.cmp(&current) {
                Ordering::Less => Some(prefix[i].as_ref()),
                Ordering::Equal => None,
                Ordering::Greater => Some(slot.original.as_str()),
            })
            .collect();
        self.render(&fills, mask)
    }
}

/// Turns recognized spans into mask slots.
pub fn build_masked(text: &str, spans: &[BiasSpan], granularity: Granularity) -> Result<MaskedText> {
    let offsets = CharOffsets::new(text);
    let mut slots = Vec::new();
    for span in spans {
        let surface = offsets
            .slice(span.start, span.end)
            .filter(|_| span.start < span.end)
            .ok_or_else(|| Error::InvalidInput(format!("span ({}, {}) is not valid for the text", span.start, span.end)))?;
        match granularity {
            Granularity::Span => slots.push(MaskSlot {
                start: span.start,
                end: span.end,
                original: surface.to_string(),
            }),
            Granularity::Word => slots.extend(whitespace_tokenize(surface).into_iter().map(|t| MaskSlot {
                start: span.start + t.start,
                end: span.start + t.end,
                original: t.text,
            })),
        }
    }
    MaskedText::new(text, slots)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillCandidate {
    pub tokens: Vec<String>,
    pub log_score: f64,
    pub text: String,
}

/// A single-mask fill-in-the-blank model.
pub trait InfillerBackend: Send + Sync {
    fn backend_name(&self) -> &str;

    /// Placeholder the backend expects in its input.
    fn mask_token(&self) -> &str;

    /// Top-`k` `(token, probability)` pairs for the single placeholder in
    /// `text`, most probable first. Must reject inputs that do not hold
    /// exactly one placeholder.
    fn fill(&self, text: &str, k: usize) -> Result<Vec<(String, f64)>>;

    /// Writes the backend payload into `dir`.
    fn save(&self, _dir: &std::path::Path) -> Result<()> {
        Err(Error::Model(format!("backend `{}` cannot be saved", self.backend_name())))
    }
}

/// Number of non-overlapping occurrences of `mask` in `text`.
pub fn count_masks(text: &str, mask: &str) -> usize {
    if mask.is_empty() {
        return 0;
    }
    text.matches(mask).count()
}

/// Shared guard for backends: errors unless `text` holds exactly one mask.
pub fn require_single_mask(text: &str, mask: &str) -> Result<()> {
    match count_masks(text, mask) {
        1 => Ok(()),
        n => Err(Error::InvalidInput(format!("expected exactly one `{mask}` placeholder, found {n}"))),
    }
}

fn contract_violations(proposals: &[(String, f64)], k: usize) -> Vec<String> {
    let mut violations = Vec::new();
    if proposals.len() > k {
        violations.push(format!("returned {} tokens for k={k}", proposals.len()));
    }
    if let Some((token, p)) = proposals.iter().find(|(_, p)| !(p.is_finite() && *p > 0.0 && *p <= 1.0)) {
        violations.push(format!("probability {p} for `{token}` outside (0, 1]"));
    }
    if proposals.windows(2).any(|w| w[0].1 < w[1].1) {
        violations.push("probabilities not descending".to_string());
    }
    violations
}

/// Calls the infiller and enforces its output contract.
pub fn fill_checked(infiller: &dyn InfillerBackend, text: &str, k: usize) -> Result<Vec<(String, f64)>> {
    let proposals = infiller.fill(text, k)?;
    let violations = contract_violations(&proposals, k);
    if !violations.is_empty() {
        return Err(Error::Contract(format!("infiller `{}`: {}", infiller.backend_name(), violations.join("; "))));
    }
    Ok(proposals)
}

/// Case-folded original surfaces of every slot.
pub fn default_exclusions(masked: &MaskedText) -> BTreeSet<String> {
    masked.slots.iter().map(|s| s.original.to_lowercase()).collect()
}

fn fold(token: &str) -> String {
    token.trim().to_lowercase()
}

fn rank(a: &(f64, String), b: &(f64, String)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1))
}

/// Beam search over slot fills.
///
/// Each step renders every surviving hypothesis with only the current slot
/// masked, asks the infiller for its top `k`, drops excluded or blank tokens
/// (compared case-insensitively) and keeps the best `beam_width` hypotheses
/// by cumulative log-probability, ties broken by rendered text.
pub fn shift_fill(
    masked: &MaskedText,
    infiller: &dyn InfillerBackend,
    k: usize,
    beam_width: usize,
    exclusions: &BTreeSet<String>,
) -> Result<Vec<FillCandidate>> {
    if k == 0 || beam_width == 0 {
        return Err(Error::Config("k and beam_width must be at least 1".into()));
    }
    if masked.is_empty() {
        return Err(Error::InvalidInput("masked text has no slots".into()));
    }
    let excluded: BTreeSet<String> = exclusions.iter().map(|e| fold(e)).collect();
    let mask = infiller.mask_token();

    let mut beams: Vec<(Vec<String>, f64)> = vec![(Vec::new(), 0.0)];
    for slot in 0..masked.len() {
        let mut best: HashMap<Vec<String>, f64> = HashMap::new();
        for (tokens, score) in &beams {
            let input = masked.render_step(tokens, mask);
            for (token, p) in fill_checked(infiller, &input, k)? {
                if token.trim().is_empty() || excluded.contains(&fold(&token)) {
                    continue;
                }
                let mut next = tokens.clone();
                next.push(token);
                let total = score + p.ln();
                best.entry(next).and_modify(|s| *s = s.max(total)).or_insert(total);
            }
        }
        if best.is_empty() {
            return Err(Error::NoFill { slot });
        }
        let mut ranked: Vec<((f64, String), Vec<String>)> = best
            .into_iter()
            .map(|(tokens, score)| ((score, masked.render_prefix(&tokens)), tokens))
            .collect();
        ranked.sort_by(|a, b| rank(&a.0, &b.0));
        ranked.truncate(beam_width);
        beams = ranked.into_iter().map(|((score, _), tokens)| (tokens, score)).collect();
    }

    Ok(beams
        .into_iter()
        .map(|(tokens, log_score)| FillCandidate {
            text: masked.render_prefix(&tokens),
            tokens,
            log_score,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfillerReport {
    pub backend: String,
    pub mask_token: String,
    pub violations: Vec<String>,
    pub rejected_multi_mask: bool,
    pub rejected_no_mask: bool,
    pub checks: usize,
}

impl InfillerReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Exercises the infiller contract on synthetic inputs and reports every
/// violation instead of failing on the first.
pub fn validate_infiller(infiller: &dyn InfillerBackend) -> InfillerReport {
    let mask = infiller.mask_token().to_string();
    let mut violations = Vec::new();
    let mut checks = 0;

    if mask.trim().is_empty() {
        violations.push("mask token is blank".to_string());
    }
    let probes = [
        format!("the {mask} was reported yesterday ."),
        format!("she said the {mask} is wrong"),
        format!("{mask}"),
    ];
    for probe in &probes {
        for k in [1, 3, 10, 100_000] {
            checks += 1;
            match infiller.fill(probe, k) {
                Ok(proposals) => {
                    for v in contract_violations(&proposals, k) {
                        let v = format!("{v} (k={k}, input {probe:?})");
                        if !violations.contains(&v) {
                            violations.push(v);
                        }
                    }
                }
                Err(e) => violations.push(format!("fill failed on a single-mask input (k={k}): {e}")),
            }
        }
    }

    checks += 1;
    let rejected_multi_mask = infiller.fill(&format!("the {mask} and the {mask}"), 3).is_err();
    if !rejected_multi_mask {
        violations.push("accepted an input with two mask placeholders".to_string());
    }
    checks += 1;
    let rejected_no_mask = infiller.fill("no placeholder here", 3).is_err();
    if !rejected_no_mask {
        violations.push("accepted an input without a mask placeholder".to_string());
    }

    InfillerReport {
        backend: infiller.backend_name().to_string(),
        mask_token: mask,
        violations,
        rejected_multi_mask,
        rejected_no_mask,
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::stub::{FnInfiller, TableInfiller};

    fn span(text: &str, surface: &str) -> BiasSpan {
        let byte = text.find(surface).unwrap();
        let start = text[..byte].chars().count();
        BiasSpan {
            start,
            end: start + surface.chars().count(),
            surface: surface.to_string(),
            score: 1.0,
        }
    }

    const HYPE: &str = "Don't buy the pseudo-scientific hype about tornadoes and climate change";

    #[test]
    fn word_granularity_splits_phrase() {
        let m = build_masked(HYPE, &[span(HYPE, "pseudo-scientific hype")], Granularity::Word).unwrap();
        let surfaces: Vec<&str> = m.slots().iter().map(|s| s.original.as_str()).collect();
        assert_eq!(surfaces, vec!["pseudo-scientific", "hype"]);
        let s = build_masked(HYPE, &[span(HYPE, "pseudo-scientific hype")], Granularity::Span).unwrap();
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn zero_spans_render_identity() {
        let m = build_masked(HYPE, &[], Granularity::Word).unwrap();
        assert!(m.is_empty());
        assert_eq!(m.render_masked("[MASK]"), HYPE);
    }

    #[test]
    fn render_unfilled() {
        let text = "the hype is real";
        let m = build_masked(text, &[span(text, "hype")], Granularity::Word).unwrap();
        assert_eq!(m.render_masked(DEFAULT_MASK_TOKEN), "the [MASK] is real");
        assert_eq!(m.render_prefix::<&str>(&[]), text);
    }

    #[test]
    fn render_step_masks_only_current_slot() {
        let m = build_masked(HYPE, &[span(HYPE, "pseudo-scientific hype")], Granularity::Word).unwrap();
        assert_eq!(
            m.render_step::<&str>(&[], "[MASK]"),
            "Don't buy the [MASK] hype about tornadoes and climate change"
        );
        assert_eq!(
            m.render_step(&["silly"], "[MASK]"),
            "Don't buy the silly [MASK] about tornadoes and climate change"
        );
    }

    #[test]
    fn single_slot_is_top_k() {
        let text = "the hype is real";
        let m = build_masked(text, &[span(text, "hype")], Granularity::Word).unwrap();
        let inf = TableInfiller::uniform(vec![("calm".into(), 0.6), ("claim".into(), 0.4)]);
        let out = shift_fill(&m, &inf, 2, 2, &BTreeSet::new()).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].tokens, vec!["calm"]);
        assert_eq!(out[0].text, "the calm is real");
        assert!((out[0].log_score - 0.6f64.ln()).abs() < 1e-15);
        assert_eq!(out[1].tokens, vec!["claim"]);
    }

    #[test]
    fn beam_one_is_greedy() {
        let m = build_masked(HYPE, &[span(HYPE, "pseudo-scientific hype")], Granularity::Word).unwrap();
        // The second slot's distribution depends on the first fill.
        let inf = FnInfiller::new("[MASK]", |text: &str| {
            if text.contains("the [MASK] hype") {
                vec![("popular".into(), 0.5), ("recent".into(), 0.3)]
            } else if text.contains("popular [MASK]") {
                vec![("debate".into(), 0.4), ("story".into(), 0.35)]
            } else {
                vec![("news".into(), 0.9)]
            }
        });
        let out = shift_fill(&m, &inf, 2, 1, &default_exclusions(&m)).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].tokens, vec!["popular", "debate"]);
        assert_eq!(out[0].text, "Don't buy the popular debate about tornadoes and climate change");
    }

    #[test]
    fn exclusions_are_case_insensitive() {
        let text = "the hype is real";
        let m = build_masked(text, &[span(text, "hype")], Granularity::Word).unwrap();
        let inf = TableInfiller::uniform(vec![("HYPE".into(), 0.7), ("news".into(), 0.2)]);
        let out = shift_fill(&m, &inf, 5, 5, &default_exclusions(&m)).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].tokens, vec!["news"]);
    }

    #[test]
    fn all_beams_dead_is_no_fill() {
        let text = "the hype is real";
        let m = build_masked(text, &[span(text, "hype")], Granularity::Word).unwrap();
        let inf = TableInfiller::uniform(vec![("hype".into(), 0.9)]);
        assert!(matches!(
            shift_fill(&m, &inf, 3, 3, &default_exclusions(&m)),
            Err(Error::NoFill { slot: 0 })
        ));
    }

    #[test]
    fn validator_reports() {
        let good = TableInfiller::uniform(vec![("a".into(), 0.5), ("b".into(), 0.3)]);
        let report = validate_infiller(&good);
        assert!(report.is_clean(), "{:?}", report.violations);
        assert!(report.rejected_multi_mask);

        let unsorted = TableInfiller::uniform(vec![("a".into(), 0.2), ("b".into(), 0.7)]);
        let report = validate_infiller(&unsorted);
        assert!(report.violations.iter().any(|v| v.contains("not descending")));

        let lax = FnInfiller::new("[MASK]", |_: &str| vec![("x".into(), 0.5)]).accept_any_input();
        let report = validate_infiller(&lax);
        assert!(!report.rejected_multi_mask);
        assert!(!report.is_clean());
    }
}
