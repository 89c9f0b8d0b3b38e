//! Property tests over the text, masking, search, selection and metric code.

use std::collections::BTreeSet;
use std::sync::Arc;

use debias_core::backends::stub::{FnInfiller, Missing, TableDetector, TableRecognizer};
use debias_core::dataset::{derive_spans, split, to_token_tags, DatasetRecord, Label, SplitRatios};
use debias_core::debias::DebiasStatus;
use debias_core::detection::Detector;
use debias_core::evaluation::ConfusionCounts;
use debias_core::masking::{
    build_masked, count_masks, shift_fill, Granularity, MaskSlot, MaskedText, DEFAULT_MASK_TOKEN,
};
use debias_core::pipeline::{Pipeline, PipelineConfig};
use debias_core::recognition::{lexicon_recognize, normalize_spans, BiasSpan, Lexicon, Recognizer};
use debias_core::text::{char_len, char_slice, match_phrases, split_sentences, word_tokenize, MatchPolicy};
use proptest::prelude::*;

const WORDS: &[&str] = &[
    "the", "radical", "plan", "so-called", "experts", "Hype", "hype", "pseudo-scientific", "état", "über", "naïve",
    "claims", "a", "de-facto", "leader",
];

fn sentence() -> impl Strategy<Value = String> {
    (
        prop::collection::vec(prop::sample::select(WORDS), 1..14),
        prop::collection::vec(prop::sample::select(&[" ", " ", "  ", ", ", " \t"][..]), 14),
    )
        .prop_map(|(words, gaps)| {
            let mut out = String::new();
            for (i, w) in words.iter().enumerate() {
                if i > 0 {
                    out.push_str(gaps[i]);
                }
                out.push_str(w);
            }
            out
        })
}

fn phrases() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(
        prop::collection::vec(prop::sample::select(WORDS), 1..3).prop_map(|w| w.join(" ")),
        0..5,
    )
}

fn assert_valid_spans(text: &str, spans: &[BiasSpan]) -> Result<(), TestCaseError> {
    let mut last_end = 0;
    for (i, s) in spans.iter().enumerate() {
        prop_assert!(s.start < s.end && s.end <= char_len(text));
        prop_assert!(i == 0 || s.start >= last_end, "overlap at span {}", i);
        prop_assert_eq!(char_slice(text, s.start, s.end), Some(s.surface.as_str()));
        prop_assert!((0.0..=1.0).contains(&s.score));
        last_end = s.end;
    }
    Ok(())
}

/// Fill proposals that depend only on the masked input.
fn hashed(text: &str, vocab: &[&str]) -> Vec<(String, f64)> {
    let mut h = 0xcbf29ce484222325u64;
    for b in text.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x100000001b3);
    }
    let mut out: Vec<(String, f64)> = vocab
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let x = h.rotate_left(i as u32 * 7) % 997 + 1;
            (w.to_string(), x as f64 / 1000.0)
        })
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn tokens_point_back_into_text(text in "\\PC{0,40}") {
        for t in word_tokenize(&text) {
            prop_assert_eq!(char_slice(&text, t.start, t.end), Some(t.text.as_str()));
        }
    }

    #[test]
    fn sentences_are_ordered_and_trimmed(text in "[a-zA-Z .!?\"]{0,60}") {
        let mut last = 0;
        for (start, end) in split_sentences(&text) {
            prop_assert!(start >= last && start < end);
            let s = char_slice(&text, start, end).unwrap();
            prop_assert_eq!(s.trim(), s);
            last = end;
        }
    }

    #[test]
    fn matches_are_sorted_and_disjoint(text in sentence(), phrases in phrases()) {
        let outcome = match_phrases(&text, &phrases, MatchPolicy::AllOccurrences);
        for pair in outcome.matches.windows(2) {
            prop_assert!(pair[0].end <= pair[1].start);
        }
        for m in &outcome.matches {
            let surface = char_slice(&text, m.start, m.end).unwrap();
            let norm = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
            prop_assert_eq!(norm(surface), norm(&phrases[m.phrase]));
        }
    }

    #[test]
    fn lexicon_recognition_equals_span_derivation(text in sentence(), phrases in phrases()) {
        let record = DatasetRecord::new(text.clone(), Label::Biased, phrases.clone());
        let derived: Vec<(usize, usize)> = derive_spans(&record, MatchPolicy::AllOccurrences)
            .spans.iter().map(|s| (s.start, s.end)).collect();
        let recognized = lexicon_recognize(&Lexicon::new(&phrases), &text);
        assert_valid_spans(&text, &recognized)?;
        let recognized: Vec<(usize, usize)> = recognized.iter().map(|s| (s.start, s.end)).collect();
        prop_assert_eq!(derived, recognized);
    }

    #[test]
    fn spans_and_tags_are_dual(text in sentence(), phrases in phrases()) {
        let record = DatasetRecord::new(text, Label::Biased, phrases);
        let example = derive_spans(&record, MatchPolicy::AllOccurrences);
        prop_assert!(example.validate().is_ok());
        let seq = to_token_tags(&example, &word_tokenize).unwrap();
        prop_assert!(seq.validate().is_ok());
        let spans: Vec<(usize, usize)> = example.spans.iter().map(|s| (s.start, s.end)).collect();
        // Adjacent spans with no token between them decode as one run only
        // when the second starts with I; derived spans always start with B.
        prop_assert_eq!(seq.decode_spans(), spans);
    }

    #[test]
    fn normalized_spans_are_valid(
        text in "\\PC{0,30}",
        raw in prop::collection::vec((0usize..35, 0usize..35, -1.0f64..2.0), 0..8),
    ) {
        let raw: Vec<BiasSpan> = raw.into_iter()
            .map(|(start, end, score)| BiasSpan { start, end, surface: String::new(), score })
            .collect();
        let spans = normalize_spans(&text, raw);
        assert_valid_spans(&text, &spans)?;
    }

    #[test]
    fn recognizer_output_is_valid(text in sentence(), phrases in phrases()) {
        let recognizer = Recognizer::from_backend("r", Box::new(TableRecognizer::lexicon(&phrases)));
        let spans = recognizer.recognize(&text).unwrap();
        assert_valid_spans(&text, &spans)?;
    }

    #[test]
    fn every_step_holds_one_mask(text in sentence(), phrases in phrases(), span_level in any::<bool>()) {
        let spans = lexicon_recognize(&Lexicon::new(&phrases), &text);
        let granularity = if span_level { Granularity::Span } else { Granularity::Word };
        let masked = build_masked(&text, &spans, granularity).unwrap();
        let originals: Vec<&str> = masked.slots().iter().map(|s| s.original.as_str()).collect();
        prop_assert_eq!(masked.render_prefix(&originals), text.clone());
        for i in 0..masked.len() {
            let step = masked.render_step(&originals[..i], DEFAULT_MASK_TOKEN);
            prop_assert_eq!(count_masks(&step, DEFAULT_MASK_TOKEN), 1);
        }
        prop_assert_eq!(count_masks(&masked.render_masked(DEFAULT_MASK_TOKEN), DEFAULT_MASK_TOKEN), masked.len());
    }

    #[test]
    fn split_is_a_deterministic_partition(
        labels in prop::collection::vec(any::<bool>(), 3..80),
        seed in any::<u64>(),
    ) {
        let records: Vec<DatasetRecord> = labels.iter().enumerate()
            .map(|(i, &b)| DatasetRecord::new(format!("row {i}"), Label::from_biased(b), Vec::new()))
            .collect();
        let ratios = SplitRatios::default();
        let a = split(&records, ratios, seed).unwrap();
        let b = split(&records, ratios, seed).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(!a.train.is_empty() && !a.dev.is_empty() && !a.test.is_empty());
        let mut all: Vec<String> = a.train.iter().chain(&a.dev).chain(&a.test).map(|r| r.text.clone()).collect();
        all.sort();
        let mut expected: Vec<String> = records.iter().map(|r| r.text.clone()).collect();
        expected.sort();
        prop_assert_eq!(all, expected);
    }

    #[test]
    fn metrics_are_bounded_and_symmetric(
        pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 0..100),
    ) {
        let (gold, pred): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
        let counts = ConfusionCounts::from_bools(&gold, &pred);
        prop_assert_eq!(counts.total() as usize, gold.len());
        let m = counts.metrics();
        for v in [m.precision, m.recall, m.f1, m.accuracy].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let flipped: Vec<bool> = gold.iter().map(|g| !g).collect();
        let flipped_pred: Vec<bool> = pred.iter().map(|p| !p).collect();
        prop_assert_eq!(ConfusionCounts::from_bools(&flipped, &flipped_pred), counts.swapped());
        prop_assert_eq!(counts.swapped().metrics().accuracy, m.accuracy);
    }

    #[test]
    fn beam_output_is_ranked_and_respects_exclusions(
        slots in 1usize..4,
        k in 1usize..6,
        beam in 1usize..8,
        vocab_size in 1usize..6,
    ) {
        let vocab = ["calm", "new", "Plan", "plan", "fresh", "other"];
        let vocab: Vec<&'static str> = vocab[..vocab_size].to_vec();
        let text: String = (0..slots).map(|i| format!("w{i} x{i}")).collect::<Vec<_>>().join(" ");
        let masked = MaskedText::new(
            text.clone(),
            (0..slots).map(|i| {
                let start = text.find(&format!("x{i}")).unwrap();
                MaskSlot { start, end: start + 2, original: format!("x{i}") }
            }).collect(),
        ).unwrap();
        let infiller = FnInfiller::new(DEFAULT_MASK_TOKEN, {
            let vocab = vocab.clone();
            move |t| hashed(t, &vocab)
        });
        let excluded: BTreeSet<String> = ["plan".to_string()].into();
        let first = shift_fill(&masked, &infiller, k, beam, &excluded);
        let second = shift_fill(&masked, &infiller, k, beam, &excluded);
        prop_assert_eq!(&first.as_ref().ok(), &second.as_ref().ok());
        match first {
            Ok(candidates) => {
                prop_assert!(!candidates.is_empty() && candidates.len() <= beam);
                for pair in candidates.windows(2) {
                    prop_assert!(pair[0].log_score >= pair[1].log_score);
                }
                for c in &candidates {
                    prop_assert_eq!(c.tokens.len(), slots);
                    prop_assert!(c.tokens.iter().all(|t| t.to_lowercase() != "plan"));
                    prop_assert_eq!(&masked.render_prefix(&c.tokens), &c.text);
                }
            }
            // Running dry means every top-k proposal was excluded.
            Err(e) => prop_assert!(matches!(e, debias_core::Error::NoFill { .. }), "{}", e),
        }
    }

    #[test]
    fn pipeline_selection_matches_rule(
        p0 in 0.0f64..=1.0,
        threshold in 0.01f64..=1.0,
        probabilities in prop::collection::vec(0.0f64..=1.0, 1..5),
    ) {
        let text = "They peddled the radical plan";
        let fills: Vec<String> = (0..probabilities.len()).map(|i| format!("fill{i}")).collect();
        let mut table: Vec<(String, f64)> = vec![(text.to_string(), p0)];
        table.extend(fills.iter().zip(&probabilities)
            .map(|(f, &p)| (format!("They peddled the {f} plan"), p)));
        let proposals: Vec<(String, f64)> = fills.iter().enumerate()
            .map(|(i, f)| (f.clone(), 1.0 / (i + 2) as f64)).collect();
        let pipeline = Pipeline::new(
            PipelineConfig { threshold, k: fills.len(), ..PipelineConfig::default() },
            Arc::new(Detector::from_backend("d", Box::new(TableDetector::new(table, Missing::Error)))),
            Arc::new(Recognizer::from_backend("r", Box::new(TableRecognizer::lexicon(["radical"])))),
            Arc::new(FnInfiller::new(DEFAULT_MASK_TOKEN, move |_| proposals.clone())),
        ).unwrap();
        let out = pipeline.run(text).unwrap();
        if p0 < threshold {
            prop_assert_eq!(out.status, DebiasStatus::UnbiasedInput);
            prop_assert_eq!(&out.text, text);
            return Ok(());
        }
        prop_assert_eq!(out.candidates.len(), probabilities.len());
        for pair in out.candidates.windows(2) {
            prop_assert!(pair[0].probability <= pair[1].probability);
        }
        for c in &out.candidates {
            prop_assert_eq!(c.accepted, c.probability < threshold || c.probability < p0);
        }
        let any = out.candidates.iter().any(|c| c.accepted);
        prop_assert_eq!(out.status == DebiasStatus::Debiased, any);
        prop_assert_eq!(&out.text, &out.candidates[0].text);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn masked_text_round_trips(text in "\\PC{1,40}", cuts in prop::collection::btree_set(0usize..41, 0..8)) {
        let len = char_len(&text);
        let mut cuts: Vec<usize> = cuts.into_iter().filter(|&c| c <= len).collect();
        cuts.dedup();
        let slots: Vec<MaskSlot> = cuts.chunks(2)
            .filter(|w| w.len() == 2 && w[0] < w[1])
            .map(|w| MaskSlot { start: w[0], end: w[1], original: char_slice(&text, w[0], w[1]).unwrap().to_string() })
            .collect();
        let masked = MaskedText::new(text.clone(), slots).unwrap();
        let originals: Vec<&str> = masked.slots().iter().map(|s| s.original.as_str()).collect();
        let fills: Vec<Option<&str>> = originals.iter().map(|s| Some(*s)).collect();
        prop_assert_eq!(masked.render(&fills, DEFAULT_MASK_TOKEN), text);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn metrics_match_brute_force(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 0..60)) {
        let (gold, pred): (Vec<bool>, Vec<bool>) = pairs.iter().copied().unzip();
        let m = ConfusionCounts::from_bools(&gold, &pred).metrics();
        let tp = pairs.iter().filter(|&&(g, p)| g && p).count() as f64;
        let fp = pairs.iter().filter(|&&(g, p)| !g && p).count() as f64;
        let fn_ = pairs.iter().filter(|&&(g, p)| g && !p).count() as f64;
        let correct = pairs.iter().filter(|&&(g, p)| g == p).count() as f64;
        let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(a), Some(b)) => (a - b).abs() <= 1e-12,
            (None, None) => true,
            _ => false,
        };
        let p = (tp + fp > 0.0).then(|| tp / (tp + fp));
        let r = (tp + fn_ > 0.0).then(|| tp / (tp + fn_));
        // F1 from counts, independent of the P/R path.
        let f1 = (tp + fp > 0.0 && tp + fn_ > 0.0).then(|| 2.0 * tp / (2.0 * tp + fp + fn_));
        let acc = (!pairs.is_empty()).then(|| correct / pairs.len() as f64);
        prop_assert!(close(m.precision, p));
        prop_assert!(close(m.recall, r));
        prop_assert!(close(m.f1, f1));
        prop_assert!(close(m.accuracy, acc));
    }

    #[test]
    fn acceptance_is_the_disjunction(p in 0.0f64..=1.0, p0 in 0.0f64..=1.0, t in 0.0f64..=1.0) {
        prop_assert_eq!(debias_core::debias::is_accepted(p, p0, t), p < t || p < p0);
    }
}
