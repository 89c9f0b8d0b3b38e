//! Acceptance criteria, one test per criterion.
//!
//! Each test prints a single `PASS`/`FAIL` line to stderr before asserting,
//! so `cargo test --test acceptance -- --nocapture` doubles as a report.
//!
//! Criterion 1 needs the extended MBIC release as CSV; point
//! `DEBIAS_MBIC_PATH` at it. Criteria 3 and 4 need the `transformers`
//! feature, pretrained weights under `DEBIAS_WEIGHTS_DIR` and realistically
//! an accelerator, so they are ignored by default.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use debias_core::backends::stub::{FnInfiller, Missing, TableDetector, TableInfiller, TableRecognizer};
use debias_core::backends::{save_infiller, BackendRegistry};
use debias_core::cli::json_line;
use debias_core::dataset::{
    derive_spans, load_dataset, split, to_token_tags, AnnotatedExample, DataFormat, LoadOptions, SplitRatios,
};
use debias_core::debias::{is_accepted, select, DebiasStatus, Rescored};
use debias_core::detection::{train_detector, Detector, TrainingConfig};
use debias_core::evaluation::{evaluate_detection, ConfusionCounts};
use debias_core::masking::{shift_fill, FillCandidate, MaskSlot, MaskedText, DEFAULT_MASK_TOKEN};
use debias_core::model::{ModelStore, SplitInfo};
use debias_core::pipeline::{Pipeline, PipelineConfig, Stage};
use debias_core::recognition::{train_recognizer, Recognizer};
use debias_core::text::{char_len, MatchPolicy};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::HYPE;

const MBIC_ENV: &str = "DEBIAS_MBIC_PATH";

// Published TF-IDF baseline: F1 62%, tolerance 6 points.
const C1_TARGET_F1: f64 = 0.62;
const C1_TOLERANCE: f64 = 0.06;
const C1_BUDGET: Duration = Duration::from_secs(300);
const METRIC_TOLERANCE: f64 = 1e-12;
// Published fine-tuned results: detection F1 75% +- 5; recognition F1 63% +- 6, ACC 72% +- 6.
const C3_TARGET_F1: f64 = 0.75;
const C3_TOLERANCE: f64 = 0.05;
const C4_TARGET_F1: f64 = 0.63;
const C4_TARGET_ACC: f64 = 0.72;
const C4_TOLERANCE: f64 = 0.06;

/// Writes straight to stderr so the line survives the harness's output capture.
fn verdict(id: u8, name: &str, ok: bool, detail: &str) {
    let line = format!("[{}] C{id} {name}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(ok, "criterion {id} ({name}) failed: {detail}");
}

fn within(value: f64, target: f64, tolerance: f64) -> bool {
    (value - target).abs() <= tolerance + 1e-12
}

/// Column names for the MBIC CSV export, picked from its header.
fn mbic_options(path: &Path) -> LoadOptions {
    let header = fs::read_to_string(path)
        .ok()
        .and_then(|c| c.lines().next().map(str::to_string))
        .unwrap_or_default();
    let columns: Vec<&str> = header.split(',').map(|c| c.trim().trim_matches('"')).collect();
    let mut options = LoadOptions::default();
    for (field, candidates) in [
        ("text", &["sentence", "text"][..]),
        ("label", &["Label_bias", "label"][..]),
        ("biased_words", &["biased_words4", "biased_words"][..]),
        ("source", &["outlet", "source"][..]),
        ("url", &["news_link", "url"][..]),
    ] {
        if let Some(col) = candidates.iter().find(|c| columns.contains(c)) {
            options.columns.set(&format!("{field}={col}")).unwrap();
        }
    }
    options
}

#[test]
fn c01_reference_detection_baseline() {
    let name = "reference TF-IDF detector on MBIC";
    let Some(path) = std::env::var_os(MBIC_ENV).map(PathBuf::from) else {
        verdict(1, name, false, &format!("dataset unavailable; set {MBIC_ENV} to the MBIC CSV"));
        return;
    };
    let started = Instant::now();
    let loaded = load_dataset(&path, DataFormat::Csv, &mbic_options(&path)).expect("load MBIC");
    let examples: Vec<AnnotatedExample> = loaded
        .records
        .iter()
        .map(|r| derive_spans(r, MatchPolicy::AllOccurrences))
        .collect();
    let registry = BackendRegistry::with_defaults();
    let config = registry.detector_config("tfidf-logreg").unwrap();
    let parts = split(&examples, SplitRatios::default(), config.seed).unwrap();
    let backend = registry.create_detector("tfidf-logreg", &serde_json::Value::Null).unwrap();
    let (detector, _) = train_detector(&parts.train, &parts.dev, backend, &config, "lg-tfidf").unwrap();
    let report = evaluate_detection(&detector, &parts.test).unwrap();
    let elapsed = started.elapsed();
    let f1 = report.f1.unwrap_or(0.0);
    verdict(
        1,
        name,
        within(f1, C1_TARGET_F1, C1_TOLERANCE) && elapsed < C1_BUDGET,
        &format!(
            "test F1 {f1:.4} (target {C1_TARGET_F1} +- {C1_TOLERANCE}), {} rows, {} rejected, {:.1}s",
            examples.len(),
            loaded.rejects.len(),
            elapsed.as_secs_f64()
        ),
    );
}

/// Brute-force scorer written from the definitions.
fn oracle(gold: &[bool], pred: &[bool]) -> [Option<f64>; 4] {
    let count = |g: bool, p: bool| gold.iter().zip(pred).filter(|&(&a, &b)| a == g && b == p).count() as f64;
    let (tp, fp, fn_, tn) = (count(true, true), count(false, true), count(true, false), count(false, false));
    let precision = (tp + fp > 0.0).then(|| tp / (tp + fp));
    let recall = (tp + fn_ > 0.0).then(|| tp / (tp + fn_));
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    let accuracy = (!gold.is_empty()).then(|| (tp + tn) / gold.len() as f64);
    [precision, recall, f1, accuracy]
}

#[test]
fn c02_metric_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = Vec::new();
    for case in 0..1000 {
        let n = rng.random_range(0..60);
        let bias = rng.random_range(0.0..1.0);
        let gold: Vec<bool> = (0..n).map(|_| rng.random_bool(bias)).collect();
        let pred: Vec<bool> = (0..n).map(|_| rng.random_bool(bias)).collect();
        let m = ConfusionCounts::from_bools(&gold, &pred).metrics();
        let got = [m.precision, m.recall, m.f1, m.accuracy];
        let agrees = got.iter().zip(oracle(&gold, &pred)).all(|(a, b)| match (a, b) {
            (Some(a), Some(b)) => (a - b).abs() <= METRIC_TOLERANCE,
            (None, None) => true,
            _ => false,
        });
        if !agrees {
            mismatches.push(case);
        }
    }
    verdict(
        2,
        "metric oracle",
        mismatches.is_empty(),
        &format!("1000 random label vectors, {} mismatches (tol {METRIC_TOLERANCE:e})", mismatches.len()),
    );
}

fn weights_dir() -> Option<PathBuf> {
    std::env::var_os("DEBIAS_WEIGHTS_DIR").map(PathBuf::from)
}

#[test]
#[ignore = "needs --features transformers, pretrained weights and the MBIC data"]
fn c03_transformer_detection() {
    let name = "fine-tuned transformer detector";
    let (Some(path), Some(_)) = (std::env::var_os(MBIC_ENV).map(PathBuf::from), weights_dir()) else {
        verdict(3, name, false, "set DEBIAS_MBIC_PATH and DEBIAS_WEIGHTS_DIR");
        return;
    };
    let registry = BackendRegistry::with_defaults();
    let Ok(config) = registry.detector_config("distilbert") else {
        verdict(3, name, false, "built without the `transformers` feature");
        return;
    };
    let loaded = load_dataset(&path, DataFormat::Csv, &mbic_options(&path)).expect("load MBIC");
    let examples: Vec<AnnotatedExample> = loaded
        .records
        .iter()
        .map(|r| derive_spans(r, MatchPolicy::AllOccurrences))
        .collect();
    let parts = split(&examples, SplitRatios::default(), config.seed).unwrap();
    let backend = registry.create_detector("distilbert", &serde_json::Value::Null).unwrap();
    let (detector, _) = train_detector(&parts.train, &parts.dev, backend, &config, "trf-detector").unwrap();
    let f1 = evaluate_detection(&detector, &parts.test).unwrap().f1.unwrap_or(0.0);
    verdict(
        3,
        name,
        within(f1, C3_TARGET_F1, C3_TOLERANCE),
        &format!("test F1 {f1:.4} (target {C3_TARGET_F1} +- {C3_TOLERANCE})"),
    );
}

#[test]
#[ignore = "needs --features transformers, pretrained weights and the MBIC data"]
fn c04_transformer_recognition() {
    let name = "fine-tuned transformer recognizer";
    let (Some(path), Some(_)) = (std::env::var_os(MBIC_ENV).map(PathBuf::from), weights_dir()) else {
        verdict(4, name, false, "set DEBIAS_MBIC_PATH and DEBIAS_WEIGHTS_DIR");
        return;
    };
    let registry = BackendRegistry::with_defaults();
    let Ok(config) = registry.recognizer_config("distilbert-tagger") else {
        verdict(4, name, false, "built without the `transformers` feature");
        return;
    };
    let loaded = load_dataset(&path, DataFormat::Csv, &mbic_options(&path)).expect("load MBIC");
    let examples: Vec<AnnotatedExample> = loaded
        .records
        .iter()
        .map(|r| derive_spans(r, MatchPolicy::AllOccurrences))
        .collect();
    let parts = split(&examples, SplitRatios::default(), config.seed).unwrap();
    let backend = registry.create_recognizer("distilbert-tagger", &serde_json::Value::Null).unwrap();
    let tags = |part: &[AnnotatedExample]| -> Vec<_> {
        part.iter().map(|e| to_token_tags(e, &|t: &str| backend.tokenize(t)).unwrap()).collect()
    };
    let (train, dev) = (tags(&parts.train), tags(&parts.dev));
    let (recognizer, _) = train_recognizer(&train, &dev, backend, &config, "trf-recognizer").unwrap();
    let report =
        debias_core::evaluation::evaluate_recognition(&recognizer, &parts.test, &|t: &str| recognizer.tokenize(t))
            .unwrap();
    let (f1, acc) = (report.f1.unwrap_or(0.0), report.accuracy.unwrap_or(0.0));
    verdict(
        4,
        name,
        within(f1, C4_TARGET_F1, C4_TOLERANCE) && within(acc, C4_TARGET_ACC, C4_TOLERANCE),
        &format!("token F1 {f1:.4} (target {C4_TARGET_F1}), ACC {acc:.4} (target {C4_TARGET_ACC}), tol {C4_TOLERANCE}"),
    );
}

const ALPHABET: &[&str] = &["a", "b", "Z", " ", "  ", "-", "é", "中", "😀", "\n", ".", "'"];

fn random_text(rng: &mut ChaCha8Rng, max: usize) -> String {
    let n = rng.random_range(1..=max);
    (0..n).map(|_| *ALPHABET.choose(rng).unwrap()).collect()
}

/// Random non-overlapping, non-empty char spans.
fn random_slots(rng: &mut ChaCha8Rng, text: &str) -> Vec<MaskSlot> {
    let len = char_len(text);
    let mut cuts: BTreeSet<usize> = (0..rng.random_range(0..=6)).map(|_| rng.random_range(0..=len)).collect();
    cuts.insert(0);
    cuts.insert(len);
    let cuts: Vec<usize> = cuts.into_iter().collect();
    let chars: Vec<char> = text.chars().collect();
    cuts.windows(2)
        .filter(|w| w[0] < w[1] && rng.random_bool(0.5))
        .map(|w| MaskSlot {
            start: w[0],
            end: w[1],
            original: chars[w[0]..w[1]].iter().collect(),
        })
        .collect()
}

#[test]
fn c05_mask_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut failures = 0;
    let mut slot_total = 0;
    for _ in 0..500 {
        let text = random_text(&mut rng, 40);
        let slots = random_slots(&mut rng, &text);
        slot_total += slots.len();
        let masked = MaskedText::new(text.clone(), slots).unwrap();
        let originals: Vec<&str> = masked.slots().iter().map(|s| s.original.as_str()).collect();
        let fills: Vec<Option<&str>> = originals.iter().map(|s| Some(*s)).collect();
        if masked.render(&fills, DEFAULT_MASK_TOKEN) != text || masked.render_prefix(&originals) != text {
            failures += 1;
        }
    }
    verdict(
        5,
        "mask round-trip",
        failures == 0,
        &format!("500 random texts, {slot_total} slots, {failures} mismatches"),
    );
}

/// Deterministic proposals derived from the masked input.
fn hashed_infiller(vocab: Vec<String>) -> FnInfiller {
    FnInfiller::new(DEFAULT_MASK_TOKEN, move |text| {
        let seed = text.bytes().fold(1469598103934665603u64, |h, b| (h ^ b as u64).wrapping_mul(1099511628211));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut scored: Vec<(String, f64)> = vocab.iter().map(|t| (t.clone(), rng.random_range(0.01..1.0))).collect();
        let total: f64 = scored.iter().map(|(_, p)| p).sum();
        scored.iter_mut().for_each(|(_, p)| *p /= total);
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored
    })
}

/// Every token sequence scored by summing log-probabilities along its path.
fn brute_force(masked: &MaskedText, infiller: &FnInfiller, k: usize, excluded: &BTreeSet<String>) -> Vec<(f64, String)> {
    use debias_core::masking::InfillerBackend;
    let mut paths: Vec<(Vec<String>, f64)> = vec![(Vec::new(), 0.0)];
    for _ in 0..masked.len() {
        let mut next = Vec::new();
        for (tokens, score) in &paths {
            let input = masked.render_step(tokens, DEFAULT_MASK_TOKEN);
            for (token, p) in infiller.fill(&input, k).unwrap() {
                if excluded.contains(&token.to_lowercase()) {
                    continue;
                }
                let mut t = tokens.clone();
                t.push(token);
                next.push((t, score + p.ln()));
            }
        }
        paths = next;
    }
    let mut ranked: Vec<(f64, String)> = paths.into_iter().map(|(t, s)| (s, masked.render_prefix(&t))).collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    ranked
}

#[test]
fn c06_beam_search_oracle() {
    let mut cases = 0;
    let mut failures = Vec::new();
    let words = ["alpha", "beta", "gamma", "delta"];
    for slots in 1..=3usize {
        for tokens in 1..=4usize {
            for variant in 0..4u64 {
                cases += 1;
                let text: Vec<&str> = (0..slots).flat_map(|i| ["the", words[i]]).chain(["end"]).collect();
                let text = text.join(" ");
                let spans: Vec<MaskSlot> = (0..slots)
                    .map(|i| {
                        let start = 4 + i * 10;
                        let word = words[i];
                        let start = text[..].find(word).map_or(start, |b| char_len(&text[..b]));
                        MaskSlot {
                            start,
                            end: start + char_len(word),
                            original: word.to_string(),
                        }
                    })
                    .collect();
                let masked = MaskedText::new(text.clone(), spans).unwrap();
                let mut vocab: Vec<String> = (0..tokens).map(|t| format!("w{variant}{t}")).collect();
                if variant % 2 == 1 {
                    // an excluded original among the proposals
                    vocab.push("beta".into());
                }
                let infiller = hashed_infiller(vocab.clone());
                let k = vocab.len();
                let excluded: BTreeSet<String> = masked.slots().iter().map(|s| s.original.to_lowercase()).collect();
                let expected = brute_force(&masked, &infiller, k, &excluded);
                let full_width = vocab.len().pow(slots as u32);
                let got: Vec<FillCandidate> = match shift_fill(&masked, &infiller, k, full_width, &excluded) {
                    Ok(c) => c,
                    Err(e) => {
                        failures.push(format!("{slots} slots/{tokens} tokens: {e}"));
                        continue;
                    }
                };
                let got: Vec<(f64, String)> = got.into_iter().map(|c| (c.log_score, c.text)).collect();
                if got != expected {
                    failures.push(format!("{slots} slots/{tokens} tokens/variant {variant}"));
                }
            }
        }
    }
    verdict(
        6,
        "beam-search oracle",
        failures.is_empty(),
        &format!("{cases} cases (<=3 slots, <=4 tokens per slot), mismatches: {failures:?}"),
    );
}

#[test]
fn c07_selection_rule() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut failures = 0;
    for _ in 0..1000 {
        let original = rng.random_range(0.0..=1.0);
        let threshold = rng.random_range(0.0..=1.0);
        let n = rng.random_range(1..12);
        let mut probabilities: Vec<f64> = (0..n)
            .map(|_| if rng.random_bool(0.1) { original } else { rng.random_range(0.0..=1.0) })
            .collect();
        probabilities.sort_by(f64::total_cmp);
        let rescored: Vec<Rescored> = probabilities
            .iter()
            .enumerate()
            .map(|(i, &p)| Rescored {
                text: format!("candidate {i:02}"),
                probability: p,
            })
            .collect();
        let selection = select(original, &rescored, threshold).unwrap();
        let expected: Vec<bool> = probabilities.iter().map(|&p| p < threshold || p < original).collect();
        let got: Vec<bool> = selection.candidates.iter().map(|c| c.accepted).collect();
        let helper: Vec<bool> = probabilities.iter().map(|&p| is_accepted(p, original, threshold)).collect();
        let status_ok = (selection.status == DebiasStatus::Debiased) == expected.iter().any(|&a| a);
        if got != expected || helper != expected || !status_ok {
            failures += 1;
        }
    }
    verdict(
        7,
        "selection rule",
        failures == 0,
        &format!("1000 random triples, {failures} disagreements with (p < t) or (p < p0)"),
    );
}

fn stub_pipeline(
    detector: TableDetector,
    recognizer: TableRecognizer,
    infiller: TableInfiller,
    config: PipelineConfig,
) -> Pipeline {
    Pipeline::new(
        config,
        Arc::new(Detector::from_backend("detector", Box::new(detector))),
        Arc::new(Recognizer::from_backend("recognizer", Box::new(recognizer))),
        Arc::new(infiller),
    )
    .unwrap()
}

#[test]
fn c08_pipeline_pass_through() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut failures = Vec::new();
    let inputs = 200;
    for i in 0..inputs {
        let threshold: f64 = rng.random_range(0.05..=1.0);
        let probability = rng.random_range(0.0..threshold);
        let text = format!("{} hype {}", random_text(&mut rng, 20), i);
        let recognizer = TableRecognizer::lexicon(["hype"]);
        let infiller = TableInfiller::uniform(vec![("calm".into(), 0.9)]);
        let (rec_calls, fill_calls) = (recognizer.calls(), infiller.calls());
        let config = PipelineConfig {
            threshold,
            ..PipelineConfig::default()
        };
        let pipeline = stub_pipeline(
            TableDetector::new([(text.clone(), probability)], Missing::Error),
            recognizer,
            infiller,
            config,
        );
        let out = pipeline.run(&text).unwrap();
        let ok = out.status == DebiasStatus::UnbiasedInput
            && out.text == text
            && out.candidates.is_empty()
            && out.trace.stages == vec![Stage::Detect]
            && !out.trace.invoked(Stage::Recognize)
            && !out.trace.invoked(Stage::Fill)
            && rec_calls.get() == 0
            && fill_calls.get() == 0;
        if !ok {
            failures.push(i);
        }
    }
    verdict(
        8,
        "pipeline pass-through",
        failures.is_empty(),
        &format!("{inputs} inputs below threshold, {} reached later stages or changed text", failures.len()),
    );
}

#[test]
fn c09_end_to_end_smoke() {
    let detector = TableDetector::new([(HYPE.to_string(), 0.91)], Missing::Default(0.27));
    let infiller = TableInfiller::new(
        [
            (
                "Don't buy the [MASK] hype about tornadoes and climate change".to_string(),
                vec![("popular".into(), 0.41), ("scientific".into(), 0.22), ("media".into(), 0.12)],
            ),
            (
                "Don't buy the popular [MASK] about tornadoes and climate change".to_string(),
                vec![("claims".into(), 0.5), ("stories".into(), 0.3)],
            ),
            (
                "Don't buy the scientific [MASK] about tornadoes and climate change".to_string(),
                vec![("research".into(), 0.6), ("claims".into(), 0.2)],
            ),
            (
                "Don't buy the media [MASK] about tornadoes and climate change".to_string(),
                vec![("coverage".into(), 0.7)],
            ),
        ],
        Vec::new(),
    );
    let config = PipelineConfig {
        k: 3,
        ..PipelineConfig::default()
    };
    let pipeline = stub_pipeline(detector, TableRecognizer::lexicon(["pseudo-scientific hype"]), infiller, config);
    let out = pipeline.run(HYPE).unwrap();
    let below = out.candidates.iter().filter(|c| c.probability < out.original_probability).count();
    let recognized = out.spans.iter().any(|s| s.surface == "pseudo-scientific hype");
    verdict(
        9,
        "end-to-end smoke",
        out.status == DebiasStatus::Debiased && below >= 1 && recognized,
        &format!(
            "status {:?}, {} candidates, {below} below p0 = {:.2}, top: {:?}",
            out.status,
            out.candidates.len(),
            out.original_probability,
            out.text
        ),
    );
}

fn run_cli(model_dir: &Path, args: &[&str]) -> (i32, String) {
    let output = Command::new(env!("CARGO_BIN_EXE_debias"))
        .arg("--model-dir")
        .arg(model_dir)
        .args(args)
        .output()
        .expect("run debias");
    (output.status.code().unwrap_or(-1), String::from_utf8(output.stdout).unwrap())
}

#[test]
fn c10_cli_differential() {
    let tmp = tempfile::tempdir().unwrap();
    let data = common::write_synthetic(tmp.path(), 240, 10);
    let models = tmp.path().join("models");
    let store = ModelStore::new(&models);
    let registry = BackendRegistry::with_defaults();

    // Models trained through the library, then used from both sides.
    let loaded = load_dataset(&data, DataFormat::Jsonl, &LoadOptions::default()).unwrap();
    let examples: Vec<AnnotatedExample> = loaded
        .records
        .iter()
        .map(|r| derive_spans(r, MatchPolicy::AllOccurrences))
        .collect();
    let config: TrainingConfig = registry.detector_config("tfidf-logreg").unwrap();
    let parts = split(&examples, SplitRatios::default(), config.seed).unwrap();
    let backend = registry.create_detector("tfidf-logreg", &serde_json::Value::Null).unwrap();
    let (mut detector, _) = train_detector(&parts.train, &parts.dev, backend, &config, "detector").unwrap();
    detector.manifest_mut().split = Some(SplitInfo {
        ratios: SplitRatios::default(),
        seed: config.seed,
    });
    detector.save(&store.path_for("detector")).unwrap();

    let backend = registry.create_recognizer("lexicon", &serde_json::Value::Null).unwrap();
    let tags = |part: &[AnnotatedExample]| -> Vec<_> {
        part.iter()
            .map(|e| to_token_tags(e, &debias_core::text::word_tokenize).unwrap())
            .collect()
    };
    let rec_config = registry.recognizer_config("lexicon").unwrap();
    let (recognizer, _) =
        train_recognizer(&tags(&parts.train), &tags(&parts.dev), backend, &rec_config, "recognizer").unwrap();
    recognizer.save(&store.path_for("recognizer")).unwrap();

    let corpus: Vec<String> = loaded.records.iter().map(|r| r.text.clone()).collect();
    let infiller = registry.build_infiller("ngram", &corpus, &serde_json::Value::Null).unwrap();
    save_infiller(infiller.as_ref(), &store.path_for("infiller"), "infiller", &serde_json::Value::Null, &corpus)
        .unwrap();

    let inputs: Vec<String> = parts.test.iter().take(25).map(|e| e.text.clone()).chain([HYPE.to_string()]).collect();
    let input_file = tmp.path().join("inputs.txt");
    fs::write(&input_file, inputs.join("\n") + "\n").unwrap();
    let input_arg = input_file.to_str().unwrap();
    let mut mismatched = Vec::new();

    let detector = Detector::load(&store.path_for("detector"), &registry).unwrap();
    let refs: Vec<&str> = inputs.iter().map(String::as_str).collect();
    let expected: String = detector.detect_batch(&refs).unwrap().iter().map(|r| json_line(r).unwrap()).collect();
    let (code, got) = run_cli(&models, &["detect", "--model", "detector", "--input", input_arg]);
    if code != 0 || got != expected {
        mismatched.push("detect");
    }

    let pipeline = Pipeline::load(PipelineConfig::default(), &store, &registry).unwrap();
    let expected: String = inputs.iter().map(|t| json_line(&pipeline.run(t).unwrap()).unwrap()).collect();
    let (code, got) = run_cli(&models, &["debias", "--input", input_arg]);
    if code != 0 || got != expected {
        mismatched.push("debias");
    }

    let expected = json_line(&evaluate_detection(&detector, &parts.test).unwrap()).unwrap();
    let (code, got) = run_cli(
        &models,
        &["evaluate", "--task", "detection", "--model", "detector", "--data", data.to_str().unwrap(), "--split", "test"],
    );
    if code != 0 || got != expected {
        mismatched.push("evaluate");
    }

    verdict(
        10,
        "CLI differential",
        mismatched.is_empty(),
        &format!("{} inputs through detect, debias, evaluate; mismatched: {mismatched:?}", inputs.len()),
    );
}
