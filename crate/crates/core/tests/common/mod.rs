//! Shared helpers for the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use debias_core::dataset::{write_records, DatasetRecord, Label};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const HYPE: &str = "Don't buy the pseudo-scientific hype about tornadoes and climate change";

const SUBJECTS: &[&str] = &[
    "the senator",
    "the governor",
    "city officials",
    "the committee",
    "researchers",
    "the administration",
    "local residents",
    "the company",
    "protesters",
    "the agency",
];
const NEUTRAL_VERBS: &[&str] = &["announced", "discussed", "reviewed", "proposed", "described", "reported"];
const LOADED_VERBS: &[&str] = &["slammed", "rammed through", "peddled", "botched", "smeared", "hijacked"];
const OBJECTS: &[&str] = &[
    "the budget plan",
    "the new policy",
    "the climate report",
    "the immigration bill",
    "the tax proposal",
    "the election results",
    "the health program",
    "the trade agreement",
];
const LOADED_ADJECTIVES: &[&str] = &[
    "radical",
    "disgraceful",
    "hysterical",
    "reckless",
    "so-called",
    "pseudo-scientific",
    "extremist",
    "shameful",
];
const NEUTRAL_ADJECTIVES: &[&str] = &["new", "revised", "annual", "proposed", "federal", "regional"];
const TAILS: &[&str] = &[
    "on Tuesday",
    "during the hearing",
    "in a statement",
    "after months of debate",
    "before the vote",
    "at a press briefing",
];

/// An MBIC-shaped corpus: biased rows carry loaded adjectives or verbs and
/// list them as biased words; a share of rows has flipped labels so the task
/// is not trivially separable.
pub fn synthetic_records(n: usize, seed: u64) -> Vec<DatasetRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let biased = rng.random_bool(0.5);
            let subject = *SUBJECTS.choose(&mut rng).unwrap();
            let object = *OBJECTS.choose(&mut rng).unwrap();
            let tail = *TAILS.choose(&mut rng).unwrap();
            let (text, words) = if biased {
                let adjective = *LOADED_ADJECTIVES.choose(&mut rng).unwrap();
                let (det, noun) = object.split_once(' ').unwrap();
                if rng.random_bool(0.5) {
                    let verb = *LOADED_VERBS.choose(&mut rng).unwrap();
                    (
                        format!("{subject} {verb} {det} {adjective} {noun} {tail}"),
                        vec![verb.to_string(), adjective.to_string()],
                    )
                } else {
                    let verb = *NEUTRAL_VERBS.choose(&mut rng).unwrap();
                    (format!("{subject} {verb} {det} {adjective} {noun} {tail}"), vec![adjective.to_string()])
                }
            } else {
                let verb = *NEUTRAL_VERBS.choose(&mut rng).unwrap();
                let adjective = *NEUTRAL_ADJECTIVES.choose(&mut rng).unwrap();
                let (det, noun) = object.split_once(' ').unwrap();
                (format!("{subject} {verb} {det} {adjective} {noun} {tail}"), Vec::new())
            };
            let mut chars = text.chars();
            let text: String = chars.next().map(|c| c.to_uppercase().chain(chars).collect()).unwrap_or_default();
            // Label noise: some loaded rows are annotated as neutral and vice versa.
            let flip = rng.random_bool(0.1);
            let label = Label::from_biased(biased != flip);
            let words = if label.is_biased() { words } else { Vec::new() };
            DatasetRecord::new(text, label, words)
        })
        .collect()
}

/// Writes [`synthetic_records`] as JSONL and returns the path.
pub fn write_synthetic(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let path = dir.join("synthetic.jsonl");
    write_records(&path, &synthetic_records(n, seed)).unwrap();
    path
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}
