//! detect → recognize → mask → shift-fill → rescore → select.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::BackendRegistry;
use crate::config::apply_overrides;
use crate::debias::{rescore, select, DebiasResult, DebiasStatus, Rescored};
use crate::detection::{Detector, DetectionResult, DEFAULT_THRESHOLD};
use crate::error::{Error, Result};
use crate::masking::{build_masked, default_exclusions, shift_fill, FillCandidate, Granularity, InfillerBackend, MaskSlot};
use crate::model::{Manifest, ModelStore, Task};
use crate::recognition::{BiasSpan, Recognizer};
use crate::text::{split_sentences, CharOffsets};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub threshold: f64,
    /// Infiller proposals per mask.
    pub k: usize,
    /// Defaults to `k`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beam_width: Option<usize>,
    pub granularity: Granularity,
    pub detector_id: String,
    pub recognizer_id: String,
    pub infiller_id: String,
    /// Recorded for reproducibility; the bundled backends infer deterministically.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            k: 10,
            beam_width: None,
            granularity: Granularity::Word,
            detector_id: "detector".into(),
            recognizer_id: "recognizer".into(),
            infiller_id: "infiller".into(),
            seed: 42,
        }
    }
}

impl PipelineConfig {
    pub const KEYS: &'static [&'static str] = &[
        "threshold",
        "k",
        "beam_width",
        "granularity",
        "detector_id",
        "recognizer_id",
        "infiller_id",
        "seed",
    ];

    pub fn from_toml(content: &str) -> Result<Self> {
        let config: Self = toml::from_str(content).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&content)
    }

    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let config: Self = apply_overrides(self, overrides, Self::KEYS)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.beam_width == Some(0) {
            return Err(Error::Config("k and beam_width must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold must lie in [0, 1], got {}", self.threshold)));
        }
        Ok(())
    }

    pub fn beam_width(&self) -> usize {
        self.beam_width.unwrap_or(self.k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Detect,
    Recognize,
    Mask,
    Fill,
    Rescore,
    Select,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SentenceTrace {
    /// Char range of the sentence within the input.
    pub start: usize,
    pub end: usize,
    /// Spans relative to the sentence.
    pub spans: Vec<BiasSpan>,
    pub slots: Vec<MaskSlot>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub masked: Option<String>,
    pub fills: Vec<FillCandidate>,
}

/// Per-stage record of one run, in invocation order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditTrace {
    pub stages: Vec<Stage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionResult>,
    pub sentences: Vec<SentenceTrace>,
    pub rescored: Vec<Rescored>,
}

impl AuditTrace {
    pub fn invoked(&self, stage: Stage) -> bool {
        self.stages.contains(&stage)
    }
}

/// Loaded models plus config; cheap to share across threads.
#[derive(Clone)]
pub struct Pipeline {
    config: PipelineConfig,
    detector: Arc<Detector>,
    recognizer: Arc<Recognizer>,
    infiller: Arc<dyn InfillerBackend>,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("config", &self.config)
            .field("detector", &self.detector)
            .field("recognizer", &self.recognizer)
            .field("infiller", &self.infiller.backend_name())
            .finish()
    }
}

impl Pipeline {
    pub fn new(
        config: PipelineConfig,
        detector: Arc<Detector>,
        recognizer: Arc<Recognizer>,
        infiller: Arc<dyn InfillerBackend>,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            detector,
            recognizer,
            infiller,
        })
    }

    /// Resolves the three model ids through `store` and loads them.
    pub fn load(config: PipelineConfig, store: &ModelStore, registry: &BackendRegistry) -> Result<Self> {
        config.validate()?;
        let detector = Detector::load(&store.resolve(&config.detector_id)?, registry)?;
        let recognizer = Recognizer::load(&store.resolve(&config.recognizer_id)?, registry)?;
        let infiller_dir = store.resolve(&config.infiller_id)?;
        let manifest = Manifest::read(&infiller_dir)?;
        manifest.expect_task(Task::Infilling)?;
        let infiller = registry.load_infiller(&manifest, &infiller_dir)?;
        Self::new(config, Arc::new(detector), Arc::new(recognizer), Arc::from(infiller))
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn detector(&self) -> &Detector {
        &self.detector
    }

    pub fn recognizer(&self) -> &Recognizer {
        &self.recognizer
    }

    pub fn infiller(&self) -> &dyn InfillerBackend {
        self.infiller.as_ref()
    }

    /// Runs every stage on one input.
    ///
    /// Multi-sentence inputs are gated and rescored as a whole, while spans
    /// are recognized and filled per sentence. Candidate `r` combines the
    /// `r`-th fill of every rewritten sentence (or its last one, when a
    /// sentence has fewer).
    pub fn run(&self, text: &str) -> Result<DebiasResult> {
        if text.trim().is_empty() {
            return Err(Error::EmptyText);
        }
        let cfg = &self.config;
        let mut trace = AuditTrace::default();

        trace.stages.push(Stage::Detect);
        let detection = self.detector.detect(text)?;
        let original_probability = detection.probability;
        trace.detection = Some(detection);
        let passthrough = |status, trace, spans, diagnostic| DebiasResult {
            original_text: text.to_string(),
            original_probability,
            status,
            text: text.to_string(),
            candidates: Vec::new(),
            spans,
            diagnostic,
            trace,
        };
        if original_probability < cfg.threshold {
            return Ok(passthrough(DebiasStatus::UnbiasedInput, trace, Vec::new(), None));
        }

        let offsets = CharOffsets::new(text);
        let mut all_spans = Vec::new();
        for (start, end) in split_sentences(text) {
            let sentence = offsets.slice(start, end).unwrap_or_default();
            if sentence.trim().is_empty() {
                continue;
            }
            trace.stages.push(Stage::Recognize);
            let spans = self.recognizer.recognize(sentence)?;
            all_spans.extend(spans.iter().map(|s| BiasSpan {
                start: s.start + start,
                end: s.end + start,
                ..s.clone()
            }));
            trace.sentences.push(SentenceTrace {
                start,
                end,
                spans,
                ..SentenceTrace::default()
            });
        }
        if all_spans.is_empty() {
            return Ok(passthrough(DebiasStatus::NoSpansFound, trace, all_spans, None));
        }

        let mask = self.infiller.mask_token().to_string();
        let mut no_fill = None;
        for (index, sentence_trace) in trace.sentences.iter_mut().enumerate() {
            if sentence_trace.spans.is_empty() {
                continue;
            }
            let sentence = offsets.slice(sentence_trace.start, sentence_trace.end).unwrap_or_default();
            let masked = build_masked(sentence, &sentence_trace.spans, cfg.granularity)?;
            sentence_trace.slots = masked.slots().to_vec();
            sentence_trace.masked = Some(masked.render_masked(&mask));
            let exclusions = default_exclusions(&masked);
            match shift_fill(&masked, self.infiller.as_ref(), cfg.k, cfg.beam_width(), &exclusions) {
                Ok(fills) => sentence_trace.fills = fills,
                Err(Error::NoFill { slot }) => {
                    no_fill = Some(format!("no admissible fill for slot {slot} of sentence {index}"));
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        trace.stages.extend([Stage::Mask, Stage::Fill]);
        if let Some(diagnostic) = no_fill {
            log::warn!("{diagnostic}");
            return Ok(passthrough(DebiasStatus::BestEffort, trace, all_spans, Some(diagnostic)));
        }

        let combined = combine_fills(text, &trace.sentences);
        trace.stages.push(Stage::Rescore);
        let rescored = rescore(&self.detector, &combined)?;
        trace.stages.push(Stage::Select);
        let selection = select(original_probability, &rescored, cfg.threshold)?;
        trace.rescored = rescored;

        Ok(DebiasResult {
            original_text: text.to_string(),
            original_probability,
            status: selection.status,
            text: selection.candidates[0].text.clone(),
            candidates: selection.candidates,
            spans: all_spans,
            diagnostic: None,
            trace,
        })
    }

    /// `run` on every input in parallel; output order matches input order
    /// and one failing item does not stop the others.
    pub fn run_batch<S: AsRef<str> + Sync>(&self, texts: &[S]) -> Vec<Result<DebiasResult>> {
        texts.par_iter().map(|t| self.run(t.as_ref())).collect()
    }
}

fn combine_fills(text: &str, sentences: &[SentenceTrace]) -> Vec<FillCandidate> {
    let offsets = CharOffsets::new(text);
    let rank_count = sentences.iter().map(|s| s.fills.len()).max().unwrap_or(0);
    (0..rank_count)
        .map(|rank| {
            let mut out = String::with_capacity(text.len());
            let mut tokens = Vec::new();
            let mut log_score = 0.0;
            let mut cursor = 0;
            for sentence in sentences.iter().filter(|s| !s.fills.is_empty()) {
                let fill = &sentence.fills[rank.min(sentence.fills.len() - 1)];
                out.push_str(&text[offsets.byte(cursor)..offsets.byte(sentence.start)]);
                out.push_str(&fill.text);
                tokens.extend(fill.tokens.iter().cloned());
                log_score += fill.log_score;
                cursor = sentence.end;
            }
            out.push_str(&text[offsets.byte(cursor)..]);
            FillCandidate {
                tokens,
                log_score,
                text: out,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::stub::{Missing, TableDetector, TableInfiller, TableRecognizer};

    const HYPE: &str = "Don't buy the pseudo-scientific hype about tornadoes and climate change";

    fn pipeline(detector: TableDetector, recognizer: TableRecognizer, infiller: TableInfiller) -> Pipeline {
        let config = PipelineConfig {
            k: 3,
            ..PipelineConfig::default()
        };
        Pipeline::new(
            config,
            Arc::new(Detector::from_backend("det", Box::new(detector))),
            Arc::new(Recognizer::from_backend("rec", Box::new(recognizer))),
            Arc::new(infiller),
        )
        .unwrap()
    }

    fn infiller() -> TableInfiller {
        TableInfiller::uniform(vec![("popular".into(), 0.5), ("recent".into(), 0.3), ("hype".into(), 0.1)])
    }

    #[test]
    fn unbiased_passes_through() {
        let rec = TableRecognizer::lexicon(["hype"]);
        let calls = rec.calls();
        let inf = infiller();
        let fills = inf.calls();
        let p = pipeline(TableDetector::new([], Missing::Default(0.1)), rec, inf);
        let out = p.run(HYPE).unwrap();
        assert_eq!(out.status, DebiasStatus::UnbiasedInput);
        assert_eq!(out.text, HYPE);
        assert!(out.candidates.is_empty());
        assert_eq!(out.trace.stages, vec![Stage::Detect]);
        assert_eq!(calls.get(), 0);
        assert_eq!(fills.get(), 0);
    }

    #[test]
    fn no_spans_found() {
        let p = pipeline(
            TableDetector::new([], Missing::Default(0.9)),
            TableRecognizer::lexicon(["zzz"]),
            infiller(),
        );
        let out = p.run(HYPE).unwrap();
        assert_eq!(out.status, DebiasStatus::NoSpansFound);
        assert_eq!(out.text, HYPE);
        assert!(!out.trace.invoked(Stage::Fill));
    }

    #[test]
    fn hype_example_is_debiased() {
        let det = TableDetector::new([(HYPE.into(), 0.92)], Missing::Default(0.3));
        let p = pipeline(det, TableRecognizer::lexicon(["pseudo-scientific hype"]), infiller());
        let out = p.run(HYPE).unwrap();
        assert_eq!(out.status, DebiasStatus::Debiased);
        assert_eq!(out.spans[0].surface, "pseudo-scientific hype");
        assert!(out.candidates.iter().all(|c| c.probability < 0.92));
        assert_eq!(out.candidates.len(), 3);
        assert!(out.candidates.iter().all(|c| !c.text.contains("hype")));
        assert_eq!(
            out.trace.stages,
            vec![Stage::Detect, Stage::Recognize, Stage::Mask, Stage::Fill, Stage::Rescore, Stage::Select]
        );
    }

    #[test]
    fn no_fill_is_best_effort() {
        let det = TableDetector::new([], Missing::Default(0.9));
        let inf = TableInfiller::uniform(vec![("hype".into(), 0.9)]);
        let p = pipeline(det, TableRecognizer::lexicon(["hype"]), inf);
        let out = p.run(HYPE).unwrap();
        assert_eq!(out.status, DebiasStatus::BestEffort);
        assert!(out.candidates.is_empty());
        assert!(out.diagnostic.is_some());
    }

    #[test]
    fn sentences_are_filled_independently() {
        let text = "The hype grew. Nothing else happened. Critics called it hype again.";
        let det = TableDetector::new([(text.into(), 0.8)], Missing::Default(0.2));
        let p = pipeline(det, TableRecognizer::lexicon(["hype"]), infiller());
        let out = p.run(text).unwrap();
        assert_eq!(out.status, DebiasStatus::Debiased);
        assert_eq!(out.spans.len(), 2);
        assert_eq!(out.trace.sentences.len(), 3);
        assert!(out
            .candidates
            .iter()
            .any(|c| c.text == "The popular grew. Nothing else happened. Critics called it popular again."));
    }

    #[test]
    fn batch_matches_single_runs() {
        let det = TableDetector::new([(HYPE.into(), 0.92)], Missing::Default(0.1));
        let p = pipeline(det, TableRecognizer::lexicon(["hype"]), infiller());
        let inputs = [HYPE, "Markets closed flat today", " "];
        let batch = p.run_batch(&inputs);
        assert_eq!(batch.len(), 3);
        assert_eq!(batch[0].as_ref().unwrap(), &p.run(HYPE).unwrap());
        assert_eq!(batch[1].as_ref().unwrap().status, DebiasStatus::UnbiasedInput);
        assert!(batch[2].is_err());
        assert!(p.run_batch::<&str>(&[]).is_empty());
    }

    #[test]
    fn config_toml_and_overrides() {
        let cfg = PipelineConfig::from_toml("k = 5\ngranularity = \"span\"\ndetector_id = \"d\"\n").unwrap();
        assert_eq!(cfg.k, 5);
        assert_eq!(cfg.beam_width(), 5);
        assert_eq!(cfg.granularity, Granularity::Span);
        let cfg = cfg.with_overrides(&["k=15".into(), "beam_width=2".into()]).unwrap();
        assert_eq!((cfg.k, cfg.beam_width()), (15, 2));
        assert!(PipelineConfig::from_toml("bogus = 1").is_err());
        assert!(cfg.with_overrides(&["k=0".into()]).is_err());
    }
}
