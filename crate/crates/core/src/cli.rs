//! The `debias` command line.
//!
//! Machine output is JSON lines on stdout (or `--out`); logs and
//! diagnostics go to stderr. Exit codes: 0 success, 1 input or validation
//! error, 2 model or backend error.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::backends::{save_infiller, BackendRegistry};
use crate::config::{apply_overrides, merge_toml};
use crate::dataset::{
    derive_spans, load_dataset, split, to_token_tags, write_rejects, AnnotatedExample, DataFormat, LoadOptions,
    SplitRatios,
};
use crate::debias::DebiasResult;
use crate::detection::{train_detector, Detector, TrainingConfig};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_detection, evaluate_recognition, render_table};
use crate::masking::validate_infiller;
use crate::model::{Manifest, ModelStore, SplitInfo, Task};
use crate::pipeline::{Pipeline, PipelineConfig};
use crate::recognition::{train_recognizer, BiasSpan, Lexicon, Recognizer};
use crate::text::MatchPolicy;

#[derive(Debug, Parser)]
#[command(name = "debias", version, about = "Detect, locate and rewrite biased wording in text")]
pub struct Cli {
    /// Directory holding trained models [default: $DEBIAS_MODEL_DIR or ./models]
    #[arg(long, global = true, value_name = "DIR")]
    pub model_dir: Option<PathBuf>,
    /// Seed for training, shuffling and splitting
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Write results to this file instead of stdout
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Human-readable output instead of JSON lines
    #[arg(long, global = true)]
    pub pretty: bool,
    /// Log more to stderr (-v info, -vv debug)
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a labelled dataset, derive spans and emit annotated examples
    Ingest(IngestArgs),
    /// Train a bias detector
    TrainDetect(TrainArgs),
    /// Train a biased-span recognizer
    TrainRecognize(TrainRecognizeArgs),
    /// Build an infiller from a text corpus
    TrainInfiller(TrainInfillerArgs),
    /// Bias probability for each input
    Detect(DetectArgs),
    /// Biased spans in each input
    Recognize(ModelInputArgs),
    /// Run the full pipeline and suggest rewrites
    Debias(DebiasArgs),
    /// Score a model on labelled data
    Evaluate(EvaluateArgs),
    /// Check a saved infiller against the backend contract
    ValidateInfiller(ValidateInfillerArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Dataset file (.csv, .tsv or .jsonl)
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// Overrides the format implied by the file extension
    #[arg(long, value_parser = parse_format)]
    pub format: Option<DataFormat>,
    /// Column mapping such as `text=sentence` (repeatable)
    #[arg(long = "column", value_name = "FIELD=COLUMN")]
    pub columns: Vec<String>,
    /// Separator inside the biased-words cell
    #[arg(long, default_value_t = ';')]
    pub words_delimiter: char,
    /// Write rejected rows here as JSON lines
    #[arg(long, value_name = "PATH")]
    pub rejects: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolicyArg {
    All,
    First,
}

impl From<PolicyArg> for MatchPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::All => MatchPolicy::AllOccurrences,
            PolicyArg::First => MatchPolicy::FirstOccurrence,
        }
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Which occurrences of a biased word become spans
    #[arg(long, value_enum, default_value_t = PolicyArg::All)]
    pub policy: PolicyArg,
    /// Also write train/dev/test JSONL files into this directory
    #[arg(long, value_name = "DIR")]
    pub split_dir: Option<PathBuf>,
    /// Split ratios as train,dev,test
    #[arg(long, default_value = "0.7,0.15,0.15", value_parser = parse_ratios)]
    pub split: SplitRatios,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Backend name from the registry
    #[arg(long)]
    pub backend: String,
    /// Name (under the model directory) or path of the model to write
    #[arg(long)]
    pub model_id: String,
    /// TOML file with training config keys
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Training config override (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Backend construction option (repeatable)
    #[arg(long = "option", value_name = "KEY=VALUE")]
    pub options: Vec<String>,
    /// Split ratios as train,dev,test
    #[arg(long, default_value = "0.7,0.15,0.15", value_parser = parse_ratios)]
    pub split: SplitRatios,
}

#[derive(Debug, Args)]
pub struct TrainRecognizeArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Extra phrase list, one phrase per line (repeatable)
    #[arg(long, value_name = "PATH")]
    pub lexicon: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainInfillerArgs {
    /// A dataset file (.csv/.tsv/.jsonl) or plain text, one passage per line
    #[arg(long, value_name = "PATH")]
    pub corpus: PathBuf,
    #[arg(long, default_value = "ngram")]
    pub backend: String,
    #[arg(long)]
    pub model_id: String,
    /// Backend construction option (repeatable)
    #[arg(long = "option", value_name = "KEY=VALUE")]
    pub options: Vec<String>,
}

#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct InputArgs {
    /// Inline input text
    #[arg(long)]
    pub text: Option<String>,
    /// File with one input per line
    #[arg(long, value_name = "PATH")]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelInputArgs {
    /// Model name or directory
    #[arg(long)]
    pub model: String,
    #[command(flatten)]
    pub input: InputArgs,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub model: ModelInputArgs,
    /// Decision threshold on the bias probability
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DebiasArgs {
    /// Pipeline config (TOML)
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Pipeline config override such as `k=5` (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(flatten)]
    pub input: InputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Detection,
    Recognition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    /// Every loaded example
    All,
    Train,
    Dev,
    /// The held-out part of the split recorded when the model was trained
    Test,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long)]
    pub model: String,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    pub split: SplitArg,
}

#[derive(Debug, Args)]
pub struct ValidateInfillerArgs {
    #[arg(long)]
    pub model: String,
}

/// One `recognize` output line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognitionRecord {
    pub text: String,
    pub spans: Vec<BiasSpan>,
}

/// One failed item of a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemError {
    pub index: usize,
    pub error: String,
}

fn parse_format(s: &str) -> std::result::Result<DataFormat, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_ratios(s: &str) -> std::result::Result<SplitRatios, String> {
    let ratios: SplitRatios = s.parse().map_err(|e: Error| e.to_string())?;
    ratios.validate().map_err(|e| e.to_string())?;
    Ok(ratios)
}

/// Parses `key=value` pairs into a JSON object; values are JSON when they
/// parse as JSON and strings otherwise.
pub fn parse_options(pairs: &[String]) -> Result<Value> {
    let mut map = Map::new();
    for pair in pairs {
        let (key, raw) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got `{pair}`")))?;
        let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
        map.insert(key.trim().to_string(), value);
    }
    Ok(if map.is_empty() { Value::Null } else { Value::Object(map) })
}

/// Reads one input per non-blank line.
pub fn read_inputs(input: &InputArgs) -> Result<Vec<String>> {
    match (&input.text, &input.input) {
        (Some(text), None) => Ok(vec![text.clone()]),
        (None, Some(path)) => {
            let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Ok(content
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(str::to_string)
                .collect())
        }
        _ => Err(Error::InvalidInput("give exactly one of --text or --input".into())),
    }
}

/// Serializes one JSON line exactly as the CLI writes it.
pub fn json_line<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string(value)? + "\n")
}

struct Ctx {
    store: ModelStore,
    registry: BackendRegistry,
    seed: Option<u64>,
    pretty: bool,
}

fn load_examples(data: &DataArgs, policy: MatchPolicy) -> Result<Vec<AnnotatedExample>> {
    let format = match data.format {
        Some(f) => f,
        None => DataFormat::from_path(&data.data).ok_or_else(|| {
            Error::InvalidInput(format!("cannot infer the format of {}; pass --format", data.data.display()))
        })?,
    };
    let mut options = LoadOptions {
        words_delimiter: data.words_delimiter,
        ..LoadOptions::default()
    };
    for mapping in &data.columns {
        options.columns.set(mapping)?;
    }
    let loaded = load_dataset(&data.data, format, &options)?;
    if !loaded.rejects.is_empty() {
        log::warn!("{} of {} rows rejected", loaded.rejects.len(), loaded.row_count());
    }
    if let Some(path) = &data.rejects {
        write_rejects(path, &loaded.rejects)?;
    }
    let examples: Vec<AnnotatedExample> = loaded.records.iter().map(|r| derive_spans(r, policy)).collect();
    let warnings: usize = examples.iter().map(|e| e.warnings.len()).sum();
    if warnings > 0 {
        log::info!("{warnings} biased words could not be located in their text");
    }
    Ok(examples)
}

fn training_config(
    base: TrainingConfig,
    file: Option<&Path>,
    overrides: &[String],
    seed: Option<u64>,
) -> Result<TrainingConfig> {
    let mut config = base;
    if let Some(path) = file {
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        config = merge_toml(&config, &content, TrainingConfig::KEYS)?;
    }
    config = apply_overrides(&config, overrides, TrainingConfig::KEYS)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn model_dir(ctx: &Ctx, model_id: &str) -> Result<PathBuf> {
    ctx.store.resolve(model_id)
}

fn write_pretty_or_json<T: Serialize>(out: &mut dyn Write, value: &T, pretty: bool) -> Result<()> {
    let text = if pretty {
        serde_json::to_string_pretty(value)? + "\n"
    } else {
        json_line(value)?
    };
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<output>", e))
}

fn write_str(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<output>", e))
}

fn cmd_ingest(ctx: &Ctx, args: &IngestArgs, out: &mut dyn Write) -> Result<i32> {
    let examples = load_examples(&args.data, args.policy.into())?;
    for example in &examples {
        write_pretty_or_json(out, example, ctx.pretty)?;
    }
    if let Some(dir) = &args.split_dir {
        let parts = split(&examples, args.split, ctx.seed.unwrap_or(TrainingConfig::default().seed))?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, part) in [("train", &parts.train), ("dev", &parts.dev), ("test", &parts.test)] {
            let path = dir.join(format!("{name}.jsonl"));
            let mut file = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
            for example in part {
                file.write_all(json_line(example)?.as_bytes()).map_err(|e| Error::io(&path, e))?;
            }
            file.flush().map_err(|e| Error::io(&path, e))?;
        }
        log::info!(
            "split {} examples into {}/{}/{}",
            examples.len(),
            parts.train.len(),
            parts.dev.len(),
            parts.test.len()
        );
    }
    Ok(0)
}

fn cmd_train_detect(ctx: &Ctx, args: &TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let config = training_config(
        ctx.registry.detector_config(&args.backend)?,
        args.config.as_deref(),
        &args.overrides,
        ctx.seed,
    )?;
    let examples = load_examples(&args.data, MatchPolicy::AllOccurrences)?;
    let parts = split(&examples, args.split, config.seed)?;
    let backend = ctx.registry.create_detector(&args.backend, &parse_options(&args.options)?)?;
    let (mut detector, report) = train_detector(&parts.train, &parts.dev, backend, &config, &args.model_id)?;
    detector.manifest_mut().split = Some(SplitInfo {
        ratios: args.split,
        seed: config.seed,
    });
    let dir = ctx.store.path_for(&args.model_id);
    detector.save(&dir)?;
    log::info!("saved detector to {}", dir.display());
    write_pretty_or_json(out, &report, ctx.pretty)?;
    Ok(0)
}

fn cmd_train_recognize(ctx: &Ctx, args: &TrainRecognizeArgs, out: &mut dyn Write) -> Result<i32> {
    let train_args = &args.train;
    let config = training_config(
        ctx.registry.recognizer_config(&train_args.backend)?,
        train_args.config.as_deref(),
        &train_args.overrides,
        ctx.seed,
    )?;
    let mut options = parse_options(&train_args.options)?;
    if !args.lexicon.is_empty() {
        let mut lexicon = Lexicon::default();
        for path in &args.lexicon {
            lexicon.extend(Lexicon::load(path)?.phrases());
        }
        let phrases: Vec<&str> = lexicon.phrases().collect();
        if options.is_null() {
            options = Value::Object(Map::new());
        }
        options["phrases"] = serde_json::json!(phrases);
    }
    let examples = load_examples(&train_args.data, MatchPolicy::AllOccurrences)?;
    let parts = split(&examples, train_args.split, config.seed)?;
    let backend = ctx.registry.create_recognizer(&train_args.backend, &options)?;
    let tokenize = |text: &str| backend.tokenize(text);
    let to_tags = |part: &[AnnotatedExample]| -> Result<Vec<_>> {
        part.iter().map(|e| to_token_tags(e, &tokenize)).collect()
    };
    let (train, dev) = (to_tags(&parts.train)?, to_tags(&parts.dev)?);
    let (mut recognizer, report) = train_recognizer(&train, &dev, backend, &config, &train_args.model_id)?;
    recognizer.manifest_mut().split = Some(SplitInfo {
        ratios: train_args.split,
        seed: config.seed,
    });
    let dir = ctx.store.path_for(&train_args.model_id);
    recognizer.save(&dir)?;
    log::info!("saved recognizer to {}", dir.display());
    write_pretty_or_json(out, &report, ctx.pretty)?;
    Ok(0)
}

fn read_corpus(path: &Path) -> Result<Vec<String>> {
    match DataFormat::from_path(path) {
        Some(format) => Ok(load_dataset(path, format, &LoadOptions::default())?
            .records
            .into_iter()
            .map(|r| r.text)
            .collect()),
        None => {
            let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Ok(content
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(str::to_string)
                .collect())
        }
    }
}

#[derive(Debug, Serialize)]
struct InfillerSummary<'a> {
    model_id: &'a str,
    backend: &'a str,
    corpus_size: usize,
    mask_token: &'a str,
}

fn cmd_train_infiller(ctx: &Ctx, args: &TrainInfillerArgs, out: &mut dyn Write) -> Result<i32> {
    let corpus = read_corpus(&args.corpus)?;
    if corpus.is_empty() {
        return Err(Error::InvalidInput(format!("{} holds no text", args.corpus.display())));
    }
    let options = parse_options(&args.options)?;
    let infiller = ctx.registry.build_infiller(&args.backend, &corpus, &options)?;
    let dir = ctx.store.path_for(&args.model_id);
    save_infiller(infiller.as_ref(), &dir, &args.model_id, &options, &corpus)?;
    log::info!("saved infiller to {}", dir.display());
    let summary = InfillerSummary {
        model_id: &args.model_id,
        backend: infiller.backend_name(),
        corpus_size: corpus.len(),
        mask_token: infiller.mask_token(),
    };
    write_pretty_or_json(out, &summary, ctx.pretty)?;
    Ok(0)
}

fn cmd_detect(ctx: &Ctx, args: &DetectArgs, out: &mut dyn Write) -> Result<i32> {
    let mut detector = Detector::load(&model_dir(ctx, &args.model.model)?, &ctx.registry)?;
    if let Some(t) = args.threshold {
        detector = detector.with_threshold(t)?;
    }
    let inputs = read_inputs(&args.model.input)?;
    let texts: Vec<&str> = inputs.iter().map(String::as_str).collect();
    for chunk in texts.chunks(256) {
        for (text, result) in chunk.iter().zip(detector.detect_batch(chunk)?) {
            if ctx.pretty {
                write_str(out, &format!("{:.4}  {:<10}  {text}\n", result.probability, result.label))?;
            } else {
                write_str(out, &json_line(&result)?)?;
            }
        }
    }
    Ok(0)
}

fn cmd_recognize(ctx: &Ctx, args: &ModelInputArgs, out: &mut dyn Write) -> Result<i32> {
    let recognizer = Recognizer::load(&model_dir(ctx, &args.model)?, &ctx.registry)?;
    for text in read_inputs(&args.input)? {
        let spans = recognizer.recognize(&text)?;
        if ctx.pretty {
            let surfaces: Vec<&str> = spans.iter().map(|s| s.surface.as_str()).collect();
            write_str(out, &format!("{text}\n  -> {}\n", surfaces.join(" | ")))?;
        } else {
            write_str(out, &json_line(&RecognitionRecord { text, spans })?)?;
        }
    }
    Ok(0)
}

/// Pipeline config from an optional file plus overrides and `--seed`.
pub fn pipeline_config(file: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<PipelineConfig> {
    let base = match file {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let mut config = base.with_overrides(overrides)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn render_debias(result: &DebiasResult) -> String {
    let mut text = format!(
        "{}\n  status: {:?}  p(biased) = {:.4}\n",
        result.original_text, result.status, result.original_probability
    );
    if !result.spans.is_empty() {
        let surfaces: Vec<&str> = result.spans.iter().map(|s| s.surface.as_str()).collect();
        text.push_str(&format!("  biased: {}\n", surfaces.join(" | ")));
    }
    for c in &result.candidates {
        let mark = if c.accepted { "+" } else { "-" };
        text.push_str(&format!("  {mark} {:.4}  {}\n", c.probability, c.text));
    }
    if let Some(d) = &result.diagnostic {
        text.push_str(&format!("  note: {d}\n"));
    }
    text
}

fn cmd_debias(ctx: &Ctx, args: &DebiasArgs, out: &mut dyn Write) -> Result<i32> {
    let config = pipeline_config(args.config.as_deref(), &args.overrides, ctx.seed)?;
    let pipeline = Pipeline::load(config, &ctx.store, &ctx.registry)?;
    let inputs = read_inputs(&args.input)?;
    if args.input.text.is_some() {
        let result = pipeline.run(&inputs[0])?;
        write_debias(out, &result, ctx.pretty)?;
        return Ok(0);
    }
    let mut code = 0;
    for (index, item) in pipeline.run_batch(&inputs).into_iter().enumerate() {
        match item {
            Ok(result) => write_debias(out, &result, ctx.pretty)?,
            Err(e) => {
                log::error!("input {index}: {e}");
                code = code.max(e.exit_code());
                write_str(
                    out,
                    &json_line(&ItemError {
                        index,
                        error: e.to_string(),
                    })?,
                )?;
            }
        }
    }
    Ok(code)
}

fn write_debias(out: &mut dyn Write, result: &DebiasResult, pretty: bool) -> Result<()> {
    if pretty {
        write_str(out, &render_debias(result))
    } else {
        write_str(out, &json_line(result)?)
    }
}

fn select_split(examples: Vec<AnnotatedExample>, which: SplitArg, manifest: &Manifest) -> Result<Vec<AnnotatedExample>> {
    if which == SplitArg::All {
        return Ok(examples);
    }
    let info = manifest.split.as_ref().ok_or_else(|| {
        Error::Config(format!("model `{}` records no split; use --split all", manifest.model_id))
    })?;
    let parts = split(&examples, info.ratios, info.seed)?;
    Ok(match which {
        SplitArg::Train => parts.train,
        SplitArg::Dev => parts.dev,
        _ => parts.test,
    })
}

fn cmd_evaluate(ctx: &Ctx, args: &EvaluateArgs, out: &mut dyn Write) -> Result<i32> {
    let dir = model_dir(ctx, &args.model)?;
    let examples = load_examples(&args.data, MatchPolicy::AllOccurrences)?;
    let report = match args.task {
        TaskArg::Detection => {
            let detector = Detector::load(&dir, &ctx.registry)?;
            let test = select_split(examples, args.split, detector.manifest())?;
            evaluate_detection(&detector, &test)?
        }
        TaskArg::Recognition => {
            let recognizer = Recognizer::load(&dir, &ctx.registry)?;
            let test = select_split(examples, args.split, recognizer.manifest())?;
            evaluate_recognition(&recognizer, &test, &|t: &str| recognizer.tokenize(t))?
        }
    };
    if ctx.pretty {
        write_str(out, &render_table(&[(&report.model_id, &report)], args.task == TaskArg::Recognition))?;
    } else {
        write_str(out, &json_line(&report)?)?;
    }
    Ok(0)
}

fn cmd_validate_infiller(ctx: &Ctx, args: &ValidateInfillerArgs, out: &mut dyn Write) -> Result<i32> {
    let dir = model_dir(ctx, &args.model)?;
    let manifest = Manifest::read(&dir)?;
    manifest.expect_task(Task::Infilling)?;
    let infiller = ctx.registry.load_infiller_unchecked(&manifest, &dir)?;
    let report = validate_infiller(infiller.as_ref());
    write_pretty_or_json(out, &report, ctx.pretty)?;
    Ok(0)
}

/// Runs a parsed command, writing its payload to `out`. Returns the exit
/// code for commands that can partially fail.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    let ctx = Ctx {
        store: cli.model_dir.clone().map_or_else(ModelStore::from_env, ModelStore::new),
        registry: BackendRegistry::with_defaults(),
        seed: cli.seed,
        pretty: cli.pretty,
    };
    let code = match &cli.command {
        Command::Ingest(a) => cmd_ingest(&ctx, a, out),
        Command::TrainDetect(a) => cmd_train_detect(&ctx, a, out),
        Command::TrainRecognize(a) => cmd_train_recognize(&ctx, a, out),
        Command::TrainInfiller(a) => cmd_train_infiller(&ctx, a, out),
        Command::Detect(a) => cmd_detect(&ctx, a, out),
        Command::Recognize(a) => cmd_recognize(&ctx, a, out),
        Command::Debias(a) => cmd_debias(&ctx, a, out),
        Command::Evaluate(a) => cmd_evaluate(&ctx, a, out),
        Command::ValidateInfiller(a) => cmd_validate_infiller(&ctx, a, out),
    }?;
    out.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(code)
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Entry point used by the `debias` binary.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    init_logging(cli.verbose);

    let result = match &cli.out {
        Some(path) => File::create(path)
            .map_err(|e| Error::io(path, e))
            .and_then(|file| execute(&cli, &mut BufWriter::new(file))),
        None => execute(&cli, &mut io::stdout().lock()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Shared handle so callers can keep one loaded pipeline around.
pub fn load_pipeline(config: PipelineConfig, model_dir: Option<&Path>) -> Result<Arc<Pipeline>> {
    let store = model_dir.map_or_else(ModelStore::from_env, ModelStore::new);
    Ok(Arc::new(Pipeline::load(config, &store, &BackendRegistry::with_defaults())?))
}
