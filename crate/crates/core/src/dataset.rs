//! Ingestion of annotated news snippets, span derivation and BIO encoding.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::text::{char_len, match_phrases, CharOffsets, MatchPolicy, Token, Tokenize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "BIASED")]
    Biased,
    #[serde(rename = "NON_BIASED")]
    NonBiased,
}

impl Label {
    pub fn is_biased(self) -> bool {
        self == Label::Biased
    }

    pub fn from_biased(biased: bool) -> Self {
        if biased {
            Label::Biased
        } else {
            Label::NonBiased
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Biased => "BIASED",
            Label::NonBiased => "NON_BIASED",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    /// Accepts the usual spellings: `Biased`, `Non-biased`, `NON_BIASED`,
    /// `unbiased`, `1`/`0`, `true`/`false`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        match key.as_str() {
            "biased" | "bias" | "1" | "true" | "yes" => Ok(Label::Biased),
            "nonbiased" | "notbiased" | "unbiased" | "nobias" | "0" | "false" | "no" => Ok(Label::NonBiased),
            _ => Err(s.to_string()),
        }
    }
}

pub trait HasLabel {
    fn label(&self) -> Label;
}

/// One annotated news snippet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
    #[serde(default)]
    pub biased_words: Vec<String>,
    pub label: Label,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extras: BTreeMap<String, String>,
}

impl DatasetRecord {
    pub fn new(text: impl Into<String>, label: Label, biased_words: Vec<String>) -> Self {
        Self {
            text: text.into(),
            url: None,
            source: None,
            topic: None,
            biased_words,
            label,
            extras: BTreeMap::new(),
        }
    }

    /// Checks the record invariants, returning the first violation.
    pub fn validate(&self) -> Result<(), String> {
        if self.text.trim().is_empty() {
            return Err("text is empty".into());
        }
        if self.label == Label::NonBiased && !self.biased_words.is_empty() {
            return Err("NON_BIASED record carries biased words".into());
        }
        if self.biased_words.iter().any(|w| w.trim().is_empty()) {
            return Err("empty biased-word entry".into());
        }
        Ok(())
    }
}

impl HasLabel for DatasetRecord {
    fn label(&self) -> Label {
        self.label
    }
}

/// A char-offset span of annotated text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedExample {
    pub text: String,
    pub spans: Vec<Span>,
    pub label: Label,
    /// Biased-word annotations that could not be located in the text.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl AnnotatedExample {
    pub fn validate(&self) -> Result<(), String> {
        let offsets = CharOffsets::new(&self.text);
        let mut last_end = 0;
        for (i, span) in self.spans.iter().enumerate() {
            if span.start >= span.end || span.end > offsets.len() {
                return Err(format!("span {i} out of bounds"));
            }
            if i > 0 && span.start < last_end {
                return Err(format!("span {i} overlaps or is out of order"));
            }
            if offsets.slice(span.start, span.end) != Some(span.surface.as_str()) {
                return Err(format!("span {i} surface does not match text"));
            }
            last_end = span.end;
        }
        Ok(())
    }
}

impl HasLabel for AnnotatedExample {
    fn label(&self) -> Label {
        self.label
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tag {
    #[serde(rename = "B-BIAS")]
    Begin,
    #[serde(rename = "I-BIAS")]
    Inside,
    #[serde(rename = "O")]
    Outside,
}

impl Tag {
    pub const ALL: [Tag; 3] = [Tag::Begin, Tag::Inside, Tag::Outside];

    pub fn is_bias(self) -> bool {
        self != Tag::Outside
    }

    pub fn index(self) -> usize {
        match self {
            Tag::Begin => 0,
            Tag::Inside => 1,
            Tag::Outside => 2,
        }
    }
}

/// Repairs an `I` that follows `O` (or starts the sequence) into a `B`.
pub fn repair_bio(tags: &mut [Tag]) {
    let mut prev = Tag::Outside;
    for tag in tags.iter_mut() {
        if *tag == Tag::Inside && prev == Tag::Outside {
            *tag = Tag::Begin;
        }
        prev = *tag;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTagSequence {
    pub tokens: Vec<String>,
    pub tags: Vec<Tag>,
    pub offsets: Vec<(usize, usize)>,
}

impl TokenTagSequence {
    pub fn validate(&self) -> Result<(), String> {
        if self.tokens.len() != self.tags.len() || self.tokens.len() != self.offsets.len() {
            return Err("tokens, tags and offsets differ in length".into());
        }
        for pair in self.tags.windows(2) {
            if pair[0] == Tag::Outside && pair[1] == Tag::Inside {
                return Err("I-BIAS follows O".into());
            }
        }
        if self.tags.first() == Some(&Tag::Inside) {
            return Err("sequence starts with I-BIAS".into());
        }
        Ok(())
    }

    /// Char ranges covered by each B/I run.
    pub fn decode_spans(&self) -> Vec<(usize, usize)> {
        decode_bio(&self.tags, &self.offsets)
    }
}

pub(crate) fn decode_bio(tags: &[Tag], offsets: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut current: Option<(usize, usize)> = None;
    for (tag, &(start, end)) in tags.iter().zip(offsets) {
        match tag {
            Tag::Begin => {
                spans.extend(current.take());
                current = Some((start, end));
            }
            Tag::Inside => match current.as_mut() {
                Some(span) => span.1 = end,
                None => current = Some((start, end)),
            },
            Tag::Outside => spans.extend(current.take()),
        }
    }
    spans.extend(current);
    spans
}

/// Locates each biased-word string in the record text.
pub fn derive_spans(record: &DatasetRecord, policy: MatchPolicy) -> AnnotatedExample {
    let outcome = match_phrases(&record.text, &record.biased_words, policy);
    let offsets = CharOffsets::new(&record.text);
    let spans = outcome
        .matches
        .iter()
        .map(|m| Span {
            start: m.start,
            end: m.end,
            surface: offsets.slice(m.start, m.end).unwrap_or_default().to_string(),
        })
        .collect();
    let warnings = outcome
        .unmatched
        .iter()
        .map(|&i| format!("biased word not found in text: {:?}", record.biased_words[i]))
        .collect();
    AnnotatedExample {
        text: record.text.clone(),
        spans,
        label: record.label,
        warnings,
    }
}

/// Encodes spans as B/I/O tags over the tokens produced by `tokenize`.
pub fn to_token_tags(example: &AnnotatedExample, tokenize: Tokenize<'_>) -> Result<TokenTagSequence> {
    let tokens: Vec<Token> = tokenize(&example.text);
    let len = char_len(&example.text);
    let mut prev_start = 0;
    for token in &tokens {
        if token.start > token.end || token.end > len {
            return Err(Error::InvalidInput(format!(
                "token {:?} has offsets ({}, {}) outside text of length {len}",
                token.text, token.start, token.end
            )));
        }
        if token.start < prev_start {
            return Err(Error::InvalidInput(format!("token {:?} offsets are decreasing", token.text)));
        }
        prev_start = token.start;
    }

    let mut tags = vec![Tag::Outside; tokens.len()];
    for span in &example.spans {
        let mut first = true;
        for (i, token) in tokens.iter().enumerate() {
            if token.start < span.end && span.start < token.end {
                if tags[i] == Tag::Outside {
                    tags[i] = if first { Tag::Begin } else { Tag::Inside };
                }
                first = false;
            }
        }
    }
    repair_bio(&mut tags);

    Ok(TokenTagSequence {
        offsets: tokens.iter().map(|t| (t.start, t.end)).collect(),
        tokens: tokens.into_iter().map(|t| t.text).collect(),
        tags,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Tsv,
    Jsonl,
}

impl DataFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(DataFormat::Csv),
            "tsv" | "tab" => Some(DataFormat::Tsv),
            "jsonl" | "ndjson" => Some(DataFormat::Jsonl),
            _ => None,
        }
    }
}

impl FromStr for DataFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(DataFormat::Csv),
            "tsv" => Ok(DataFormat::Tsv),
            "jsonl" => Ok(DataFormat::Jsonl),
            other => Err(format!("unknown data format `{other}`")),
        }
    }
}

/// Maps record fields onto source column names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub text: String,
    pub label: String,
    pub biased_words: String,
    pub url: String,
    pub source: String,
    pub topic: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            text: "text".into(),
            label: "label".into(),
            biased_words: "biased_words".into(),
            url: "url".into(),
            source: "source".into(),
            topic: "topic".into(),
        }
    }
}

impl ColumnMap {
    /// Sets one mapping from a `field=column` pair.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (field, column) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected field=column, got `{assignment}`")))?;
        let slot = match field.trim() {
            "text" => &mut self.text,
            "label" => &mut self.label,
            "biased_words" => &mut self.biased_words,
            "url" => &mut self.url,
            "source" => &mut self.source,
            "topic" => &mut self.topic,
            other => return Err(Error::Config(format!("unknown column role `{other}`"))),
        };
        *slot = column.trim().to_string();
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadOptions {
    pub columns: ColumnMap,
    /// Separator between entries of the biased-words cell.
    pub words_delimiter: char,
    /// Label values meaning "annotators did not agree"; such rows are
    /// rejected rather than failing the load. Compared case-insensitively.
    pub unlabelled: Vec<String>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            columns: ColumnMap::default(),
            words_delimiter: ';',
            unlabelled: vec!["No agreement".into()],
        }
    }
}

impl LoadOptions {
    /// `Ok(None)` for an unlabelled row, an error for anything unparseable.
    fn label(&self, value: &str, row: usize) -> Result<Option<Label>> {
        if self.unlabelled.iter().any(|u| u.trim().eq_ignore_ascii_case(value.trim())) {
            return Ok(None);
        }
        value
            .parse::<Label>()
            .map(Some)
            .map_err(|value| Error::InvalidLabel { row, value })
    }
}

fn reject(row: usize, reason: String, out: &mut LoadedDataset) {
    log::warn!("row {row} rejected: {reason}");
    out.rejects.push(Reject { row, reason });
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    /// 1-based data row (header excluded).
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadedDataset {
    pub records: Vec<DatasetRecord>,
    pub rejects: Vec<Reject>,
}

impl LoadedDataset {
    pub fn row_count(&self) -> usize {
        self.records.len() + self.rejects.len()
    }
}

/// Parses a biased-words cell. Handles delimiter-separated strings as well
/// as JSON or Python style list literals (`['a', 'b']`).
pub fn parse_biased_words(cell: &str, delimiter: char) -> Vec<String> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Vec::new();
    }
    if cell.starts_with('[') && cell.ends_with(']') {
        if let Ok(words) = serde_json::from_str::<Vec<String>>(cell) {
            return words.into_iter().map(|w| w.trim().to_string()).filter(|w| !w.is_empty()).collect();
        }
        return cell[1..cell.len() - 1]
            .split(',')
            .map(|w| w.trim().trim_matches(|c| c == '\'' || c == '"').trim().to_string())
            .filter(|w| !w.is_empty())
            .collect();
    }
    cell.split(delimiter)
        .map(|w| w.trim().to_string())
        .filter(|w| !w.is_empty())
        .collect()
}

pub fn load_dataset(path: &Path, format: DataFormat, options: &LoadOptions) -> Result<LoadedDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    match format {
        DataFormat::Csv => load_delimited(file, b',', options),
        DataFormat::Tsv => load_delimited(file, b'\t', options),
        DataFormat::Jsonl => load_jsonl(BufReader::new(file), path, options),
    }
}

fn load_delimited(reader: impl std::io::Read, delimiter: u8, options: &LoadOptions) -> Result<LoadedDataset> {
    let mut csv = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .from_reader(reader);
    let headers: Vec<String> = csv.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let cols = &options.columns;
    let text_col = find(&cols.text).ok_or_else(|| Error::MissingColumn(cols.text.clone()))?;
    let label_col = find(&cols.label).ok_or_else(|| Error::MissingColumn(cols.label.clone()))?;
    let words_col = find(&cols.biased_words);
    let url_col = find(&cols.url);
    let source_col = find(&cols.source);
    let topic_col = find(&cols.topic);
    let known = [Some(text_col), Some(label_col), words_col, url_col, source_col, topic_col];

    let mut out = LoadedDataset::default();
    for (i, row) in csv.records().enumerate() {
        let row_number = i + 1;
        let row = row?;
        let cell = |col: Option<usize>| col.and_then(|c| row.get(c)).map(str::to_string);
        let label_cell = cell(Some(label_col)).unwrap_or_default();
        let Some(label) = options.label(&label_cell, row_number)? else {
            reject(row_number, format!("no agreed label ({label_cell})"), &mut out);
            continue;
        };
        let extras = headers
            .iter()
            .enumerate()
            .filter(|(c, _)| !known.contains(&Some(*c)))
            .filter_map(|(c, h)| row.get(c).map(|v| (h.clone(), v.to_string())))
            .collect();
        let record = DatasetRecord {
            text: cell(Some(text_col)).unwrap_or_default(),
            url: cell(url_col).filter(|s| !s.is_empty()),
            source: cell(source_col).filter(|s| !s.is_empty()),
            topic: cell(topic_col).filter(|s| !s.is_empty()),
            biased_words: cell(words_col)
                .map(|c| parse_biased_words(&c, options.words_delimiter))
                .unwrap_or_default(),
            label,
            extras,
        };
        accept(record, row_number, &mut out);
    }
    Ok(out)
}

fn load_jsonl(reader: impl BufRead, path: &Path, options: &LoadOptions) -> Result<LoadedDataset> {
    let cols = &options.columns;
    let mut out = LoadedDataset::default();
    let mut row_number = 0;
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        row_number += 1;
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("row {row_number}: {e}")))?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Parse(format!("row {row_number}: expected a JSON object")))?;
        if row_number == 1 {
            for required in [&cols.text, &cols.label] {
                if !obj.contains_key(required.as_str()) {
                    return Err(Error::MissingColumn(required.clone()));
                }
            }
        }
        let as_string = |key: &str| -> Option<String> {
            match obj.get(key)? {
                serde_json::Value::Null => None,
                serde_json::Value::String(s) => Some(s.clone()),
                other => Some(other.to_string()),
            }
        };
        let label_value = as_string(&cols.label).unwrap_or_default();
        let Some(label) = options.label(&label_value, row_number)? else {
            reject(row_number, format!("no agreed label ({label_value})"), &mut out);
            continue;
        };
        let biased_words = match obj.get(cols.biased_words.as_str()) {
            Some(serde_json::Value::Array(items)) => items
                .iter()
                .map(|v| v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string()))
                .collect(),
            Some(serde_json::Value::String(s)) => parse_biased_words(s, options.words_delimiter),
            _ => Vec::new(),
        };
        let known = [&cols.text, &cols.label, &cols.biased_words, &cols.url, &cols.source, &cols.topic];
        let extras = obj
            .iter()
            .filter(|(k, _)| !known.iter().any(|c| c.as_str() == k.as_str()))
            .map(|(k, v)| {
                let v = v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string());
                (k.clone(), v)
            })
            .collect();
        let record = DatasetRecord {
            text: as_string(&cols.text).unwrap_or_default(),
            url: as_string(&cols.url),
            source: as_string(&cols.source),
            topic: as_string(&cols.topic),
            biased_words,
            label,
            extras,
        };
        accept(record, row_number, &mut out);
    }
    Ok(out)
}

fn accept(record: DatasetRecord, row: usize, out: &mut LoadedDataset) {
    match record.validate() {
        Ok(()) => out.records.push(record),
        Err(reason) => reject(row, reason, out),
    }
}

pub fn write_rejects(path: &Path, rejects: &[Reject]) -> Result<()> {
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    for reject in rejects {
        writeln!(file, "{}", serde_json::to_string(reject)?).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Writes records as JSONL in the same schema [`load_dataset`] reads.
pub fn write_records(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    for record in records {
        writeln!(file, "{}", serde_json::to_string(record)?).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.70,
            dev: 0.15,
            test: 0.15,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, dev: f64, test: f64) -> Self {
        Self { train, dev, test }
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.dev, self.test];
        if parts.iter().any(|r| !r.is_finite() || *r <= 0.0) {
            return Err(Error::InvalidInput(format!("split ratios must be positive, got {parts:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("split ratios must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

impl FromStr for SplitRatios {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| Error::InvalidInput(format!("ratio `{p}`: {e}"))))
            .collect::<Result<_>>()?;
        match parts[..] {
            [train, dev, test] => Ok(Self { train, dev, test }),
            _ => Err(Error::InvalidInput(format!("expected three ratios, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub dev: Vec<T>,
    pub test: Vec<T>,
}

/// Stratified, seeded train/dev/test partition.
///
/// Each label group is shuffled independently and the groups are then
/// interleaved by relative position, so every prefix of the merged order
/// holds the labels in (nearly) the global proportion. The merged order is
/// cut at the target sizes.
pub fn split<T: Clone + HasLabel>(records: &[T], ratios: SplitRatios, seed: u64) -> Result<Split<T>> {
    ratios.validate()?;
    let n = records.len();
    if n < 3 {
        return Err(Error::InvalidInput(format!("need at least 3 records to split, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry(r.label()).or_default().push(i);
    }
    let mut keyed: Vec<(f64, Label, usize)> = Vec::with_capacity(n);
    for (label, idx) in groups.iter_mut() {
        idx.shuffle(&mut rng);
        let len = idx.len() as f64;
        keyed.extend(idx.iter().enumerate().map(|(rank, &i)| ((rank as f64 + 0.5) / len, *label, i)));
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut train_n = (n as f64 * ratios.train).round() as usize;
    let mut dev_n = (n as f64 * ratios.dev).round() as usize;
    train_n = train_n.clamp(1, n - 2);
    dev_n = dev_n.clamp(1, n - train_n - 1);

    let ordered: Vec<T> = keyed.into_iter().map(|(_, _, i)| records[i].clone()).collect();
    let mut rest = ordered.into_iter();
    let train = rest.by_ref().take(train_n).collect();
    let dev = rest.by_ref().take(dev_n).collect();
    let test = rest.collect();
    Ok(Split { train, dev, test })
}

/// Order-independent SHA-256 fingerprint of a collection of serializable items.
pub fn fingerprint<T: Serialize>(items: &[T]) -> String {
    let mut digests: Vec<Vec<u8>> = items
        .iter()
        .map(|item| {
            let json = serde_json::to_vec(item).unwrap_or_default();
            Sha256::digest(&json).to_vec()
        })
        .collect();
    digests.sort();
    let mut hasher = Sha256::new();
    for d in &digests {
        hasher.update(d);
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
