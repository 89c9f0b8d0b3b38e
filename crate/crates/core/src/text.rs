//! Character-offset text utilities shared by every stage.
//!
//! All offsets exposed by this crate are Unicode scalar (char) indices, not
//! byte offsets, so they line up with what Python or JavaScript consumers see.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

/// A token with its half-open char range in the source text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Any function that splits text into offset-carrying tokens.
pub type Tokenize<'a> = &'a dyn Fn(&str) -> Vec<Token>;

pub fn char_len(text: &str) -> usize {
    text.chars().count()
}

/// Char-index to byte-offset table for one string.
#[derive(Debug, Clone)]
pub struct CharOffsets<'a> {
    text: &'a str,
    bytes: Vec<usize>,
}

impl<'a> CharOffsets<'a> {
    pub fn new(text: &'a str) -> Self {
        let bytes = text
            .char_indices()
            .map(|(b, _)| b)
            .chain(std::iter::once(text.len()))
            .collect();
        Self { text, bytes }
    }

    /// Number of chars in the text.
    pub fn len(&self) -> usize {
        self.bytes.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn byte(&self, char_index: usize) -> usize {
        self.bytes[char_index]
    }

    pub fn slice(&self, start: usize, end: usize) -> Option<&'a str> {
        if start > end || end > self.len() {
            return None;
        }
        Some(&self.text[self.bytes[start]..self.bytes[end]])
    }
}

pub fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    CharOffsets::new(text).slice(start, end)
}

pub fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Single-char case fold; chars whose lowercase form expands stay as-is so
/// folded text keeps the same char count as the original.
pub fn fold_char(c: char) -> char {
    let mut lower = c.to_lowercase();
    match (lower.next(), lower.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}

/// Splits on whitespace only.
pub fn whitespace_tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut current: Option<(usize, String)> = None;
    for (i, c) in text.chars().enumerate() {
        if c.is_whitespace() {
            if let Some((start, tok)) = current.take() {
                tokens.push(Token {
                    end: start + tok.chars().count(),
                    text: tok,
                    start,
                });
            }
        } else {
            current.get_or_insert_with(|| (i, String::new())).1.push(c);
        }
    }
    if let Some((start, tok)) = current {
        tokens.push(Token {
            end: start + tok.chars().count(),
            text: tok,
            start,
        });
    }
    tokens
}

/// Runs of word characters become one token; every other non-space char is
/// a token of its own. Token boundaries therefore coincide with the word
/// boundaries used by [`match_phrases`].
pub fn word_tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut word: Option<(usize, String)> = None;
    let flush = |word: &mut Option<(usize, String)>, tokens: &mut Vec<Token>| {
        if let Some((start, tok)) = word.take() {
            tokens.push(Token {
                end: start + tok.chars().count(),
                text: tok,
                start,
            });
        }
    };
    for (i, c) in text.chars().enumerate() {
        if is_word_char(c) {
            word.get_or_insert_with(|| (i, String::new())).1.push(c);
            continue;
        }
        flush(&mut word, &mut tokens);
        if !c.is_whitespace() {
            tokens.push(Token {
                text: c.to_string(),
                start: i,
                end: i + 1,
            });
        }
    }
    flush(&mut word, &mut tokens);
    tokens
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MatchPolicy {
    #[default]
    AllOccurrences,
    FirstOccurrence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhraseMatch {
    pub start: usize,
    pub end: usize,
    /// Index into the phrase slice passed to [`match_phrases`].
    pub phrase: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatchOutcome {
    /// Sorted, non-overlapping matches.
    pub matches: Vec<PhraseMatch>,
    /// Indices of phrases that matched nowhere.
    pub unmatched: Vec<usize>,
}

struct Pattern {
    index: usize,
    words: Vec<Vec<char>>,
    width: usize,
    folded: String,
}

impl Pattern {
    fn compile(index: usize, phrase: &str) -> Option<Self> {
        let words: Vec<Vec<char>> = phrase
            .split_whitespace()
            .map(|w| w.chars().map(fold_char).collect())
            .collect();
        if words.is_empty() {
            return None;
        }
        let width = words.iter().map(Vec::len).sum::<usize>() + words.len() - 1;
        let folded = words
            .iter()
            .map(|w| w.iter().collect::<String>())
            .collect::<Vec<_>>()
            .join(" ");
        Some(Self {
            index,
            words,
            width,
            folded,
        })
    }

    fn first_is_word(&self) -> bool {
        self.words[0].first().copied().is_some_and(is_word_char)
    }

    fn last_is_word(&self) -> bool {
        self.words
            .last()
            .and_then(|w| w.last())
            .copied()
            .is_some_and(is_word_char)
    }

    /// Matches at `start`; whitespace inside the phrase matches any
    /// non-empty whitespace run in the text.
    fn match_at(&self, text: &[char], start: usize) -> Option<usize> {
        if self.first_is_word() && start > 0 && is_word_char(text[start - 1]) {
            return None;
        }
        let mut pos = start;
        for (i, word) in self.words.iter().enumerate() {
            if i > 0 {
                if pos >= text.len() || !text[pos].is_whitespace() {
                    return None;
                }
                while pos < text.len() && text[pos].is_whitespace() {
                    pos += 1;
                }
            }
            if pos + word.len() > text.len() || text[pos..pos + word.len()] != word[..] {
                return None;
            }
            pos += word.len();
        }
        if self.last_is_word() && pos < text.len() && is_word_char(text[pos]) {
            return None;
        }
        Some(pos)
    }
}

/// Locates phrases case-insensitively at word boundaries.
///
/// Longer phrases are tried first. Overlapping matches keep the
/// earliest-starting span, then the longer one.
pub fn match_phrases<S: AsRef<str>>(text: &str, phrases: &[S], policy: MatchPolicy) -> MatchOutcome {
    let folded: Vec<char> = text.chars().map(fold_char).collect();
    let mut patterns: Vec<Pattern> = phrases
        .iter()
        .enumerate()
        .filter_map(|(i, p)| Pattern::compile(i, p.as_ref()))
        .collect();
    patterns.sort_by(|a, b| {
        b.width
            .cmp(&a.width)
            .then_with(|| a.folded.cmp(&b.folded))
            .then_with(|| a.index.cmp(&b.index))
    });

    let mut candidates = Vec::new();
    let mut matched = vec![false; phrases.len()];
    for pattern in &patterns {
        for start in 0..folded.len() {
            if let Some(end) = pattern.match_at(&folded, start) {
                matched[pattern.index] = true;
                candidates.push(PhraseMatch {
                    start,
                    end,
                    phrase: pattern.index,
                });
                if policy == MatchPolicy::FirstOccurrence {
                    break;
                }
            }
        }
    }

    let matches = resolve_overlaps(candidates, |m| (m.start, m.end, 1.0));
    let unmatched = (0..phrases.len()).filter(|&i| !matched[i]).collect();
    MatchOutcome { matches, unmatched }
}

/// Greedy non-overlapping selection: earliest start, then longest, then
/// highest score. Equal keys keep their input order.
pub(crate) fn resolve_overlaps<T>(mut items: Vec<T>, key: impl Fn(&T) -> (usize, usize, f64)) -> Vec<T> {
    items.sort_by(|a, b| {
        let (sa, ea, pa) = key(a);
        let (sb, eb, pb) = key(b);
        sa.cmp(&sb)
            .then_with(|| (eb - sb).cmp(&(ea - sa)))
            .then_with(|| pb.partial_cmp(&pa).unwrap_or(Ordering::Equal))
    });
    let mut kept: Vec<T> = Vec::with_capacity(items.len());
    let mut last_end = 0;
    for item in items {
        let (start, end, _) = key(&item);
        if kept.is_empty() || start >= last_end {
            last_end = end;
            kept.push(item);
        }
    }
    kept
}

const CLOSERS: &[char] = &['"', '\'', '\u{201d}', '\u{2019}', ')', ']'];

/// Simple sentence splitter. Returns trimmed, non-empty char ranges.
///
/// A boundary is terminal punctuation (`.`, `!`, `?`), optionally followed by
/// closing quotes or brackets, then whitespace and a char that is not a
/// lowercase letter.
pub fn split_sentences(text: &str) -> Vec<(usize, usize)> {
    let chars: Vec<char> = text.chars().collect();
    let mut ranges = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        if matches!(chars[i], '.' | '!' | '?') {
            let mut end = i + 1;
            while end < chars.len() && (matches!(chars[end], '.' | '!' | '?') || CLOSERS.contains(&chars[end])) {
                end += 1;
            }
            let mut next = end;
            while next < chars.len() && chars[next].is_whitespace() {
                next += 1;
            }
            if next > end && next < chars.len() && !chars[next].is_lowercase() {
                push_trimmed(&chars, start, end, &mut ranges);
                start = next;
                i = next;
                continue;
            }
            i = end;
            continue;
        }
        i += 1;
    }
    push_trimmed(&chars, start, chars.len(), &mut ranges);
    ranges
}

fn push_trimmed(chars: &[char], mut start: usize, mut end: usize, out: &mut Vec<(usize, usize)>) {
    while start < end && chars[start].is_whitespace() {
        start += 1;
    }
    while end > start && chars[end - 1].is_whitespace() {
        end -= 1;
    }
    if start < end {
        out.push((start, end));
    }
}
