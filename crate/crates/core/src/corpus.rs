//! Stimulus-keyed sentence pools.
//!
//! Documents are segmented into sentences, each sentence is scanned for
//! stimulus words, and only sentences with exactly one stimulus occurrence
//! (counting every configured target and attribute) within the token budget
//! are kept.
//!
//! Matching is whole-word. A word is a maximal run of alphanumeric characters,
//! `_` or `-`, so `warm-hearted` and `warmly` do not match `warm` while
//! `Keisha's` does match `Keisha`. Targets match case-sensitively, attributes
//! case-insensitively.
//!
//! All offsets are in Unicode scalar values (`char`s), not bytes.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use rand::seq::index;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::{Lexicon, StimulusTerm, TermIndex, TermKind};
use crate::seed;
use crate::ErrorCategory;

pub const DEFAULT_MAX_TOKENS: usize = 128;
pub const DEFAULT_DEV_SUBSAMPLE: usize = 1000;
pub const DEFAULT_MIN_PER_DIMENSION: usize = 24_000;

const CHUNK: usize = 2048;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("pool file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("pool lists unknown stimulus {0:?}")]
    UnknownStimulus(String),
    #[error("no stimuli configured")]
    NoStimuli,
    #[error("record {source_id:?}: {message}")]
    InvalidRecord { source_id: String, message: String },
}

impl CorpusError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            CorpusError::Io { .. } | CorpusError::UnknownStimulus(_) => ErrorCategory::Data,
            _ => ErrorCategory::Validation,
        }
    }
}

/// One sentence drawn for one stimulus occurrence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceRecord {
    pub text: String,
    pub stimulus: StimulusTerm,
    /// Char offset of the occurrence (inclusive).
    pub start: usize,
    /// Char offset of the occurrence (exclusive).
    pub end: usize,
    pub token_count: usize,
    pub source_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub corpus_id: String,
    pub seed: Option<u64>,
    pub config_hash: String,
}

/// Stimulus surface → sentences containing it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SentencePool {
    entries: BTreeMap<String, Vec<SentenceRecord>>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RecordFile {
    text: String,
    start: usize,
    end: usize,
    token_count: usize,
    source_id: String,
}

impl SentencePool {
    pub fn new(provenance: Provenance) -> Self {
        Self {
            entries: BTreeMap::new(),
            provenance,
        }
    }

    pub fn push(&mut self, record: SentenceRecord) {
        self.entries
            .entry(record.stimulus.surface().to_owned())
            .or_default()
            .push(record);
    }

    pub fn get(&self, surface: &str) -> &[SentenceRecord] {
        self.entries.get(surface).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn entries(&self) -> &BTreeMap<String, Vec<SentenceRecord>> {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> impl Iterator<Item = &SentenceRecord> {
        self.entries.values().flatten()
    }

    /// Records whose stimulus is of `kind`, in key order.
    pub fn records_of_kind(&self, kind: TermKind) -> Vec<&SentenceRecord> {
        self.records().filter(|r| r.stimulus.kind() == kind).collect()
    }

    /// Keeps only the listed surfaces.
    pub fn restrict<'a>(&self, surfaces: impl IntoIterator<Item = &'a str>) -> SentencePool {
        let mut out = SentencePool::new(self.provenance.clone());
        for s in surfaces {
            if let Some(v) = self.entries.get(s) {
                out.entries.insert(s.to_owned(), v.clone());
            }
        }
        out
    }

    /// `{surface: [{text, start, end, token_count, source_id}, ...]}`
    pub fn to_json_string(&self) -> String {
        let file: BTreeMap<&str, Vec<RecordFile>> = self
            .entries
            .iter()
            .map(|(k, v)| {
                let recs = v
                    .iter()
                    .map(|r| RecordFile {
                        text: r.text.clone(),
                        start: r.start,
                        end: r.end,
                        token_count: r.token_count,
                        source_id: r.source_id.clone(),
                    })
                    .collect();
                (k.as_str(), recs)
            })
            .collect();
        serde_json::to_string(&file).expect("pool serialises")
    }

    /// Parses the pool format, re-attaching stimuli from `terms` and checking
    /// that each span really covers its key.
    pub fn from_json_str(text: &str, terms: &TermIndex) -> Result<Self, CorpusError> {
        let file: BTreeMap<String, Vec<RecordFile>> = serde_json::from_str(text)?;
        let mut pool = SentencePool::default();
        for (surface, recs) in file {
            let term = terms
                .get(&surface)
                .ok_or_else(|| CorpusError::UnknownStimulus(surface.clone()))?;
            let list = pool.entries.entry(surface).or_default();
            for r in recs {
                let covered: String = r.text.chars().skip(r.start).take(r.end.saturating_sub(r.start)).collect();
                let ok = match term.kind() {
                    TermKind::Target => covered == term.surface(),
                    TermKind::Attribute => covered.to_lowercase() == term.surface(),
                };
                if !ok || r.end <= r.start {
                    return Err(CorpusError::InvalidRecord {
                        source_id: r.source_id,
                        message: format!("span {}..{} does not cover {:?}", r.start, r.end, term.surface()),
                    });
                }
                list.push(SentenceRecord {
                    text: r.text,
                    stimulus: term.clone(),
                    start: r.start,
                    end: r.end,
                    token_count: r.token_count,
                    source_id: r.source_id,
                });
            }
        }
        Ok(pool)
    }

    fn provenance_path(path: &Path) -> PathBuf {
        let mut p = path.as_os_str().to_owned();
        p.push(".provenance.json");
        PathBuf::from(p)
    }

    /// Writes the pool and a `<path>.provenance.json` sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        let io = |source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        };
        fs::write(path, self.to_json_string()).map_err(io)?;
        let prov = serde_json::to_string_pretty(&self.provenance)?;
        fs::write(Self::provenance_path(path), prov).map_err(io)
    }

    pub fn load(path: impl AsRef<Path>, terms: &TermIndex) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut pool = Self::from_json_str(&text, terms)?;
        if let Ok(prov) = fs::read_to_string(Self::provenance_path(path)) {
            pool.provenance = serde_json::from_str(&prov)?;
        }
        Ok(pool)
    }
}

/// Counts tokens for the sentence-length budget.
pub trait TokenCounter: Sync {
    fn count(&self, text: &str) -> usize;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenCounter;

impl TokenCounter for WhitespaceTokenCounter {
    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

impl<F: Fn(&str) -> usize + Sync> TokenCounter for F {
    fn count(&self, text: &str) -> usize {
        self(text)
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '-'
}

/// Whole-word runs of `text` as `(char_start, char_end, word)`.
pub fn words(text: &str) -> Vec<(usize, usize, &str)> {
    let mut out = Vec::new();
    let mut begin: Option<(usize, usize)> = None;
    let mut n = 0;
    for (byte, c) in text.char_indices() {
        match (is_word_char(c), begin) {
            (true, None) => begin = Some((n, byte)),
            (false, Some((cs, bs))) => {
                out.push((cs, n, &text[bs..byte]));
                begin = None;
            }
            _ => {}
        }
        n += 1;
    }
    if let Some((cs, bs)) = begin {
        out.push((cs, n, &text[bs..]));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StimulusMatch<'a> {
    pub term: &'a StimulusTerm,
    pub start: usize,
    pub end: usize,
}

/// Finds stimulus occurrences under the whole-word rules above.
#[derive(Debug, Clone)]
pub struct StimulusMatcher {
    targets: HashMap<String, StimulusTerm>,
    attributes: HashMap<String, StimulusTerm>,
}

impl StimulusMatcher {
    pub fn new<'a>(terms: impl IntoIterator<Item = &'a StimulusTerm>) -> Self {
        let mut targets = HashMap::new();
        let mut attributes = HashMap::new();
        for t in terms {
            let map = match t.kind() {
                TermKind::Target => &mut targets,
                TermKind::Attribute => &mut attributes,
            };
            map.entry(t.surface().to_owned()).or_insert_with(|| t.clone());
        }
        Self { targets, attributes }
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty() && self.attributes.is_empty()
    }

    pub fn find_all(&self, text: &str) -> Vec<StimulusMatch<'_>> {
        let mut out = Vec::new();
        for (start, end, w) in words(text) {
            if let Some(t) = self.targets.get(w) {
                out.push(StimulusMatch { term: t, start, end });
            }
            if !self.attributes.is_empty() {
                if let Some(t) = self.attributes.get(&w.to_lowercase()) {
                    out.push(StimulusMatch { term: t, start, end });
                }
            }
        }
        out
    }
}

static SENTENCE_BREAK: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[.!?]\s+").unwrap());

/// Splits on `[.!?]` followed by whitespace, after folding line breaks into
/// spaces. Terminal punctuation stays with its sentence.
pub fn split_sentences(text: &str) -> Vec<String> {
    let normalised = text.replace("\r\n", " ").replace(['\r', '\n'], " ");
    let mut out = Vec::new();
    let mut last = 0;
    for m in SENTENCE_BREAK.find_iter(&normalised) {
        let end = m.start() + 1;
        push_trimmed(&mut out, &normalised[last..end]);
        last = m.end();
    }
    push_trimmed(&mut out, &normalised[last..]);
    out
}

fn push_trimmed(out: &mut Vec<String>, s: &str) {
    let s = s.trim();
    if !s.is_empty() {
        out.push(s.to_owned());
    }
}

/// A document from the input stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub source_id: String,
    pub body: String,
}

/// Reads newline-delimited text or newline-delimited JSON with a `body`
/// field. Lines that cannot be read or parsed come back as `Err` with a
/// description; they are counted and skipped by [`extract_pool`].
pub fn read_documents<R: BufRead>(reader: R) -> impl Iterator<Item = Result<Document, String>> {
    reader.lines().enumerate().filter_map(|(i, line)| {
        let line_no = i + 1;
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(format!("line {line_no}: {e}"))),
        };
        let trimmed = line.trim();
        if trimmed.is_empty() {
            return None;
        }
        if !trimmed.starts_with('{') {
            return Some(Ok(Document {
                source_id: format!("L{line_no}"),
                body: line,
            }));
        }
        let value: serde_json::Value = match serde_json::from_str(trimmed) {
            Ok(v) => v,
            Err(e) => return Some(Err(format!("line {line_no}: {e}"))),
        };
        let Some(body) = value.get("body").and_then(|b| b.as_str()) else {
            return Some(Err(format!("line {line_no}: no string `body` field")));
        };
        let source_id = match value.get("id") {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(serde_json::Value::Number(n)) => n.to_string(),
            _ => format!("L{line_no}"),
        };
        Some(Ok(Document {
            source_id,
            body: body.to_owned(),
        }))
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractConfig {
    pub max_tokens: usize,
    pub corpus_id: String,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            max_tokens: DEFAULT_MAX_TOKENS,
            corpus_id: String::from("corpus"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractStats {
    pub documents: usize,
    pub unreadable: usize,
    pub sentences: usize,
    pub without_stimulus: usize,
    pub multiple_stimuli: usize,
    pub over_budget: usize,
    pub kept: usize,
}

impl ExtractStats {
    fn absorb(&mut self, other: &ExtractStats) {
        self.documents += other.documents;
        self.unreadable += other.unreadable;
        self.sentences += other.sentences;
        self.without_stimulus += other.without_stimulus;
        self.multiple_stimuli += other.multiple_stimuli;
        self.over_budget += other.over_budget;
        self.kept += other.kept;
    }
}

fn extract_document(
    doc: &Document,
    matcher: &StimulusMatcher,
    max_tokens: usize,
    counter: &dyn TokenCounter,
) -> (Vec<SentenceRecord>, ExtractStats) {
    let mut stats = ExtractStats {
        documents: 1,
        ..Default::default()
    };
    let mut out = Vec::new();
    for (i, sentence) in split_sentences(&doc.body).into_iter().enumerate() {
        stats.sentences += 1;
        let matches = matcher.find_all(&sentence);
        match matches.len() {
            0 => {
                stats.without_stimulus += 1;
                continue;
            }
            1 => {}
            _ => {
                stats.multiple_stimuli += 1;
                continue;
            }
        }
        let token_count = counter.count(&sentence);
        if token_count > max_tokens {
            stats.over_budget += 1;
            continue;
        }
        let m = &matches[0];
        let record = SentenceRecord {
            stimulus: m.term.clone(),
            start: m.start,
            end: m.end,
            token_count,
            source_id: format!("{}#{i}", doc.source_id),
            text: sentence,
        };
        out.push(record);
        stats.kept += 1;
    }
    (out, stats)
}

/// Builds a sentence pool from a document stream.
///
/// Documents are processed in parallel chunks but merged in input order, so
/// the pool depends only on the stream order and the configuration.
pub fn extract_pool<I>(
    documents: I,
    stimuli: &[StimulusTerm],
    config: &ExtractConfig,
    counter: &dyn TokenCounter,
) -> Result<(SentencePool, ExtractStats), CorpusError>
where
    I: IntoIterator<Item = Result<Document, String>>,
{
    let matcher = StimulusMatcher::new(stimuli);
    if matcher.is_empty() {
        return Err(CorpusError::NoStimuli);
    }
    let mut pool = SentencePool::new(Provenance {
        corpus_id: config.corpus_id.clone(),
        seed: None,
        config_hash: seed::config_hash(config),
    });
    let mut stats = ExtractStats::default();
    let mut iter = documents.into_iter();
    loop {
        let mut chunk = Vec::with_capacity(CHUNK);
        for item in iter.by_ref().take(CHUNK) {
            match item {
                Ok(doc) => chunk.push(doc),
                Err(msg) => {
                    log::warn!("skipping unreadable document: {msg}");
                    stats.unreadable += 1;
                }
            }
        }
        if chunk.is_empty() {
            break;
        }
        let results: Vec<_> = chunk
            .par_iter()
            .map(|d| extract_document(d, &matcher, config.max_tokens, counter))
            .collect();
        for (records, s) in results {
            stats.absorb(&s);
            for r in records {
                pool.push(r);
            }
        }
    }
    Ok((pool, stats))
}

/// Keeps at most `n` records per stimulus, chosen uniformly without
/// replacement from the `dev-subsample` substream of `seed`. Kept records stay
/// in their original relative order.
pub fn subsample_dev(pool: &SentencePool, n: usize, seed_value: u64) -> SentencePool {
    let mut out = SentencePool::new(Provenance {
        seed: Some(seed_value),
        ..pool.provenance.clone()
    });
    for (surface, records) in &pool.entries {
        let kept = if records.len() <= n {
            records.clone()
        } else {
            let mut rng = seed::rng(seed_value, &format!("dev-subsample/{surface}"));
            let mut picks = index::sample(&mut rng, records.len(), n).into_vec();
            picks.sort_unstable();
            picks.into_iter().map(|i| records[i].clone()).collect()
        };
        out.entries.insert(surface.clone(), kept);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimensionKind {
    TargetSet,
    AttributeDimension,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionCount {
    pub name: String,
    pub kind: DimensionKind,
    /// Sentences over all terms of the set or dimension.
    pub total: usize,
    /// Smallest per-term count inside it.
    pub min_per_term: usize,
    pub sufficient: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolStats {
    pub per_stimulus: BTreeMap<String, usize>,
    pub per_group: BTreeMap<String, usize>,
    pub dimensions: Vec<DimensionCount>,
    pub floor: usize,
}

impl PoolStats {
    pub fn all_sufficient(&self) -> bool {
        self.dimensions.iter().all(|d| d.sufficient)
    }
}

/// Sentence counts per stimulus, per subgroup label, per target set and per
/// attribute dimension. The sufficiency flag compares the aggregate against
/// `floor`.
pub fn pool_stats(pool: &SentencePool, lexicon: &Lexicon, floor: usize) -> PoolStats {
    let mut per_stimulus = BTreeMap::new();
    let mut per_group = BTreeMap::new();
    for (surface, recs) in &pool.entries {
        per_stimulus.insert(surface.clone(), recs.len());
        for r in recs {
            *per_group.entry(r.stimulus.group().to_owned()).or_insert(0) += 1;
        }
    }
    let count = |terms: &mut dyn Iterator<Item = &StimulusTerm>| {
        let counts: Vec<usize> = terms.map(|t| pool.get(t.surface()).len()).collect();
        (counts.iter().sum::<usize>(), counts.iter().copied().min().unwrap_or(0))
    };
    let mut dimensions = Vec::new();
    for s in lexicon.stimulus_sets() {
        let (total, min_per_term) = count(&mut s.terms().iter());
        dimensions.push(DimensionCount {
            name: s.name().to_owned(),
            kind: DimensionKind::TargetSet,
            total,
            min_per_term,
            sufficient: total >= floor && total > 0,
        });
    }
    for d in lexicon.attribute_dimensions() {
        let (total, min_per_term) = count(&mut d.attributes());
        dimensions.push(DimensionCount {
            name: d.name().to_owned(),
            kind: DimensionKind::AttributeDimension,
            total,
            min_per_term,
            sufficient: total >= floor && total > 0,
        });
    }
    PoolStats {
        per_stimulus,
        per_group,
        dimensions,
        floor,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn keisha() -> StimulusTerm {
        StimulusTerm::target("Keisha", "AA-female").unwrap()
    }

    fn warm() -> StimulusTerm {
        StimulusTerm::attribute("warm", "warmth-high").unwrap()
    }

    fn docs(lines: &[&str]) -> Vec<Result<Document, String>> {
        lines
            .iter()
            .enumerate()
            .map(|(i, l)| Ok(Document { source_id: format!("d{i}"), body: l.to_string() }))
            .collect()
    }

    fn extract(lines: &[&str], terms: &[StimulusTerm]) -> (SentencePool, ExtractStats) {
        extract_pool(docs(lines), terms, &ExtractConfig::default(), &WhitespaceTokenCounter).unwrap()
    }

    #[test]
    fn two_occurrences_are_discarded() {
        let (pool, stats) = extract(&["Keisha is thoughtful and Keisha smiled."], &[keisha()]);
        assert!(pool.is_empty());
        assert_eq!(stats.multiple_stimuli, 1);
    }

    #[test]
    fn single_attribute_sentence_is_kept() {
        let (pool, _) = extract(&["The warm welcome helped."], &[warm(), keisha()]);
        let recs = pool.get("warm");
        assert_eq!(recs.len(), 1);
        assert_eq!((recs[0].start, recs[0].end), (4, 8));
        assert_eq!(recs[0].token_count, 4);
        assert!(pool.get("Keisha").is_empty());
    }

    #[test]
    fn long_sentences_are_discarded() {
        let long = format!("{} warm {}.", "word ".repeat(100), "word ".repeat(99));
        let (pool, stats) = extract(&[&long], &[warm()]);
        assert!(pool.is_empty());
        assert_eq!(stats.over_budget, 1);
    }

    #[test]
    fn matching_rules() {
        let m = StimulusMatcher::new(&[keisha(), warm()]);
        assert_eq!(m.find_all("Warm hands.").len(), 1);
        assert_eq!(m.find_all("warmly said").len(), 0);
        assert_eq!(m.find_all("a warm-hearted soul").len(), 0);
        assert_eq!(m.find_all("keisha was here").len(), 0);
        assert_eq!(m.find_all("Keisha's book").len(), 1);
        assert_eq!(m.find_all("see http://x.org/Keisha_page").len(), 0);
    }

    #[test]
    fn char_offsets_survive_multibyte_text() {
        let (pool, _) = extract(&["Café owners were warm."], &[warm()]);
        let r = &pool.get("warm")[0];
        let covered: String = r.text.chars().skip(r.start).take(r.end - r.start).collect();
        assert_eq!(covered, "warm");
    }

    #[test]
    fn sentence_splitting() {
        assert_eq!(
            split_sentences("One here. Two?\nThree!  Four"),
            vec!["One here.", "Two?", "Three!", "Four"]
        );
        assert_eq!(split_sentences("v1.2 is out"), vec!["v1.2 is out"]);
    }

    #[test]
    fn reads_plain_and_json_lines() {
        let input = "plain text line\n\n{\"id\": \"c1\", \"body\": \"json body\"}\n{\"nobody\": 1}\n{broken\n";
        let items: Vec<_> = read_documents(input.as_bytes()).collect();
        assert_eq!(items.len(), 4);
        assert_eq!(items[0].as_ref().unwrap().source_id, "L1");
        assert_eq!(items[1].as_ref().unwrap().source_id, "c1");
        assert!(items[2].is_err() && items[3].is_err());
        let (_, stats) =
            extract_pool(items, &[warm()], &ExtractConfig::default(), &WhitespaceTokenCounter).unwrap();
        assert_eq!(stats.unreadable, 2);
        assert_eq!(stats.documents, 2);
    }

    fn big_pool(per_key: usize) -> SentencePool {
        let mut pool = SentencePool::default();
        for i in 0..per_key {
            pool.push(SentenceRecord {
                text: format!("warm number {i}"),
                stimulus: warm(),
                start: 0,
                end: 4,
                token_count: 3,
                source_id: format!("s{i}"),
            });
        }
        pool
    }

    #[test]
    fn dev_subsample_behaviour() {
        let small = big_pool(5);
        assert_eq!(subsample_dev(&small, 1000, 1).entries(), small.entries());

        let big = big_pool(3000);
        let a = subsample_dev(&big, 1000, 1);
        let b = subsample_dev(&big, 1000, 1);
        let c = subsample_dev(&big, 1000, 2);
        assert_eq!(a, b);
        assert_eq!(a.get("warm").len(), 1000);
        assert_eq!(c.get("warm").len(), 1000);
        assert_ne!(a.get("warm"), c.get("warm"));
    }

    #[test]
    fn stats_floor_and_empty_pool() {
        let lex = Lexicon::from_json_str(
            r#"{"stimulus_sets": [{"name": "AA", "kind": "target", "terms": [{"surface": "Keisha"}]}],
                "attribute_dimensions": [{"name": "warmth", "pole_high": [{"surface": "warm"}], "pole_low": [{"surface": "cold"}]}]}"#,
        )
        .unwrap();
        let empty = pool_stats(&SentencePool::default(), &lex, DEFAULT_MIN_PER_DIMENSION);
        assert!(empty.dimensions.iter().all(|d| !d.sufficient && d.total == 0));

        let ten = pool_stats(&big_pool(10), &lex, DEFAULT_MIN_PER_DIMENSION);
        let w = ten.dimensions.iter().find(|d| d.name == "warmth").unwrap();
        assert_eq!((w.total, w.min_per_term, w.sufficient), (10, 0, false));
        assert_eq!(ten.per_group["warmth-high"], 10);

        let enough = pool_stats(&big_pool(24_000), &lex, DEFAULT_MIN_PER_DIMENSION);
        assert!(enough.dimensions.iter().find(|d| d.name == "warmth").unwrap().sufficient);
    }

    #[test]
    fn unknown_or_misaligned_records_fail_to_load() {
        let index: TermIndex = [warm()].into_iter().collect();
        assert!(matches!(
            SentencePool::from_json_str(r#"{"cold": []}"#, &index),
            Err(CorpusError::UnknownStimulus(_))
        ));
        let bad = r#"{"warm": [{"text": "so warm", "start": 0, "end": 2, "token_count": 2, "source_id": "x"}]}"#;
        assert!(SentencePool::from_json_str(bad, &index).is_err());
    }

    proptest! {
        #[test]
        fn pool_json_round_trips(n in 0usize..20) {
            let index: TermIndex = [warm()].into_iter().collect();
            let pool = big_pool(n);
            let back = SentencePool::from_json_str(&pool.to_json_string(), &index).unwrap();
            prop_assert_eq!(back.entries(), pool.entries());
        }

        #[test]
        fn emitted_records_have_exactly_one_match(
            sentences in proptest::collection::vec(
                proptest::collection::vec(prop_oneof!["Keisha", "warm", "Warm", "day", "the", "warmly", "keisha"], 1..8),
                1..30),
        ) {
            let lines: Vec<String> = sentences.iter().map(|w| format!("{}.", w.join(" "))).collect();
            let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
            let (pool, _) = extract(&refs, &[keisha(), warm()]);
            for r in pool.records() {
                // Independent rescan: count case rules directly on word runs.
                let hits = r.text
                    .split(|c: char| !(c.is_alphanumeric() || c == '_' || c == '-'))
                    .filter(|w| *w == "Keisha" || w.to_lowercase() == "warm")
                    .count();
                prop_assert_eq!(hits, 1);
            }
        }
    }
}
