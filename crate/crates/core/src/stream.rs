//! Corpus records and the date-ordered document stream.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::RelevanceJudgments;

/// A timestamped document. `tokens` is the token-id sequence of title and
/// body after tokenization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentRecord {
    pub doc_id: String,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    pub title: String,
    pub body: String,
    pub tokens: Vec<u32>,
}

/// Every date a document might carry, in the order they are trusted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DateCandidates {
    /// Date recovered by the article extractor.
    pub extracted_date: Option<i64>,
    /// `last-modified` response header.
    pub last_modified: Option<i64>,
    /// `date` response header.
    pub header_date: Option<i64>,
    /// Crawl time; always known.
    pub crawl_date: i64,
}

/// Picks the first available date: extracted, then `last-modified`, then the
/// `date` header, then the crawl date.
pub fn resolve_date(cands: &DateCandidates) -> i64 {
    cands
        .extracted_date
        .or(cands.last_modified)
        .or(cands.header_date)
        .unwrap_or(cands.crawl_date)
}

/// Sorts documents by `(timestamp, doc_id)`. Rejects duplicate ids.
pub fn order_stream(mut docs: Vec<DocumentRecord>) -> Result<Vec<DocumentRecord>> {
    let mut seen = HashSet::with_capacity(docs.len());
    for d in &docs {
        if !seen.insert(d.doc_id.as_str()) {
            return Err(Error::DuplicateDocId(d.doc_id.clone()));
        }
    }
    docs.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.doc_id.cmp(&b.doc_id)));
    Ok(docs)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PassageRecord {
    pub passage_id: u64,
    pub doc_id: String,
    pub window_index: u32,
    pub tokens: Vec<u32>,
}

/// Passage windowing parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Windowing {
    pub max_tokens: usize,
    /// Tokens shared between consecutive windows; must be below `max_tokens`.
    #[serde(default)]
    pub overlap: usize,
}

impl Default for Windowing {
    fn default() -> Self {
        Self { max_tokens: 180, overlap: 0 }
    }
}

/// Cuts a document into fixed-size windows; the last window holds the
/// remainder. Passage ids are assigned consecutively from `first_id`.
pub fn split_passages(doc: &DocumentRecord, windowing: Windowing, first_id: u64) -> Vec<PassageRecord> {
    let max = windowing.max_tokens.max(1);
    let stride = max - windowing.overlap.min(max - 1);
    let n = doc.tokens.len();
    let mut out = Vec::new();
    let mut start = 0usize;
    while start < n {
        let end = (start + max).min(n);
        out.push(PassageRecord {
            passage_id: first_id + out.len() as u64,
            doc_id: doc.doc_id.clone(),
            window_index: out.len() as u32,
            tokens: doc.tokens[start..end].to_vec(),
        });
        if end == n {
            break;
        }
        start += stride;
    }
    out
}

/// Maps text to token ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Tokenizer {
    /// Lower-cased alphanumeric words hashed with 32-bit FNV-1a.
    #[default]
    Hash,
    /// Whitespace-separated decimal token ids (used by synthetic corpora).
    Numeric,
}

impl Tokenizer {
    pub fn tokenize(&self, text: &str) -> Result<Vec<u32>> {
        match self {
            Tokenizer::Hash => Ok(text
                .split(|c: char| !c.is_alphanumeric())
                .filter(|w| !w.is_empty())
                .map(|w| fnv1a32(w.to_lowercase().as_bytes()))
                .collect()),
            Tokenizer::Numeric => text
                .split_whitespace()
                .map(|w| w.parse::<u32>().map_err(|_| Error::Format(format!("non-numeric token `{w}`"))))
                .collect(),
        }
    }
}

fn fnv1a32(bytes: &[u8]) -> u32 {
    let mut h: u32 = 0x811c_9dc5;
    for b in bytes {
        h ^= *b as u32;
        h = h.wrapping_mul(0x0100_0193);
    }
    h
}

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub query_id: String,
    pub text: String,
    pub tokens: Vec<u32>,
}

impl Query {
    /// Tokenizes `text`, keeping at most `max_tokens` tokens.
    pub fn new(query_id: impl Into<String>, text: impl Into<String>, tokenizer: Tokenizer, max_tokens: usize) -> Result<Self> {
        let text = text.into();
        let mut tokens = tokenizer.tokenize(&text)?;
        tokens.truncate(max_tokens);
        Ok(Self { query_id: query_id.into(), text, tokens })
    }
}

// ---------------------------------------------------------------------------
// Files

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum DateValue {
    Seconds(i64),
    Text(String),
}

impl DateValue {
    fn seconds(&self) -> Result<i64> {
        match self {
            DateValue::Seconds(s) => Ok(*s),
            DateValue::Text(t) => parse_date(t),
        }
    }
}

fn parse_date(t: &str) -> Result<i64> {
    let t = t.trim();
    if let Ok(v) = t.parse::<i64>() {
        return Ok(v);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(t) {
        return Ok(dt.timestamp());
    }
    if let Ok(dt) = NaiveDateTime::parse_from_str(t, "%Y-%m-%d %H:%M:%S") {
        return Ok(dt.and_utc().timestamp());
    }
    if let Ok(d) = NaiveDate::parse_from_str(t, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp());
    }
    Err(Error::Format(format!("unparseable date `{t}`")))
}

#[derive(Debug, Deserialize)]
struct CorpusLine {
    doc_id: String,
    #[serde(default)]
    title: String,
    #[serde(default)]
    body: String,
    date: Option<DateValue>,
    last_modified: Option<DateValue>,
    header_date: Option<DateValue>,
    crawl_date: DateValue,
}

/// Reads a newline-delimited JSON corpus. Documents that tokenize to zero
/// tokens are dropped. The result is not yet ordered; see [`order_stream`].
pub fn read_corpus(path: &Path, tokenizer: Tokenizer) -> Result<Vec<DocumentRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut docs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusLine = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        let cands = DateCandidates {
            extracted_date: rec.date.as_ref().map(DateValue::seconds).transpose()?,
            last_modified: rec.last_modified.as_ref().map(DateValue::seconds).transpose()?,
            header_date: rec.header_date.as_ref().map(DateValue::seconds).transpose()?,
            crawl_date: rec.crawl_date.seconds()?,
        };
        let mut tokens = tokenizer.tokenize(&rec.title)?;
        tokens.extend(tokenizer.tokenize(&rec.body)?);
        if tokens.is_empty() {
            continue;
        }
        docs.push(DocumentRecord {
            doc_id: rec.doc_id,
            timestamp: resolve_date(&cands),
            title: rec.title,
            body: rec.body,
            tokens,
        });
    }
    Ok(docs)
}

/// Writes one corpus line per document (dates as epoch seconds).
pub fn write_corpus<W: Write>(docs: &[DocumentRecord], mut w: W) -> Result<()> {
    for d in docs {
        let line = serde_json::json!({
            "doc_id": d.doc_id,
            "title": d.title,
            "body": d.body,
            "crawl_date": d.timestamp,
        });
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// `doc_id<TAB>timestamp` per document, in stream order.
pub fn write_stream_manifest<W: Write>(docs: &[DocumentRecord], mut w: W) -> Result<()> {
    for d in docs {
        writeln!(w, "{}\t{}", d.doc_id, d.timestamp)?;
    }
    Ok(())
}

/// Reads `query_id<TAB>text` lines.
pub fn read_queries(path: &Path, tokenizer: Tokenizer, max_tokens: usize) -> Result<Vec<Query>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, text) = line
            .split_once('\t')
            .ok_or_else(|| Error::Format(format!("{}:{}: expected `id<TAB>text`", path.display(), lineno + 1)))?;
        out.push(Query::new(id, text, tokenizer, max_tokens)?);
    }
    Ok(out)
}

pub fn write_queries<W: Write>(queries: &[Query], mut w: W) -> Result<()> {
    for q in queries {
        writeln!(w, "{}\t{}", q.query_id, q.text)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic drifting stream

/// Parameters of a synthetic stream whose vocabulary drifts over time.
///
/// Each concept owns `vocab_per_concept` consecutive token ids. A concept can
/// only appear in documents at or after its birth (as a fraction of the
/// stream).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticStreamSpec {
    pub n_docs: usize,
    pub n_concepts: usize,
    pub concept_birth_times: Vec<f64>,
    pub tokens_per_doc: usize,
    pub dim: usize,
    pub n_queries: usize,
    pub seed: u64,
    #[serde(default = "default_vocab")]
    pub vocab_per_concept: u32,
    #[serde(default = "default_noise")]
    pub noise_scale: f32,
    #[serde(default = "default_query_tokens")]
    pub query_tokens: usize,
    /// Weight of concept 0 in every later concept vector.
    #[serde(default = "default_overlap")]
    pub concept_overlap: f32,
}

fn default_vocab() -> u32 {
    32
}
fn default_noise() -> f32 {
    1.0
}
fn default_overlap() -> f32 {
    0.9
}
fn default_query_tokens() -> usize {
    8
}

impl SyntheticStreamSpec {
    /// The default drifting stream: 2000 documents, 8 concepts with births
    /// spread evenly over `[0, 0.95]`.
    pub fn drift(seed: u64) -> Self {
        let n_concepts = 8;
        let births = (0..n_concepts).map(|i| 0.95 * i as f64 / (n_concepts - 1) as f64).collect();
        Self {
            n_docs: 2000,
            n_concepts,
            concept_birth_times: births,
            tokens_per_doc: 30,
            dim: 64,
            n_queries: 32,
            seed,
            vocab_per_concept: default_vocab(),
            noise_scale: default_noise(),
            query_tokens: default_query_tokens(),
            concept_overlap: default_overlap(),
        }
    }

    /// Same as [`drift`](Self::drift) but every concept exists from the start.
    pub fn stationary(seed: u64) -> Self {
        let mut s = Self::drift(seed);
        s.concept_birth_times = vec![0.0; s.n_concepts];
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_concepts == 0 {
            return Err(Error::InvalidSpec("n_concepts must be at least 1".into()));
        }
        if self.concept_birth_times.len() != self.n_concepts {
            return Err(Error::InvalidSpec(format!(
                "{} birth times for {} concepts",
                self.concept_birth_times.len(),
                self.n_concepts
            )));
        }
        if self.concept_birth_times.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::InvalidSpec("birth times must lie in [0, 1]".into()));
        }
        if self.concept_birth_times.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidSpec("birth times must be sorted ascending".into()));
        }
        if self.concept_birth_times[0] != 0.0 {
            return Err(Error::InvalidSpec("at least one concept must be born at 0.0".into()));
        }
        if self.dim == 0 || self.tokens_per_doc == 0 || self.vocab_per_concept == 0 || self.query_tokens == 0 {
            return Err(Error::InvalidSpec("dim, tokens_per_doc, vocab_per_concept and query_tokens must be positive".into()));
        }
        if self.noise_scale < 0.0 || !self.noise_scale.is_finite() {
            return Err(Error::InvalidSpec("noise_scale must be finite and non-negative".into()));
        }
        if (self.n_concepts as u64) * (self.vocab_per_concept as u64) > u32::MAX as u64 {
            return Err(Error::InvalidSpec("token id space overflows u32".into()));
        }
        Ok(())
    }

    /// Concept that owns `token`.
    pub fn concept_of(&self, token: u32) -> usize {
        (token / self.vocab_per_concept) as usize
    }
}

/// Output of [`generate_drift_stream`].
#[derive(Debug, Clone)]
pub struct SyntheticStream {
    pub spec: SyntheticStreamSpec,
    /// Documents in stream order.
    pub docs: Vec<DocumentRecord>,
    /// Concept of each document, parallel to `docs`.
    pub doc_concepts: Vec<usize>,
    pub queries: Vec<Query>,
    /// Concept targeted by each query, parallel to `queries`.
    pub query_concepts: Vec<usize>,
    pub qrels: RelevanceJudgments,
}

const SYNTHETIC_EPOCH: i64 = 1_451_606_400; // 2016-01-01T00:00:00Z
const STREAM_SALT: u64 = 0x5354_5245_414d;
const QUERY_SALT: u64 = 0x5155_4552_59;

/// Generates a deterministic drifting stream with queries and judgments.
pub fn generate_drift_stream(spec: &SyntheticStreamSpec) -> Result<SyntheticStream> {
    spec.validate()?;
    let vocab = spec.vocab_per_concept;
    let mut rng = ChaCha8Rng::seed_from_u64(crate::mix_seed(spec.seed, STREAM_SALT));
    let mut docs = Vec::with_capacity(spec.n_docs);
    let mut doc_concepts = Vec::with_capacity(spec.n_docs);
    for i in 0..spec.n_docs {
        let frac = i as f64 / spec.n_docs as f64;
        let alive = spec.concept_birth_times.partition_point(|&b| b <= frac);
        let concept = rng.random_range(0..alive);
        let base = concept as u32 * vocab;
        let tokens: Vec<u32> = (0..spec.tokens_per_doc).map(|_| base + rng.random_range(0..vocab)).collect();
        docs.push(DocumentRecord {
            doc_id: format!("doc-{i:06}"),
            timestamp: SYNTHETIC_EPOCH + 60 * i as i64,
            title: String::new(),
            body: join_tokens(&tokens),
            tokens,
        });
        doc_concepts.push(concept);
    }

    // Queries cycle over the concepts that actually occur in the stream.
    let mut present: Vec<usize> = doc_concepts.clone();
    present.sort_unstable();
    present.dedup();
    let mut qrng = ChaCha8Rng::seed_from_u64(crate::mix_seed(spec.seed, QUERY_SALT));
    let mut queries = Vec::with_capacity(spec.n_queries);
    let mut query_concepts = Vec::with_capacity(spec.n_queries);
    let mut qrels = RelevanceJudgments::default();
    if !present.is_empty() {
        for j in 0..spec.n_queries {
            let concept = present[j % present.len()];
            let base = concept as u32 * vocab;
            let tokens: Vec<u32> = (0..spec.query_tokens).map(|_| base + qrng.random_range(0..vocab)).collect();
            let query_id = format!("q{j:03}");
            for (d, &c) in docs.iter().zip(&doc_concepts) {
                qrels.insert(&query_id, &d.doc_id, u32::from(c == concept));
            }
            queries.push(Query { query_id, text: join_tokens(&tokens), tokens });
            query_concepts.push(concept);
        }
    }

    Ok(SyntheticStream { spec: spec.clone(), docs, doc_concepts, queries, query_concepts, qrels })
}

fn join_tokens(tokens: &[u32]) -> String {
    let mut s = String::with_capacity(tokens.len() * 5);
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        s.push_str(&t.to_string());
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn doc(id: &str, ts: i64, n_tokens: usize) -> DocumentRecord {
        DocumentRecord {
            doc_id: id.into(),
            timestamp: ts,
            title: String::new(),
            body: String::new(),
            tokens: (0..n_tokens as u32).collect(),
        }
    }

    const DAY: i64 = 86_400;

    #[test]
    fn resolve_date_examples() {
        let jan5 = parse_date("2020-01-05").unwrap();
        let y2019 = parse_date("2019-01-01").unwrap();
        let crawl = parse_date("2021-06-01").unwrap();
        let c = DateCandidates { extracted_date: Some(jan5), last_modified: Some(y2019), header_date: None, crawl_date: crawl };
        assert_eq!(resolve_date(&c), jan5);

        let c = DateCandidates { crawl_date: crawl, ..Default::default() };
        assert_eq!(resolve_date(&c), crawl);

        let lm = parse_date("2019-03-02").unwrap();
        let hd = parse_date("2019-03-09").unwrap();
        let c = DateCandidates { extracted_date: None, last_modified: Some(lm), header_date: Some(hd), crawl_date: crawl };
        assert_eq!(resolve_date(&c), lm);
        assert_eq!(hd - lm, 7 * DAY);
    }

    #[test]
    fn resolve_date_all_presence_patterns() {
        for mask in 0u8..16 {
            let c = DateCandidates {
                extracted_date: (mask & 1 != 0).then_some(1),
                last_modified: (mask & 2 != 0).then_some(2),
                header_date: (mask & 4 != 0).then_some(3),
                crawl_date: if mask & 8 != 0 { 4 } else { 5 },
            };
            let expected = if mask & 1 != 0 {
                1
            } else if mask & 2 != 0 {
                2
            } else if mask & 4 != 0 {
                3
            } else {
                c.crawl_date
            };
            assert_eq!(resolve_date(&c), expected, "mask {mask:04b}");
        }
    }

    #[test]
    fn order_stream_sorts_and_breaks_ties() {
        let out = order_stream(vec![doc("d2", 5, 1), doc("d1", 3, 1)]).unwrap();
        assert_eq!(out.iter().map(|d| (d.doc_id.as_str(), d.timestamp)).collect::<Vec<_>>(), [("d1", 3), ("d2", 5)]);
        let out = order_stream(vec![doc("dB", 7, 1), doc("dA", 7, 1)]).unwrap();
        assert_eq!(out[0].doc_id, "dA");
        assert_eq!(out[1].doc_id, "dB");
    }

    #[test]
    fn order_stream_rejects_duplicates() {
        let err = order_stream(vec![doc("x", 1, 1), doc("x", 2, 1)]).unwrap_err();
        assert!(matches!(err, Error::DuplicateDocId(id) if id == "x"));
    }

    #[test]
    fn order_stream_matches_reference_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let docs: Vec<_> = (0..1000).map(|i| doc(&format!("id{}", (i * 7919) % 1000), rng.random_range(0..50), 1)).collect();
        let a = order_stream(docs.clone()).unwrap();
        let b = order_stream(docs.iter().rev().cloned().collect()).unwrap();
        assert_eq!(a, b);
        let mut keys: Vec<(i64, String)> = docs.iter().map(|d| (d.timestamp, d.doc_id.clone())).collect();
        keys.sort();
        assert_eq!(a.iter().map(|d| (d.timestamp, d.doc_id.clone())).collect::<Vec<_>>(), keys);
    }

    #[test]
    fn split_passages_examples() {
        let w = Windowing { max_tokens: 180, overlap: 0 };
        let sizes = |n| split_passages(&doc("d", 0, n), w, 0).iter().map(|p| p.tokens.len()).collect::<Vec<_>>();
        assert_eq!(sizes(450), [180, 180, 90]);
        assert_eq!(sizes(180), [180]);
        assert!(sizes(0).is_empty());
    }

    #[test]
    fn split_passages_with_overlap() {
        let w = Windowing { max_tokens: 4, overlap: 2 };
        let ps = split_passages(&doc("d", 0, 9), w, 10);
        let windows: Vec<_> = ps.iter().map(|p| p.tokens.clone()).collect();
        assert_eq!(windows, vec![vec![0, 1, 2, 3], vec![2, 3, 4, 5], vec![4, 5, 6, 7], vec![6, 7, 8]]);
        assert_eq!(ps.iter().map(|p| p.passage_id).collect::<Vec<_>>(), [10, 11, 12, 13]);
    }

    proptest! {
        #[test]
        fn split_round_trips(n in 0usize..600, max in 1usize..200) {
            let d = doc("d", 0, n);
            let ps = split_passages(&d, Windowing { max_tokens: max, overlap: 0 }, 0);
            prop_assert_eq!(ps.len(), n.div_ceil(max));
            let joined: Vec<u32> = ps.iter().flat_map(|p| p.tokens.iter().copied()).collect();
            prop_assert_eq!(joined, d.tokens);
            for (i, p) in ps.iter().enumerate() {
                prop_assert_eq!(p.window_index as usize, i);
                prop_assert!(!p.tokens.is_empty() && p.tokens.len() <= max);
            }
        }

        #[test]
        fn order_stream_is_sorted_permutation(ts in proptest::collection::vec(0i64..20, 0..60)) {
            let docs: Vec<_> = ts.iter().enumerate().map(|(i, &t)| doc(&format!("d{i}"), t, 1)).collect();
            let out = order_stream(docs.clone()).unwrap();
            prop_assert_eq!(out.len(), docs.len());
            prop_assert!(out.windows(2).all(|w| (w[0].timestamp, &w[0].doc_id) < (w[1].timestamp, &w[1].doc_id)));
            let mut a: Vec<_> = out.iter().map(|d| d.doc_id.clone()).collect();
            let mut b: Vec<_> = docs.iter().map(|d| d.doc_id.clone()).collect();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn tokenizers() {
        assert_eq!(Tokenizer::Numeric.tokenize(" 3 14\t15 ").unwrap(), [3, 14, 15]);
        assert!(Tokenizer::Numeric.tokenize("3 x").is_err());
        let a = Tokenizer::Hash.tokenize("Hello, world!").unwrap();
        let b = Tokenizer::Hash.tokenize("hello world").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
    }

    #[test]
    fn read_corpus_applies_date_rule_and_drops_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"doc_id":"a","title":"T","body":"x y","last_modified":"2019-03-02","header_date":"2019-03-09","crawl_date":"2021-06-01"}"#,
                "\n",
                r#"{"doc_id":"b","title":"","body":"","crawl_date":5}"#,
                "\n",
                r#"{"doc_id":"c","body":"z","date":"2020-01-05T00:00:00Z","crawl_date":1}"#,
                "\n"
            ),
        )
        .unwrap();
        let docs = read_corpus(&path, Tokenizer::Hash).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[0].timestamp, parse_date("2019-03-02").unwrap());
        assert_eq!(docs[0].tokens.len(), 3);
        assert_eq!(docs[1].timestamp, parse_date("2020-01-05").unwrap());
    }

    #[test]
    fn drift_stream_respects_births() {
        let spec = SyntheticStreamSpec {
            n_docs: 4,
            n_concepts: 2,
            concept_birth_times: vec![0.0, 0.5],
            tokens_per_doc: 5,
            dim: 8,
            n_queries: 2,
            seed: 7,
            vocab_per_concept: 16,
            noise_scale: 0.3,
            query_tokens: 4,
            concept_overlap: 0.0,
        };
        let s = generate_drift_stream(&spec).unwrap();
        assert_eq!(s.doc_concepts[0], 0);
        assert_eq!(s.doc_concepts[1], 0);
        for d in &s.docs[..2] {
            assert!(d.tokens.iter().all(|&t| spec.concept_of(t) == 0));
        }
        let again = generate_drift_stream(&spec).unwrap();
        assert_eq!(s.docs, again.docs);
        assert_eq!(s.queries, again.queries);
    }

    #[test]
    fn drift_stream_never_uses_unborn_concepts() {
        let mut spec = SyntheticStreamSpec::drift(3);
        spec.n_docs = 500;
        let s = generate_drift_stream(&spec).unwrap();
        for (i, d) in s.docs.iter().enumerate() {
            let frac = i as f64 / spec.n_docs as f64;
            for &t in &d.tokens {
                assert!(spec.concept_birth_times[spec.concept_of(t)] <= frac);
            }
        }
    }

    #[test]
    fn drift_stream_qrels_cover_every_query() {
        let spec = SyntheticStreamSpec {
            n_docs: 2000,
            n_concepts: 20,
            concept_birth_times: (0..20).map(|i| i as f64 / 19.0).collect(),
            tokens_per_doc: 4,
            dim: 8,
            n_queries: 40,
            seed: 1,
            vocab_per_concept: 8,
            noise_scale: 0.3,
            query_tokens: 4,
            concept_overlap: 0.0,
        };
        let s = generate_drift_stream(&spec).unwrap();
        assert_eq!(s.queries.len(), 40);
        for q in &s.queries {
            let n_rel = s.docs.iter().filter(|d| s.qrels.grade(&q.query_id, &d.doc_id) == Some(1)).count();
            assert!(n_rel >= 1, "query {} has no relevant document", q.query_id);
        }
    }

    #[test]
    fn drift_stream_rejects_zero_concepts() {
        let mut spec = SyntheticStreamSpec::drift(1);
        spec.n_concepts = 0;
        spec.concept_birth_times.clear();
        assert!(matches!(generate_drift_stream(&spec), Err(Error::InvalidSpec(_))));
    }
}
