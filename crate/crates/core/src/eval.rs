//! Relevance judgments, run files and ranking metrics.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Graded judgments keyed by query then document. A missing pair is
/// unjudged, which is not the same as grade 0.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RelevanceJudgments {
    map: BTreeMap<String, BTreeMap<String, u32>>,
}

impl RelevanceJudgments {
    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) {
        self.map.entry(query_id.to_string()).or_default().insert(doc_id.to_string(), grade);
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> Option<u32> {
        self.map.get(query_id)?.get(doc_id).copied()
    }

    pub fn is_judged(&self, query_id: &str, doc_id: &str) -> bool {
        self.grade(query_id, doc_id).is_some()
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn for_query(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.map.get(query_id)
    }

    pub fn n_relevant(&self, query_id: &str) -> usize {
        self.map.get(query_id).map_or(0, |m| m.values().filter(|&&g| g >= 1).count())
    }

    pub fn len(&self) -> usize {
        self.map.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reads the 4-column `query_id iter doc_id grade` format.
    pub fn read(path: &Path) -> Result<Self> {
        let mut out = Self::default();
        for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(Error::Format(format!("{}:{}: expected 4 columns", path.display(), n + 1)));
            }
            let grade: i64 = f[3].parse().map_err(|_| Error::Format(format!("{}:{}: bad grade `{}`", path.display(), n + 1, f[3])))?;
            // Negative grades appear in some collections; treat them as judged non-relevant.
            out.insert(f[0], f[2], grade.max(0) as u32);
        }
        Ok(out)
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        for (q, docs) in &self.map {
            for (d, g) in docs {
                writeln!(w, "{q} 0 {d} {g}")?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Run files

/// Ranked documents per query.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Run {
    pub rankings: BTreeMap<String, Vec<(String, f64)>>,
}

impl Run {
    pub fn ranking(&self, query_id: &str) -> Vec<&str> {
        self.rankings.get(query_id).map_or_else(Vec::new, |r| r.iter().map(|(d, _)| d.as_str()).collect())
    }

    /// Reads the 6-column `query_id Q0 doc_id rank score tag` format. Lines
    /// are ordered by the rank column.
    pub fn read(path: &Path) -> Result<Self> {
        let mut raw: BTreeMap<String, Vec<(u64, String, f64)>> = BTreeMap::new();
        for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = |what: &str| Error::Format(format!("{}:{}: {what}", path.display(), n + 1));
            if f.len() != 6 {
                return Err(bad("expected 6 columns"));
            }
            let rank: u64 = f[3].parse().map_err(|_| bad("bad rank"))?;
            let score: f64 = f[4].parse().map_err(|_| bad("bad score"))?;
            raw.entry(f[0].to_string()).or_default().push((rank, f[2].to_string(), score));
        }
        let rankings = raw
            .into_iter()
            .map(|(q, mut v)| {
                v.sort_by(|a, b| a.0.cmp(&b.0).then(b.2.total_cmp(&a.2)).then(a.1.cmp(&b.1)));
                (q, v.into_iter().map(|(_, d, s)| (d, s)).collect())
            })
            .collect();
        Ok(Run { rankings })
    }
}

/// Writes one query's ranking in the 6-column format, ranks starting at 1.
pub fn write_run_lines<W: Write>(w: &mut W, query_id: &str, ranking: &[(String, f32)], tag: &str) -> Result<()> {
    for (i, (doc, score)) in ranking.iter().enumerate() {
        writeln!(w, "{query_id} Q0 {doc} {} {score} {tag}", i + 1)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Metrics

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gain {
    /// gain = grade
    #[default]
    Linear,
    /// gain = 2^grade - 1
    Exponential,
}

impl Gain {
    fn of(self, grade: u32) -> f64 {
        match self {
            Gain::Linear => grade as f64,
            Gain::Exponential => 2f64.powi(grade as i32) - 1.0,
        }
    }
}

pub fn ndcg_at_k<S: AsRef<str>>(ranking: &[S], qrels: &RelevanceJudgments, query_id: &str, k: usize, gain: Gain) -> f64 {
    let Some(judged) = qrels.for_query(query_id) else { return 0.0 };
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, d)| gain.of(judged.get(d.as_ref()).copied().unwrap_or(0)) / ((i + 2) as f64).log2())
        .sum();
    let mut ideal: Vec<u32> = judged.values().copied().filter(|&g| g > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(i, &g)| gain.of(g) / ((i + 2) as f64).log2()).sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

pub fn average_precision<S: AsRef<str>>(ranking: &[S], qrels: &RelevanceJudgments, query_id: &str) -> f64 {
    let n_rel = qrels.n_relevant(query_id);
    if n_rel == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, d) in ranking.iter().enumerate() {
        if qrels.grade(query_id, d.as_ref()).is_some_and(|g| g >= 1) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / n_rel as f64
}

pub fn recall_at_k<S: AsRef<str>>(ranking: &[S], qrels: &RelevanceJudgments, query_id: &str, k: usize) -> f64 {
    let n_rel = qrels.n_relevant(query_id);
    if n_rel == 0 {
        return 0.0;
    }
    let hits = ranking.iter().take(k).filter(|d| qrels.grade(query_id, d.as_ref()).is_some_and(|g| g >= 1)).count();
    hits as f64 / n_rel as f64
}

/// Fraction of the top `k` positions holding a judged document. Short
/// rankings are not padded: the denominator is always `k`.
pub fn judged_at_k<S: AsRef<str>>(ranking: &[S], qrels: &RelevanceJudgments, query_id: &str, k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let judged = ranking.iter().take(k).filter(|d| qrels.is_judged(query_id, d.as_ref())).count();
    judged as f64 / k as f64
}

/// Drops unjudged documents, keeping order.
pub fn condense<'a, S: AsRef<str>>(ranking: &'a [S], qrels: &RelevanceJudgments, query_id: &str) -> Vec<&'a str> {
    ranking.iter().map(AsRef::as_ref).filter(|d| qrels.is_judged(query_id, d)).collect()
}

/// A metric name as accepted on the command line, e.g. `ndcg@20`,
/// `ndcg'@20`, `map`, `map'`, `r@100`, `judged@20`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Ndcg { k: usize, primed: bool },
    Map { primed: bool },
    Recall { k: usize, primed: bool },
    Judged { k: usize },
}

impl Metric {
    pub fn compute<S: AsRef<str>>(&self, ranking: &[S], qrels: &RelevanceJudgments, query_id: &str, gain: Gain) -> f64 {
        let primed = match *self {
            Metric::Ndcg { primed, .. } | Metric::Map { primed } | Metric::Recall { primed, .. } => primed,
            Metric::Judged { .. } => false,
        };
        let condensed;
        let r: Vec<&str> = if primed {
            condensed = condense(ranking, qrels, query_id);
            condensed
        } else {
            ranking.iter().map(AsRef::as_ref).collect()
        };
        match *self {
            Metric::Ndcg { k, .. } => ndcg_at_k(&r, qrels, query_id, k, gain),
            Metric::Map { .. } => average_precision(&r, qrels, query_id),
            Metric::Recall { k, .. } => recall_at_k(&r, qrels, query_id, k),
            Metric::Judged { k } => judged_at_k(&r, qrels, query_id, k),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = |primed: bool| if primed { "'" } else { "" };
        match *self {
            Metric::Ndcg { k, primed } => write!(f, "ndcg{}@{k}", p(primed)),
            Metric::Map { primed } => write!(f, "map{}", p(primed)),
            Metric::Recall { k, primed } => write!(f, "r{}@{k}", p(primed)),
            Metric::Judged { k } => write!(f, "judged@{k}"),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let bad = || Error::Config(format!("unknown metric `{s}`"));
        let (name, k) = match lower.split_once('@') {
            Some((n, k)) => {
                let k: usize = k.parse().map_err(|_| bad())?;
                if k == 0 {
                    return Err(bad());
                }
                (n, Some(k))
            }
            None => (lower.as_str(), None),
        };
        let (base, primed) = match name.strip_suffix('\'') {
            Some(b) => (b, true),
            None => (name, false),
        };
        match (base, k) {
            ("ndcg", Some(k)) => Ok(Metric::Ndcg { k, primed }),
            ("map", None) => Ok(Metric::Map { primed }),
            ("r" | "recall", Some(k)) => Ok(Metric::Recall { k, primed }),
            ("judged" | "jg", Some(k)) if !primed => Ok(Metric::Judged { k }),
            _ => Err(bad()),
        }
    }
}

pub fn parse_metrics(list: &str) -> Result<Vec<Metric>> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

/// Per-query and mean metric values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metrics: Vec<String>,
    pub gain: Gain,
    pub n_queries: usize,
    pub mean: BTreeMap<String, f64>,
    pub per_query: BTreeMap<String, BTreeMap<String, f64>>,
}

/// Scores every judged query. Queries missing from the run score 0;
/// queries without judgments are ignored.
pub fn evaluate(run: &Run, qrels: &RelevanceJudgments, metrics: &[Metric], gain: Gain) -> MetricReport {
    let mut per_query = BTreeMap::new();
    for q in qrels.query_ids() {
        let ranking = run.ranking(q);
        let row: BTreeMap<String, f64> = metrics.iter().map(|m| (m.to_string(), m.compute(&ranking, qrels, q, gain))).collect();
        per_query.insert(q.to_string(), row);
    }
    let n = per_query.len();
    let mean = metrics
        .iter()
        .map(|m| {
            let name = m.to_string();
            let total: f64 = per_query.values().map(|row: &BTreeMap<String, f64>| row[&name]).sum();
            (name, if n == 0 { 0.0 } else { total / n as f64 })
        })
        .collect();
    MetricReport { metrics: metrics.iter().map(Metric::to_string).collect(), gain, n_queries: n, mean, per_query }
}

impl MetricReport {
    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    /// `metric<TAB>query_id<TAB>value`, with the mean under query id `all`.
    pub fn write_tsv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        for m in &self.metrics {
            for (q, row) in &self.per_query {
                writeln!(w, "{m}\t{q}\t{:.6}", row[m])?;
            }
            writeln!(w, "{m}\tall\t{:.6}", self.mean[m])?;
        }
        w.flush()?;
        Ok(())
    }
}
