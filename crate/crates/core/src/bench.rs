//! Experiment harnesses on synthetic streams: centroid staleness, sharded
//! versus single-model indexing, and indexing throughput.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::config::EngineConfig;
use crate::embed::{Embedder, EmbeddedPassage, QueryEmbedding};
use crate::engine::{embed_queries, embed_stream};
use crate::error::{Error, Result};
use crate::eval::{evaluate, parse_metrics, MetricReport};
use crate::lifecycle::{IndexMode, IngestDoc, Lifecycle, LifecycleConfig};
use crate::model::{build_shard_model, ModelConfig};
use crate::search::{search_queries, to_run, MergedResult, Snapshot};
use crate::shard::{build_compressed_shard, build_exact_shard, DocSlice, Phase, SearchParams};
use crate::stream::SyntheticStream;

/// Metrics reported by every harness.
pub const BENCH_METRICS: &str = "ndcg@20,ndcg'@20,map,r@1000";

/// The checkpoints of the staleness sweep.
pub const DEFAULT_CHECKPOINTS: [f64; 4] = [0.05, 0.75, 0.90, 1.00];

/// Engine settings sized for a laptop run over a synthetic stream.
pub fn bench_config(stream: &SyntheticStream) -> EngineConfig {
    let mut cfg = EngineConfig::synthetic(&stream.spec);
    cfg.lifecycle = LifecycleConfig {
        large_docs: 800,
        small_docs: 200,
        min_bootstrap_passages: 200,
        min_bootstrap_docs: None,
        mode: IndexMode::Compressed,
        model: ModelConfig { max_training_tokens: 2048, seed: stream.spec.seed, ..Default::default() },
    };
    cfg.search.n_per_shard = 1000;
    cfg.search.top_docs = 1000;
    cfg
}

/// A stream embedded once and shared by several runs.
pub struct Prepared {
    pub embedder: Box<dyn Embedder>,
    pub docs: Vec<IngestDoc>,
    pub queries: Vec<QueryEmbedding>,
}

pub fn prepare(stream: &SyntheticStream, cfg: &EngineConfig) -> Result<Prepared> {
    let embedder = cfg.embedder.build(cfg.dim, Path::new("."))?;
    let docs = embed_stream(embedder.as_ref(), &stream.docs, cfg.windowing)?;
    let queries = embed_queries(embedder.as_ref(), &stream.queries)?;
    Ok(Prepared { embedder, docs, queries })
}

impl Prepared {
    fn slices(&self) -> Vec<DocSlice<'_>> {
        self.docs.iter().map(|d| (d.ordinal, d.doc_id.as_str(), d.passages.as_slice())).collect()
    }

    fn passages(&self, n_docs: usize) -> Vec<EmbeddedPassage> {
        self.docs[..n_docs].iter().flat_map(|d| d.passages.iter().cloned()).collect()
    }
}

fn score(results: &[MergedResult], stream: &SyntheticStream, cfg: &EngineConfig) -> Result<MetricReport> {
    Ok(evaluate(&to_run(results), &stream.qrels, &parse_metrics(BENCH_METRICS)?, cfg.gain))
}

fn search(p: &Prepared, snapshot: &Snapshot, cfg: &EngineConfig) -> Result<Vec<MergedResult>> {
    search_queries(&p.queries, snapshot, &cfg.search.params(), cfg.search.top_docs)
}

/// Trains one model on the first `train_docs` documents and indexes the
/// whole stream with it in a single shard.
fn single_model_run(p: &Prepared, stream: &SyntheticStream, cfg: &EngineConfig, train_docs: usize) -> Result<(MetricReport, usize)> {
    let model = build_shard_model(&p.passages(train_docs), &cfg.lifecycle.model, p.embedder.fingerprint(), "single")?;
    let k = model.n_centroids;
    let shard = build_compressed_shard("single", Phase::Large, &p.slices(), Arc::new(model), p.embedder.fingerprint())?;
    let snap = Snapshot { fingerprint: p.embedder.fingerprint(), shards: vec![Arc::new(shard)] };
    Ok((score(&search(p, &snap, cfg)?, stream, cfg)?, k))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub checkpoint: f64,
    pub train_docs: usize,
    pub n_centroids: usize,
    pub ndcg_at_20: f64,
    pub recall_at_1000: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftTable {
    pub rows: Vec<DriftRow>,
    pub skipped: Vec<f64>,
}

impl DriftTable {
    pub fn ndcg(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.ndcg_at_20).collect()
    }

    /// Plain-text table with one column per checkpoint.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<10}", "");
        for r in &self.rows {
            let _ = write!(s, "{:>8}", format!("{:.0}%", r.checkpoint * 100.0));
        }
        s.push('\n');
        let _ = write!(s, "{:<10}", "nDCG@20");
        for r in &self.rows {
            let _ = write!(s, "{:>8.3}", r.ndcg_at_20);
        }
        s.push('\n');
        let _ = write!(s, "{:<10}", "R@1000");
        for r in &self.rows {
            let _ = write!(s, "{:>8.3}", r.recall_at_1000);
        }
        s.push('\n');
        s
    }
}

/// For each checkpoint `p`, one model trained on the first `p` of the
/// stream indexes the entire stream.
pub fn drift_sweep(stream: &SyntheticStream, checkpoints: &[f64], cfg: &EngineConfig) -> Result<DriftTable> {
    let p = prepare(stream, cfg)?;
    drift_sweep_prepared(&p, stream, checkpoints, cfg)
}

pub fn drift_sweep_prepared(p: &Prepared, stream: &SyntheticStream, checkpoints: &[f64], cfg: &EngineConfig) -> Result<DriftTable> {
    let min_tokens = cfg.lifecycle.model.k_min.max(1 << cfg.lifecycle.model.residual_bits);
    let mut table = DriftTable { rows: Vec::new(), skipped: Vec::new() };
    for &c in checkpoints {
        if !(c > 0.0 && c <= 1.0) {
            return Err(Error::Config(format!("checkpoint {c} outside (0, 1]")));
        }
        let train_docs = ((c * p.docs.len() as f64).round() as usize).min(p.docs.len());
        let tokens: usize = p.docs[..train_docs].iter().map(IngestDoc::n_tokens).sum();
        if tokens < min_tokens {
            warn!(checkpoint = c, tokens, "too few training tokens; checkpoint skipped");
            table.skipped.push(c);
            continue;
        }
        let (report, k) = single_model_run(p, stream, cfg, train_docs)?;
        table.rows.push(DriftRow {
            checkpoint: c,
            train_docs,
            n_centroids: k,
            ndcg_at_20: report.mean["ndcg@20"],
            recall_at_1000: report.mean["r@1000"],
        });
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub mode: IndexMode,
    pub n_shards: usize,
    pub oracle: BTreeMap<String, f64>,
    pub sharded: BTreeMap<String, f64>,
    /// sharded / oracle per metric; 1 when both are 0.
    pub ratio: BTreeMap<String, f64>,
    /// A single model trained on the first 5% of the stream.
    pub frozen_early: Option<BTreeMap<String, f64>>,
}

/// Single model over the whole stream versus the full shard lifecycle,
/// searched with identical parameters.
pub fn oracle_comparison(stream: &SyntheticStream, cfg: &EngineConfig) -> Result<OracleReport> {
    let p = prepare(stream, cfg)?;
    let fp = p.embedder.fingerprint();
    let exact = cfg.lifecycle.mode == IndexMode::Exact;

    let (oracle, frozen_early) = if exact {
        let shard = build_exact_shard("oracle", Phase::Large, &p.slices(), fp)?;
        let snap = Snapshot { fingerprint: fp, shards: vec![Arc::new(shard)] };
        (score(&search(&p, &snap, cfg)?, stream, cfg)?, None)
    } else {
        let (oracle, _) = single_model_run(&p, stream, cfg, p.docs.len())?;
        let early = ((0.05 * p.docs.len() as f64).round() as usize).max(1);
        let (frozen, _) = single_model_run(&p, stream, cfg, early)?;
        (oracle, Some(frozen.mean))
    };

    let mut lc = Lifecycle::new(cfg.lifecycle.clone(), fp)?;
    for d in &p.docs {
        lc.ingest(d.clone())?;
    }
    lc.check_invariants()?;
    let snap = lc.snapshot()?;
    let sharded = score(&search(&p, &snap, cfg)?, stream, cfg)?;

    let ratio = oracle
        .mean
        .iter()
        .map(|(m, &o)| {
            let s = sharded.mean[m];
            (m.clone(), if o == 0.0 { if s == 0.0 { 1.0 } else { f64::INFINITY } } else { s / o })
        })
        .collect();
    Ok(OracleReport { mode: cfg.lifecycle.mode, n_shards: snap.shards.len(), oracle: oracle.mean, sharded: sharded.mean, ratio, frozen_early })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardBuild {
    pub shard_id: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub n_docs: u64,
    pub index_seconds: f64,
    pub docs_per_hour: f64,
    /// Document index passes summed over documents.
    pub encode_passes: u64,
    pub tokens_indexed: u64,
    pub shard_builds: Vec<ShardBuild>,
    pub n_queries: usize,
    /// Slowest shard plus merge, averaged over queries.
    pub mean_query_latency_ms: f64,
    pub max_query_latency_ms: f64,
}

pub fn throughput_report(stream: &SyntheticStream, cfg: &EngineConfig) -> Result<ThroughputReport> {
    let p = prepare(stream, cfg)?;
    let t = Instant::now();
    let mut lc = Lifecycle::new(cfg.lifecycle.clone(), p.embedder.fingerprint())?;
    for d in &p.docs {
        lc.ingest(d.clone())?;
    }
    let index_seconds = t.elapsed().as_secs_f64();
    let results = search(&p, &lc.snapshot()?, cfg)?;
    let lat: Vec<Duration> = results.iter().map(MergedResult::latency).collect();
    let ms = |d: &Duration| d.as_secs_f64() * 1e3;
    let n_docs = lc.next_ordinal();
    Ok(ThroughputReport {
        n_docs,
        index_seconds,
        docs_per_hour: if index_seconds > 0.0 { n_docs as f64 * 3600.0 / index_seconds } else { 0.0 },
        encode_passes: lc.total_passes(),
        tokens_indexed: lc.tokens_indexed(),
        shard_builds: lc.build_times().iter().map(|(id, d)| ShardBuild { shard_id: id.clone(), seconds: d.as_secs_f64() }).collect(),
        n_queries: results.len(),
        mean_query_latency_ms: if lat.is_empty() { 0.0 } else { lat.iter().map(ms).sum::<f64>() / lat.len() as f64 },
        max_query_latency_ms: lat.iter().map(ms).fold(0.0, f64::max),
    })
}

/// Search parameters that make compressed search exhaustive.
pub fn exhaustive_params(n_passages: usize, k: usize) -> SearchParams {
    SearchParams { n_per_shard: n_passages.max(1), nprobe: k.max(1), candidate_factor: 1 }
}
