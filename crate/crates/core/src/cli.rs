//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or format
//! error, 3 invariant violation.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use crate::bench::{bench_config, drift_sweep, oracle_comparison, throughput_report};
use crate::config::EngineConfig;
use crate::engine::{absolutize, embed_queries, ingest_corpus, open_index, IngestOptions};
use crate::error::{Error, Result};
use crate::eval::{evaluate, parse_metrics, Gain, RelevanceJudgments, Run};
use crate::lifecycle::{index_work, shard_count, IndexMode};
use crate::search::{search_queries, write_run};
use crate::stream::{generate_drift_stream, read_queries, write_corpus, write_queries, SyntheticStream, SyntheticStreamSpec};

#[derive(Debug, Parser)]
#[command(name = "plaidstream", version, about = "Streaming multi-vector retrieval with hierarchical shards")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Index a corpus into a shard directory, resuming if interrupted.
    Ingest {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Stop after this many documents, leaving the index resumable.
        #[arg(long)]
        stop_after: Option<u64>,
    },
    /// Run queries against an index and write a run file.
    Search {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        top_docs: Option<usize>,
        #[arg(long)]
        n_per_shard: Option<usize>,
        #[arg(long)]
        nprobe: Option<usize>,
        #[arg(long)]
        candidate_factor: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "plaidstream")]
        tag: String,
    },
    /// Score a run file against relevance judgments.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long, default_value = "ndcg@20,map,r@100,r@1000,judged@20,ndcg'@20,map'")]
        metrics: String,
        #[arg(long, value_enum, default_value = "linear")]
        gain: GainArg,
        /// JSON report; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-query TSV; defaults to the JSON path with a `.tsv` extension.
        #[arg(long)]
        per_query: Option<PathBuf>,
    },
    /// Staleness sweep: one model per checkpoint indexes the whole stream.
    DriftBench {
        #[command(flatten)]
        bench: BenchArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.05,0.75,0.90,1.00")]
        checkpoints: Vec<f64>,
    },
    /// Full shard lifecycle versus one model for the whole stream.
    OracleBench {
        #[command(flatten)]
        bench: BenchArgs,
        /// Use uncompressed shards everywhere.
        #[arg(long)]
        exact: bool,
    },
    /// Indexing and query timing over a synthetic stream.
    ThroughputBench {
        #[command(flatten)]
        bench: BenchArgs,
    },
    /// Print the active shard set for a collection size.
    ShardPlan {
        #[arg(long)]
        n_docs: u64,
        #[arg(long = "A")]
        large: u64,
        #[arg(long = "B")]
        small: u64,
    },
    /// Write a synthetic corpus, queries, judgments and a matching config.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Synthetic stream parameters (TOML, or JSON by extension).
    #[arg(long)]
    pub spec: PathBuf,
    /// Engine configuration; desk-scale defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also write the JSON report here.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum GainArg {
    Linear,
    Exponential,
}

impl From<GainArg> for Gain {
    fn from(g: GainArg) -> Self {
        match g {
            GainArg::Linear => Gain::Linear,
            GainArg::Exponential => Gain::Exponential,
        }
    }
}

pub fn load_spec(path: &Path) -> Result<SyntheticStreamSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let spec: SyntheticStreamSpec = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
    } else {
        toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
    };
    spec.validate()?;
    Ok(spec)
}

fn bench_setup(args: &BenchArgs) -> Result<(SyntheticStream, EngineConfig)> {
    let stream = generate_drift_stream(&load_spec(&args.spec)?)?;
    let cfg = match &args.config {
        Some(p) => EngineConfig::load(p)?,
        None => bench_config(&stream),
    };
    Ok((stream, cfg))
}

fn emit_json<T: serde::Serialize>(value: &T, path: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    if let Some(p) = path {
        fs::write(p, &text)?;
    }
    writeln!(out, "{text}")?;
    Ok(())
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Ingest { config, corpus, out: dir, stop_after } => {
            let mut cfg = EngineConfig::load(&config)?;
            absolutize(&mut cfg, config.parent().unwrap_or(Path::new(".")))?;
            let report = ingest_corpus(&cfg, &corpus, &dir, &IngestOptions { stop_after })?;
            emit_json(&report, None, out)?;
        }
        Command::Search { index, queries, top_docs, n_per_shard, nprobe, candidate_factor, out: run_path, tag } => {
            let idx = open_index(&index)?;
            let mut s = idx.config.search.clone();
            s.top_docs = top_docs.unwrap_or(s.top_docs);
            s.n_per_shard = n_per_shard.unwrap_or(s.n_per_shard);
            s.nprobe = nprobe.unwrap_or(s.nprobe);
            s.candidate_factor = candidate_factor.unwrap_or(s.candidate_factor);
            let params = s.params();
            params.validate()?;
            let qs = read_queries(&queries, idx.config.tokenizer, idx.config.max_query_tokens)?;
            let qe = embed_queries(idx.embedder.as_ref(), &qs)?;
            let results = search_queries(&qe, &idx.snapshot, &params, s.top_docs)?;
            write_run(File::create(&run_path)?, &results, &tag)?;
            let worst = results.iter().map(|r| r.latency().as_secs_f64() * 1e3).fold(0.0, f64::max);
            writeln!(out, "queries={} shards={} max_latency_ms={worst:.3}", results.len(), idx.snapshot.shards.len())?;
        }
        Command::Eval { run, qrels, metrics, gain, out: json, per_query } => {
            let metrics = parse_metrics(&metrics)?;
            let report = evaluate(&Run::read(&run)?, &RelevanceJudgments::read(&qrels)?, &metrics, gain.into());
            match &json {
                Some(p) => {
                    report.write_json(File::create(p)?)?;
                    let tsv = per_query.unwrap_or_else(|| p.with_extension("tsv"));
                    report.write_tsv(File::create(tsv)?)?;
                    for m in &report.metrics {
                        writeln!(out, "{m}\t{:.4}", report.mean[m])?;
                    }
                }
                None => {
                    if let Some(t) = per_query {
                        report.write_tsv(File::create(t)?)?;
                    }
                    emit_json(&report, None, out)?;
                }
            }
        }
        Command::DriftBench { bench, checkpoints } => {
            let (stream, cfg) = bench_setup(&bench)?;
            let table = drift_sweep(&stream, &checkpoints, &cfg)?;
            write!(out, "{}", table.render())?;
            if let Some(p) = &bench.json {
                fs::write(p, serde_json::to_string_pretty(&table)?)?;
            }
        }
        Command::OracleBench { bench, exact } => {
            let (stream, mut cfg) = bench_setup(&bench)?;
            if exact {
                cfg.lifecycle.mode = IndexMode::Exact;
            }
            emit_json(&oracle_comparison(&stream, &cfg)?, bench.json.as_deref(), out)?;
        }
        Command::ThroughputBench { bench } => {
            let (stream, cfg) = bench_setup(&bench)?;
            emit_json(&throughput_report(&stream, &cfg)?, bench.json.as_deref(), out)?;
        }
        Command::ShardPlan { n_docs, large, small } => {
            let c = shard_count(n_docs, large, small)?;
            writeln!(out, "{c}")?;
            writeln!(out, "index_passes_so_far={} index_passes_when_blocks_complete={}", index_work(n_docs, large, small)?, 3 * n_docs)?;
        }
        Command::Synth { spec, out: dir } => {
            let spec = load_spec(&spec)?;
            let stream = generate_drift_stream(&spec)?;
            fs::create_dir_all(&dir)?;
            write_corpus(&stream.docs, File::create(dir.join("corpus.jsonl"))?)?;
            write_queries(&stream.queries, File::create(dir.join("queries.tsv"))?)?;
            stream.qrels.write(File::create(dir.join("qrels.txt"))?)?;
            bench_config(&stream).save(&dir.join("config.toml"))?;
            writeln!(out, "docs={} queries={} judgments={}", stream.docs.len(), stream.queries.len(), stream.qrels.len())?;
        }
    }
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let _ = tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(io::stderr)
        .try_init();
    let stdout = io::stdout();
    match execute(cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exec(args: &[&str]) -> Result<String> {
        let cli = Cli::try_parse_from(std::iter::once("plaidstream").chain(args.iter().copied())).unwrap();
        let mut buf = Vec::new();
        execute(cli, &mut buf)?;
        Ok(String::from_utf8(buf).unwrap())
    }

    #[test]
    fn shard_plan_prints_counts() {
        let s = exec(&["shard-plan", "--n-docs", "504000000", "--A", "5000000", "--B", "500000"]).unwrap();
        assert!(s.starts_with("large=100 small=8 incomplete=0 total=108\n"), "{s}");
        assert_eq!(exec(&["shard-plan", "--n-docs", "10", "--A", "7", "--B", "3"]).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["plaidstream", "frobnicate"]), 1);
        assert_eq!(run(["plaidstream", "shard-plan", "--n-docs", "x", "--A", "1", "--B", "1"]), 1);
    }
}
