//! Persisted indexes: ingest a corpus file into an index directory, resume
//! after interruption and open the result for search.
//!
//! Layout of an index directory:
//!
//! ```text
//! config.toml      engine configuration used to build the index
//! manifest.json    progress and the active shard set
//! stream.tsv       doc_id and timestamp in stream order
//! shards/<id>/     one directory per active shard
//! ```

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tracing::{debug, info};

use crate::config::EngineConfig;
use crate::embed::{embed_passages, fingerprint_hex, Embedder, EmbedderConfig, Fingerprint, QueryEmbedding};
use crate::error::{Error, Result};
use crate::lifecycle::{IngestDoc, Lifecycle, LifecycleEvent, RestoredState};
use crate::search::Snapshot;
use crate::shard::{Phase, ShardIndex};
use crate::stream::{order_stream, read_corpus, split_passages, write_stream_manifest, DocumentRecord, PassageRecord, Query, Windowing};

pub const ENGINE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardEntry {
    pub shard_id: String,
    pub phase: Phase,
    pub doc_range: (u64, u64),
}

impl ShardEntry {
    fn of(s: &ShardIndex) -> Self {
        Self { shard_id: s.shard_id.clone(), phase: s.phase, doc_range: s.doc_range }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineManifest {
    pub format_version: u32,
    pub corpus_fingerprint: String,
    pub config_fingerprint: String,
    pub embedder_fingerprint: String,
    pub n_docs: u64,
    /// Documents covered by sealed shards.
    pub sealed_through: u64,
    pub complete: bool,
    /// Sealed shards in stream order.
    pub active: Vec<ShardEntry>,
    /// Written only when ingestion finishes mid-block.
    pub incomplete: Option<ShardEntry>,
    pub retired: Vec<String>,
    pub last_model_shard: Option<String>,
}

impl EngineManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let m: Self = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
        if m.format_version != ENGINE_FORMAT_VERSION {
            return Err(Error::Corruption(format!("index format version {}", m.format_version)));
        }
        Ok(m)
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let tmp = dir.join("manifest.json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(self)?)?;
        fs::rename(tmp, dir.join("manifest.json"))?;
        Ok(())
    }
}

/// Splits every document into passages with stream-global passage ids.
pub fn passages_for(docs: &[DocumentRecord], windowing: Windowing) -> Vec<Vec<PassageRecord>> {
    let mut next = 0u64;
    docs.iter()
        .map(|d| {
            let ps = split_passages(d, windowing, next);
            next += ps.len() as u64;
            ps
        })
        .collect()
}

pub fn embed_doc(embedder: &dyn Embedder, ordinal: u64, doc: &DocumentRecord, passages: &[PassageRecord]) -> Result<IngestDoc> {
    Ok(IngestDoc { ordinal, doc_id: doc.doc_id.clone(), passages: embed_passages(embedder, passages)? })
}

pub fn embed_stream(embedder: &dyn Embedder, docs: &[DocumentRecord], windowing: Windowing) -> Result<Vec<IngestDoc>> {
    passages_for(docs, windowing)
        .iter()
        .zip(docs)
        .enumerate()
        .map(|(i, (ps, d))| embed_doc(embedder, i as u64, d, ps))
        .collect()
}

pub fn embed_queries(embedder: &dyn Embedder, queries: &[Query]) -> Result<Vec<QueryEmbedding>> {
    queries.iter().map(|q| embedder.embed_query(q)).collect()
}

/// Runs the whole lifecycle in memory.
pub fn index_in_memory(config: &EngineConfig, embedder: &dyn Embedder, docs: &[DocumentRecord]) -> Result<Lifecycle> {
    let mut lc = Lifecycle::new(config.lifecycle.clone(), embedder.fingerprint())?;
    for d in embed_stream(embedder, docs, config.windowing)? {
        lc.ingest(d)?;
    }
    lc.check_invariants()?;
    Ok(lc)
}

/// Rewrites relative embedder file paths against `base` so the stored
/// configuration works from any directory.
pub fn absolutize(config: &mut EngineConfig, base: &Path) -> Result<()> {
    if let EmbedderConfig::File { passages, queries } = &mut config.embedder {
        let abs = |p: &str| -> Result<String> {
            let path = base.join(p);
            Ok(fs::canonicalize(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?.display().to_string())
        };
        *passages = abs(passages)?;
        if let Some(q) = queries {
            *q = abs(q)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    /// Stop after this many documents of this run without writing the
    /// incomplete shard, as if the process had been killed.
    pub stop_after: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestReport {
    pub noop: bool,
    pub resumed_from: u64,
    pub docs_ingested: u64,
    pub n_docs: u64,
    pub complete: bool,
    pub shards_sealed: usize,
    pub active_shards: usize,
    pub elapsed_secs: f64,
}

fn shards_dir(dir: &Path) -> PathBuf {
    dir.join("shards")
}

fn corpus_fingerprint(path: &Path) -> Result<Fingerprint> {
    use sha2::{Digest, Sha256};
    let bytes = fs::read(path)?;
    Ok(Sha256::digest(&bytes).into())
}

/// Ingests `corpus` into the index at `out`, resuming from the manifest if
/// one exists.
pub fn ingest_corpus(config: &EngineConfig, corpus: &Path, out: &Path, opts: &IngestOptions) -> Result<IngestReport> {
    let t0 = Instant::now();
    config.validate()?;
    let corpus_fp = fingerprint_hex(&corpus_fingerprint(corpus)?);
    let config_fp = fingerprint_hex(&config.index_fingerprint()?);
    let embedder = config.embedder.build(config.dim, Path::new("."))?;
    let emb_fp = embedder.fingerprint();

    let previous = if out.join("manifest.json").exists() { Some(EngineManifest::read(out)?) } else { None };
    if let Some(m) = &previous {
        if m.corpus_fingerprint != corpus_fp || m.config_fingerprint != config_fp || m.embedder_fingerprint != fingerprint_hex(&emb_fp) {
            return Err(Error::Incompatible(format!("{} was built from a different corpus or configuration", out.display())));
        }
        if m.complete {
            info!(index = %out.display(), "index already complete");
            return Ok(IngestReport {
                noop: true,
                resumed_from: m.n_docs,
                docs_ingested: 0,
                n_docs: m.n_docs,
                complete: true,
                shards_sealed: 0,
                active_shards: m.active.len() + usize::from(m.incomplete.is_some()),
                elapsed_secs: t0.elapsed().as_secs_f64(),
            });
        }
    }

    let docs = order_stream(read_corpus(corpus, config.tokenizer)?)?;
    let passages = passages_for(&docs, config.windowing);
    fs::create_dir_all(shards_dir(out))?;
    config.save(&out.join("config.toml"))?;
    write_stream_manifest(&docs, File::create(out.join("stream.tsv"))?)?;

    let mut lc = match &previous {
        Some(m) if !m.active.is_empty() => restore(config, out, m, embedder.as_ref(), &docs, &passages)?,
        _ => Lifecycle::new(config.lifecycle.clone(), emb_fp)?,
    };
    let resumed_from = lc.next_ordinal();
    if resumed_from > 0 {
        info!(from = resumed_from, "resuming ingest");
    }
    let mut manifest = EngineManifest {
        format_version: ENGINE_FORMAT_VERSION,
        corpus_fingerprint: corpus_fp,
        config_fingerprint: config_fp,
        embedder_fingerprint: fingerprint_hex(&emb_fp),
        n_docs: docs.len() as u64,
        sealed_through: lc.next_ordinal(),
        complete: false,
        active: Vec::new(),
        incomplete: None,
        retired: lc.retired().to_vec(),
        last_model_shard: previous.as_ref().and_then(|m| m.last_model_shard.clone()),
    };

    persist_sealed(&lc, out, &mut manifest)?;

    let mut sealed = 0usize;
    let mut ingested = 0u64;
    for ordinal in resumed_from..docs.len() as u64 {
        if opts.stop_after.is_some_and(|n| ingested >= n) {
            return Ok(IngestReport {
                noop: false,
                resumed_from,
                docs_ingested: ingested,
                n_docs: docs.len() as u64,
                complete: false,
                shards_sealed: sealed,
                active_shards: lc.sealed_shards().count(),
                elapsed_secs: t0.elapsed().as_secs_f64(),
            });
        }
        let i = ordinal as usize;
        let events = lc.ingest(embed_doc(embedder.as_ref(), ordinal, &docs[i], &passages[i])?)?;
        ingested += 1;
        let mut retired = Vec::new();
        let mut any_seal = false;
        for e in &events {
            match e {
                LifecycleEvent::SmallShardSealed { shard_id, model_id, .. } => {
                    any_seal = true;
                    manifest.last_model_shard = model_id.clone().or(manifest.last_model_shard.take());
                    debug!(shard = %shard_id, "small shard sealed");
                }
                LifecycleEvent::LargeShardSealed { shard_id, model_id, retired: r, .. } => {
                    any_seal = true;
                    manifest.last_model_shard = model_id.clone().or(manifest.last_model_shard.take());
                    retired.extend(r.iter().cloned());
                    info!(shard = %shard_id, "large shard sealed");
                }
                _ => {}
            }
        }
        if any_seal {
            sealed += events.iter().filter(|e| matches!(e, LifecycleEvent::SmallShardSealed { .. } | LifecycleEvent::LargeShardSealed { .. })).count();
            lc.check_invariants()?;
            persist_sealed(&lc, out, &mut manifest)?;
        }
    }

    if let Some(b) = lc.incomplete() {
        let shard = b.clone().seal()?;
        shard.write_dir(&shards_dir(out).join(&shard.shard_id))?;
        manifest.incomplete = Some(ShardEntry::of(&shard));
    }
    lc.check_invariants()?;
    manifest.complete = true;
    persist_sealed(&lc, out, &mut manifest)?;
    Ok(IngestReport {
        noop: false,
        resumed_from,
        docs_ingested: ingested,
        n_docs: docs.len() as u64,
        complete: true,
        shards_sealed: sealed,
        active_shards: lc.sealed_shards().count() + usize::from(lc.incomplete().is_some()),
        elapsed_secs: t0.elapsed().as_secs_f64(),
    })
}

/// Writes sealed shards that are not yet on disk, then the manifest, then
/// removes directories of shards that are no longer active.
fn persist_sealed(lc: &Lifecycle, out: &Path, manifest: &mut EngineManifest) -> Result<()> {
    let root = shards_dir(out);
    let mut keep = BTreeSet::new();
    for s in lc.sealed_shards() {
        let dir = root.join(&s.shard_id);
        if !dir.join("manifest.json").exists() {
            s.write_dir(&dir)?;
        }
        keep.insert(s.shard_id.clone());
    }
    manifest.active = lc.sealed_shards().map(|s| ShardEntry::of(s)).collect();
    manifest.sealed_through = manifest.active.last().map_or(0, |e| e.doc_range.1 + 1);
    manifest.retired = lc.retired().to_vec();
    if let Some(e) = &manifest.incomplete {
        keep.insert(e.shard_id.clone());
    }
    manifest.write(out)?;
    for entry in fs::read_dir(&root)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if !keep.contains(&name) {
            fs::remove_dir_all(entry.path())?;
        }
    }
    Ok(())
}

fn restore(
    config: &EngineConfig,
    out: &Path,
    m: &EngineManifest,
    embedder: &dyn Embedder,
    docs: &[DocumentRecord],
    passages: &[Vec<PassageRecord>],
) -> Result<Lifecycle> {
    let mut state = RestoredState { retired: m.retired.clone(), ..Default::default() };
    for e in &m.active {
        let s = Arc::new(ShardIndex::read_dir(&shards_dir(out).join(&e.shard_id))?);
        if m.last_model_shard.as_deref() == Some(e.shard_id.as_str()) {
            state.last_model = s.model().cloned();
        }
        match e.phase {
            Phase::Large => state.large.push(s),
            Phase::SmallOwnModel => state.small.push(s),
            p => return Err(Error::Corruption(format!("unexpected sealed shard phase {p:?}"))),
        }
    }
    let block_start = state.large.len() * config.lifecycle.large_docs;
    let sealed_end = m.sealed_through as usize;
    if sealed_end > docs.len() || block_start > sealed_end {
        return Err(Error::Corruption("manifest covers more documents than the corpus".into()));
    }
    for i in block_start..sealed_end {
        state.block.push(embed_doc(embedder, i as u64, &docs[i], &passages[i])?);
    }
    Lifecycle::restore(config.lifecycle.clone(), embedder.fingerprint(), state)
}

/// An index opened for search.
pub struct OpenIndex {
    pub config: EngineConfig,
    pub manifest: EngineManifest,
    pub embedder: Box<dyn Embedder>,
    pub snapshot: Snapshot,
    pub load_time: Duration,
}

pub fn open_index(dir: &Path) -> Result<OpenIndex> {
    let t = Instant::now();
    let config = EngineConfig::load(&dir.join("config.toml"))?;
    let manifest = EngineManifest::read(dir)?;
    let embedder = config.embedder.build(config.dim, dir)?;
    if fingerprint_hex(&embedder.fingerprint()) != manifest.embedder_fingerprint {
        return Err(Error::Incompatible(format!("{} was built with a different embedder", dir.display())));
    }
    let mut shards = Vec::new();
    for e in manifest.active.iter().chain(manifest.incomplete.iter()) {
        shards.push(Arc::new(ShardIndex::read_dir(&shards_dir(dir).join(&e.shard_id))?));
    }
    let mut next = 0;
    for s in &shards {
        if s.doc_range.0 != next {
            return Err(Error::Invariant(format!("shard {} starts at {} but {next} was expected", s.shard_id, s.doc_range.0)));
        }
        next = s.doc_range.1 + 1;
    }
    let snapshot = Snapshot { fingerprint: embedder.fingerprint(), shards };
    Ok(OpenIndex { config, manifest, embedder, snapshot, load_time: t.elapsed() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifecycle::LifecycleConfig;
    use crate::model::ModelConfig;
    use crate::stream::{generate_drift_stream, write_corpus, SyntheticStreamSpec};

    fn setup(n_docs: usize) -> (tempfile::TempDir, EngineConfig, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticStreamSpec { n_docs, dim: 16, ..SyntheticStreamSpec::drift(3) };
        let stream = generate_drift_stream(&spec).unwrap();
        let corpus = dir.path().join("corpus.jsonl");
        write_corpus(&stream.docs, File::create(&corpus).unwrap()).unwrap();
        let mut cfg = EngineConfig::synthetic(&spec);
        cfg.lifecycle = LifecycleConfig {
            large_docs: 60,
            small_docs: 20,
            min_bootstrap_passages: 30,
            min_bootstrap_docs: None,
            model: ModelConfig { max_training_tokens: 1024, ..Default::default() },
            ..Default::default()
        };
        (dir, cfg, corpus)
    }

    fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut out = Vec::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn interrupted_ingest_resumes_to_identical_index() {
        let (dir, cfg, corpus) = setup(170);
        let full = dir.path().join("full");
        let r = ingest_corpus(&cfg, &corpus, &full, &IngestOptions::default()).unwrap();
        assert!(r.complete && !r.noop);
        assert_eq!(r.docs_ingested, 170);

        let part = dir.path().join("part");
        let r = ingest_corpus(&cfg, &corpus, &part, &IngestOptions { stop_after: Some(95) }).unwrap();
        assert!(!r.complete);
        assert_eq!(EngineManifest::read(&part).unwrap().sealed_through, 80);
        let r = ingest_corpus(&cfg, &corpus, &part, &IngestOptions::default()).unwrap();
        assert_eq!(r.resumed_from, 80);
        assert!(r.complete);
        assert_eq!(tree(&full), tree(&part));

        let again = ingest_corpus(&cfg, &corpus, &part, &IngestOptions::default()).unwrap();
        assert!(again.noop);
        assert_eq!(tree(&full), tree(&part));
    }

    #[test]
    fn opened_index_matches_in_memory_run() {
        let (dir, cfg, corpus) = setup(130);
        let out = dir.path().join("idx");
        ingest_corpus(&cfg, &corpus, &out, &IngestOptions::default()).unwrap();
        let idx = open_index(&out).unwrap();
        let docs = order_stream(read_corpus(&corpus, cfg.tokenizer).unwrap()).unwrap();
        let lc = index_in_memory(&cfg, idx.embedder.as_ref(), &docs).unwrap();
        let mem = lc.snapshot().unwrap();
        assert_eq!(mem.shards.len(), idx.snapshot.shards.len());
        for (a, b) in mem.shards.iter().zip(&idx.snapshot.shards) {
            assert_eq!(a.manifest(), b.manifest());
        }
        assert_eq!(idx.manifest.active.len() + 1, mem.shards.len());
    }

    #[test]
    fn refuses_to_mix_configurations() {
        let (dir, mut cfg, corpus) = setup(50);
        let out = dir.path().join("idx");
        ingest_corpus(&cfg, &corpus, &out, &IngestOptions { stop_after: Some(10) }).unwrap();
        cfg.lifecycle.model.seed = 99;
        assert!(matches!(ingest_corpus(&cfg, &corpus, &out, &IngestOptions::default()), Err(Error::Incompatible(_))));
    }
}
