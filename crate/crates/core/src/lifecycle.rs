//! Hierarchical sharding of a document stream.
//!
//! Documents arrive in order. Each one is first indexed into the incomplete
//! shard with the most recent model available. Every `B` documents the
//! incomplete shard is rebuilt with a model trained on its own documents and
//! sealed as a small shard. Every `A = k * B` documents the `k` small shards
//! of the block are replaced by one large shard with a model trained on the
//! whole block. Before any model exists, documents go to an exact shard that
//! stores raw vectors.

use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::embed::{EmbeddedPassage, Fingerprint};
use crate::error::{Error, Result};
use crate::mix_seed;
use crate::model::{build_shard_model, ModelConfig, ShardModel};
use crate::search::Snapshot;
use crate::shard::{Phase, ShardBuilder, ShardIndex};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexMode {
    #[default]
    Compressed,
    /// Every shard stores raw vectors; no models are trained.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LifecycleConfig {
    /// Documents per large shard (`A`).
    pub large_docs: usize,
    /// Documents per small shard (`B`).
    pub small_docs: usize,
    pub min_bootstrap_passages: usize,
    /// Defaults to `small_docs` when unset.
    pub min_bootstrap_docs: Option<usize>,
    pub mode: IndexMode,
    pub model: ModelConfig,
}

impl Default for LifecycleConfig {
    fn default() -> Self {
        Self {
            large_docs: 5000,
            small_docs: 500,
            min_bootstrap_passages: 2000,
            min_bootstrap_docs: None,
            mode: IndexMode::Compressed,
            model: ModelConfig::default(),
        }
    }
}

impl LifecycleConfig {
    pub fn new(large_docs: usize, small_docs: usize) -> Self {
        Self { large_docs, small_docs, ..Default::default() }
    }

    /// Small shards per large shard.
    pub fn k(&self) -> usize {
        self.large_docs / self.small_docs.max(1)
    }

    pub fn min_bootstrap_docs(&self) -> usize {
        self.min_bootstrap_docs.unwrap_or(self.small_docs)
    }

    pub fn validate(&self) -> Result<()> {
        check_sizes(self.large_docs as u64, self.small_docs as u64)?;
        self.model.validate()
    }
}

fn check_sizes(a: u64, b: u64) -> Result<()> {
    if b == 0 || a % b != 0 || a / b < 2 {
        return Err(Error::Config(format!("large shard size {a} must be k * {b} with k >= 2")));
    }
    Ok(())
}

/// One document ready for indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestDoc {
    pub ordinal: u64,
    pub doc_id: String,
    pub passages: Vec<EmbeddedPassage>,
}

impl IngestDoc {
    pub fn n_tokens(&self) -> usize {
        self.passages.iter().map(|p| p.matrix.rows()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LifecycleEvent {
    BootstrapExact { ordinal: u64, doc_id: String },
    IndexedIntoIncomplete { ordinal: u64, doc_id: String, model_used: Option<String> },
    SmallShardSealed { ordinal: u64, shard_id: String, model_id: Option<String> },
    LargeShardSealed { ordinal: u64, shard_id: String, model_id: Option<String>, retired: Vec<String> },
}

impl LifecycleEvent {
    pub fn ordinal(&self) -> u64 {
        match self {
            LifecycleEvent::BootstrapExact { ordinal, .. }
            | LifecycleEvent::IndexedIntoIncomplete { ordinal, .. }
            | LifecycleEvent::SmallShardSealed { ordinal, .. }
            | LifecycleEvent::LargeShardSealed { ordinal, .. } => *ordinal,
        }
    }
}

/// Model used for documents entering the incomplete shard.
#[derive(Debug, Clone)]
pub enum PriorModel {
    Model(Arc<ShardModel>),
    BootstrapExact,
}

/// Sealed shards and raw documents recovered from disk.
#[derive(Debug, Clone, Default)]
pub struct RestoredState {
    pub large: Vec<Arc<ShardIndex>>,
    pub small: Vec<Arc<ShardIndex>>,
    /// Most recently sealed model, if any.
    pub last_model: Option<Arc<ShardModel>>,
    /// Documents of the current block, i.e. those held by `small`.
    pub block: Vec<IngestDoc>,
    pub retired: Vec<String>,
}

pub fn small_shard_id(first: u64, last: u64) -> String {
    format!("small-{first:09}-{last:09}")
}

pub fn large_shard_id(first: u64, last: u64) -> String {
    format!("large-{first:09}-{last:09}")
}

pub struct Lifecycle {
    cfg: LifecycleConfig,
    fingerprint: Fingerprint,
    next_ordinal: u64,
    large: Vec<Arc<ShardIndex>>,
    small: Vec<Arc<ShardIndex>>,
    incomplete: Option<ShardBuilder>,
    /// Raw documents since the last large shard.
    block: Vec<IngestDoc>,
    bootstrap: bool,
    bootstrap_passages: usize,
    last_model: Option<Arc<ShardModel>>,
    events: Vec<LifecycleEvent>,
    /// Index passes per document, by ordinal.
    passes: Vec<u8>,
    tokens_indexed: u64,
    build_times: Vec<(String, Duration)>,
    retired: Vec<String>,
}

impl Lifecycle {
    pub fn new(cfg: LifecycleConfig, fingerprint: Fingerprint) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            fingerprint,
            next_ordinal: 0,
            large: Vec::new(),
            small: Vec::new(),
            incomplete: None,
            block: Vec::new(),
            bootstrap: true,
            bootstrap_passages: 0,
            last_model: None,
            events: Vec::new(),
            passes: Vec::new(),
            tokens_indexed: 0,
            build_times: Vec::new(),
            retired: Vec::new(),
        })
    }

    /// Resumes after the last sealed shard. Documents of sealed shards are
    /// not re-indexed; their pass counts are recorded as already complete
    /// for their phase.
    pub fn restore(cfg: LifecycleConfig, fingerprint: Fingerprint, state: RestoredState) -> Result<Self> {
        let mut lc = Self::new(cfg, fingerprint)?;
        if state.large.is_empty() && state.small.is_empty() {
            return Ok(lc);
        }
        let a = lc.cfg.large_docs as u64;
        let b = lc.cfg.small_docs as u64;
        let mut next = 0u64;
        for (shards, size) in [(&state.large, a), (&state.small, b)] {
            for s in shards {
                if s.fingerprint != fingerprint {
                    return Err(Error::Incompatible(format!("shard {} was built with another embedder", s.shard_id)));
                }
                if s.doc_range != (next, next + size - 1) || s.n_docs() as u64 != size {
                    return Err(Error::Corruption(format!("shard {} does not continue the stream at ordinal {next}", s.shard_id)));
                }
                next += size;
            }
        }
        let block_start = state.large.len() as u64 * a;
        if state.small.len() >= lc.cfg.k() {
            return Err(Error::Corruption("restored block holds a full set of small shards".into()));
        }
        if state.block.len() as u64 != next - block_start
            || state.block.iter().enumerate().any(|(i, d)| d.ordinal != block_start + i as u64)
        {
            return Err(Error::Corruption("restored block documents do not match the small shards".into()));
        }
        if lc.cfg.mode == IndexMode::Compressed && state.last_model.is_none() {
            return Err(Error::Corruption("compressed index restored without a model".into()));
        }
        lc.passes = vec![3; block_start as usize];
        lc.passes.resize(next as usize, 2);
        lc.next_ordinal = next;
        lc.large = state.large;
        lc.small = state.small;
        lc.block = state.block;
        lc.last_model = state.last_model;
        lc.retired = state.retired;
        lc.bootstrap = false;
        Ok(lc)
    }

    pub fn config(&self) -> &LifecycleConfig {
        &self.cfg
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    pub fn next_ordinal(&self) -> u64 {
        self.next_ordinal
    }

    pub fn in_bootstrap(&self) -> bool {
        self.bootstrap
    }

    pub fn events(&self) -> &[LifecycleEvent] {
        &self.events
    }

    pub fn large_shards(&self) -> &[Arc<ShardIndex>] {
        &self.large
    }

    pub fn small_shards(&self) -> &[Arc<ShardIndex>] {
        &self.small
    }

    pub fn incomplete(&self) -> Option<&ShardBuilder> {
        self.incomplete.as_ref()
    }

    pub fn block(&self) -> &[IngestDoc] {
        &self.block
    }

    pub fn retired(&self) -> &[String] {
        &self.retired
    }

    pub fn last_model(&self) -> Option<&Arc<ShardModel>> {
        self.last_model.as_ref()
    }

    /// Wall-clock time spent building each sealed shard.
    pub fn build_times(&self) -> &[(String, Duration)] {
        &self.build_times
    }

    /// Times the document at `ordinal` has been indexed.
    pub fn passes(&self, ordinal: u64) -> u8 {
        self.passes.get(ordinal as usize).copied().unwrap_or(0)
    }

    /// Index passes summed over documents.
    pub fn total_passes(&self) -> u64 {
        self.passes.iter().map(|&p| u64::from(p)).sum()
    }

    /// Token vectors written into any shard, counting every rebuild.
    pub fn tokens_indexed(&self) -> u64 {
        self.tokens_indexed
    }

    pub fn select_prior_model(&self) -> PriorModel {
        match &self.last_model {
            Some(m) => PriorModel::Model(m.clone()),
            None => PriorModel::BootstrapExact,
        }
    }

    /// Sealed shards in stream order.
    pub fn sealed_shards(&self) -> impl Iterator<Item = &Arc<ShardIndex>> {
        self.large.iter().chain(self.small.iter())
    }

    /// Every searchable shard, including a sealed copy of the incomplete one.
    pub fn snapshot(&self) -> Result<Snapshot> {
        let mut shards: Vec<Arc<ShardIndex>> = self.sealed_shards().cloned().collect();
        if let Some(b) = &self.incomplete {
            shards.push(Arc::new(b.clone().seal()?));
        }
        Ok(Snapshot { fingerprint: self.fingerprint, shards })
    }

    pub fn ingest(&mut self, doc: IngestDoc) -> Result<Vec<LifecycleEvent>> {
        if doc.ordinal != self.next_ordinal {
            return Err(Error::Ordering { got: doc.ordinal, last: self.next_ordinal.wrapping_sub(1) });
        }
        if doc.passages.is_empty() {
            return Err(Error::Format(format!("document {} has no passages", doc.doc_id)));
        }
        let start = self.events.len();
        let ordinal = doc.ordinal;

        if self.incomplete.is_none() {
            self.incomplete = Some(self.open_incomplete(ordinal)?);
        }
        let builder = self.incomplete.as_mut().expect("incomplete shard");
        builder.add_document(ordinal, &doc.doc_id, &doc.passages)?;
        let event = if self.bootstrap {
            self.bootstrap_passages += doc.passages.len();
            LifecycleEvent::BootstrapExact { ordinal, doc_id: doc.doc_id.clone() }
        } else {
            let model_used = builder.model().map(|m| m.model_id().to_string());
            LifecycleEvent::IndexedIntoIncomplete { ordinal, doc_id: doc.doc_id.clone(), model_used }
        };
        self.events.push(event);
        self.tokens_indexed += doc.n_tokens() as u64;
        self.passes.push(1);
        self.block.push(doc);
        self.next_ordinal += 1;

        let b = self.cfg.small_docs as u64;
        if self.next_ordinal % b == 0 {
            if self.bootstrap {
                if self.bootstrap_passages >= self.cfg.min_bootstrap_passages && self.block.len() >= self.cfg.min_bootstrap_docs() {
                    self.absorb_bootstrap(ordinal)?;
                }
            } else {
                self.incomplete = None;
                let from = self.block.len() - self.cfg.small_docs;
                self.seal_small(from, ordinal)?;
                if self.small.len() == self.cfg.k() {
                    self.seal_large(ordinal)?;
                }
            }
        }
        Ok(self.events[start..].to_vec())
    }

    fn open_incomplete(&self, first: u64) -> Result<ShardBuilder> {
        if self.bootstrap {
            return Ok(ShardBuilder::exact(format!("bootstrap-{first:09}"), Phase::Bootstrap, self.fingerprint));
        }
        let id = format!("incomplete-{first:09}");
        match self.select_prior_model() {
            PriorModel::Model(m) if self.cfg.mode == IndexMode::Compressed => {
                ShardBuilder::compressed(id, Phase::SmallPriorModel, m, self.fingerprint)
            }
            _ => Ok(ShardBuilder::exact(id, Phase::SmallPriorModel, self.fingerprint)),
        }
    }

    /// Rebuilds the bootstrap documents block by block, exactly as if they
    /// had arrived after a model existed.
    fn absorb_bootstrap(&mut self, ordinal: u64) -> Result<()> {
        if let Some(b) = self.incomplete.take() {
            self.retired.push(b.shard_id().to_string());
        }
        self.bootstrap = false;
        let b = self.cfg.small_docs;
        let mut from = 0;
        while from < self.block.len() {
            self.seal_small(from, ordinal)?;
            from += b;
            if self.small.len() == self.cfg.k() {
                self.seal_large(ordinal)?;
                from = 0;
            }
        }
        Ok(())
    }

    fn train(&self, docs: &[IngestDoc], shard_id: &str, first: u64) -> Result<Option<Arc<ShardModel>>> {
        if self.cfg.mode == IndexMode::Exact {
            return Ok(None);
        }
        let passages: Vec<EmbeddedPassage> = docs.iter().flat_map(|d| d.passages.iter().cloned()).collect();
        let cfg = ModelConfig { seed: mix_seed(self.cfg.model.seed, first), ..self.cfg.model.clone() };
        Ok(Some(Arc::new(build_shard_model(&passages, &cfg, self.fingerprint, shard_id)?)))
    }

    fn build(&mut self, docs_from: usize, docs_to: usize, shard_id: &str, phase: Phase) -> Result<(ShardIndex, Option<String>)> {
        let t = Instant::now();
        let docs = &self.block[docs_from..docs_to];
        let first = docs[0].ordinal;
        let model = self.train(docs, shard_id, first)?;
        let mut builder = match &model {
            Some(m) => ShardBuilder::compressed(shard_id, phase, m.clone(), self.fingerprint)?,
            None => ShardBuilder::exact(shard_id, phase, self.fingerprint),
        };
        for d in docs {
            builder.add_document(d.ordinal, &d.doc_id, &d.passages)?;
            self.passes[d.ordinal as usize] += 1;
        }
        self.tokens_indexed += builder.tokens_indexed() as u64;
        let shard = builder.seal()?;
        self.build_times.push((shard_id.to_string(), t.elapsed()));
        let model_id = model.as_ref().map(|m| m.model_id().to_string());
        if model.is_some() {
            self.last_model = model;
        }
        Ok((shard, model_id))
    }

    fn seal_small(&mut self, from: usize, at: u64) -> Result<()> {
        let to = from + self.cfg.small_docs;
        let id = small_shard_id(self.block[from].ordinal, self.block[to - 1].ordinal);
        let (shard, model_id) = self.build(from, to, &id, Phase::SmallOwnModel)?;
        self.small.push(Arc::new(shard));
        self.events.push(LifecycleEvent::SmallShardSealed { ordinal: at, shard_id: id, model_id });
        Ok(())
    }

    fn seal_large(&mut self, at: u64) -> Result<()> {
        let a = self.cfg.large_docs;
        let id = large_shard_id(self.block[0].ordinal, self.block[a - 1].ordinal);
        let (shard, model_id) = self.build(0, a, &id, Phase::Large)?;
        let retired: Vec<String> = self.small.drain(..).map(|s| s.shard_id.clone()).collect();
        self.retired.extend(retired.iter().cloned());
        self.large.push(Arc::new(shard));
        self.block.drain(..a);
        self.events.push(LifecycleEvent::LargeShardSealed { ordinal: at, shard_id: id, model_id, retired });
        Ok(())
    }

    /// Structural checks: the active shards partition the ingested prefix of
    /// the stream, shard counts follow [`shard_count`] once bootstrap is
    /// over, no document was indexed more than three times and no more than
    /// `k - 1` small shards are active.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Invariant(m));
        let mut ranges: Vec<(u64, u64, usize, &str)> =
            self.sealed_shards().map(|s| (s.doc_range.0, s.doc_range.1, s.n_docs(), s.shard_id.as_str())).collect();
        if let Some(b) = &self.incomplete {
            if let Some((f, l)) = b.doc_range() {
                ranges.push((f, l, b.n_docs(), b.shard_id()));
            }
        }
        let mut next = 0u64;
        for (f, l, n, id) in ranges {
            if f != next || l < f || (l - f + 1) as usize != n {
                return fail(format!("shard {id} covers {f}..={l} with {n} docs; expected to start at {next}"));
            }
            next = l + 1;
        }
        if next != self.next_ordinal {
            return fail(format!("active shards cover {next} documents but {} were ingested", self.next_ordinal));
        }
        if !self.bootstrap {
            let c = shard_count(self.next_ordinal, self.cfg.large_docs as u64, self.cfg.small_docs as u64)?;
            let got = (self.large.len() as u64, self.small.len() as u64, u64::from(self.incomplete.is_some()));
            if got != (c.large, c.small, c.incomplete) {
                return fail(format!("shard counts {got:?} differ from {c}"));
            }
        }
        if self.small.len() >= self.cfg.k() {
            return fail(format!("{} small shards active with k = {}", self.small.len(), self.cfg.k()));
        }
        if let Some(i) = self.passes.iter().position(|&p| p > 3) {
            return fail(format!("document {i} indexed {} times", self.passes[i]));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardCount {
    pub large: u64,
    pub small: u64,
    pub incomplete: u64,
    pub total: u64,
}

impl fmt::Display for ShardCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "large={} small={} incomplete={} total={}", self.large, self.small, self.incomplete, self.total)
    }
}

/// Active shards after `n` documents with large size `a` and small size `b`.
pub fn shard_count(n: u64, a: u64, b: u64) -> Result<ShardCount> {
    check_sizes(a, b)?;
    let large = n / a;
    let r = n % a;
    let small = r / b;
    let incomplete = u64::from(r % b > 0);
    Ok(ShardCount { large, small, incomplete, total: large + small + incomplete })
}

/// Times a document is indexed over its lifetime: into the incomplete shard
/// (or the bootstrap shard), into its small shard, into its large shard.
pub fn reindex_count(position_in_block: u64, cfg: &LifecycleConfig) -> Result<u32> {
    cfg.validate()?;
    if position_in_block >= cfg.large_docs as u64 {
        return Err(Error::Config(format!("position {position_in_block} outside a block of {}", cfg.large_docs)));
    }
    Ok(3)
}

/// Document index passes performed so far after `n` documents: three for
/// documents in large shards, two in small shards, one in the incomplete
/// shard.
pub fn index_work(n: u64, a: u64, b: u64) -> Result<u64> {
    let c = shard_count(n, a, b)?;
    Ok(3 * c.large * a + 2 * c.small * b + n % b)
}
