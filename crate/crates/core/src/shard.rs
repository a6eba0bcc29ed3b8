//! A single searchable shard.
//!
//! Compressed shards hold one [`ShardModel`], the compressed codes of every
//! passage and an inverted list per centroid. Exact shards keep raw token
//! matrices and are scored by brute force; they serve the start of the stream
//! before any model exists.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::codec::{decode_passage, encode_passage, read_codes, write_codes, CompressedPassage};
use crate::dot;
use crate::embed::{fingerprint_hex, read_vectors, write_vectors, EmbeddedPassage, Fingerprint, QueryEmbedding, TokenMatrix};
use crate::error::{Error, Result};
use crate::model::ShardModel;

/// Which step of the sharding hierarchy produced a shard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Exact shard used before the first model exists.
    Bootstrap,
    /// Small shard re-indexed with a model trained on its own documents.
    SmallOwnModel,
    /// Incomplete shard indexed with an earlier shard's model.
    SmallPriorModel,
    /// Large shard re-indexed with a model trained on all of its documents.
    Large,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Posting {
    pub passage_id: u64,
    pub position: u32,
}

#[derive(Debug, Clone)]
pub enum ShardKind {
    Compressed {
        model: Arc<ShardModel>,
        /// Sorted by passage id.
        codes: Vec<CompressedPassage>,
        /// One posting list per centroid, sorted by passage id then position.
        inverted: Vec<Vec<Posting>>,
    },
    Exact {
        /// Sorted by passage id.
        passages: Vec<(u64, TokenMatrix)>,
    },
}

/// A sealed, immutable shard.
#[derive(Debug, Clone)]
pub struct ShardIndex {
    pub shard_id: String,
    pub phase: Phase,
    pub kind: ShardKind,
    /// passage id -> (doc id, window index)
    pub passage_map: BTreeMap<u64, (String, u32)>,
    /// Documents in stream order.
    pub doc_ids: Vec<String>,
    /// Inclusive range of stream ordinals covered.
    pub doc_range: (u64, u64),
    pub fingerprint: Fingerprint,
}

impl ShardIndex {
    pub fn n_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn n_passages(&self) -> usize {
        self.passage_map.len()
    }

    pub fn n_tokens(&self) -> usize {
        match &self.kind {
            ShardKind::Compressed { codes, .. } => codes.iter().map(|c| c.n_tokens()).sum(),
            ShardKind::Exact { passages } => passages.iter().map(|(_, m)| m.rows()).sum(),
        }
    }

    pub fn model(&self) -> Option<&Arc<ShardModel>> {
        match &self.kind {
            ShardKind::Compressed { model, .. } => Some(model),
            ShardKind::Exact { .. } => None,
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.kind, ShardKind::Exact { .. })
    }

    pub fn contains_ordinal(&self, ordinal: u64) -> bool {
        (self.doc_range.0..=self.doc_range.1).contains(&ordinal)
    }
}

/// Accumulates documents in stream order, then seals into a [`ShardIndex`].
#[derive(Debug, Clone)]
pub struct ShardBuilder {
    shard_id: String,
    phase: Phase,
    fingerprint: Fingerprint,
    model: Option<Arc<ShardModel>>,
    codes: Vec<CompressedPassage>,
    raw: Vec<(u64, TokenMatrix)>,
    passage_map: BTreeMap<u64, (String, u32)>,
    doc_ids: Vec<String>,
    range: Option<(u64, u64)>,
    tokens_encoded: usize,
}

impl ShardBuilder {
    /// Builder that compresses with `model`. The model must come from the
    /// engine's embedder.
    pub fn compressed(shard_id: impl Into<String>, phase: Phase, model: Arc<ShardModel>, engine: Fingerprint) -> Result<Self> {
        if model.embedder_fingerprint != engine {
            return Err(Error::Incompatible(format!(
                "model {} was trained with embedder {} but the engine uses {}",
                model.model_id(),
                fingerprint_hex(&model.embedder_fingerprint),
                fingerprint_hex(&engine)
            )));
        }
        Ok(Self::new(shard_id.into(), phase, engine, Some(model)))
    }

    pub fn exact(shard_id: impl Into<String>, phase: Phase, engine: Fingerprint) -> Self {
        Self::new(shard_id.into(), phase, engine, None)
    }

    fn new(shard_id: String, phase: Phase, fingerprint: Fingerprint, model: Option<Arc<ShardModel>>) -> Self {
        Self {
            shard_id,
            phase,
            fingerprint,
            model,
            codes: Vec::new(),
            raw: Vec::new(),
            passage_map: BTreeMap::new(),
            doc_ids: Vec::new(),
            range: None,
            tokens_encoded: 0,
        }
    }

    pub fn shard_id(&self) -> &str {
        &self.shard_id
    }

    pub fn model(&self) -> Option<&Arc<ShardModel>> {
        self.model.as_ref()
    }

    pub fn n_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn n_passages(&self) -> usize {
        self.passage_map.len()
    }

    /// Token vectors written so far (encoded or stored raw).
    pub fn tokens_indexed(&self) -> usize {
        self.tokens_encoded
    }

    pub fn doc_range(&self) -> Option<(u64, u64)> {
        self.range
    }

    /// Appends the next document of the stream. Ordinals must be contiguous.
    pub fn add_document(&mut self, ordinal: u64, doc_id: &str, passages: &[EmbeddedPassage]) -> Result<()> {
        if let Some((_, last)) = self.range {
            if ordinal != last + 1 {
                return Err(Error::Invariant(format!(
                    "shard {} is contiguous up to ordinal {last}; got {ordinal}",
                    self.shard_id
                )));
            }
        }
        for p in passages {
            if self.passage_map.contains_key(&p.passage_id) {
                return Err(Error::Invariant(format!("passage {} indexed twice in {}", p.passage_id, self.shard_id)));
            }
            match &self.model {
                Some(model) => {
                    if p.matrix.dim() != model.dim {
                        return Err(Error::DimensionMismatch { expected: model.dim, actual: p.matrix.dim() });
                    }
                    self.codes.push(encode_passage(p.passage_id, &p.matrix, model)?);
                }
                None => self.raw.push((p.passage_id, p.matrix.clone())),
            }
            self.tokens_encoded += p.matrix.rows();
            self.passage_map.insert(p.passage_id, (doc_id.to_string(), p.window_index));
        }
        self.doc_ids.push(doc_id.to_string());
        self.range = Some(match self.range {
            Some((first, _)) => (first, ordinal),
            None => (ordinal, ordinal),
        });
        Ok(())
    }

    pub fn seal(self) -> Result<ShardIndex> {
        let doc_range = self.range.ok_or_else(|| Error::State(format!("shard {} has no documents", self.shard_id)))?;
        let kind = match self.model {
            Some(model) => {
                let mut codes = self.codes;
                codes.sort_by_key(|c| c.passage_id);
                let mut inverted = vec![Vec::new(); model.n_centroids];
                for c in &codes {
                    for (pos, &cid) in c.centroid_ids.iter().enumerate() {
                        inverted[cid as usize].push(Posting { passage_id: c.passage_id, position: pos as u32 });
                    }
                }
                ShardKind::Compressed { model, codes, inverted }
            }
            None => {
                let mut passages = self.raw;
                passages.sort_by_key(|p| p.0);
                ShardKind::Exact { passages }
            }
        };
        Ok(ShardIndex {
            shard_id: self.shard_id,
            phase: self.phase,
            kind,
            passage_map: self.passage_map,
            doc_ids: self.doc_ids,
            doc_range,
            fingerprint: self.fingerprint,
        })
    }
}

/// Documents to index, as `(ordinal, doc_id, passages)` in stream order.
pub type DocSlice<'a> = (u64, &'a str, &'a [EmbeddedPassage]);

pub fn build_compressed_shard(
    shard_id: &str,
    phase: Phase,
    docs: &[DocSlice<'_>],
    model: Arc<ShardModel>,
    engine: Fingerprint,
) -> Result<ShardIndex> {
    let mut b = ShardBuilder::compressed(shard_id, phase, model, engine)?;
    for (ord, id, ps) in docs {
        b.add_document(*ord, id, ps)?;
    }
    b.seal()
}

pub fn build_exact_shard(shard_id: &str, phase: Phase, docs: &[DocSlice<'_>], engine: Fingerprint) -> Result<ShardIndex> {
    let mut b = ShardBuilder::exact(shard_id, phase, engine);
    for (ord, id, ps) in docs {
        b.add_document(*ord, id, ps)?;
    }
    b.seal()
}

// ---------------------------------------------------------------------------
// Search

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchParams {
    /// Passages returned per shard.
    pub n_per_shard: usize,
    /// Centroids probed per query token.
    pub nprobe: usize,
    /// Candidates kept after centroid-only scoring, as a multiple of
    /// `n_per_shard`.
    pub candidate_factor: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self { n_per_shard: 50, nprobe: 4, candidate_factor: 4 }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_shard == 0 || self.nprobe == 0 || self.candidate_factor == 0 {
            return Err(Error::Config("n_per_shard, nprobe and candidate_factor must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPassage {
    pub passage_id: u64,
    pub doc_id: String,
    pub score: f32,
}

/// Score descending, then passage id ascending.
pub fn passage_order(a: &ScoredPassage, b: &ScoredPassage) -> Ordering {
    b.score.total_cmp(&a.score).then(a.passage_id.cmp(&b.passage_id))
}

/// Sum over query rows of the best dot product against any passage row.
/// An empty passage scores negative infinity.
pub fn exact_maxsim(q: &TokenMatrix, p: &TokenMatrix) -> Result<f32> {
    if q.dim() != p.dim() {
        return Err(Error::DimensionMismatch { expected: q.dim(), actual: p.dim() });
    }
    if p.is_empty() {
        return Ok(f32::NEG_INFINITY);
    }
    Ok(maxsim_unchecked(q, p))
}

fn maxsim_unchecked(q: &TokenMatrix, p: &TokenMatrix) -> f32 {
    let mut total = 0.0f32;
    for qr in q.iter_rows() {
        let mut best = f32::NEG_INFINITY;
        for pr in p.iter_rows() {
            let s = dot(qr, pr);
            if s > best {
                best = s;
            }
        }
        total += best;
    }
    total
}

/// Top `n_per_shard` passages of one shard.
///
/// Compressed shards run three stages: probe the `nprobe` best centroids per
/// query token and collect the passages in their posting lists; score those
/// candidates with centroid vectors only (a query token with no probed
/// centroid in the passage contributes 0) and keep the best
/// `candidate_factor * n_per_shard`; decode the survivors and rank them by
/// exact MaxSim. Exact shards are scored by brute force.
pub fn search_shard(q: &QueryEmbedding, shard: &ShardIndex, params: &SearchParams) -> Result<Vec<ScoredPassage>> {
    params.validate()?;
    let qm = &q.matrix;
    let mut scored: Vec<(u64, f32)> = match &shard.kind {
        ShardKind::Exact { passages } => {
            let mut out = Vec::with_capacity(passages.len());
            for (pid, m) in passages {
                let s = exact_maxsim(qm, m)?;
                if s.is_finite() {
                    out.push((*pid, s));
                }
            }
            out
        }
        ShardKind::Compressed { model, codes, inverted } => {
            if qm.dim() != model.dim {
                return Err(Error::DimensionMismatch { expected: model.dim, actual: qm.dim() });
            }
            let pool = candidate_pool(qm, model, codes, inverted, params);
            let mut out = Vec::with_capacity(pool.len());
            for idx in pool {
                let c = &codes[idx];
                if c.n_tokens() == 0 {
                    continue;
                }
                let decoded = decode_passage(c, model)?;
                out.push((c.passage_id, maxsim_unchecked(qm, &decoded)));
            }
            out
        }
    };
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(params.n_per_shard);
    scored
        .into_iter()
        .map(|(pid, score)| {
            let doc_id = shard
                .passage_map
                .get(&pid)
                .map(|(d, _)| d.clone())
                .ok_or_else(|| Error::Corruption(format!("passage {pid} missing from passage map of {}", shard.shard_id)))?;
            Ok(ScoredPassage { passage_id: pid, doc_id, score })
        })
        .collect()
}

/// Stages one and two: indices into `codes` of the passages that go on to
/// exact scoring.
fn candidate_pool(
    q: &TokenMatrix,
    model: &ShardModel,
    codes: &[CompressedPassage],
    inverted: &[Vec<Posting>],
    params: &SearchParams,
) -> Vec<usize> {
    let k = model.n_centroids;
    let nq = q.rows();
    let nprobe = params.nprobe.min(k);

    let mut cscores = vec![0f32; nq * k];
    for (i, qr) in q.iter_rows().enumerate() {
        for c in 0..k {
            cscores[i * k + c] = dot(qr, model.centroid(c));
        }
    }

    let mut probed = vec![false; nq * k];
    let mut any_probed = vec![false; k];
    let mut order: Vec<u32> = Vec::with_capacity(k);
    for i in 0..nq {
        let row = &cscores[i * k..(i + 1) * k];
        order.clear();
        order.extend(0..k as u32);
        let cmp = |a: &u32, b: &u32| row[*b as usize].total_cmp(&row[*a as usize]).then(a.cmp(b));
        if nprobe < k {
            order.select_nth_unstable_by(nprobe - 1, cmp);
        }
        for &c in &order[..nprobe] {
            probed[i * k + c as usize] = true;
            any_probed[c as usize] = true;
        }
    }

    let mut is_candidate = vec![false; codes.len()];
    for (c, list) in inverted.iter().enumerate() {
        if !any_probed[c] {
            continue;
        }
        for post in list {
            if let Ok(idx) = codes.binary_search_by_key(&post.passage_id, |p| p.passage_id) {
                is_candidate[idx] = true;
            }
        }
    }

    let mut approx: Vec<(usize, f32)> = Vec::new();
    for (idx, code) in codes.iter().enumerate() {
        if !is_candidate[idx] {
            continue;
        }
        let mut total = 0.0f32;
        for i in 0..nq {
            let mut best: Option<f32> = None;
            for &cid in &code.centroid_ids {
                let c = cid as usize;
                if probed[i * k + c] {
                    let s = cscores[i * k + c];
                    best = Some(best.map_or(s, |b: f32| b.max(s)));
                }
            }
            total += best.unwrap_or(0.0);
        }
        approx.push((idx, total));
    }
    approx.sort_by(|a, b| b.1.total_cmp(&a.1).then(codes[a.0].passage_id.cmp(&codes[b.0].passage_id)));
    approx.truncate(params.candidate_factor.saturating_mul(params.n_per_shard));
    approx.into_iter().map(|(idx, _)| idx).collect()
}

// ---------------------------------------------------------------------------
// On-disk layout: manifest.json, passages.tsv and either
// model.psmd + codes.pscd + inverted.psiv (compressed) or vectors.psev (exact).

pub const SHARD_FORMAT_VERSION: u32 = 1;
pub const INVERTED_MAGIC: &[u8; 4] = b"PSIV";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardManifest {
    pub format_version: u32,
    pub shard_id: String,
    pub kind: String,
    pub phase: Phase,
    pub doc_range: (u64, u64),
    pub model_id: Option<String>,
    pub n_docs: usize,
    pub n_passages: usize,
    pub n_tokens: usize,
    pub fingerprint: String,
}

pub fn write_inverted<W: Write>(w: W, inverted: &[Vec<Posting>]) -> Result<()> {
    let mut w = BufWriter::new(w);
    w.write_all(INVERTED_MAGIC)?;
    w.write_u32::<LittleEndian>(inverted.len() as u32)?;
    for list in inverted {
        w.write_u64::<LittleEndian>(list.len() as u64)?;
        for p in list {
            w.write_u64::<LittleEndian>(p.passage_id)?;
            w.write_u32::<LittleEndian>(p.position)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_inverted<R: Read>(r: R) -> Result<Vec<Vec<Posting>>> {
    let mut r = BufReader::new(r);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != INVERTED_MAGIC {
        return Err(Error::Corruption("bad inverted file magic".into()));
    }
    let k = r.read_u32::<LittleEndian>()? as usize;
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let n = r.read_u64::<LittleEndian>()? as usize;
        let mut list = Vec::with_capacity(n);
        for _ in 0..n {
            let passage_id = r.read_u64::<LittleEndian>()?;
            let position = r.read_u32::<LittleEndian>()?;
            list.push(Posting { passage_id, position });
        }
        out.push(list);
    }
    Ok(out)
}

fn parse_hex32(s: &str) -> Result<Fingerprint> {
    if s.len() != 64 {
        return Err(Error::Corruption("fingerprint must be 64 hex digits".into()));
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|_| Error::Corruption("bad fingerprint hex".into()))?;
    }
    Ok(out)
}

impl ShardIndex {
    pub fn manifest(&self) -> ShardManifest {
        ShardManifest {
            format_version: SHARD_FORMAT_VERSION,
            shard_id: self.shard_id.clone(),
            kind: if self.is_exact() { "exact" } else { "compressed" }.into(),
            phase: self.phase,
            doc_range: self.doc_range,
            model_id: self.model().map(|m| m.model_id().to_string()),
            n_docs: self.n_docs(),
            n_passages: self.n_passages(),
            n_tokens: self.n_tokens(),
            fingerprint: fingerprint_hex(&self.fingerprint),
        }
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut pm = BufWriter::new(File::create(dir.join("passages.tsv"))?);
        for (pid, (doc, win)) in &self.passage_map {
            writeln!(pm, "{pid}\t{doc}\t{win}")?;
        }
        pm.flush()?;
        match &self.kind {
            ShardKind::Compressed { model, codes, inverted } => {
                model.write(File::create(dir.join("model.psmd"))?)?;
                write_codes(File::create(dir.join("codes.pscd"))?, codes)?;
                write_inverted(File::create(dir.join("inverted.psiv"))?, inverted)?;
            }
            ShardKind::Exact { passages } => {
                let dim = passages.first().map_or(0, |p| p.1.dim());
                write_vectors(File::create(dir.join("vectors.psev"))?, dim, passages.iter().map(|(id, m)| (*id, m)))?;
            }
        }
        // The manifest goes last so a half-written directory is never valid.
        fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&self.manifest())?)?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let manifest: ShardManifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
        if manifest.format_version != SHARD_FORMAT_VERSION {
            return Err(Error::Corruption(format!("shard format version {}", manifest.format_version)));
        }
        let fingerprint = parse_hex32(&manifest.fingerprint)?;
        let mut passage_map = BTreeMap::new();
        let mut doc_ids: Vec<String> = Vec::new();
        for line in BufReader::new(File::open(dir.join("passages.tsv"))?).lines() {
            let line = line?;
            let mut f = line.split('\t');
            let (Some(pid), Some(doc), Some(win)) = (f.next(), f.next(), f.next()) else {
                return Err(Error::Corruption(format!("bad passage map line `{line}`")));
            };
            let pid: u64 = pid.parse().map_err(|_| Error::Corruption(format!("bad passage id `{pid}`")))?;
            let win: u32 = win.parse().map_err(|_| Error::Corruption(format!("bad window `{win}`")))?;
            if doc_ids.last().map(String::as_str) != Some(doc) {
                doc_ids.push(doc.to_string());
            }
            passage_map.insert(pid, (doc.to_string(), win));
        }
        let kind = match manifest.kind.as_str() {
            "compressed" => {
                let model = Arc::new(ShardModel::read(File::open(dir.join("model.psmd"))?)?);
                let codes = read_codes(File::open(dir.join("codes.pscd"))?, model.packed_len())?;
                let inverted = read_inverted(File::open(dir.join("inverted.psiv"))?)?;
                if inverted.len() != model.n_centroids {
                    return Err(Error::Corruption("inverted list count differs from K".into()));
                }
                ShardKind::Compressed { model, codes, inverted }
            }
            "exact" => {
                let (_, passages) = read_vectors(File::open(dir.join("vectors.psev"))?)?;
                ShardKind::Exact { passages }
            }
            other => return Err(Error::Corruption(format!("unknown shard kind `{other}`"))),
        };
        let shard = ShardIndex {
            shard_id: manifest.shard_id,
            phase: manifest.phase,
            kind,
            passage_map,
            doc_ids,
            doc_range: manifest.doc_range,
            fingerprint,
        };
        if shard.n_docs() != manifest.n_docs || shard.n_passages() != manifest.n_passages {
            return Err(Error::Corruption(format!("shard {} contents disagree with its manifest", shard.shard_id)));
        }
        Ok(shard)
    }
}
