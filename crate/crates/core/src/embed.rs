//! Token embedders.
//!
//! Every embedder produces unit-norm rows and exposes a fingerprint: a
//! SHA-256 digest of its configuration. Shards record the fingerprint of the
//! embedder that built them, and search refuses to merge scores across
//! fingerprints.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::stream::{fnv1a64, PassageRecord, Query, SyntheticStreamSpec};

pub type Fingerprint = [u8; 32];

pub fn fingerprint_of(description: &str) -> Fingerprint {
    Sha256::digest(description.as_bytes()).into()
}

pub fn fingerprint_hex(fp: &Fingerprint) -> String {
    fp.iter().map(|b| format!("{b:02x}")).collect()
}

/// Row-major matrix of token vectors.
///
/// Embedder output always has unit-norm rows; decoded (compressed) vectors
/// use the same container without that guarantee.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl TokenMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::Format(format!("{} values for a {rows}x{dim} matrix", data.len())));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f32>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, actual: r.len() });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), dim, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// True when every row has L2 norm within `tol` of 1.
    pub fn rows_unit_norm(&self, tol: f32) -> bool {
        self.iter_rows().all(|r| (norm(r) - 1.0).abs() < tol)
    }
}

pub(crate) fn norm(v: &[f32]) -> f32 {
    v.iter().map(|x| x * x).sum::<f32>().sqrt()
}

/// A query's token matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryEmbedding {
    pub query_id: String,
    pub matrix: TokenMatrix,
}

/// A passage together with its token vectors, ready for indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedPassage {
    pub passage_id: u64,
    pub doc_id: String,
    pub window_index: u32,
    pub matrix: TokenMatrix,
}

/// Produces token matrices for passages and queries.
///
/// Implementations are deterministic and shareable across threads.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    fn fingerprint(&self) -> Fingerprint;

    /// Embeds a token-id sequence.
    fn embed_tokens(&self, tokens: &[u32]) -> Result<TokenMatrix>;

    fn embed_passage(&self, p: &PassageRecord) -> Result<TokenMatrix> {
        self.embed_tokens(&p.tokens)
    }

    fn embed_query(&self, q: &Query) -> Result<QueryEmbedding> {
        if q.tokens.is_empty() {
            return Err(Error::Format(format!("query `{}` has no tokens", q.query_id)));
        }
        Ok(QueryEmbedding { query_id: q.query_id.clone(), matrix: self.embed_tokens(&q.tokens)? })
    }
}

/// Fails with a configuration error when the embedder's dimensionality
/// differs from the engine's.
pub fn check_dim(embedder: &dyn Embedder, dim: usize) -> Result<()> {
    if embedder.dim() != dim {
        return Err(Error::Config(format!("embedder produces dim {} but the engine is configured for {dim}", embedder.dim())));
    }
    Ok(())
}

pub fn embed_passages(embedder: &dyn Embedder, passages: &[PassageRecord]) -> Result<Vec<EmbeddedPassage>> {
    passages
        .iter()
        .map(|p| {
            let matrix = embedder.embed_passage(p)?;
            if matrix.dim() != embedder.dim() {
                return Err(Error::Config(format!("passage {} embedded with dim {}", p.passage_id, matrix.dim())));
            }
            Ok(EmbeddedPassage { passage_id: p.passage_id, doc_id: p.doc_id.clone(), window_index: p.window_index, matrix })
        })
        .collect()
}

fn gaussian_unit(dim: usize, seed: u64) -> Vec<f32> {
    let mut nonce = 0u64;
    loop {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::mix_seed(seed, nonce));
        let v: Vec<f32> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = norm(&v);
        if n > f32::EPSILON {
            return v.into_iter().map(|x| x / n).collect();
        }
        nonce += 1;
    }
}

/// `normalize(concept + noise_scale * h(token_id, seed))` where `h` is a
/// seeded pseudo-random unit vector. With `noise_scale == 0` the concept
/// vector is returned unchanged.
pub fn synthetic_embed(token_id: u32, concept: &[f32], noise_scale: f32, seed: u64) -> Vec<f32> {
    if noise_scale == 0.0 {
        return concept.to_vec();
    }
    let mut nonce = 0u64;
    loop {
        let h = gaussian_unit(concept.len(), crate::mix_seed(crate::mix_seed(seed, token_id as u64), nonce));
        let v: Vec<f32> = concept.iter().zip(&h).map(|(c, x)| c + noise_scale * x).collect();
        let n = norm(&v);
        if n > f32::EPSILON {
            return v.into_iter().map(|x| x / n).collect();
        }
        nonce += 1;
    }
}

const CONCEPT_SALT: u64 = 0xC0_4C_E9_75;

/// Embedder for synthetic streams: token `t` belongs to concept
/// `t / vocab_per_concept` and embeds near that concept's unit vector.
#[derive(Debug, Clone)]
pub struct SyntheticEmbedder {
    dim: usize,
    n_concepts: usize,
    vocab_per_concept: u32,
    noise_scale: f32,
    overlap: f32,
    seed: u64,
    concepts: Vec<Vec<f32>>,
    table: Vec<f32>,
}

impl SyntheticEmbedder {
    pub fn new(dim: usize, n_concepts: usize, vocab_per_concept: u32, noise_scale: f32, seed: u64) -> Result<Self> {
        Self::with_overlap(dim, n_concepts, vocab_per_concept, noise_scale, 0.0, seed)
    }

    /// Each concept after the first is `normalize(sqrt(overlap) * first + sqrt(1 - overlap) * g_c)`:
    /// every later concept is a variation on concept 0.
    pub fn with_overlap(dim: usize, n_concepts: usize, vocab_per_concept: u32, noise_scale: f32, overlap: f32, seed: u64) -> Result<Self> {
        if dim == 0 || n_concepts == 0 || vocab_per_concept == 0 {
            return Err(Error::Config("synthetic embedder needs positive dim, concepts and vocabulary".into()));
        }
        if !(0.0..1.0).contains(&overlap) {
            return Err(Error::Config(format!("concept overlap must lie in [0, 1), got {overlap}")));
        }
        let mut concepts: Vec<Vec<f32>> = Vec::with_capacity(n_concepts);
        for c in 0..n_concepts {
            let g = gaussian_unit(dim, crate::mix_seed(seed ^ CONCEPT_SALT, c as u64));
            let v = match concepts.first() {
                Some(prev) if overlap > 0.0 => {
                    let v: Vec<f32> = prev.iter().zip(&g).map(|(p, x)| overlap.sqrt() * p + (1.0 - overlap).sqrt() * x).collect();
                    let n = norm(&v);
                    v.into_iter().map(|x| x / n).collect()
                }
                _ => g,
            };
            concepts.push(v);
        }
        let vocab = n_concepts * vocab_per_concept as usize;
        let mut table = Vec::with_capacity(vocab * dim);
        for t in 0..vocab as u32 {
            let c = &concepts[(t / vocab_per_concept) as usize];
            table.extend(synthetic_embed(t, c, noise_scale, seed));
        }
        Ok(Self { dim, n_concepts, vocab_per_concept, noise_scale, overlap, seed, concepts, table })
    }

    pub fn for_spec(spec: &SyntheticStreamSpec) -> Result<Self> {
        Self::with_overlap(spec.dim, spec.n_concepts, spec.vocab_per_concept, spec.noise_scale, spec.concept_overlap, spec.seed)
    }

    pub fn concept_vector(&self, concept: usize) -> &[f32] {
        &self.concepts[concept]
    }

    pub fn token_vector(&self, token: u32) -> Option<&[f32]> {
        let t = token as usize;
        (t < self.n_concepts * self.vocab_per_concept as usize).then(|| &self.table[t * self.dim..(t + 1) * self.dim])
    }
}

impl Embedder for SyntheticEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> Fingerprint {
        fingerprint_of(&format!(
            "synthetic|dim={}|concepts={}|vocab={}|noise={:08x}|overlap={:08x}|seed={}",
            self.dim,
            self.n_concepts,
            self.vocab_per_concept,
            self.noise_scale.to_bits(),
            self.overlap.to_bits(),
            self.seed
        ))
    }

    fn embed_tokens(&self, tokens: &[u32]) -> Result<TokenMatrix> {
        let mut data = Vec::with_capacity(tokens.len() * self.dim);
        for &t in tokens {
            let v = self.token_vector(t).ok_or_else(|| Error::Format(format!("token {t} is outside the synthetic vocabulary")))?;
            data.extend_from_slice(v);
        }
        TokenMatrix::new(tokens.len(), self.dim, data)
    }
}

/// Maps every token id to an independent pseudo-random unit vector. Identical
/// tokens match with similarity 1; distinct tokens are nearly orthogonal.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("dim must be positive".into()));
        }
        Ok(Self { dim, seed })
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> Fingerprint {
        fingerprint_of(&format!("hash|dim={}|seed={}", self.dim, self.seed))
    }

    fn embed_tokens(&self, tokens: &[u32]) -> Result<TokenMatrix> {
        let mut data = Vec::with_capacity(tokens.len() * self.dim);
        for &t in tokens {
            data.extend(gaussian_unit(self.dim, crate::mix_seed(self.seed, t as u64)));
        }
        TokenMatrix::new(tokens.len(), self.dim, data)
    }
}

// ---------------------------------------------------------------------------
// Precomputed vector files: "PSEV" | version u32 | dim u32, then records of
// passage_id u64 | n_tokens u32 | n_tokens * dim f32, all little-endian.

pub const VECTORS_MAGIC: &[u8; 4] = b"PSEV";
pub const VECTORS_VERSION: u32 = 1;

pub fn write_vectors<'a, W, I>(w: W, dim: usize, records: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = (u64, &'a TokenMatrix)>,
{
    let mut w = BufWriter::new(w);
    w.write_all(VECTORS_MAGIC)?;
    w.write_u32::<LittleEndian>(VECTORS_VERSION)?;
    w.write_u32::<LittleEndian>(dim as u32)?;
    for (id, m) in records {
        if m.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, actual: m.dim() });
        }
        w.write_u64::<LittleEndian>(id)?;
        w.write_u32::<LittleEndian>(m.rows() as u32)?;
        for x in m.as_slice() {
            w.write_f32::<LittleEndian>(*x)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a vector file; returns its dimensionality and records in file order.
pub fn read_vectors<R: Read>(r: R) -> Result<(usize, Vec<(u64, TokenMatrix)>)> {
    let mut r = BufReader::new(r);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != VECTORS_MAGIC {
        return Err(Error::Corruption("bad vector file magic".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VECTORS_VERSION {
        return Err(Error::Corruption(format!("unsupported vector file version {version}")));
    }
    let dim = r.read_u32::<LittleEndian>()? as usize;
    let mut out = Vec::new();
    loop {
        let id = match r.read_u64::<LittleEndian>() {
            Ok(id) => id,
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        };
        let n = r.read_u32::<LittleEndian>()? as usize;
        let mut data = vec![0f32; n * dim];
        r.read_f32_into::<LittleEndian>(&mut data)?;
        out.push((id, TokenMatrix::new(n, dim, data)?));
    }
    Ok((dim, out))
}

/// Replays externally computed vectors. Passages are looked up by passage id;
/// queries by the 64-bit FNV-1a hash of their query id.
pub struct FileEmbedder {
    dim: usize,
    passages: HashMap<u64, TokenMatrix>,
    queries: HashMap<u64, TokenMatrix>,
    fingerprint: Fingerprint,
}

impl FileEmbedder {
    pub fn open(passages: &Path, queries: Option<&Path>) -> Result<Self> {
        let pbytes = std::fs::read(passages)?;
        let (dim, precs) = read_vectors(pbytes.as_slice())?;
        let mut hasher = Sha256::new();
        hasher.update(b"file|");
        hasher.update(&pbytes);
        let mut qmap = HashMap::new();
        if let Some(qp) = queries {
            let qbytes = std::fs::read(qp)?;
            let (qdim, qrecs) = read_vectors(qbytes.as_slice())?;
            if qdim != dim {
                return Err(Error::DimensionMismatch { expected: dim, actual: qdim });
            }
            hasher.update(b"|queries|");
            hasher.update(&qbytes);
            qmap = qrecs.into_iter().map(|(id, m)| normalize_rows(m).map(|m| (id, m))).collect::<Result<_>>()?;
        }
        let pmap = precs.into_iter().map(|(id, m)| normalize_rows(m).map(|m| (id, m))).collect::<Result<_>>()?;
        Ok(Self { dim, passages: pmap, queries: qmap, fingerprint: hasher.finalize().into() })
    }

    pub fn query_key(query_id: &str) -> u64 {
        fnv1a64(query_id.as_bytes())
    }
}

fn normalize_rows(m: TokenMatrix) -> Result<TokenMatrix> {
    let dim = m.dim();
    let rows = m.rows();
    let mut data = m.data;
    for r in data.chunks_exact_mut(dim.max(1)) {
        let n = norm(r);
        if n <= f32::EPSILON || !n.is_finite() {
            return Err(Error::Format("vector file contains a zero or non-finite row".into()));
        }
        r.iter_mut().for_each(|x| *x /= n);
    }
    TokenMatrix::new(rows, dim, data)
}

impl Embedder for FileEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    fn embed_tokens(&self, _tokens: &[u32]) -> Result<TokenMatrix> {
        Err(Error::Config("file-backed embedder only serves precomputed passages and queries".into()))
    }

    fn embed_passage(&self, p: &PassageRecord) -> Result<TokenMatrix> {
        let m = self
            .passages
            .get(&p.passage_id)
            .ok_or_else(|| Error::Format(format!("no precomputed vectors for passage {}", p.passage_id)))?;
        if m.rows() != p.tokens.len() {
            return Err(Error::Format(format!(
                "passage {} has {} tokens but {} precomputed vectors",
                p.passage_id,
                p.tokens.len(),
                m.rows()
            )));
        }
        Ok(m.clone())
    }

    fn embed_query(&self, q: &Query) -> Result<QueryEmbedding> {
        let m = self
            .queries
            .get(&Self::query_key(&q.query_id))
            .ok_or_else(|| Error::Format(format!("no precomputed vectors for query {}", q.query_id)))?;
        Ok(QueryEmbedding { query_id: q.query_id.clone(), matrix: m.clone() })
    }
}

/// Embedder selection as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedderConfig {
    Synthetic {
        n_concepts: usize,
        vocab_per_concept: u32,
        noise_scale: f32,
        #[serde(default)]
        concept_overlap: f32,
        seed: u64,
    },
    Hash {
        seed: u64,
    },
    File {
        passages: String,
        queries: Option<String>,
    },
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::Hash { seed: 0 }
    }
}

impl EmbedderConfig {
    pub fn synthetic_for(spec: &SyntheticStreamSpec) -> Self {
        EmbedderConfig::Synthetic {
            n_concepts: spec.n_concepts,
            vocab_per_concept: spec.vocab_per_concept,
            noise_scale: spec.noise_scale,
            concept_overlap: spec.concept_overlap,
            seed: spec.seed,
        }
    }

    /// Builds the embedder; relative file paths resolve against `base`.
    pub fn build(&self, dim: usize, base: &Path) -> Result<Box<dyn Embedder>> {
        let e: Box<dyn Embedder> = match self {
            EmbedderConfig::Synthetic { n_concepts, vocab_per_concept, noise_scale, concept_overlap, seed } => {
                Box::new(SyntheticEmbedder::with_overlap(dim, *n_concepts, *vocab_per_concept, *noise_scale, *concept_overlap, *seed)?)
            }
            EmbedderConfig::Hash { seed } => Box::new(HashEmbedder::new(dim, *seed)?),
            EmbedderConfig::File { passages, queries } => {
                let q = queries.as_ref().map(|q| base.join(q));
                Box::new(FileEmbedder::open(&base.join(passages), q.as_deref())?)
            }
        };
        check_dim(e.as_ref(), dim)?;
        Ok(e)
    }
}

/// Writes a vector file from an open file handle.
pub fn write_vectors_file<'a, I>(path: &Path, dim: usize, records: I) -> Result<()>
where
    I: IntoIterator<Item = (u64, &'a TokenMatrix)>,
{
    write_vectors(File::create(path)?, dim, records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dot;
    use crate::stream::{generate_drift_stream, split_passages, Windowing};

    #[test]
    fn zero_noise_is_identity() {
        let mut e1 = vec![0.0; 16];
        e1[0] = 1.0;
        assert_eq!(synthetic_embed(42, &e1, 0.0, 9), e1);
    }

    #[test]
    fn synthetic_embed_is_deterministic_and_unit() {
        let c = gaussian_unit(32, 5);
        let a = synthetic_embed(3, &c, 0.3, 1);
        let b = synthetic_embed(3, &c, 0.3, 1);
        assert_eq!(a, b);
        assert!((norm(&a) - 1.0).abs() < 1e-5);
        assert_ne!(a, synthetic_embed(4, &c, 0.3, 1));
    }

    #[test]
    fn tokens_stay_near_their_concept() {
        let e = SyntheticEmbedder::new(64, 4, 1000, 0.3, 17).unwrap();
        let own: f64 = (0..1000u32).map(|t| dot(e.token_vector(t).unwrap(), e.concept_vector(0)) as f64).sum::<f64>() / 1000.0;
        for other in 1..4 {
            let cross: f64 =
                (0..1000u32).map(|t| dot(e.token_vector(t).unwrap(), e.concept_vector(other)) as f64).sum::<f64>() / 1000.0;
            assert!(own > cross, "own {own} cross {cross}");
        }
        assert!(own > 0.9);
    }

    #[test]
    fn passage_shape_and_norm() {
        let e = SyntheticEmbedder::new(16, 2, 8, 0.3, 1).unwrap();
        let p = PassageRecord { passage_id: 0, doc_id: "d".into(), window_index: 0, tokens: vec![0, 1, 2, 3, 9] };
        let m = e.embed_passage(&p).unwrap();
        assert_eq!((m.rows(), m.dim()), (5, 16));
        assert!(m.rows_unit_norm(1e-5));
        assert_eq!(m, e.embed_passage(&p).unwrap());
    }

    #[test]
    fn same_concept_passages_are_closer() {
        let spec = SyntheticStreamSpec::stationary(4);
        let s = generate_drift_stream(&spec).unwrap();
        let e = SyntheticEmbedder::for_spec(&spec).unwrap();
        let mats: Vec<TokenMatrix> = s.docs[..40]
            .iter()
            .map(|d| e.embed_passage(&split_passages(d, Windowing::default(), 0)[0]).unwrap())
            .collect();
        let mean_cos = |a: &TokenMatrix, b: &TokenMatrix| {
            let mut s = 0.0f64;
            for x in a.iter_rows() {
                for y in b.iter_rows() {
                    s += dot(x, y) as f64;
                }
            }
            s / (a.rows() * b.rows()) as f64
        };
        let (mut same, mut ns, mut diff, mut nd) = (0.0, 0, 0.0, 0);
        for i in 0..mats.len() {
            for j in i + 1..mats.len() {
                let c = mean_cos(&mats[i], &mats[j]);
                if s.doc_concepts[i] == s.doc_concepts[j] {
                    same += c;
                    ns += 1;
                } else {
                    diff += c;
                    nd += 1;
                }
            }
        }
        assert!(ns > 0 && nd > 0);
        assert!(same / ns as f64 > diff / nd as f64, "same {} diff {}", same / ns as f64, diff / nd as f64);
    }

    #[test]
    fn hash_embedder_norms_and_fingerprints() {
        let e = HashEmbedder::new(24, 3).unwrap();
        let m = e.embed_tokens(&[1, 2, 3, 1]).unwrap();
        assert!(m.rows_unit_norm(1e-5));
        assert_eq!(m.row(0), m.row(3));
        assert_ne!(e.fingerprint(), HashEmbedder::new(24, 4).unwrap().fingerprint());
    }

    #[test]
    fn dim_mismatch_is_config_error() {
        let e = HashEmbedder::new(8, 0).unwrap();
        assert!(matches!(check_dim(&e, 16), Err(Error::Config(_))));
    }

    #[test]
    fn file_embedder_replays_vectors() {
        let dir = tempfile::tempdir().unwrap();
        let m = TokenMatrix::new(2, 3, vec![3.0, 0.0, 4.0, 0.0, 2.0, 0.0]).unwrap();
        let q = TokenMatrix::new(1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        write_vectors_file(&dir.path().join("p.psev"), 3, [(7u64, &m)]).unwrap();
        write_vectors_file(&dir.path().join("q.psev"), 3, [(FileEmbedder::query_key("q1"), &q)]).unwrap();
        let e = FileEmbedder::open(&dir.path().join("p.psev"), Some(&dir.path().join("q.psev"))).unwrap();
        let p = PassageRecord { passage_id: 7, doc_id: "d".into(), window_index: 0, tokens: vec![1, 2] };
        let got = e.embed_passage(&p).unwrap();
        assert!(got.rows_unit_norm(1e-6));
        assert!((got.row(0)[0] - 0.6).abs() < 1e-6);
        let qe = e.embed_query(&Query { query_id: "q1".into(), text: String::new(), tokens: vec![] }).unwrap();
        assert_eq!(qe.matrix.row(0), &[1.0, 0.0, 0.0]);
        let missing = PassageRecord { passage_id: 8, ..p };
        assert!(e.embed_passage(&missing).is_err());
    }

    #[test]
    fn vector_file_layout() {
        let m = TokenMatrix::new(1, 2, vec![1.0, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_vectors(&mut buf, 2, [(5u64, &m)]).unwrap();
        assert_eq!(&buf[..4], b"PSEV");
        assert_eq!(buf.len(), 4 + 4 + 4 + 8 + 4 + 8);
        assert_eq!(&buf[12..20], &5u64.to_le_bytes());
        assert_eq!(&buf[24..28], &1.0f32.to_le_bytes());
        let (dim, recs) = read_vectors(buf.as_slice()).unwrap();
        assert_eq!(dim, 2);
        assert_eq!(recs, vec![(5, m)]);
    }
}
