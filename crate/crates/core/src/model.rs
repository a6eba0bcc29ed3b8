//! Shard models: a k-means centroid codebook plus residual bucket
//! quantization parameters, trained from a shard's own token vectors.

use std::io::{BufReader, BufWriter, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dot;
use crate::embed::{EmbeddedPassage, Fingerprint};
use crate::error::{Error, Result};

/// Token vectors sampled from a shard for codebook training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub dim: usize,
    /// Row-major `n x dim`.
    pub vectors: Vec<f32>,
    /// `(passage_id, row)` of every sampled vector.
    pub sources: Vec<(u64, u32)>,
}

impl TrainingSample {
    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }
}

/// Uniform sample without replacement of `min(total, max_tokens)` token rows.
/// Sampled rows keep their stream order.
pub fn sample_training_tokens(passages: &[EmbeddedPassage], max_tokens: usize, seed: u64) -> Result<TrainingSample> {
    let total: usize = passages.iter().map(|p| p.matrix.rows()).sum();
    if total == 0 {
        return Err(Error::EmptyShard);
    }
    let dim = passages[0].matrix.dim();
    let amount = total.min(max_tokens.max(1));
    let mut picks: Vec<usize> = if amount == total {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::index::sample(&mut rng, total, amount).into_vec()
    };
    picks.sort_unstable();

    let mut vectors = Vec::with_capacity(amount * dim);
    let mut sources = Vec::with_capacity(amount);
    let mut picks = picks.into_iter().peekable();
    let mut offset = 0usize;
    for p in passages {
        if p.matrix.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, actual: p.matrix.dim() });
        }
        let end = offset + p.matrix.rows();
        while let Some(&g) = picks.peek() {
            if g >= end {
                break;
            }
            let row = g - offset;
            vectors.extend_from_slice(p.matrix.row(row));
            sources.push((p.passage_id, row as u32));
            picks.next();
        }
        offset = end;
    }
    Ok(TrainingSample { dim, vectors, sources })
}

/// Result of Lloyd's algorithm.
#[derive(Debug, Clone)]
pub struct KMeans {
    pub k: usize,
    pub dim: usize,
    /// Row-major `k x dim`.
    pub centroids: Vec<f32>,
    /// Cluster of every sample row after the final iteration.
    pub assignments: Vec<u32>,
    /// Sum of squared distances after initialization and after every
    /// iteration.
    pub distortion: Vec<f64>,
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc as f64
}

fn nearest_l2(x: &[f32], centroids: &[f32], dim: usize) -> (u32, f64) {
    let mut best = (0u32, f64::INFINITY);
    for (c, cv) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(x, cv);
        if d < best.1 {
            best = (c as u32, d);
        }
    }
    best
}

/// Greedy k-means++ seeding followed by up to `iters` Lloyd iterations.
///
/// Centroids are plain means of their members (never re-normalized). A
/// cluster that loses all members is re-seeded with the point farthest from
/// its current centroid.
pub fn train_kmeans(sample: &TrainingSample, k: usize, iters: usize, seed: u64) -> Result<KMeans> {
    let n = sample.len();
    let dim = sample.dim;
    if k == 0 || k > n {
        return Err(Error::InvalidK { k, n });
    }
    let iters = iters.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Greedy k-means++ seeding: each step draws a few D^2-weighted
    // candidates and keeps the one that lowers the potential most.
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(sample.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(sample.row(i), sample.row(first))).collect();
    let mut chosen = vec![false; n];
    chosen[first] = true;
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let (pick, next_d2) = if total > 0.0 {
            let dist = WeightedIndex::new(&d2).map_err(|e| Error::State(e.to_string()))?;
            let candidates: Vec<usize> = (0..trials).map(|_| dist.sample(&mut rng)).collect();
            candidates
                .into_iter()
                .map(|cand| {
                    let c = sample.row(cand);
                    let nd: Vec<f64> = d2.par_iter().enumerate().map(|(i, &d)| d.min(sq_dist(sample.row(i), c))).collect();
                    let pot: f64 = nd.iter().sum();
                    (cand, nd, pot)
                })
                .min_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)))
                .map(|(cand, nd, _)| (cand, nd))
                .expect("at least two trials")
        } else {
            // Every point coincides with a centroid; fall back to an unused index.
            let unused: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            let pick = unused[rng.random_range(0..unused.len())];
            (pick, d2.clone())
        };
        chosen[pick] = true;
        d2 = next_d2;
        centroids.extend_from_slice(sample.row(pick));
    }

    let assign = |centroids: &[f32]| -> Vec<(u32, f64)> {
        (0..n).into_par_iter().map(|i| nearest_l2(sample.row(i), centroids, dim)).collect()
    };

    let mut current = assign(&centroids);
    let mut distortion = vec![current.iter().map(|a| a.1).sum::<f64>()];
    for _ in 0..iters {
        // Update step.
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, (c, _)) in current.iter().enumerate() {
            let c = *c as usize;
            counts[c] += 1;
            for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(sample.row(i)) {
                *s += *x as f64;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dim {
                    centroids[c * dim + j] = (sums[c * dim + j] / counts[c] as f64) as f32;
                }
            }
        }
        // Re-seed empty clusters from the farthest points.
        if counts.contains(&0) {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| current[b].1.total_cmp(&current[a].1).then(a.cmp(&b)));
            let mut donors = order.into_iter();
            for c in 0..k {
                if counts[c] == 0 {
                    let Some(p) = donors.next() else { break };
                    centroids[c * dim..(c + 1) * dim].copy_from_slice(sample.row(p));
                }
            }
        }

        let next = assign(&centroids);
        distortion.push(next.iter().map(|a| a.1).sum());
        let converged = next.iter().zip(&current).all(|(a, b)| a.0 == b.0);
        current = next;
        if converged {
            break;
        }
    }

    Ok(KMeans { k, dim, centroids, assignments: current.into_iter().map(|a| a.0).collect(), distortion })
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f32], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] as f64 + (sorted[hi] as f64 - sorted[lo] as f64) * frac
}

/// Bucket index of `x`: the number of cutoffs strictly below it. Values equal
/// to a cutoff fall into the lower bucket.
pub fn bucket_of(x: f32, cutoffs: &[f32]) -> usize {
    cutoffs.partition_point(|&c| c < x)
}

/// Quantile bucketization of residual components into `2^bits` buckets.
///
/// Cutoffs are the `i / 2^bits` quantiles; the decode value of each bucket is
/// the mean of the components that fall in it. Ties that would produce
/// repeated cutoffs are nudged up to the next representable float, and an
/// empty bucket decodes to a value inside its own range.
pub fn compute_bucket_quantization(components: &[f32], bits: u8) -> Result<(Vec<f32>, Vec<f32>)> {
    if !(1..=8).contains(&bits) {
        return Err(Error::Quantization(format!("unsupported bit width {bits}")));
    }
    let n_buckets = 1usize << bits;
    if components.len() < n_buckets {
        return Err(Error::Quantization(format!("{} residual components for {n_buckets} buckets", components.len())));
    }
    if components.iter().any(|x| !x.is_finite()) {
        return Err(Error::Quantization("non-finite residual component".into()));
    }
    let mut sorted = components.to_vec();
    sorted.sort_by(f32::total_cmp);

    let mut cutoffs: Vec<f32> = Vec::with_capacity(n_buckets - 1);
    for i in 1..n_buckets {
        let mut c = quantile(&sorted, i as f64 / n_buckets as f64) as f32;
        if let Some(&prev) = cutoffs.last() {
            if c <= prev {
                c = prev.next_up();
            }
        }
        cutoffs.push(c);
    }

    let mut sums = vec![0.0f64; n_buckets];
    let mut counts = vec![0usize; n_buckets];
    for &x in &sorted {
        let b = bucket_of(x, &cutoffs);
        sums[b] += x as f64;
        counts[b] += 1;
    }
    let values = (0..n_buckets)
        .map(|b| {
            if counts[b] > 0 {
                let v = (sums[b] / counts[b] as f64) as f32;
                // Rounding of the mean must not leave the bucket.
                let lo = if b == 0 { f32::NEG_INFINITY } else { cutoffs[b - 1] };
                let hi = if b == n_buckets - 1 { f32::INFINITY } else { cutoffs[b] };
                if v <= lo {
                    lo.next_up()
                } else if v > hi {
                    hi
                } else {
                    v
                }
            } else if b < n_buckets - 1 {
                cutoffs[b]
            } else {
                cutoffs[b - 1].next_up()
            }
        })
        .collect();
    Ok((cutoffs, values))
}

/// Codebook-size and training knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// `K = clamp(round(c_mult * sqrt(n_sampled)), k_min, k_max)`.
    pub c_mult: f64,
    pub k_min: usize,
    pub k_max: usize,
    pub max_training_tokens: usize,
    pub residual_bits: u8,
    pub iters: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { c_mult: 16.0, k_min: 16, k_max: 65536, max_training_tokens: 4096, residual_bits: 1, iters: 10, seed: 0 }
    }
}

impl ModelConfig {
    /// Number of centroids for `n_sampled` training tokens, never above the
    /// sample size.
    pub fn n_centroids(&self, n_sampled: usize) -> usize {
        let k = (self.c_mult * (n_sampled as f64).sqrt()).round() as usize;
        k.clamp(self.k_min, self.k_max).min(n_sampled).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.residual_bits, 1 | 2 | 4 | 8) {
            return Err(Error::Config(format!("residual_bits must be 1, 2, 4 or 8, got {}", self.residual_bits)));
        }
        if self.k_min == 0 || self.k_min > self.k_max {
            return Err(Error::Config("need 1 <= k_min <= k_max".into()));
        }
        if !(self.c_mult > 0.0) || self.iters == 0 || self.max_training_tokens == 0 {
            return Err(Error::Config("c_mult, iters and max_training_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// A trained codebook for one shard.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardModel {
    pub dim: usize,
    /// Row-major `n_centroids x dim`.
    pub centroids: Vec<f32>,
    pub n_centroids: usize,
    pub residual_bits: u8,
    /// `2^bits - 1` strictly ascending cutoffs.
    pub bucket_cutoffs: Vec<f32>,
    /// `2^bits` decode values, one per bucket.
    pub bucket_values: Vec<f32>,
    pub embedder_fingerprint: Fingerprint,
    /// Identifier of the shard (or document prefix) the model was trained on.
    pub trained_on: String,
}

impl ShardModel {
    /// Models are identified by what they were trained on.
    pub fn model_id(&self) -> &str {
        &self.trained_on
    }

    pub fn centroid(&self, c: usize) -> &[f32] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    /// Index of the centroid with the largest dot product; ties go to the
    /// lowest index.
    pub fn nearest_centroid(&self, t: &[f32]) -> u32 {
        let mut best = 0u32;
        let mut best_score = f32::NEG_INFINITY;
        for (c, cv) in self.centroids.chunks_exact(self.dim).enumerate() {
            let s = dot(t, cv);
            if s > best_score {
                best_score = s;
                best = c as u32;
            }
        }
        best
    }

    /// Bytes of packed residual per token.
    pub fn packed_len(&self) -> usize {
        (self.dim * self.residual_bits as usize).div_ceil(8)
    }

    pub fn validate(&self) -> Result<()> {
        let nb = 1usize << self.residual_bits;
        if self.n_centroids == 0 || self.centroids.len() != self.n_centroids * self.dim {
            return Err(Error::Corruption("centroid matrix shape".into()));
        }
        if self.bucket_cutoffs.len() != nb - 1 || self.bucket_values.len() != nb {
            return Err(Error::Corruption("bucket table sizes".into()));
        }
        if self.bucket_cutoffs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Corruption("bucket cutoffs not strictly ascending".into()));
        }
        if self.centroids.iter().any(|x| !x.is_finite()) {
            return Err(Error::Corruption("non-finite centroid".into()));
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        w.write_all(MODEL_MAGIC)?;
        w.write_u32::<LittleEndian>(MODEL_VERSION)?;
        w.write_u32::<LittleEndian>(self.dim as u32)?;
        w.write_u32::<LittleEndian>(self.n_centroids as u32)?;
        w.write_u8(self.residual_bits)?;
        for x in self.centroids.iter().chain(&self.bucket_cutoffs).chain(&self.bucket_values) {
            w.write_f32::<LittleEndian>(*x)?;
        }
        w.write_all(&self.embedder_fingerprint)?;
        w.write_u32::<LittleEndian>(self.trained_on.len() as u32)?;
        w.write_all(self.trained_on.as_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::Corruption("bad model file magic".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != MODEL_VERSION {
            return Err(Error::Corruption(format!("unsupported model version {version}")));
        }
        let dim = r.read_u32::<LittleEndian>()? as usize;
        let k = r.read_u32::<LittleEndian>()? as usize;
        let bits = r.read_u8()?;
        if !(1..=8).contains(&bits) {
            return Err(Error::Corruption(format!("residual bit width {bits}")));
        }
        let nb = 1usize << bits;
        let mut centroids = vec![0f32; k * dim];
        r.read_f32_into::<LittleEndian>(&mut centroids)?;
        let mut cutoffs = vec![0f32; nb - 1];
        r.read_f32_into::<LittleEndian>(&mut cutoffs)?;
        let mut values = vec![0f32; nb];
        r.read_f32_into::<LittleEndian>(&mut values)?;
        let mut fp = [0u8; 32];
        r.read_exact(&mut fp)?;
        let len = r.read_u32::<LittleEndian>()? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let trained_on = String::from_utf8(name).map_err(|_| Error::Corruption("model name is not UTF-8".into()))?;
        let m = ShardModel {
            dim,
            centroids,
            n_centroids: k,
            residual_bits: bits,
            bucket_cutoffs: cutoffs,
            bucket_values: values,
            embedder_fingerprint: fp,
            trained_on,
        };
        m.validate()?;
        Ok(m)
    }
}

pub const MODEL_MAGIC: &[u8; 4] = b"PSMD";
pub const MODEL_VERSION: u32 = 1;

/// Sample -> k-means -> residuals of the sample against their nearest
/// centroid -> bucket quantization.
pub fn build_shard_model(
    passages: &[EmbeddedPassage],
    config: &ModelConfig,
    fingerprint: Fingerprint,
    trained_on: &str,
) -> Result<ShardModel> {
    config.validate()?;
    let sample = sample_training_tokens(passages, config.max_training_tokens, config.seed)?;
    let k = config.n_centroids(sample.len());
    let km = train_kmeans(&sample, k, config.iters, crate::mix_seed(config.seed, 0x4b4d))?;
    let dim = sample.dim;
    let mut model = ShardModel {
        dim,
        centroids: km.centroids,
        n_centroids: k,
        residual_bits: config.residual_bits,
        bucket_cutoffs: Vec::new(),
        bucket_values: Vec::new(),
        embedder_fingerprint: fingerprint,
        trained_on: trained_on.to_string(),
    };
    let mut components = Vec::with_capacity(sample.vectors.len());
    for i in 0..sample.len() {
        let t = sample.row(i);
        let c = model.nearest_centroid(t) as usize;
        components.extend(t.iter().zip(model.centroid(c)).map(|(x, y)| x - y));
    }
    let (cutoffs, values) = compute_bucket_quantization(&components, config.residual_bits)?;
    model.bucket_cutoffs = cutoffs;
    model.bucket_values = values;
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{Embedder, SyntheticEmbedder, TokenMatrix};
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn passages_from(rows_per_passage: &[usize], dim: usize, seed: u64) -> Vec<EmbeddedPassage> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rows_per_passage
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let data: Vec<f32> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                EmbeddedPassage {
                    passage_id: i as u64,
                    doc_id: format!("d{i}"),
                    window_index: 0,
                    matrix: TokenMatrix::new(n, dim, data).unwrap(),
                }
            })
            .collect()
    }

    fn sample_of(points: &[Vec<f32>]) -> TrainingSample {
        TrainingSample {
            dim: points[0].len(),
            vectors: points.concat(),
            sources: (0..points.len()).map(|i| (i as u64, 0)).collect(),
        }
    }

    #[test]
    fn sample_takes_everything_when_small() {
        let ps = passages_from(&[200, 300], 4, 1);
        let s = sample_training_tokens(&ps, 1000, 3).unwrap();
        assert_eq!(s.len(), 500);
        assert_eq!(s.row(0), ps[0].matrix.row(0));
        assert_eq!(s.sources[499], (1, 299));
    }

    #[test]
    fn sample_is_deterministic() {
        let ps = passages_from(&[5000, 5000], 4, 1);
        let a = sample_training_tokens(&ps, 1000, 3).unwrap();
        let b = sample_training_tokens(&ps, 1000, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 1000);
        let mut src = a.sources.clone();
        src.dedup();
        assert_eq!(src.len(), 1000, "sampling is without replacement");
    }

    #[test]
    fn sample_rejects_empty_shard() {
        assert!(matches!(sample_training_tokens(&[], 10, 0), Err(Error::EmptyShard)));
    }

    #[test]
    fn sample_is_proportional_to_passage_length() {
        // 10 passages, 10_000 tokens total, lengths 100..1900.
        let lens: Vec<usize> = (0..10).map(|i| 100 + 200 * i).collect();
        let total: usize = lens.iter().sum();
        assert_eq!(total, 10_000);
        let ps = passages_from(&lens, 2, 9);
        let mut counts = vec![0f64; lens.len()];
        for seed in 0..100 {
            let s = sample_training_tokens(&ps, 1000, seed).unwrap();
            for (pid, _) in s.sources {
                counts[pid as usize] += 1.0;
            }
        }
        let draws = 100.0 * 1000.0;
        let chi2: f64 = lens
            .iter()
            .zip(&counts)
            .map(|(&l, &o)| {
                let e = draws * l as f64 / total as f64;
                (o - e).powi(2) / e
            })
            .sum();
        // Sampling without replacement is less variable than multinomial, so
        // the multinomial critical value is conservative.
        let critical = ChiSquared::new((lens.len() - 1) as f64).unwrap().inverse_cdf(0.999);
        assert!(chi2 < critical, "chi2 {chi2} >= {critical}");
    }

    #[test]
    fn kmeans_with_k_equal_n_recovers_points() {
        let pts: Vec<Vec<f32>> = (0..12).map(|i| vec![i as f32, (i * i) as f32 % 7.0, 1.0]).collect();
        let km = train_kmeans(&sample_of(&pts), 12, 5, 1).unwrap();
        let mut got: Vec<Vec<f32>> = km.centroids.chunks(3).map(|c| c.to_vec()).collect();
        let mut want = pts.clone();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, want);
        assert_eq!(*km.distortion.last().unwrap(), 0.0);
    }

    #[test]
    fn kmeans_single_cluster_is_mean() {
        let pts: Vec<Vec<f32>> = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 0.0], vec![-1.0, 2.0]];
        let km = train_kmeans(&sample_of(&pts), 1, 3, 0).unwrap();
        assert_eq!(km.centroids, vec![2.0, 2.0]);
    }

    #[test]
    fn kmeans_rejects_k_above_n() {
        let pts = vec![vec![0.0f32, 1.0]; 3];
        assert!(matches!(train_kmeans(&sample_of(&pts), 4, 1, 0), Err(Error::InvalidK { k: 4, n: 3 })));
    }

    #[test]
    fn kmeans_separates_concepts() {
        let e = SyntheticEmbedder::new(32, 4, 1000, 0.3, 5).unwrap();
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for c in 0..4u32 {
            for j in 0..200u32 {
                pts.push(e.token_vector(c * 1000 + j).unwrap().to_vec());
                labels.push(c as usize);
            }
        }
        let km = train_kmeans(&sample_of(&pts), 4, 20, 11).unwrap();
        let mut table = [[0usize; 4]; 4];
        for (a, l) in km.assignments.iter().zip(&labels) {
            table[*a as usize][*l] += 1;
        }
        let majority: usize = table.iter().map(|row| *row.iter().max().unwrap()).sum();
        let purity = majority as f64 / pts.len() as f64;
        assert!(purity > 0.95, "purity {purity}");
    }

    #[test]
    fn kmeans_distortion_never_increases() {
        for seed in 0..3 {
            let ps = passages_from(&[400], 8, seed);
            let s = sample_training_tokens(&ps, 400, 0).unwrap();
            let km = train_kmeans(&s, 20, 25, seed).unwrap();
            for w in km.distortion.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-9), "{:?}", km.distortion);
            }
        }
    }

    #[test]
    fn kmeans_reseeds_empty_clusters() {
        // Three duplicates plus one outlier, k = 3: seeding must reuse a
        // duplicate, producing an empty cluster that gets re-seeded.
        let pts = vec![vec![0.0f32], vec![0.0], vec![0.0], vec![10.0]];
        let km = train_kmeans(&sample_of(&pts), 3, 5, 2).unwrap();
        assert!(km.centroids.iter().all(|x| x.is_finite()));
        assert_eq!(*km.distortion.last().unwrap(), 0.0);
    }

    #[test]
    fn quantization_two_buckets_hand_case() {
        let (cut, val) = compute_bucket_quantization(&[-2.0, -1.0, 1.0, 2.0], 1).unwrap();
        assert_eq!(cut, vec![0.0]);
        assert_eq!(val, vec![-1.5, 1.5]);
    }

    #[test]
    fn quantization_symmetric() {
        let xs: Vec<f32> = (1..=1000).flat_map(|i| [i as f32 / 1000.0, -(i as f32) / 1000.0]).collect();
        let (cut, val) = compute_bucket_quantization(&xs, 1).unwrap();
        let m = xs.iter().map(|x| x.abs() as f64).sum::<f64>() / xs.len() as f64;
        assert!(cut[0].abs() < 1e-6);
        assert!((val[0] as f64 + m).abs() < 1e-5 && (val[1] as f64 - m).abs() < 1e-5);
    }

    #[test]
    fn quantization_uniform_four_buckets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<f32> = (0..100_000).map(|_| rng.random::<f32>()).collect();
        let (cut, val) = compute_bucket_quantization(&xs, 2).unwrap();
        for (c, e) in cut.iter().zip([0.25, 0.5, 0.75]) {
            assert!((c - e).abs() < 0.02, "{cut:?}");
        }
        for (v, e) in val.iter().zip([0.125, 0.375, 0.625, 0.875]) {
            assert!((v - e).abs() < 0.02, "{val:?}");
        }
    }

    #[test]
    fn quantization_needs_enough_samples() {
        assert!(matches!(compute_bucket_quantization(&[1.0, 2.0, 3.0], 2), Err(Error::Quantization(_))));
    }

    #[test]
    fn quantization_handles_heavy_ties() {
        let mut xs = vec![0.0f32; 90];
        xs.extend((1..=10).map(|i| i as f32));
        let (cut, val) = compute_bucket_quantization(&xs, 2).unwrap();
        assert!(cut.windows(2).all(|w| w[0] < w[1]));
        for (b, v) in val.iter().enumerate() {
            assert_eq!(bucket_of(*v, &cut), b, "value {v} escapes bucket {b}: {cut:?}");
        }
    }

    #[test]
    fn bucket_boundaries_go_low() {
        let cut = [-1.0f32, 0.0, 1.0];
        assert_eq!(bucket_of(-1.0, &cut), 0);
        assert_eq!(bucket_of(-0.5, &cut), 1);
        assert_eq!(bucket_of(0.0, &cut), 1);
        assert_eq!(bucket_of(1.0, &cut), 2);
        assert_eq!(bucket_of(1.5, &cut), 3);
    }

    #[test]
    fn k_policy_arithmetic() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.n_centroids(2000), 716);
        assert_eq!(cfg.n_centroids(0), 1);
        assert_eq!(cfg.n_centroids(10), 10);
        assert_eq!(cfg.n_centroids(1), 1);
    }

    #[test]
    fn model_from_single_token_passages_has_policy_k() {
        let e = SyntheticEmbedder::new(16, 4, 1000, 0.3, 2).unwrap();
        let ps: Vec<EmbeddedPassage> = (0..2000u32)
            .map(|i| EmbeddedPassage {
                passage_id: i as u64,
                doc_id: format!("d{i}"),
                window_index: 0,
                matrix: e.embed_tokens(&[i * 2]).unwrap(),
            })
            .collect();
        let cfg = ModelConfig { max_training_tokens: 2000, iters: 2, ..Default::default() };
        let m = build_shard_model(&ps, &cfg, e.fingerprint(), "s0").unwrap();
        assert_eq!(m.n_centroids, 716);
        let again = build_shard_model(&ps, &cfg, e.fingerprint(), "s0").unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        m.write(&mut a).unwrap();
        again.write(&mut b).unwrap();
        assert_eq!(a, b);
        assert_eq!(ShardModel::read(a.as_slice()).unwrap(), m);
    }
}
