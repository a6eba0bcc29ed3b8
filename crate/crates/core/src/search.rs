//! Query execution across every active shard.
//!
//! Scores from different shards come from the same encoder and are merged
//! as-is, without normalization. A document's score is its best passage.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::embed::{fingerprint_hex, Fingerprint, QueryEmbedding};
use crate::error::{Error, Result};
use crate::eval::{write_run_lines, Run};
use crate::shard::{search_shard, ScoredPassage, SearchParams, ShardIndex};

/// The shards searchable at one instant.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub fingerprint: Fingerprint,
    pub shards: Vec<Arc<ShardIndex>>,
}

impl Snapshot {
    pub fn n_docs(&self) -> usize {
        self.shards.iter().map(|s| s.n_docs()).sum()
    }

    /// Shard holding `doc_id`, if any.
    pub fn locate(&self, doc_id: &str) -> Option<&Arc<ShardIndex>> {
        self.shards.iter().find(|s| s.doc_ids.iter().any(|d| d == doc_id))
    }
}

#[derive(Debug, Clone)]
pub struct MergedResult {
    pub query_id: String,
    /// `(doc_id, score)` by score descending, then doc id ascending.
    pub ranking: Vec<(String, f32)>,
    pub per_shard_latencies: Vec<(String, Duration)>,
    pub merge_time: Duration,
}

impl MergedResult {
    /// Slowest shard plus the merge, as if shards ran on separate machines.
    pub fn latency(&self) -> Duration {
        self.per_shard_latencies.iter().map(|(_, d)| *d).max().unwrap_or_default() + self.merge_time
    }
}

fn merge_order(a: &ScoredPassage, b: &ScoredPassage) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id)).then(a.passage_id.cmp(&b.passage_id))
}

struct Head<'a> {
    entry: &'a ScoredPassage,
    list: usize,
    pos: usize,
}

impl PartialEq for Head<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Head<'_> {}
impl PartialOrd for Head<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Head<'_> {
    // BinaryHeap is a max-heap; the best entry must compare greatest.
    fn cmp(&self, other: &Self) -> Ordering {
        merge_order(other.entry, self.entry).then(other.list.cmp(&self.list))
    }
}

/// k-way merge of per-shard passage lists into a document ranking of at
/// most `top_docs` entries. Fails if one document is returned by two shards.
pub fn merge_rankings(per_shard: &[Vec<ScoredPassage>], top_docs: usize) -> Result<Vec<(String, f32)>> {
    let mut owner: HashMap<&str, usize> = HashMap::new();
    for (i, list) in per_shard.iter().enumerate() {
        for p in list {
            if let Some(&j) = owner.get(p.doc_id.as_str()) {
                if j != i {
                    return Err(Error::Invariant(format!("document {} returned by two shards", p.doc_id)));
                }
            }
            owner.insert(&p.doc_id, i);
        }
    }

    let sorted: Vec<Vec<&ScoredPassage>> = per_shard
        .iter()
        .map(|l| {
            let mut v: Vec<&ScoredPassage> = l.iter().collect();
            v.sort_by(|a, b| merge_order(a, b));
            v
        })
        .collect();
    let mut heap: BinaryHeap<Head<'_>> =
        sorted.iter().enumerate().filter(|(_, l)| !l.is_empty()).map(|(i, l)| Head { entry: l[0], list: i, pos: 0 }).collect();

    let mut seen: HashSet<&str> = HashSet::new();
    let mut out = Vec::new();
    while out.len() < top_docs {
        let Some(Head { entry, list, pos }) = heap.pop() else { break };
        if seen.insert(&entry.doc_id) {
            out.push((entry.doc_id.clone(), entry.score));
        }
        if let Some(next) = sorted[list].get(pos + 1) {
            heap.push(Head { entry: next, list, pos: pos + 1 });
        }
    }
    Ok(out)
}

/// Searches every shard of `snapshot` in parallel and merges the results.
pub fn search_all(q: &QueryEmbedding, snapshot: &Snapshot, params: &SearchParams, top_docs: usize) -> Result<MergedResult> {
    if snapshot.shards.is_empty() {
        return Err(Error::State("no shards to search".into()));
    }
    for s in &snapshot.shards {
        if s.fingerprint != snapshot.fingerprint {
            return Err(Error::Incompatible(format!(
                "shard {} was built with embedder {}, engine uses {}",
                s.shard_id,
                fingerprint_hex(&s.fingerprint),
                fingerprint_hex(&snapshot.fingerprint)
            )));
        }
    }
    let results: Vec<(String, Duration, Vec<ScoredPassage>)> = snapshot
        .shards
        .par_iter()
        .map(|s| {
            let t = Instant::now();
            let r = search_shard(q, s, params)?;
            Ok((s.shard_id.clone(), t.elapsed(), r))
        })
        .collect::<Result<_>>()?;
    let t = Instant::now();
    let lists: Vec<Vec<ScoredPassage>> = results.iter().map(|r| r.2.clone()).collect();
    let ranking = merge_rankings(&lists, top_docs)?;
    let merge_time = t.elapsed();
    Ok(MergedResult {
        query_id: q.query_id.clone(),
        ranking,
        per_shard_latencies: results.into_iter().map(|(id, d, _)| (id, d)).collect(),
        merge_time,
    })
}

pub fn search_queries(queries: &[QueryEmbedding], snapshot: &Snapshot, params: &SearchParams, top_docs: usize) -> Result<Vec<MergedResult>> {
    queries.iter().map(|q| search_all(q, snapshot, params, top_docs)).collect()
}

pub fn to_run(results: &[MergedResult]) -> Run {
    let rankings = results
        .iter()
        .map(|r| (r.query_id.clone(), r.ranking.iter().map(|(d, s)| (d.clone(), f64::from(*s))).collect()))
        .collect();
    Run { rankings }
}

pub fn write_run<W: Write>(mut w: W, results: &[MergedResult], tag: &str) -> Result<()> {
    for r in results {
        write_run_lines(&mut w, &r.query_id, &r.ranking, tag)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{Embedder, EmbeddedPassage, SyntheticEmbedder};
    use crate::shard::{build_exact_shard, DocSlice, Phase};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sp(pid: u64, doc: &str, score: f32) -> ScoredPassage {
        ScoredPassage { passage_id: pid, doc_id: doc.into(), score }
    }

    fn naive(per_shard: &[Vec<ScoredPassage>], top: usize) -> Vec<(String, f32)> {
        let mut best: HashMap<String, f32> = HashMap::new();
        for p in per_shard.iter().flatten() {
            let e = best.entry(p.doc_id.clone()).or_insert(f32::NEG_INFINITY);
            *e = e.max(p.score);
        }
        let mut v: Vec<(String, f32)> = best.into_iter().collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        v.truncate(top);
        v
    }

    #[test]
    fn merge_hand_cases() {
        let r = merge_rankings(&[vec![sp(1, "dA", 2.0)], vec![sp(2, "dB", 3.0)]], 10).unwrap();
        assert_eq!(r, vec![("dB".to_string(), 3.0), ("dA".to_string(), 2.0)]);
        let r = merge_rankings(&[vec![sp(1, "d", 2.0), sp(2, "d", 3.1)]], 10).unwrap();
        assert_eq!(r, vec![("d".to_string(), 3.1)]);
        let r = merge_rankings(&[vec![sp(1, "b", 1.0)], vec![sp(2, "a", 1.0)]], 10).unwrap();
        assert_eq!(r[0].0, "a");
        let err = merge_rankings(&[vec![sp(1, "d", 1.0)], vec![sp(2, "d", 0.5)]], 10).unwrap_err();
        assert!(matches!(err, Error::Invariant(_)));
    }

    #[test]
    fn many_shards_match_global_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let lists: Vec<Vec<ScoredPassage>> = (0..108)
            .map(|s| (0..50).map(|i| sp((s * 50 + i) as u64, &format!("s{s}d{}", i / 2), (rng.random_range(0..400) as f32) / 8.0)).collect())
            .collect();
        assert_eq!(merge_rankings(&lists, 1000).unwrap(), naive(&lists, 1000));
        assert_eq!(merge_rankings(&lists, 10_000).unwrap(), naive(&lists, 10_000));
    }

    proptest! {
        #[test]
        fn merge_equals_global_sort(
            shards in proptest::collection::vec(proptest::collection::vec((0u32..6, 0u8..20), 0..15), 1..6),
            top in 1usize..30,
        ) {
            let mut pid = 0;
            let lists: Vec<Vec<ScoredPassage>> = shards.iter().enumerate().map(|(s, l)| {
                l.iter().map(|&(d, score)| { pid += 1; sp(pid, &format!("{s}-{d}"), score as f32 / 4.0) }).collect()
            }).collect();
            prop_assert_eq!(merge_rankings(&lists, top).unwrap(), naive(&lists, top));
        }
    }

    struct Corpus {
        embedder: SyntheticEmbedder,
        docs: Vec<(String, Vec<EmbeddedPassage>)>,
    }

    fn corpus(n: usize, seed: u64) -> Corpus {
        let embedder = SyntheticEmbedder::new(16, 6, 32, 0.5, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pid = 0;
        let docs = (0..n)
            .map(|i| {
                let doc = format!("doc{i:04}");
                let ps = (0..rng.random_range(1..4))
                    .map(|w| {
                        let c = rng.random_range(0..6u32);
                        let toks: Vec<u32> = (0..rng.random_range(1..10)).map(|_| c * 32 + rng.random_range(0..32)).collect();
                        pid += 1;
                        EmbeddedPassage { passage_id: pid, doc_id: doc.clone(), window_index: w, matrix: embedder.embed_tokens(&toks).unwrap() }
                    })
                    .collect();
                (doc, ps)
            })
            .collect();
        Corpus { embedder, docs }
    }

    impl Corpus {
        fn exact_snapshot(&self, cuts: &[usize]) -> Snapshot {
            let slices: Vec<DocSlice<'_>> = self.docs.iter().enumerate().map(|(i, (d, p))| (i as u64, d.as_str(), p.as_slice())).collect();
            let mut bounds = vec![0];
            bounds.extend_from_slice(cuts);
            bounds.push(slices.len());
            let shards = bounds
                .windows(2)
                .map(|w| Arc::new(build_exact_shard(&format!("s{}", w[0]), Phase::Bootstrap, &slices[w[0]..w[1]], self.embedder.fingerprint()).unwrap()))
                .collect();
            Snapshot { fingerprint: self.embedder.fingerprint(), shards }
        }

        fn query(&self, rng: &mut ChaCha8Rng) -> QueryEmbedding {
            let c = rng.random_range(0..6u32);
            let toks: Vec<u32> = (0..4).map(|_| c * 32 + rng.random_range(0..32)).collect();
            QueryEmbedding { query_id: "q".into(), matrix: self.embedder.embed_tokens(&toks).unwrap() }
        }
    }

    #[test]
    fn exact_partition_invariance() {
        let c = corpus(200, 1);
        // Documents have up to 3 passages, so 90 passages per shard always
        // reach 30 distinct documents.
        let params = SearchParams { n_per_shard: 90, ..Default::default() };
        let mono = c.exact_snapshot(&[]);
        let four = c.exact_snapshot(&[37, 90, 150]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let q = c.query(&mut rng);
            let a = search_all(&q, &mono, &params, 30).unwrap();
            let b = search_all(&q, &four, &params, 30).unwrap();
            assert_eq!(a.ranking.len(), 30);
            assert_eq!(a.ranking, b.ranking);
            assert_eq!(b.per_shard_latencies.len(), 4);
        }
    }

    #[test]
    fn single_shard_is_maxp_of_shard_search() {
        let c = corpus(50, 3);
        let snap = c.exact_snapshot(&[]);
        let params = SearchParams { n_per_shard: 30, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = c.query(&mut rng);
        let direct = search_shard(&q, &snap.shards[0], &params).unwrap();
        assert_eq!(search_all(&q, &snap, &params, 1000).unwrap().ranking, naive(&[direct], 1000));
    }

    #[test]
    fn deeper_shard_lists_do_not_change_top_docs() {
        let c = corpus(120, 4);
        let snap = c.exact_snapshot(&[30, 60, 90]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = c.query(&mut rng);
        let top = 20;
        let a = search_all(&q, &snap, &SearchParams { n_per_shard: top, ..Default::default() }, top).unwrap();
        let b = search_all(&q, &snap, &SearchParams { n_per_shard: 500, ..Default::default() }, top).unwrap();
        assert_eq!(a.ranking, b.ranking);
    }

    #[test]
    fn refuses_foreign_shards() {
        let c = corpus(20, 5);
        let mut snap = c.exact_snapshot(&[10]);
        snap.fingerprint = [1; 32];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = c.query(&mut rng);
        assert!(matches!(search_all(&q, &snap, &SearchParams::default(), 10), Err(Error::Incompatible(_))));
        snap.shards.clear();
        assert!(search_all(&q, &snap, &SearchParams::default(), 10).is_err());
    }

    #[test]
    fn run_file_format() {
        let r = MergedResult {
            query_id: "q1".into(),
            ranking: vec![("a".into(), 2.5), ("b".into(), 1.0)],
            per_shard_latencies: vec![("s".into(), Duration::from_millis(3))],
            merge_time: Duration::from_millis(1),
        };
        assert_eq!(r.latency(), Duration::from_millis(4));
        let mut buf = Vec::new();
        write_run(&mut buf, &[r], "plaid").unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "q1 Q0 a 1 2.5 plaid\nq1 Q0 b 2 1 plaid\n");
    }
}
