//! Token compression: nearest-centroid id plus bit-packed residual buckets.
//!
//! Residual bucket indices are packed component-major with little-endian bit
//! order: component `j` occupies bits `j*b .. (j+1)*b` of the packed stream,
//! stream bit `p` is bit `p % 8` (LSB first) of byte `p / 8`, and each index
//! is written least-significant bit first.

use std::io::{BufReader, BufWriter, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::embed::TokenMatrix;
use crate::error::{Error, Result};
use crate::model::{bucket_of, ShardModel};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompressedToken {
    pub centroid_id: u32,
    pub residual_code: Vec<u8>,
}

/// Packs bucket indices of `bits` bits each.
pub fn pack_bits(indices: &[u8], bits: u8) -> Result<Vec<u8>> {
    if !(1..=8).contains(&bits) {
        return Err(Error::Format(format!("unsupported bit width {bits}")));
    }
    let mut out = vec![0u8; (indices.len() * bits as usize).div_ceil(8)];
    for (j, &idx) in indices.iter().enumerate() {
        if bits < 8 && idx >> bits != 0 {
            return Err(Error::IndexOverflow { index: idx as u32, bits });
        }
        let base = j * bits as usize;
        for k in 0..bits as usize {
            if idx >> k & 1 == 1 {
                let p = base + k;
                out[p / 8] |= 1 << (p % 8);
            }
        }
    }
    Ok(out)
}

/// Inverse of [`pack_bits`] for `count` indices.
pub fn unpack_bits(bytes: &[u8], count: usize, bits: u8) -> Result<Vec<u8>> {
    if !(1..=8).contains(&bits) {
        return Err(Error::Format(format!("unsupported bit width {bits}")));
    }
    if bytes.len() != (count * bits as usize).div_ceil(8) {
        return Err(Error::Corruption(format!("{} packed bytes for {count} x {bits}-bit codes", bytes.len())));
    }
    let mut out = Vec::with_capacity(count);
    for j in 0..count {
        let base = j * bits as usize;
        let mut v = 0u8;
        for k in 0..bits as usize {
            let p = base + k;
            v |= (bytes[p / 8] >> (p % 8) & 1) << k;
        }
        out.push(v);
    }
    Ok(out)
}

pub fn encode_token(t: &[f32], model: &ShardModel) -> Result<CompressedToken> {
    if t.len() != model.dim {
        return Err(Error::DimensionMismatch { expected: model.dim, actual: t.len() });
    }
    let c = model.nearest_centroid(t);
    let centroid = model.centroid(c as usize);
    let buckets: Vec<u8> = t.iter().zip(centroid).map(|(x, y)| bucket_of(x - y, &model.bucket_cutoffs) as u8).collect();
    Ok(CompressedToken { centroid_id: c, residual_code: pack_bits(&buckets, model.residual_bits)? })
}

/// `centroid + bucket_value` per component. Not re-normalized.
pub fn decode_token(ct: &CompressedToken, model: &ShardModel) -> Result<Vec<f32>> {
    let mut out = vec![0f32; model.dim];
    decode_into(ct.centroid_id, &ct.residual_code, model, &mut out)?;
    Ok(out)
}

fn decode_into(centroid_id: u32, code: &[u8], model: &ShardModel, out: &mut [f32]) -> Result<()> {
    if centroid_id as usize >= model.n_centroids {
        return Err(Error::Corruption(format!("centroid id {centroid_id} out of range (K={})", model.n_centroids)));
    }
    let buckets = unpack_bits(code, model.dim, model.residual_bits)?;
    let centroid = model.centroid(centroid_id as usize);
    for ((o, c), b) in out.iter_mut().zip(centroid).zip(buckets) {
        *o = c + model.bucket_values[b as usize];
    }
    Ok(())
}

/// All compressed tokens of one passage, stored flat.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompressedPassage {
    pub passage_id: u64,
    pub centroid_ids: Vec<u32>,
    /// `n_tokens * packed_len` bytes.
    pub residuals: Vec<u8>,
}

impl CompressedPassage {
    pub fn n_tokens(&self) -> usize {
        self.centroid_ids.len()
    }

    pub fn token(&self, i: usize, packed_len: usize) -> CompressedToken {
        CompressedToken {
            centroid_id: self.centroid_ids[i],
            residual_code: self.residuals[i * packed_len..(i + 1) * packed_len].to_vec(),
        }
    }
}

pub fn encode_passage(passage_id: u64, m: &TokenMatrix, model: &ShardModel) -> Result<CompressedPassage> {
    let mut centroid_ids = Vec::with_capacity(m.rows());
    let mut residuals = Vec::with_capacity(m.rows() * model.packed_len());
    for row in m.iter_rows() {
        let ct = encode_token(row, model)?;
        centroid_ids.push(ct.centroid_id);
        residuals.extend_from_slice(&ct.residual_code);
    }
    Ok(CompressedPassage { passage_id, centroid_ids, residuals })
}

pub fn decode_passage(p: &CompressedPassage, model: &ShardModel) -> Result<TokenMatrix> {
    let pl = model.packed_len();
    if p.residuals.len() != p.n_tokens() * pl {
        return Err(Error::Corruption(format!("passage {} residual length", p.passage_id)));
    }
    let mut data = vec![0f32; p.n_tokens() * model.dim];
    for (i, out) in data.chunks_exact_mut(model.dim).enumerate() {
        decode_into(p.centroid_ids[i], &p.residuals[i * pl..(i + 1) * pl], model, out)?;
    }
    TokenMatrix::new(p.n_tokens(), model.dim, data)
}

// Codes file: "PSCD" | version u32 | n_passages u64, then per passage:
// passage_id u64 | n_tokens u32 | n_tokens x u32 centroid ids |
// n_tokens x packed_len residual bytes.

pub const CODES_MAGIC: &[u8; 4] = b"PSCD";
pub const CODES_VERSION: u32 = 1;

pub fn write_codes<W: Write>(w: W, passages: &[CompressedPassage]) -> Result<()> {
    let mut w = BufWriter::new(w);
    w.write_all(CODES_MAGIC)?;
    w.write_u32::<LittleEndian>(CODES_VERSION)?;
    w.write_u64::<LittleEndian>(passages.len() as u64)?;
    for p in passages {
        w.write_u64::<LittleEndian>(p.passage_id)?;
        w.write_u32::<LittleEndian>(p.n_tokens() as u32)?;
        for c in &p.centroid_ids {
            w.write_u32::<LittleEndian>(*c)?;
        }
        w.write_all(&p.residuals)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a codes file; `packed_len` comes from the shard's model.
pub fn read_codes<R: Read>(r: R, packed_len: usize) -> Result<Vec<CompressedPassage>> {
    let mut r = BufReader::new(r);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CODES_MAGIC {
        return Err(Error::Corruption("bad codes file magic".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != CODES_VERSION {
        return Err(Error::Corruption(format!("unsupported codes version {version}")));
    }
    let n = r.read_u64::<LittleEndian>()? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let passage_id = r.read_u64::<LittleEndian>()?;
        let nt = r.read_u32::<LittleEndian>()? as usize;
        let mut centroid_ids = vec![0u32; nt];
        r.read_u32_into::<LittleEndian>(&mut centroid_ids)?;
        let mut residuals = vec![0u8; nt * packed_len];
        r.read_exact(&mut residuals)?;
        out.push(CompressedPassage { passage_id, centroid_ids, residuals });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{Embedder, EmbeddedPassage, SyntheticEmbedder};
    use crate::model::{build_shard_model, ModelConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_model(centroids: Vec<Vec<f32>>, bits: u8, values: Vec<f32>, cutoffs: Vec<f32>) -> ShardModel {
        let dim = centroids[0].len();
        ShardModel {
            dim,
            n_centroids: centroids.len(),
            centroids: centroids.concat(),
            residual_bits: bits,
            bucket_cutoffs: cutoffs,
            bucket_values: values,
            embedder_fingerprint: [0; 32],
            trained_on: "toy".into(),
        }
    }

    #[test]
    fn pack_one_bit_hand_case() {
        assert_eq!(pack_bits(&[1, 0, 1, 1, 0, 0, 0, 0], 1).unwrap(), vec![0x0D]);
    }

    #[test]
    fn pack_two_bit_hand_case() {
        // 3 -> bits 0-1, 0 -> bits 2-3, 1 -> bit 4, 2 -> bit 7.
        assert_eq!(pack_bits(&[3, 0, 1, 2], 2).unwrap(), vec![0x93]);
        assert_eq!(unpack_bits(&[0x93], 4, 2).unwrap(), vec![3, 0, 1, 2]);
    }

    #[test]
    fn pack_rejects_overflow() {
        assert!(matches!(pack_bits(&[2], 1), Err(Error::IndexOverflow { index: 2, bits: 1 })));
        assert!(matches!(pack_bits(&[16], 4), Err(Error::IndexOverflow { .. })));
    }

    #[test]
    fn packed_length_is_exact() {
        assert_eq!(pack_bits(&[1; 9], 1).unwrap().len(), 2);
        assert_eq!(pack_bits(&[1; 3], 4).unwrap().len(), 2);
        assert_eq!(pack_bits(&[], 2).unwrap().len(), 0);
    }

    proptest! {
        #[test]
        fn pack_round_trip(bits in prop::sample::select(vec![1u8, 2, 4, 8]), raw in proptest::collection::vec(any::<u8>(), 0..300)) {
            let mask = if bits == 8 { 0xff } else { (1u8 << bits) - 1 };
            let idx: Vec<u8> = raw.iter().map(|x| x & mask).collect();
            let packed = pack_bits(&idx, bits).unwrap();
            prop_assert_eq!(packed.len(), (idx.len() * bits as usize).div_ceil(8));
            prop_assert_eq!(unpack_bits(&packed, idx.len(), bits).unwrap(), idx);
        }
    }

    #[test]
    fn zero_residual_encodes_zero_bucket() {
        let mut cs: Vec<Vec<f32>> = (0..10).map(|i| vec![i as f32, 1.0, -1.0, 0.5]).collect();
        cs[7] = vec![20.0, 0.0, 0.0, 0.0];
        let m = toy_model(cs.clone(), 1, vec![-0.1, 0.1], vec![0.0]);
        let ct = encode_token(&cs[7], &m).unwrap();
        assert_eq!(ct.centroid_id, 7);
        assert_eq!(unpack_bits(&ct.residual_code, 4, 1).unwrap(), vec![0, 0, 0, 0]);
    }

    #[test]
    fn ties_pick_lowest_centroid() {
        let cs = vec![vec![0.0, 0.0], vec![0.0, -1.0], vec![1.0, 0.0], vec![0.0, -2.0], vec![-1.0, 0.0], vec![0.0, 1.0]];
        let m = toy_model(cs, 1, vec![-0.1, 0.1], vec![0.0]);
        let s = std::f32::consts::FRAC_1_SQRT_2;
        assert_eq!(encode_token(&[s, s], &m).unwrap().centroid_id, 2);
    }

    #[test]
    fn nearest_centroid_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dim = 16;
        let cs: Vec<Vec<f32>> = (0..32).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let m = toy_model(cs.clone(), 1, vec![-0.1, 0.1], vec![0.0]);
        for _ in 0..10_000 {
            let t: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            let mut best = 0;
            for c in 1..cs.len() {
                let s: f32 = t.iter().zip(&cs[c]).map(|(a, b)| a * b).sum();
                let b: f32 = t.iter().zip(&cs[best]).map(|(a, b)| a * b).sum();
                if s > b {
                    best = c;
                }
            }
            assert_eq!(encode_token(&t, &m).unwrap().centroid_id, best as u32);
        }
    }

    #[test]
    fn dimension_and_range_errors() {
        let m = toy_model(vec![vec![1.0, 0.0]], 1, vec![-0.1, 0.1], vec![0.0]);
        assert!(matches!(encode_token(&[1.0], &m), Err(Error::DimensionMismatch { .. })));
        let bad = CompressedToken { centroid_id: 5, residual_code: vec![0] };
        assert!(matches!(decode_token(&bad, &m), Err(Error::Corruption(_))));
    }

    #[test]
    fn decode_error_bounded_for_centroid_vectors() {
        let m = 0.05f32;
        let cs: Vec<Vec<f32>> = (0..4).map(|i| (0..8).map(|j| ((i * 8 + j) as f32).sin()).collect()).collect();
        let model = toy_model(cs.clone(), 1, vec![-m, m], vec![0.0]);
        for c in &cs {
            let d = decode_token(&encode_token(c, &model).unwrap(), &model).unwrap();
            let err: f32 = c.iter().zip(&d).map(|(a, b)| (a - b).powi(2)).sum::<f32>().sqrt();
            assert!(err <= m * (8f32).sqrt() + 1e-6);
        }
        let ct = encode_token(&cs[1], &model).unwrap();
        assert_eq!(decode_token(&ct, &model).unwrap(), decode_token(&ct, &model).unwrap());
    }

    fn concept_passages(e: &SyntheticEmbedder, concepts: &[u32], per: u32, vocab: u32) -> Vec<EmbeddedPassage> {
        let mut out = Vec::new();
        for &c in concepts {
            for j in 0..per {
                let toks: Vec<u32> = (0..8).map(|t| c * vocab + (j * 8 + t) % vocab).collect();
                out.push(EmbeddedPassage {
                    passage_id: out.len() as u64,
                    doc_id: format!("d{}", out.len()),
                    window_index: 0,
                    matrix: e.embed_tokens(&toks).unwrap(),
                });
            }
        }
        out
    }

    fn mean_decode_error(ps: &[EmbeddedPassage], model: &ShardModel) -> f64 {
        let mut s = 0.0;
        let mut n = 0;
        for p in ps {
            for row in p.matrix.iter_rows() {
                let d = decode_token(&encode_token(row, model).unwrap(), model).unwrap();
                s += row.iter().zip(&d).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>().sqrt();
                n += 1;
            }
        }
        s / n as f64
    }

    #[test]
    fn fidelity_improves_with_bits() {
        for seed in 0..3 {
            let e = SyntheticEmbedder::new(32, 4, 256, 0.5, seed).unwrap();
            let ps = concept_passages(&e, &[0, 1, 2, 3], 40, 256);
            let errs: Vec<f64> = [1u8, 2, 4]
                .iter()
                .map(|&b| {
                    let cfg = ModelConfig { residual_bits: b, c_mult: 2.0, k_min: 8, seed, ..Default::default() };
                    mean_decode_error(&ps, &build_shard_model(&ps, &cfg, e.fingerprint(), "m").unwrap())
                })
                .collect();
            assert!(errs[0] > errs[1] && errs[1] > errs[2], "seed {seed}: {errs:?}");
        }
    }

    #[test]
    fn unseen_concepts_decode_worse() {
        let e = SyntheticEmbedder::new(32, 4, 256, 0.3, 8).unwrap();
        let trained = concept_passages(&e, &[0], 60, 256);
        let cfg = ModelConfig { c_mult: 4.0, ..Default::default() };
        let model = build_shard_model(&trained, &cfg, e.fingerprint(), "early").unwrap();
        let seen = mean_decode_error(&concept_passages(&e, &[0], 20, 256), &model);
        let unseen = mean_decode_error(&concept_passages(&e, &[3], 20, 256), &model);
        assert!(unseen > seen, "unseen {unseen} seen {seen}");
    }

    #[test]
    fn passage_round_trip_and_codes_file() {
        let e = SyntheticEmbedder::new(16, 2, 64, 0.3, 1).unwrap();
        let ps = concept_passages(&e, &[0, 1], 10, 64);
        let model = build_shard_model(&ps, &ModelConfig::default(), e.fingerprint(), "m").unwrap();
        let codes: Vec<CompressedPassage> = ps.iter().map(|p| encode_passage(p.passage_id, &p.matrix, &model).unwrap()).collect();
        let first = &codes[0];
        let dec = decode_passage(first, &model).unwrap();
        for i in 0..first.n_tokens() {
            assert_eq!(dec.row(i), decode_token(&first.token(i, model.packed_len()), &model).unwrap().as_slice());
        }
        let mut buf = Vec::new();
        write_codes(&mut buf, &codes).unwrap();
        assert_eq!(&buf[..4], b"PSCD");
        assert_eq!(read_codes(buf.as_slice(), model.packed_len()).unwrap(), codes);
    }
}
