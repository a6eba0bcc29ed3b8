//! Streaming multi-vector dense retrieval.
//!
//! Token-level passage embeddings are compressed into a centroid id plus a
//! few bits of quantized residual per dimension, and documents arriving as a
//! time-ordered stream are organized into a two-level hierarchy of shards:
//! small shards of `B` documents that are merged into large shards of
//! `A = k * B` documents. Every document is indexed a bounded number of times
//! and stays searchable throughout. Shards are searched independently and
//! their raw late-interaction scores are merged without normalization.
//!
//! Module map:
//!
//! - [`stream`]: corpus records, date resolution, stream ordering, passage
//!   windows and the synthetic drifting-vocabulary generator.
//! - [`embed`]: token embedders (synthetic, hashed, file-backed).
//! - [`model`]: k-means codebooks and residual bucket quantization.
//! - [`codec`]: token encode/decode and residual bit packing.
//! - [`shard`]: compressed and exact shard indexes and per-shard search.
//! - [`lifecycle`]: the hierarchical sharding state machine.
//! - [`search`]: cross-shard fan-out and MaxP merging.
//! - [`eval`]: nDCG, MAP, recall, Judged@k and condensed-list variants.
//! - [`bench`]: drift sweep, oracle comparison and throughput harnesses.
//! - [`config`], [`engine`], [`cli`]: configuration, on-disk index roots and
//!   the command-line front end.

pub mod bench;
pub mod cli;
pub mod codec;
pub mod config;
pub mod embed;
pub mod engine;
pub mod error;
pub mod eval;
pub mod lifecycle;
pub mod model;
pub mod search;
pub mod shard;
pub mod stream;

pub use error::{Error, Result};

/// SplitMix64 finalizer, used to derive independent child seeds.
pub(crate) fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}
