//! Engine configuration, stored as TOML next to every index.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::{fingerprint_of, EmbedderConfig, Fingerprint};
use crate::error::{Error, Result};
use crate::eval::Gain;
use crate::lifecycle::LifecycleConfig;
use crate::shard::SearchParams;
use crate::stream::{SyntheticStreamSpec, Tokenizer, Windowing};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub nprobe: usize,
    pub candidate_factor: usize,
    pub n_per_shard: usize,
    pub top_docs: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        let p = SearchParams::default();
        Self { nprobe: p.nprobe, candidate_factor: p.candidate_factor, n_per_shard: p.n_per_shard, top_docs: 1000 }
    }
}

impl SearchConfig {
    pub fn params(&self) -> SearchParams {
        SearchParams { n_per_shard: self.n_per_shard, nprobe: self.nprobe, candidate_factor: self.candidate_factor }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub dim: usize,
    pub tokenizer: Tokenizer,
    pub max_query_tokens: usize,
    pub gain: Gain,
    pub windowing: Windowing,
    pub embedder: EmbedderConfig,
    pub lifecycle: LifecycleConfig,
    pub search: SearchConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            tokenizer: Tokenizer::Hash,
            max_query_tokens: 64,
            gain: Gain::Linear,
            windowing: Windowing::default(),
            embedder: EmbedderConfig::default(),
            lifecycle: LifecycleConfig::default(),
            search: SearchConfig::default(),
        }
    }
}

impl EngineConfig {
    /// Configuration matching a synthetic stream: numeric tokens and the
    /// stream's own embedder.
    pub fn synthetic(spec: &SyntheticStreamSpec) -> Self {
        Self {
            dim: spec.dim,
            tokenizer: Tokenizer::Numeric,
            embedder: EmbedderConfig::synthetic_for(spec),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dim must be positive".into()));
        }
        if self.max_query_tokens == 0 {
            return Err(Error::Config("max_query_tokens must be positive".into()));
        }
        if self.windowing.max_tokens == 0 || self.windowing.overlap >= self.windowing.max_tokens {
            return Err(Error::Config("windowing needs 0 <= overlap < max_tokens".into()));
        }
        if self.search.top_docs == 0 {
            return Err(Error::Config("top_docs must be positive".into()));
        }
        self.search.params().validate()?;
        self.lifecycle.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    /// Hash of everything that shapes the index (search settings excluded).
    pub fn index_fingerprint(&self) -> Result<Fingerprint> {
        let shaping = (self.dim, self.tokenizer, self.windowing, &self.embedder, &self.lifecycle);
        Ok(fingerprint_of(&serde_json::to_string(&shaping)?))
    }
}
