//! Engine and provider configuration.
//!
//! Defaults: 1,200-token chunks with 100-token overlap, top-K = 20
//! candidate relations, 12,000-token local context, 24,000-token global
//! context with 10% of the budget on chunks. A config file (TOML or JSON,
//! auto-detected) is merged under explicit CLI flags; provider credentials
//! come from environment variables.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embed::{EmbeddingProvider, HttpEmbedder, MockEmbedder};
use crate::error::{Error, Result};
use crate::provider::{HttpLlm, LlmProvider, MockLlm, RetryPolicy};
use crate::retrieval::ScoringMode;

pub const ENV_LLM_ENDPOINT: &str = "TGRAG_LLM_ENDPOINT";
pub const ENV_LLM_MODEL: &str = "TGRAG_LLM_MODEL";
pub const ENV_LLM_API_KEY: &str = "TGRAG_LLM_API_KEY";
pub const ENV_EMBED_ENDPOINT: &str = "TGRAG_EMBED_ENDPOINT";
pub const ENV_EMBED_MODEL: &str = "TGRAG_EMBED_MODEL";
pub const ENV_EMBED_API_KEY: &str = "TGRAG_EMBED_API_KEY";

// ---------------------------------------------------------------------------
// Engine knobs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Chunk length in tokens.
    pub chunk_size: usize,
    /// Overlap between consecutive chunks, in tokens.
    pub overlap: usize,
    /// Candidate relation edges retrieved per query.
    pub top_k: usize,
    /// Token budget for locally retrieved context.
    pub local_budget: usize,
    /// Token budget for global evidence (chunks + time reports).
    pub global_budget: usize,
    /// Fraction of the global budget allocated to chunks; the rest goes to
    /// time reports. Must lie in (0, 1).
    pub chunk_fraction: f64,
    /// Edge scoring mode; `full` unless running an ablation.
    pub scoring_mode: ScoringMode,
    /// Compatibility switch: sum edge scores over the whole retrieved edge
    /// set when scoring a chunk, instead of only the chunk's own retrieved
    /// edges. Off by default; see `retrieval::score_chunks`.
    pub chunk_sum_all_retrieved: bool,
    /// Token cap on assembled report inputs.
    pub report_input_limit: usize,
    /// Output budget for one time report.
    pub max_report_tokens: usize,
    /// Output budget for one answer.
    pub max_answer_tokens: usize,
    pub retry: RetryPolicy,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            chunk_size: 1200,
            overlap: 100,
            top_k: 20,
            local_budget: 12_000,
            global_budget: 24_000,
            chunk_fraction: 0.10,
            scoring_mode: ScoringMode::Full,
            chunk_sum_all_retrieved: false,
            report_input_limit: 8_000,
            max_report_tokens: 512,
            max_answer_tokens: 1_024,
            retry: RetryPolicy::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chunk_size == 0 || self.overlap >= self.chunk_size {
            return Err(Error::Config(format!(
                "chunk_size ({}) must exceed overlap ({})",
                self.chunk_size, self.overlap
            )));
        }
        if !(self.chunk_fraction > 0.0 && self.chunk_fraction < 1.0) {
            return Err(Error::Config(format!(
                "chunk_fraction ({}) must lie in (0, 1)",
                self.chunk_fraction
            )));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        Ok(())
    }

    /// Budget split for global retrieval: (chunk tokens, report tokens).
    pub fn global_split(&self) -> (usize, usize) {
        let chunk = (self.global_budget as f64 * self.chunk_fraction).floor() as usize;
        (chunk, self.global_budget - chunk)
    }

    /// Hash over the retrieval-relevant settings, stored in snapshot
    /// manifests to flag config drift.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        hex_string(&hasher.finalize())
    }
}

pub fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

// ---------------------------------------------------------------------------
// Provider configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct LlmProviderConfig {
    pub kind: ProviderKind,
    /// Mock: JSON-lines fixture file, relative paths resolved against the
    /// config file location.
    pub fixtures: Option<PathBuf>,
    /// Mock: templates answered by echoing the prompt.
    pub echo_templates: Vec<String>,
    /// HTTP: chat-completions endpoint; `TGRAG_LLM_ENDPOINT` overrides.
    pub endpoint: Option<String>,
    pub model: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingProviderConfig {
    pub kind: ProviderKind,
    pub dim: usize,
    pub seed: u64,
    pub endpoint: Option<String>,
    pub model: Option<String>,
}

impl Default for EmbeddingProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Mock,
            dim: 64,
            seed: 0x7467_7261,
            endpoint: None,
            model: None,
        }
    }
}

/// Phase routing: indexing and query answering may use different models;
/// unset phases fall back to `llm`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ProvidersConfig {
    pub llm: LlmProviderConfig,
    pub indexing_llm: Option<LlmProviderConfig>,
    pub query_llm: Option<LlmProviderConfig>,
    pub judge_llm: Option<LlmProviderConfig>,
    pub embedding: EmbeddingProviderConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub index_dir: Option<PathBuf>,
    pub templates_dir: Option<PathBuf>,
    #[serde(flatten)]
    pub engine: EngineConfig,
    pub providers: ProvidersConfig,
}

impl AppConfig {
    /// Load TOML or JSON, auto-detected by extension then by content.
    /// Relative provider paths are rebased onto the config file's directory.
    pub fn load(path: &Path) -> Result<AppConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: AppConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
            Some("toml") => toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
            _ => serde_json::from_str(&text)
                .or_else(|_| toml::from_str(&text))
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        };
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&path);
                }
            }
        };
        rebase(&mut cfg.index_dir);
        rebase(&mut cfg.templates_dir);
        for llm in [Some(&mut cfg.providers.llm)]
            .into_iter()
            .flatten()
            .chain(cfg.providers.indexing_llm.iter_mut())
            .chain(cfg.providers.query_llm.iter_mut())
            .chain(cfg.providers.judge_llm.iter_mut())
        {
            rebase(&mut llm.fixtures);
        }
        cfg.engine.validate()?;
        Ok(cfg)
    }
}

// ---------------------------------------------------------------------------
// Provider construction
// ---------------------------------------------------------------------------

/// Instantiated providers for each pipeline phase.
#[derive(Clone)]
pub struct Providers {
    pub indexing_llm: Arc<dyn LlmProvider>,
    pub query_llm: Arc<dyn LlmProvider>,
    pub judge_llm: Arc<dyn LlmProvider>,
    pub embedder: Arc<dyn EmbeddingProvider>,
}

impl Providers {
    pub fn from_config(cfg: &ProvidersConfig, retry: RetryPolicy) -> Result<Providers> {
        let base = build_llm(&cfg.llm, retry)?;
        let build_or = |override_cfg: &Option<LlmProviderConfig>| -> Result<Arc<dyn LlmProvider>> {
            match override_cfg {
                Some(c) => build_llm(c, retry),
                None => Ok(base.clone()),
            }
        };
        Ok(Providers {
            indexing_llm: build_or(&cfg.indexing_llm)?,
            query_llm: build_or(&cfg.query_llm)?,
            judge_llm: build_or(&cfg.judge_llm)?,
            embedder: build_embedder(&cfg.embedding, retry)?,
        })
    }

    /// Mock providers echoing everything; handy for tests and dry runs.
    pub fn all_echo(dim: usize, seed: u64) -> Providers {
        let mut mock = MockLlm::new();
        mock.set_echo_templates(
            [
                crate::prompts::EXTRACT_QUADRUPLES,
                crate::prompts::TIME_SCOPE,
                crate::prompts::TIME_REPORT,
                crate::prompts::LOCAL_QA,
                crate::prompts::GLOBAL_SYNTHESIS,
                crate::prompts::POINT_EXTRACTION,
                crate::prompts::JUDGE_LOCAL,
                crate::prompts::JUDGE_PAIRWISE,
            ]
            .map(String::from),
        );
        let mock = Arc::new(mock);
        Providers {
            indexing_llm: mock.clone(),
            query_llm: mock.clone(),
            judge_llm: mock,
            embedder: Arc::new(MockEmbedder::new(dim, seed)),
        }
    }
}

fn build_llm(cfg: &LlmProviderConfig, retry: RetryPolicy) -> Result<Arc<dyn LlmProvider>> {
    match cfg.kind {
        ProviderKind::Mock => {
            let mut provider = match &cfg.fixtures {
                Some(path) => MockLlm::from_fixture_file(path)?,
                None => MockLlm::new(),
            };
            provider.set_echo_templates(cfg.echo_templates.iter().cloned());
            Ok(Arc::new(provider))
        }
        ProviderKind::Http => {
            let endpoint = std::env::var(ENV_LLM_ENDPOINT)
                .ok()
                .or_else(|| cfg.endpoint.clone())
                .ok_or_else(|| {
                    Error::Config(format!(
                        "http llm provider needs an endpoint ({ENV_LLM_ENDPOINT} or config)"
                    ))
                })?;
            let model = std::env::var(ENV_LLM_MODEL)
                .ok()
                .or_else(|| cfg.model.clone())
                .unwrap_or_else(|| "gpt-4o-mini".to_string());
            let api_key = std::env::var(ENV_LLM_API_KEY).ok();
            Ok(Arc::new(HttpLlm::new(endpoint, model, api_key, retry)))
        }
    }
}

fn build_embedder(
    cfg: &EmbeddingProviderConfig,
    retry: RetryPolicy,
) -> Result<Arc<dyn EmbeddingProvider>> {
    match cfg.kind {
        ProviderKind::Mock => Ok(Arc::new(MockEmbedder::new(cfg.dim, cfg.seed))),
        ProviderKind::Http => {
            let endpoint = std::env::var(ENV_EMBED_ENDPOINT)
                .ok()
                .or_else(|| cfg.endpoint.clone())
                .ok_or_else(|| {
                    Error::Config(format!(
                        "http embedding provider needs an endpoint ({ENV_EMBED_ENDPOINT} or config)"
                    ))
                })?;
            let model = std::env::var(ENV_EMBED_MODEL)
                .ok()
                .or_else(|| cfg.model.clone())
                .unwrap_or_else(|| "text-embedding-3-small".to_string());
            Ok(Arc::new(HttpEmbedder {
                endpoint,
                model,
                api_key: std::env::var(ENV_EMBED_API_KEY).ok(),
                dim: cfg.dim,
                retry,
            }))
        }
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
