//! The index state and the high-level engine operations built on it.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::{EngineConfig, Providers};
use crate::embed::VectorIndex;
use crate::error::{Error, Result};
use crate::graph::{BiLevelGraph, StatsRecord};
use crate::ingest::{self, ChunkStore, Document, UpdateDelta};
use crate::prompts::TemplateSet;
use crate::reports::{self, ReportStore};
use crate::retrieval::{self, AnswerRecord, QueryCtx, ScoringMode};
use crate::time::Timestamp;
use crate::tokenize::{Tokenizer, WhitespaceTokenizer};

/// Everything a retrieval query reads: the bi-level graph, chunk store,
/// time reports, and the entity/edge vector indexes. Snapshots of this
/// struct are what persistence writes and the service swaps atomically.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IndexState {
    pub graph: BiLevelGraph,
    pub chunks: ChunkStore,
    pub reports: ReportStore,
    pub edge_vectors: VectorIndex,
    pub entity_vectors: VectorIndex,
    /// Texts the entity vectors were computed from; an entity whose text
    /// drifts from this is re-embedded on the next ingest.
    pub embedded_entity_texts: BTreeMap<u64, String>,
    /// Hash of the engine config the index was built with.
    pub config_hash: String,
}

impl IndexState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stats(&self) -> StatsRecord {
        self.graph.stats(self.chunks.len(), self.reports.len())
    }

    pub fn check_integrity(&self) -> Result<()> {
        self.graph.check_integrity()?;
        for (id, chunk) in self.chunks.iter() {
            for edge in &chunk.extracted_edges {
                if self.graph.edge(*edge).is_none() {
                    return Err(Error::CorruptSnapshot(format!(
                        "chunk {id} lists missing edge {edge}"
                    )));
                }
            }
        }
        for (ts, _) in self.reports.iter() {
            if !self.graph.time_nodes().contains_key(ts) {
                return Err(Error::CorruptSnapshot(format!(
                    "report for missing time node {ts}"
                )));
            }
        }
        Ok(())
    }
}

/// Result of a build or update, for operator-facing summaries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestReport {
    pub delta: UpdateDelta,
    pub regenerated_reports: Vec<Timestamp>,
}

/// Owns an index plus the providers and configuration used to build and
/// query it.
pub struct Engine {
    pub state: IndexState,
    pub providers: Providers,
    pub cfg: EngineConfig,
    pub templates: TemplateSet,
    pub tokenizer: Arc<dyn Tokenizer>,
}

impl Engine {
    pub fn new(cfg: EngineConfig, providers: Providers, templates: TemplateSet) -> Engine {
        let mut state = IndexState::new();
        state.config_hash = cfg.content_hash();
        Engine {
            state,
            providers,
            cfg,
            templates,
            tokenizer: Arc::new(WhitespaceTokenizer),
        }
    }

    pub fn with_state(
        state: IndexState,
        cfg: EngineConfig,
        providers: Providers,
        templates: TemplateSet,
    ) -> Engine {
        Engine {
            state,
            providers,
            cfg,
            templates,
            tokenizer: Arc::new(WhitespaceTokenizer),
        }
    }

    /// Index a corpus from scratch: chunk, extract, build the graph, embed,
    /// and generate every time report bottom-up.
    pub fn build(&mut self, corpus: &[Document]) -> Result<IngestReport> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut state = IndexState::new();
        state.config_hash = self.cfg.content_hash();
        let delta = ingest::ingest_documents(
            &mut state,
            corpus,
            &self.cfg,
            &self.templates,
            self.providers.indexing_llm.as_ref(),
            self.providers.embedder.as_ref(),
            self.tokenizer.as_ref(),
        )?;
        let regenerated = reports::generate_all(
            &mut state,
            self.providers.indexing_llm.as_ref(),
            &self.templates,
            &self.cfg,
            self.tokenizer.as_ref(),
        )?;
        self.state = state;
        Ok(IngestReport {
            delta,
            regenerated_reports: regenerated,
        })
    }

    /// Merge new documents into the loaded index and refresh exactly the
    /// dirty time reports. All-or-nothing: on any failure the previous
    /// state remains current.
    pub fn update(&mut self, new_docs: &[Document]) -> Result<IngestReport> {
        if new_docs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut next = self.state.clone();
        let delta = ingest::ingest_documents(
            &mut next,
            new_docs,
            &self.cfg,
            &self.templates,
            self.providers.indexing_llm.as_ref(),
            self.providers.embedder.as_ref(),
            self.tokenizer.as_ref(),
        )?;
        let regenerated = reports::refresh_dirty(
            &delta,
            &mut next,
            self.providers.indexing_llm.as_ref(),
            &self.templates,
            &self.cfg,
            self.tokenizer.as_ref(),
        )?;
        self.state = next;
        Ok(IngestReport {
            delta,
            regenerated_reports: regenerated,
        })
    }

    fn query_ctx(&self, scoring_mode: ScoringMode) -> QueryCtx<'_> {
        QueryCtx {
            state: &self.state,
            llm: self.providers.query_llm.as_ref(),
            embedder: self.providers.embedder.as_ref(),
            templates: &self.templates,
            cfg: &self.cfg,
            tokenizer: self.tokenizer.as_ref(),
            scoring_mode,
        }
    }

    pub fn answer_local(&self, query: &str, mode: Option<ScoringMode>) -> Result<AnswerRecord> {
        retrieval::answer_local(
            &self.query_ctx(mode.unwrap_or(self.cfg.scoring_mode)),
            query,
        )
    }

    pub fn answer_global(&self, query: &str, mode: Option<ScoringMode>) -> Result<AnswerRecord> {
        retrieval::answer_global(
            &self.query_ctx(mode.unwrap_or(self.cfg.scoring_mode)),
            query,
        )
    }

    pub fn stats(&self) -> StatsRecord {
        self.state.stats()
    }

    pub fn save(&self, dir: &Path) -> Result<crate::persist::Manifest> {
        crate::persist::save(&self.state, dir)
    }

    pub fn load(
        dir: &Path,
        cfg: EngineConfig,
        providers: Providers,
        templates: TemplateSet,
    ) -> Result<Engine> {
        let state = crate::persist::load(dir)?;
        Ok(Engine::with_state(state, cfg, providers, templates))
    }
}
