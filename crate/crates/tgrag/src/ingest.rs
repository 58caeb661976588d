//! Corpus ingestion: chunking, quadruple extraction through an LLM
//! provider, graph construction, and incremental merges.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::embed::EmbeddingProvider;
use crate::engine::IndexState;
use crate::error::{Error, Result};
use crate::graph::{ChunkId, EdgeId, Quadruple, TemporalEdge};
use crate::prompts::{self, TemplateSet};
use crate::provider::{ChatRequest, LlmProvider};
use crate::time::{parse_timestamp, Timestamp};
use crate::tokenize::Tokenizer;
use crate::wire;

// ---------------------------------------------------------------------------
// Documents and chunks
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: ChunkId,
    pub doc_id: String,
    /// Token offsets within the document, half-open.
    pub token_span: (usize, usize),
    pub text: String,
    pub extracted_edges: BTreeSet<EdgeId>,
}

impl Chunk {
    pub fn token_count(&self) -> usize {
        self.token_span.1 - self.token_span.0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChunkStore {
    chunks: BTreeMap<ChunkId, Chunk>,
}

impl ChunkStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Chunk> {
        self.chunks.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.chunks.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ChunkId, &Chunk)> {
        self.chunks.iter()
    }

    pub fn insert(&mut self, chunk: Chunk) {
        self.chunks.insert(chunk.id.clone(), chunk);
    }
}

fn chunk_id(doc_id: &str, index: usize) -> ChunkId {
    format!("{doc_id}#{index:04}")
}

/// Split a document into chunks of `chunk_size` tokens advancing by
/// `chunk_size - overlap`; the final chunk may be short and a chunk that
/// reaches the end terminates the sequence.
pub fn chunk_document(
    doc: &Document,
    chunk_size: usize,
    overlap: usize,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<Chunk>> {
    if chunk_size == 0 || overlap >= chunk_size {
        return Err(Error::InvalidArgument(format!(
            "chunk_size ({chunk_size}) must exceed overlap ({overlap})"
        )));
    }
    let tokens = tokenizer.tokenize(&doc.text);
    if tokens.is_empty() {
        return Err(Error::EmptyDocument(doc.id.clone()));
    }
    let stride = chunk_size - overlap;
    let mut chunks = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + chunk_size).min(tokens.len());
        chunks.push(Chunk {
            id: chunk_id(&doc.id, chunks.len()),
            doc_id: doc.id.clone(),
            token_span: (start, end),
            text: tokens[start..end].join(" "),
            extracted_edges: BTreeSet::new(),
        });
        if end == tokens.len() {
            break;
        }
        start += stride;
    }
    Ok(chunks)
}

// ---------------------------------------------------------------------------
// Corpus loading
// ---------------------------------------------------------------------------

/// Read a corpus directory: UTF-8 `.txt` files (document id = file stem)
/// plus an optional `manifest.json` mapping file name to metadata.
pub fn load_corpus(dir: &Path) -> Result<Vec<Document>> {
    if !dir.is_dir() {
        return Err(Error::InvalidArgument(format!(
            "corpus path {} is not a directory",
            dir.display()
        )));
    }
    let mut metadata: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    let manifest = dir.join("manifest.json");
    if manifest.is_file() {
        let text = std::fs::read_to_string(&manifest)?;
        metadata = serde_json::from_str(&text)
            .map_err(|e| Error::json(manifest.display().to_string(), e))?;
    }
    let mut names: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|entry| {
            let path = entry.ok()?.path();
            if path.extension().and_then(|e| e.to_str()) == Some("txt") {
                path.file_name().map(|n| n.to_string_lossy().into_owned())
            } else {
                None
            }
        })
        .collect();
    names.sort();
    let mut docs = Vec::with_capacity(names.len());
    for name in names {
        let path = dir.join(&name);
        let text = std::fs::read_to_string(&path)?;
        let id = Path::new(&name)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| name.clone());
        docs.push(Document {
            id,
            text,
            metadata: metadata.remove(&name).unwrap_or_default(),
        });
    }
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(docs)
}

// ---------------------------------------------------------------------------
// Quadruple extraction
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct ExtractionOutcome {
    pub quadruples: Vec<Quadruple>,
    /// Records the provider emitted that could not be used.
    pub skipped_records: usize,
}

/// Ask the provider for the chunk's temporal quadruples and parse its
/// delimited output. Malformed records are skipped, not fatal; provider
/// failures propagate after the configured retries.
pub fn extract_quadruples(
    chunk: &Chunk,
    provider: &dyn LlmProvider,
    templates: &TemplateSet,
    cfg: &EngineConfig,
) -> Result<ExtractionOutcome> {
    let prompt = templates.render(
        prompts::EXTRACT_QUADRUPLES,
        &[("chunk_id", chunk.id.as_str()), ("chunk_text", &chunk.text)],
    )?;
    let req = ChatRequest::new(
        prompts::EXTRACT_QUADRUPLES,
        prompt,
        cfg.max_report_tokens.max(1024),
    );
    let resp = cfg.retry.run(|| provider.complete(&req))?;
    Ok(parse_quadruple_records(&resp.text))
}

/// Parse `("quadruple"<|>head<|>tail<|>relation<|>timestamp)` records.
pub fn parse_quadruple_records(text: &str) -> ExtractionOutcome {
    let mut out = ExtractionOutcome::default();
    for record in wire::parse_records(text) {
        if record.len() != 5 || !record[0].eq_ignore_ascii_case("quadruple") {
            out.skipped_records += 1;
            continue;
        }
        let (head, tail, relation) = (record[1].trim(), record[2].trim(), record[3].trim());
        if head.is_empty() || tail.is_empty() || relation.is_empty() {
            out.skipped_records += 1;
            continue;
        }
        match parse_timestamp(&record[4]) {
            Ok(timestamp) => out.quadruples.push(Quadruple {
                head_name: head.to_string(),
                tail_name: tail.to_string(),
                relation: relation.to_string(),
                timestamp,
            }),
            Err(_) => out.skipped_records += 1,
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Build and update
// ---------------------------------------------------------------------------

/// What an incremental merge changed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateDelta {
    pub new_edges: BTreeSet<EdgeId>,
    pub new_time_nodes: BTreeSet<Timestamp>,
    /// Time nodes whose reports must be regenerated: nodes that gained
    /// edges, newly created nodes, and all their ancestors.
    pub dirty_time_nodes: BTreeSet<Timestamp>,
    pub new_documents: usize,
    pub new_chunks: usize,
    pub skipped_records: usize,
}

/// Chunk, extract, and merge documents into `state`. Used both for the
/// initial build (empty state) and for incremental updates. Provider calls
/// all happen before any embedding so a failed extraction leaves vectors
/// untouched; callers wanting all-or-nothing semantics apply this to a
/// copy of the state.
pub fn ingest_documents(
    state: &mut IndexState,
    docs: &[Document],
    cfg: &EngineConfig,
    templates: &TemplateSet,
    llm: &dyn LlmProvider,
    embedder: &dyn EmbeddingProvider,
    tokenizer: &dyn Tokenizer,
) -> Result<UpdateDelta> {
    let mut seen = BTreeSet::new();
    for doc in docs {
        if !seen.insert(doc.id.as_str()) {
            return Err(Error::InvalidArgument(format!(
                "duplicate document id {:?}",
                doc.id
            )));
        }
    }

    // phase 1: all provider calls
    let mut pending: Vec<(Chunk, Vec<Quadruple>)> = Vec::new();
    let mut skipped_records = 0;
    for doc in docs {
        let chunks = chunk_document(doc, cfg.chunk_size, cfg.overlap, tokenizer)?;
        for chunk in chunks {
            if state.chunks.contains(&chunk.id) {
                return Err(Error::InvalidArgument(format!(
                    "document {:?} is already indexed",
                    doc.id
                )));
            }
            let outcome = extract_quadruples(&chunk, llm, templates, cfg)?;
            skipped_records += outcome.skipped_records;
            pending.push((chunk, outcome.quadruples));
        }
    }

    // phase 2: graph mutation
    let mut delta = UpdateDelta {
        new_documents: docs.len(),
        new_chunks: pending.len(),
        skipped_records,
        ..Default::default()
    };
    let mut touched_nodes: BTreeSet<Timestamp> = BTreeSet::new();
    for (mut chunk, quadruples) in pending {
        for quadruple in &quadruples {
            let outcome = state.graph.insert_edge(quadruple, &chunk.id);
            chunk.extracted_edges.insert(outcome.edge_id);
            if outcome.inserted {
                delta.new_edges.insert(outcome.edge_id);
                touched_nodes.insert(quadruple.timestamp);
                delta
                    .new_time_nodes
                    .extend(outcome.created_time_nodes.iter().copied());
            }
        }
        state.chunks.insert(chunk);
    }
    for ts in touched_nodes.iter().chain(delta.new_time_nodes.iter()) {
        delta.dirty_time_nodes.insert(*ts);
        delta.dirty_time_nodes.extend(ts.ancestors());
    }

    // phase 3: embeddings for new or changed texts
    embed_missing(state, embedder)?;
    Ok(delta)
}

/// Embed every entity and edge whose current text is absent from the
/// vector indexes. Re-embeds entities whose description changed, since the
/// text then differs from what was embedded.
pub fn embed_missing(state: &mut IndexState, embedder: &dyn EmbeddingProvider) -> Result<()> {
    let mut entity_texts = Vec::new();
    let mut entity_ids = Vec::new();
    for entity in state.graph.entities().values() {
        if !state.entity_vectors.contains(entity.id.0)
            || state.embedded_entity_texts.get(&entity.id.0) != Some(&entity_text(entity))
        {
            entity_ids.push(entity.id.0);
            entity_texts.push(entity_text(entity));
        }
    }
    if !entity_texts.is_empty() {
        let vectors = embedder.embed(&entity_texts)?;
        for ((id, vec), text) in entity_ids.iter().zip(vectors).zip(entity_texts) {
            state.entity_vectors.insert(*id, vec)?;
            state.embedded_entity_texts.insert(*id, text);
        }
    }

    let mut edge_texts = Vec::new();
    let mut edge_ids = Vec::new();
    for edge in state.graph.edges().values() {
        if !state.edge_vectors.contains(edge.id.0) {
            edge_ids.push(edge.id.0);
            edge_texts.push(edge_text(&state.graph, edge));
        }
    }
    if !edge_texts.is_empty() {
        let vectors = embedder.embed(&edge_texts)?;
        for (id, vec) in edge_ids.into_iter().zip(vectors) {
            state.edge_vectors.insert(id, vec)?;
        }
    }
    Ok(())
}

fn entity_text(entity: &crate::graph::Entity) -> String {
    if entity.description.is_empty() {
        entity.name.clone()
    } else {
        format!("{}: {}", entity.name, entity.description)
    }
}

/// Text an edge embeds as: endpoint names plus the relation description.
pub fn edge_text(graph: &crate::graph::BiLevelGraph, edge: &TemporalEdge) -> String {
    format!(
        "{} ; {} ; {}",
        graph.entity_name(edge.head),
        graph.entity_name(edge.tail),
        edge.relation
    )
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
