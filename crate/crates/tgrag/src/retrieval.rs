//! Query-time pipeline.
//!
//! Local retrieval: identify the query's time scope, retrieve the top-K
//! relation edges by cosine similarity, run Personalized PageRank from the
//! temporally focused seed entities, score edges and chunks, and greedily
//! pack chunks into the context budget. Global retrieval gathers top chunks
//! plus the time reports of the scope nodes, distills atomic points from
//! each evidence item, and synthesizes a single answer.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::embed::{EmbeddingProvider, Vector};
use crate::engine::IndexState;
use crate::error::{Error, Result};
use crate::graph::{BiLevelGraph, ChunkId, EdgeId, EntityId};
use crate::ppr;
use crate::prompts::{self, TemplateSet};
use crate::provider::{ChatRequest, LlmProvider, MeterReading};
use crate::time::{Granularity, Timestamp};
use crate::tokenize::Tokenizer;
use crate::wire;

pub const REFUSAL_ANSWER: &str = "No explicit evidence for the question";
const LOCAL_RESPONSE_FORMAT: &str = "A direct, concise factual answer.";
const GLOBAL_RESPONSE_TYPE: &str = "Multi-paragraph analytical answer in markdown.";

// ---------------------------------------------------------------------------
// Time scope
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScopeLogic {
    At,
    Before,
    After,
    Between,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeScope {
    pub logic: ScopeLogic,
    pub anchors: Vec<Timestamp>,
    /// The resolved time-node set the query requires.
    pub resolved: BTreeSet<Timestamp>,
}

impl TimeScope {
    pub fn none() -> Self {
        TimeScope {
            logic: ScopeLogic::None,
            anchors: Vec::new(),
            resolved: BTreeSet::new(),
        }
    }
}

/// Ask the provider for the query's temporal expressions and resolve them
/// against the time hierarchy. Grammar violations and unparseable output
/// degrade to a `None` scope; only provider failures propagate.
pub fn identify_time_scope(
    query: &str,
    provider: &dyn LlmProvider,
    graph: &BiLevelGraph,
    templates: &TemplateSet,
    cfg: &EngineConfig,
) -> Result<TimeScope> {
    let prompt = templates.render(prompts::TIME_SCOPE, &[("input_text", query)])?;
    let req = ChatRequest::new(prompts::TIME_SCOPE, prompt, 128);
    let resp = cfg.retry.run(|| provider.complete(&req))?;
    Ok(parse_scope_response(&resp.text, graph))
}

fn parse_scope_response(text: &str, graph: &BiLevelGraph) -> TimeScope {
    for record in wire::parse_records(text) {
        if record.len() < 3 || !record[0].eq_ignore_ascii_case("entity") {
            continue;
        }
        let logic = match record[1].to_lowercase().as_str() {
            "at" => ScopeLogic::At,
            "before" => ScopeLogic::Before,
            "after" => ScopeLogic::After,
            "between" => ScopeLogic::Between,
            _ => continue,
        };
        let anchors: Vec<Timestamp> = if logic == ScopeLogic::Between {
            if record.len() < 4 {
                continue;
            }
            let (Ok(a), Ok(b)) = (record[2].parse(), record[3].parse()) else {
                continue;
            };
            let (a, b): (Timestamp, Timestamp) = (a, b);
            if a.granularity() != b.granularity() {
                continue;
            }
            if a <= b {
                vec![a, b]
            } else {
                vec![b, a]
            }
        } else {
            let Ok(a) = record[2].parse() else { continue };
            vec![a]
        };
        let resolved = expand_scope(logic, &anchors, graph);
        return TimeScope {
            logic,
            anchors,
            resolved,
        };
    }
    TimeScope::none()
}

/// Resolve scope anchors to the concrete time-node set. `At` is the anchor
/// itself; `Between` enumerates the calendar range at the anchors'
/// granularity; `Before`/`After` are strict and clipped to the timestamps
/// present in the hierarchy.
pub fn expand_scope(
    logic: ScopeLogic,
    anchors: &[Timestamp],
    graph: &BiLevelGraph,
) -> BTreeSet<Timestamp> {
    match (logic, anchors) {
        (ScopeLogic::At, [anchor]) => BTreeSet::from([*anchor]),
        (ScopeLogic::Between, [a, b]) => Timestamp::range_inclusive(a, b)
            .map(|v| v.into_iter().collect())
            .unwrap_or_default(),
        (ScopeLogic::Before, [anchor]) => graph
            .time_nodes()
            .keys()
            .filter(|t| t.granularity() == anchor.granularity() && *t < anchor)
            .copied()
            .collect(),
        (ScopeLogic::After, [anchor]) => graph
            .time_nodes()
            .keys()
            .filter(|t| t.granularity() == anchor.granularity() && *t > anchor)
            .copied()
            .collect(),
        _ => BTreeSet::new(),
    }
}

// ---------------------------------------------------------------------------
// Scoring modes
// ---------------------------------------------------------------------------

/// Edge scoring variants; the non-default ones reproduce ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoringMode {
    /// Temporal indicator × summed PPR endpoint scores.
    #[default]
    Full,
    /// Temporal indicator × query-edge similarity; no graph propagation.
    NoPpr,
    /// Standard PageRank endpoint scores; no temporal constraint.
    NoTemporal,
    /// Query-edge similarity only.
    NoTemporalNoPpr,
    /// Timestamp-blind scoring for static-graph comparisons; scores like
    /// `NoTemporalNoPpr`.
    Static,
}

impl ScoringMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScoringMode::Full => "full",
            ScoringMode::NoPpr => "no-ppr",
            ScoringMode::NoTemporal => "no-temporal",
            ScoringMode::NoTemporalNoPpr => "no-temporal-no-ppr",
            ScoringMode::Static => "static",
        }
    }
}

impl fmt::Display for ScoringMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoringMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_lowercase().replace('_', "-").as_str() {
            "full" => Ok(ScoringMode::Full),
            "no-ppr" => Ok(ScoringMode::NoPpr),
            "no-temporal" => Ok(ScoringMode::NoTemporal),
            "no-temporal-no-ppr" => Ok(ScoringMode::NoTemporalNoPpr),
            "static" => Ok(ScoringMode::Static),
            other => Err(Error::InvalidArgument(format!(
                "unknown scoring mode {other:?} (expected full, no-ppr, no-temporal, no-temporal-no-ppr, static)"
            ))),
        }
    }
}

// ---------------------------------------------------------------------------
// Subgraph positioning
// ---------------------------------------------------------------------------

/// Query-specific subgraph: top-K edges with their query similarity γ, the
/// induced entity set, and the temporally focused seed entities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySubgraph {
    pub edges: Vec<(EdgeId, f64)>,
    pub entities: BTreeSet<EntityId>,
    pub seeds: BTreeSet<EntityId>,
}

impl QuerySubgraph {
    pub fn empty() -> Self {
        QuerySubgraph {
            edges: Vec::new(),
            entities: BTreeSet::new(),
            seeds: BTreeSet::new(),
        }
    }

    pub fn gamma(&self) -> BTreeMap<EdgeId, f64> {
        self.edges.iter().copied().collect()
    }
}

/// Retrieve the top-k edges for the query embedding and derive seeds from
/// the scope. Falls back to seeding every subgraph entity when the scope is
/// empty or matches nothing.
pub fn position_subgraph(
    query_vec: &Vector,
    state: &IndexState,
    scope: &BTreeSet<Timestamp>,
    k: usize,
) -> Result<QuerySubgraph> {
    if state.edge_vectors.is_empty() {
        return Err(Error::EmptyIndex);
    }
    let top = state.edge_vectors.top_k(query_vec, k)?;
    let edges: Vec<(EdgeId, f64)> = top.into_iter().map(|(id, g)| (EdgeId(id), g)).collect();
    let mut entities = BTreeSet::new();
    let mut seeds = BTreeSet::new();
    for (edge_id, _) in &edges {
        let edge = state
            .graph
            .edge(*edge_id)
            .ok_or_else(|| Error::CorruptSnapshot(format!("vector for unknown edge {edge_id}")))?;
        entities.insert(edge.head);
        entities.insert(edge.tail);
        if BiLevelGraph::timestamp_in_scope(&edge.timestamp, scope) {
            seeds.insert(edge.head);
            seeds.insert(edge.tail);
        }
    }
    if seeds.is_empty() {
        seeds = entities.clone();
    }
    Ok(QuerySubgraph {
        edges,
        entities,
        seeds,
    })
}

/// Entity relevance per scoring mode. Similarity-only modes need none.
pub fn entity_scores(
    subgraph: &QuerySubgraph,
    graph: &BiLevelGraph,
    mode: ScoringMode,
) -> Result<BTreeMap<EntityId, f64>> {
    let endpoint_pairs = || -> Result<Vec<(EntityId, EntityId)>> {
        subgraph
            .edges
            .iter()
            .map(|(id, _)| {
                graph
                    .edge(*id)
                    .map(|e| (e.head, e.tail))
                    .ok_or_else(|| Error::CorruptSnapshot(format!("unknown edge {id}")))
            })
            .collect()
    };
    match mode {
        ScoringMode::Full => {
            ppr::personalized_pagerank(&subgraph.entities, &endpoint_pairs()?, &subgraph.seeds)
        }
        ScoringMode::NoTemporal => ppr::standard_pagerank(&subgraph.entities, &endpoint_pairs()?),
        ScoringMode::NoPpr | ScoringMode::NoTemporalNoPpr | ScoringMode::Static => {
            Ok(BTreeMap::new())
        }
    }
}

/// Edge scores per mode. In the temporal modes, edges whose timestamps fall
/// outside the scope score exactly zero.
pub fn score_edges(
    subgraph: &QuerySubgraph,
    entity_scores: &BTreeMap<EntityId, f64>,
    scope: &BTreeSet<Timestamp>,
    mode: ScoringMode,
    graph: &BiLevelGraph,
) -> BTreeMap<EdgeId, f64> {
    let mut out = BTreeMap::new();
    for (edge_id, gamma) in &subgraph.edges {
        let Some(edge) = graph.edge(*edge_id) else {
            continue;
        };
        let endpoint_sum = || {
            entity_scores.get(&edge.head).copied().unwrap_or(0.0)
                + entity_scores.get(&edge.tail).copied().unwrap_or(0.0)
        };
        let in_scope = BiLevelGraph::timestamp_in_scope(&edge.timestamp, scope);
        let score = match mode {
            ScoringMode::Full => {
                if in_scope {
                    endpoint_sum()
                } else {
                    0.0
                }
            }
            ScoringMode::NoPpr => {
                if in_scope {
                    *gamma
                } else {
                    0.0
                }
            }
            ScoringMode::NoTemporal => endpoint_sum(),
            ScoringMode::NoTemporalNoPpr | ScoringMode::Static => *gamma,
        };
        out.insert(*edge_id, score);
    }
    out
}

// ---------------------------------------------------------------------------
// Chunk scoring and packing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    pub chunk_id: ChunkId,
    pub score: f64,
    pub token_count: usize,
}

/// Score every chunk: the product of (1 + γ) over the chunk's retrieved
/// edges times the sum of those edges' scores. Chunks with no retrieved
/// edges score zero. With `sum_all_retrieved` the sum instead runs over
/// the whole retrieved edge set, making it constant across chunks so only
/// the product term ranks; kept as a comparison mode.
pub fn score_chunks(
    state: &IndexState,
    subgraph: &QuerySubgraph,
    edge_scores: &BTreeMap<EdgeId, f64>,
    sum_all_retrieved: bool,
) -> Vec<ScoredChunk> {
    let gamma = subgraph.gamma();
    let global_sum: f64 = edge_scores.values().sum();
    let mut scored: Vec<ScoredChunk> = state
        .chunks
        .iter()
        .map(|(id, chunk)| {
            let retrieved: Vec<EdgeId> = chunk
                .extracted_edges
                .iter()
                .filter(|e| gamma.contains_key(e))
                .copied()
                .collect();
            let score = if retrieved.is_empty() {
                0.0
            } else {
                let weight: f64 = retrieved.iter().map(|e| 1.0 + gamma[e]).product();
                let sum = if sum_all_retrieved {
                    global_sum
                } else {
                    retrieved
                        .iter()
                        .map(|e| edge_scores.get(e).copied().unwrap_or(0.0))
                        .sum()
                };
                weight * sum
            };
            ScoredChunk {
                chunk_id: id.clone(),
                score,
                token_count: chunk.token_count(),
            }
        })
        .collect();
    scored.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("scores are finite")
            .then_with(|| a.chunk_id.cmp(&b.chunk_id))
    });
    scored
}

/// Greedy packing: take chunks in order and stop at the first chunk whose
/// inclusion would exceed the budget. Never exceeds the budget.
pub fn pack_context(sorted_chunks: &[ScoredChunk], budget: usize) -> Vec<ChunkId> {
    let mut used = 0;
    let mut packed = Vec::new();
    for chunk in sorted_chunks {
        if used + chunk.token_count > budget {
            break;
        }
        used += chunk.token_count;
        packed.push(chunk.chunk_id.clone());
    }
    packed
}

// ---------------------------------------------------------------------------
// Answer records and traces
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub question: String,
    pub mode: String,
    pub scoring_mode: ScoringMode,
    pub answer: String,
    pub scope: TimeScope,
    /// Chunk ids packed into the generation context (local) or selected as
    /// chunk evidence (global).
    pub packed_chunks: Vec<ChunkId>,
    /// Evidence item ids consumed by global synthesis.
    pub evidence: Vec<String>,
    pub trace: serde_json::Value,
}

#[derive(Debug, Clone, Serialize)]
struct TraceHeader<'a> {
    top_k: usize,
    local_budget: usize,
    global_budget: usize,
    chunk_fraction: f64,
    scoring_mode: ScoringMode,
    chunk_sum_all_retrieved: bool,
    index_config_hash: &'a str,
}

#[derive(Debug, Clone, Serialize)]
struct EdgeTraceRow {
    edge: EdgeId,
    gamma: f64,
    head: String,
    tail: String,
    timestamp: Timestamp,
    chunk: ChunkId,
}

/// Everything a query shares between local and global retrieval.
struct ScoredPipeline {
    scope: TimeScope,
    subgraph: QuerySubgraph,
    entity_scores: BTreeMap<EntityId, f64>,
    edge_scores: BTreeMap<EdgeId, f64>,
    chunk_scores: Vec<ScoredChunk>,
}

/// Borrowed context for answering one query.
pub struct QueryCtx<'a> {
    pub state: &'a IndexState,
    pub llm: &'a dyn LlmProvider,
    pub embedder: &'a dyn EmbeddingProvider,
    pub templates: &'a TemplateSet,
    pub cfg: &'a EngineConfig,
    pub tokenizer: &'a dyn Tokenizer,
    pub scoring_mode: ScoringMode,
}

fn run_scoring(ctx: &QueryCtx<'_>, query: &str) -> Result<ScoredPipeline> {
    let scope = identify_time_scope(query, ctx.llm, &ctx.state.graph, ctx.templates, ctx.cfg)?;
    let query_vec = ctx
        .embedder
        .embed(std::slice::from_ref(&query.to_string()))?
        .remove(0);
    let subgraph = match position_subgraph(&query_vec, ctx.state, &scope.resolved, ctx.cfg.top_k) {
        Ok(sg) => sg,
        // an index with no edges still answers, through the prompt contract
        Err(Error::EmptyIndex) => QuerySubgraph::empty(),
        Err(e) => return Err(e),
    };
    let entity_scores = if subgraph.entities.is_empty() {
        BTreeMap::new()
    } else {
        entity_scores(&subgraph, &ctx.state.graph, ctx.scoring_mode)?
    };
    let edge_scores = score_edges(
        &subgraph,
        &entity_scores,
        &scope.resolved,
        ctx.scoring_mode,
        &ctx.state.graph,
    );
    let chunk_scores = score_chunks(
        ctx.state,
        &subgraph,
        &edge_scores,
        ctx.cfg.chunk_sum_all_retrieved,
    );
    Ok(ScoredPipeline {
        scope,
        subgraph,
        entity_scores,
        edge_scores,
        chunk_scores,
    })
}

fn edge_trace(state: &IndexState, subgraph: &QuerySubgraph) -> Vec<EdgeTraceRow> {
    subgraph
        .edges
        .iter()
        .filter_map(|(id, gamma)| {
            state.graph.edge(*id).map(|e| EdgeTraceRow {
                edge: *id,
                gamma: *gamma,
                head: state.graph.entity_name(e.head).to_string(),
                tail: state.graph.entity_name(e.tail).to_string(),
                timestamp: e.timestamp,
                chunk: e.source_chunk.clone(),
            })
        })
        .collect()
}

fn display_keyed<K: fmt::Display, V: Clone>(map: &BTreeMap<K, V>) -> BTreeMap<String, V> {
    map.iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect()
}

// ---------------------------------------------------------------------------
// Local retrieval
// ---------------------------------------------------------------------------

/// Full local pipeline: scope → subgraph → PPR → edge/chunk scores → greedy
/// packing → generation. The returned record carries a per-stage trace.
pub fn answer_local(ctx: &QueryCtx<'_>, query: &str) -> Result<AnswerRecord> {
    let pipeline = run_scoring(ctx, query)?;
    let packed = pack_context(&pipeline.chunk_scores, ctx.cfg.local_budget);

    let chunks_section = if packed.is_empty() {
        "(no chunks retrieved)".to_string()
    } else {
        packed
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let text = ctx
                    .state
                    .chunks
                    .get(id)
                    .map(|c| c.text.as_str())
                    .unwrap_or("");
                format!("[Chunk {} | {}]\n{}", i + 1, id, text)
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    };
    let prompt = ctx.templates.render(
        prompts::LOCAL_QA,
        &[
            ("chunks", chunks_section.as_str()),
            ("query", query),
            ("response_format", LOCAL_RESPONSE_FORMAT),
        ],
    )?;
    let req = ChatRequest::new(prompts::LOCAL_QA, prompt, ctx.cfg.max_answer_tokens);
    let resp = ctx.cfg.retry.run(|| ctx.llm.complete(&req))?;

    let trace = serde_json::json!({
        "header": TraceHeader {
            top_k: ctx.cfg.top_k,
            local_budget: ctx.cfg.local_budget,
            global_budget: ctx.cfg.global_budget,
            chunk_fraction: ctx.cfg.chunk_fraction,
            scoring_mode: ctx.scoring_mode,
            chunk_sum_all_retrieved: ctx.cfg.chunk_sum_all_retrieved,
            index_config_hash: &ctx.state.config_hash,
        },
        "scope": pipeline.scope,
        "subgraph": edge_trace(ctx.state, &pipeline.subgraph),
        "seeds": pipeline.subgraph.seeds,
        "entity_scores": display_keyed(&pipeline.entity_scores),
        "edge_scores": display_keyed(&pipeline.edge_scores),
        "chunk_scores": pipeline.chunk_scores,
        "packed": packed,
        "generation": MeterReading {
            prompt_tokens: resp.prompt_tokens,
            completion_tokens: resp.completion_tokens,
        },
    });

    Ok(AnswerRecord {
        question: query.to_string(),
        mode: "local".into(),
        scoring_mode: ctx.scoring_mode,
        answer: resp.text,
        scope: pipeline.scope,
        packed_chunks: packed,
        evidence: Vec::new(),
        trace,
    })
}

// ---------------------------------------------------------------------------
// Global retrieval
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvidenceKind {
    Chunk,
    Report,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub id: String,
    pub kind: EvidenceKind,
    pub text: String,
    pub token_count: usize,
}

/// An atomic point distilled from one evidence item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicPoint {
    pub description: String,
    pub importance: f64,
    pub confidence: f64,
}

/// Gather global evidence: the highest-scoring chunks packed into the chunk
/// share of the budget, then the reports of the scope's time nodes packed
/// into the remainder, ordered coarse-to-fine then chronologically. A scope
/// node present in the hierarchy but lacking a report means the index is
/// stale and is an error; with no scope at all, year-level reports stand in.
pub fn collect_global_evidence(
    ctx: &QueryCtx<'_>,
    pipeline: &ScoredPipelinePublic,
) -> Result<Vec<EvidenceItem>> {
    let (chunk_budget, report_budget) = ctx.cfg.global_split();

    let packed_chunks = pack_context(&pipeline.chunk_scores, chunk_budget);

    let scope_nodes: Vec<Timestamp> = if pipeline.scope.resolved.is_empty() {
        ctx.state
            .graph
            .time_nodes()
            .keys()
            .filter(|t| t.granularity() == Granularity::Year)
            .copied()
            .collect()
    } else {
        let mut nodes = Vec::new();
        for ts in &pipeline.scope.resolved {
            if ctx.state.graph.time_nodes().contains_key(ts) {
                if ctx.state.reports.get(ts).is_none() {
                    return Err(Error::MissingReport(ts.to_string()));
                }
                nodes.push(*ts);
            }
        }
        nodes
    };
    let mut ordered = scope_nodes;
    ordered.sort_by(|a, b| {
        a.granularity()
            .rank()
            .cmp(&b.granularity().rank())
            .then(a.cmp(b))
    });

    let mut evidence = Vec::new();
    let mut used = 0usize;
    for ts in ordered {
        let Some(report) = ctx.state.reports.get(&ts) else {
            continue;
        };
        if used + report.token_count > report_budget {
            break;
        }
        used += report.token_count;
        evidence.push(EvidenceItem {
            id: format!("report:{ts}"),
            kind: EvidenceKind::Report,
            text: report.text.clone(),
            token_count: report.token_count,
        });
    }
    for id in &packed_chunks {
        if let Some(chunk) = ctx.state.chunks.get(id) {
            evidence.push(EvidenceItem {
                id: format!("chunk:{id}"),
                kind: EvidenceKind::Chunk,
                text: chunk.text.clone(),
                token_count: chunk.token_count(),
            });
        }
    }
    Ok(evidence)
}

/// Re-exported pipeline results so global stages can reuse local scoring.
pub struct ScoredPipelinePublic {
    pub scope: TimeScope,
    pub subgraph: QuerySubgraph,
    pub entity_scores: BTreeMap<EntityId, f64>,
    pub edge_scores: BTreeMap<EdgeId, f64>,
    pub chunk_scores: Vec<ScoredChunk>,
}

impl From<ScoredPipeline> for ScoredPipelinePublic {
    fn from(p: ScoredPipeline) -> Self {
        ScoredPipelinePublic {
            scope: p.scope,
            subgraph: p.subgraph,
            entity_scores: p.entity_scores,
            edge_scores: p.edge_scores,
            chunk_scores: p.chunk_scores,
        }
    }
}

/// Run the shared scoring stages for a query.
pub fn score_query(ctx: &QueryCtx<'_>, query: &str) -> Result<ScoredPipelinePublic> {
    run_scoring(ctx, query).map(Into::into)
}

/// Distill one evidence item into atomic points. The provider must return a
/// strict JSON list; malformed points are dropped and unparseable output
/// yields an empty list.
pub fn extract_points(
    evidence: &EvidenceItem,
    query: &str,
    ctx: &QueryCtx<'_>,
) -> Result<Vec<AtomicPoint>> {
    let prompt = ctx.templates.render(
        prompts::POINT_EXTRACTION,
        &[
            ("query", query),
            ("evidence_id", evidence.id.as_str()),
            ("evidence", evidence.text.as_str()),
        ],
    )?;
    let req = ChatRequest::new(prompts::POINT_EXTRACTION, prompt, ctx.cfg.max_answer_tokens);
    let resp = ctx.cfg.retry.run(|| ctx.llm.complete(&req))?;
    Ok(parse_points(&resp.text))
}

pub fn parse_points(text: &str) -> Vec<AtomicPoint> {
    let trimmed = text.trim();
    let json_slice = match (trimmed.find('['), trimmed.rfind(']')) {
        (Some(start), Some(end)) if end > start => &trimmed[start..=end],
        _ => return Vec::new(),
    };
    let Ok(values) = serde_json::from_str::<Vec<serde_json::Value>>(json_slice) else {
        return Vec::new();
    };
    values
        .into_iter()
        .filter_map(|v| {
            let description = v.get("description")?.as_str()?.trim().to_string();
            let importance = v.get("importance")?.as_f64()?;
            let confidence = v.get("confidence")?.as_f64()?;
            if description.is_empty() || !importance.is_finite() || !confidence.is_finite() {
                return None;
            }
            Some(AtomicPoint {
                description,
                importance,
                confidence,
            })
        })
        .collect()
}

fn render_point(p: &AtomicPoint) -> String {
    format!(
        "IMPORTANCE {:.4} | CONFIDENCE {:.4} | {}",
        p.importance, p.confidence, p.description
    )
}

/// Outcome of the confidence-based trimming stage.
#[derive(Debug, Clone, Serialize)]
pub struct PointSelection {
    pub kept: Vec<AtomicPoint>,
    pub dropped: Vec<AtomicPoint>,
}

/// Drop lowest-confidence points (ties: lower importance, then
/// lexicographic description) until the serialized points fit the budget,
/// then order survivors by descending importance.
pub fn select_points(
    points: Vec<AtomicPoint>,
    budget: usize,
    tokenizer: &dyn Tokenizer,
) -> PointSelection {
    let mut remaining = points;
    // removal order: ascending confidence, then ascending importance, then description
    remaining.sort_by(|a, b| {
        a.confidence
            .partial_cmp(&b.confidence)
            .expect("finite")
            .then(a.importance.partial_cmp(&b.importance).expect("finite"))
            .then_with(|| a.description.cmp(&b.description))
    });
    let total_tokens = |pts: &[AtomicPoint]| -> usize {
        pts.iter().map(|p| tokenizer.count(&render_point(p))).sum()
    };
    let mut dropped = Vec::new();
    while !remaining.is_empty() && total_tokens(&remaining) > budget {
        dropped.push(remaining.remove(0));
    }
    remaining.sort_by(|a, b| {
        b.importance
            .partial_cmp(&a.importance)
            .expect("finite")
            .then_with(|| a.description.cmp(&b.description))
    });
    PointSelection {
        kept: remaining,
        dropped,
    }
}

/// Single synthesis call over the surviving points; zero survivors yield
/// the refusal answer without a provider call.
pub fn synthesize_global(
    selection: &PointSelection,
    query: &str,
    ctx: &QueryCtx<'_>,
) -> Result<String> {
    if selection.kept.is_empty() {
        return Ok(REFUSAL_ANSWER.to_string());
    }
    let report_data = selection
        .kept
        .iter()
        .map(render_point)
        .collect::<Vec<_>>()
        .join("\n");
    let prompt = ctx.templates.render(
        prompts::GLOBAL_SYNTHESIS,
        &[
            ("query", query),
            ("response_type", GLOBAL_RESPONSE_TYPE),
            ("report_data", report_data.as_str()),
        ],
    )?;
    let req = ChatRequest::new(prompts::GLOBAL_SYNTHESIS, prompt, ctx.cfg.max_answer_tokens);
    Ok(ctx.cfg.retry.run(|| ctx.llm.complete(&req))?.text)
}

/// Report-driven global pipeline: evidence → per-item points → confidence
/// trim → importance ordering → one synthesis call.
pub fn answer_global(ctx: &QueryCtx<'_>, query: &str) -> Result<AnswerRecord> {
    let pipeline: ScoredPipelinePublic = run_scoring(ctx, query)?.into();
    let evidence = collect_global_evidence(ctx, &pipeline)?;

    let mut points = Vec::new();
    let mut per_evidence = Vec::new();
    for item in &evidence {
        let extracted = extract_points(item, query, ctx)?;
        per_evidence.push(serde_json::json!({
            "evidence": item.id,
            "points": extracted.len(),
        }));
        points.extend(extracted);
    }
    let selection = select_points(points, ctx.cfg.global_budget, ctx.tokenizer);
    let answer = synthesize_global(&selection, query, ctx)?;

    let packed_chunks: Vec<ChunkId> = evidence
        .iter()
        .filter(|e| e.kind == EvidenceKind::Chunk)
        .map(|e| e.id.trim_start_matches("chunk:").to_string())
        .collect();
    let evidence_ids: Vec<String> = evidence.iter().map(|e| e.id.clone()).collect();

    let trace = serde_json::json!({
        "header": TraceHeader {
            top_k: ctx.cfg.top_k,
            local_budget: ctx.cfg.local_budget,
            global_budget: ctx.cfg.global_budget,
            chunk_fraction: ctx.cfg.chunk_fraction,
            scoring_mode: ctx.scoring_mode,
            chunk_sum_all_retrieved: ctx.cfg.chunk_sum_all_retrieved,
            index_config_hash: &ctx.state.config_hash,
        },
        "scope": pipeline.scope,
        "evidence": evidence_ids,
        "points_per_evidence": per_evidence,
        "points_kept": selection.kept,
        "points_dropped": selection.dropped,
    });

    Ok(AnswerRecord {
        question: query.to_string(),
        mode: "global".into(),
        scoring_mode: ctx.scoring_mode,
        answer,
        scope: pipeline.scope,
        packed_chunks,
        evidence: evidence_ids,
        trace,
    })
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
