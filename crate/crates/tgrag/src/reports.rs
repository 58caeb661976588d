//! Multi-granularity time reports.
//!
//! Every time node carries a report summarizing its attached facts and the
//! reports of its children. Generation runs bottom-up (days, months,
//! quarters, years) so parents always see finished child reports. A
//! fingerprint over the inputs (attached edge ids + child fingerprints)
//! makes regeneration skippable when nothing changed, which is what keeps
//! incremental updates cheap.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex_string, EngineConfig};
use crate::engine::IndexState;
use crate::error::{Error, Result};
use crate::graph::BiLevelGraph;
use crate::ingest::UpdateDelta;
use crate::prompts::{self, TemplateSet};
use crate::provider::{ChatRequest, LlmProvider};
use crate::time::Timestamp;
use crate::tokenize::Tokenizer;

pub const PLACEHOLDER_REPORT: &str = "No recorded activity in this period.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeReport {
    pub time_id: Timestamp,
    pub text: String,
    pub token_count: usize,
    /// Hash of (attached edge ids, child report fingerprints).
    pub input_fingerprint: String,
    /// Monotone version within one store.
    pub generated_at: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportStore {
    reports: BTreeMap<Timestamp, TimeReport>,
    version: u64,
}

impl ReportStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    pub fn get(&self, ts: &Timestamp) -> Option<&TimeReport> {
        self.reports.get(ts)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Timestamp, &TimeReport)> {
        self.reports.iter()
    }

    pub fn insert(&mut self, report: TimeReport) {
        self.version = self.version.max(report.generated_at);
        self.reports.insert(report.time_id, report);
    }

    fn next_version(&mut self) -> u64 {
        self.version += 1;
        self.version
    }
}

// ---------------------------------------------------------------------------
// Fingerprints and prompt assembly
// ---------------------------------------------------------------------------

/// Fingerprint of a node's report inputs. Requires child reports to exist.
pub fn input_fingerprint(
    node_id: &Timestamp,
    graph: &BiLevelGraph,
    store: &ReportStore,
) -> Result<String> {
    let node = graph
        .time_nodes()
        .get(node_id)
        .ok_or_else(|| Error::InvalidArgument(format!("no time node {node_id}")))?;
    let mut hasher = Sha256::new();
    hasher.update(b"edges:");
    for edge in &node.attached_edges {
        hasher.update(edge.0.to_le_bytes());
    }
    hasher.update(b"|children:");
    for child in &node.children {
        let child_report = store
            .get(child)
            .ok_or_else(|| Error::MissingChildReport(child.to_string()))?;
        hasher.update(child.to_string().as_bytes());
        hasher.update(b"=");
        hasher.update(child_report.input_fingerprint.as_bytes());
        hasher.update(b";");
    }
    Ok(hex_string(&hasher.finalize()))
}

fn assemble_sections(
    node_id: &Timestamp,
    graph: &BiLevelGraph,
    store: &ReportStore,
    cfg: &EngineConfig,
    tokenizer: &dyn Tokenizer,
) -> Result<(String, String)> {
    let node = graph.time_nodes().get(node_id).expect("caller checked");

    let mut child_lines = Vec::new();
    for child in &node.children {
        let report = store
            .get(child)
            .ok_or_else(|| Error::MissingChildReport(child.to_string()))?;
        child_lines.push(format!("[{}] {}", child, report.text));
    }
    let child_section = if child_lines.is_empty() {
        "(none)".to_string()
    } else {
        child_lines.join("\n")
    };

    // Attached edges all carry this node's timestamp, so recency cannot
    // order them; fall back to the alphabetical tie-break and fill
    // whatever input budget the child reports leave.
    let mut edge_lines: Vec<String> = node
        .attached_edges
        .iter()
        .filter_map(|id| graph.edge(*id))
        .map(|e| {
            format!(
                "- {} | {} | {} [{}]",
                graph.entity_name(e.head),
                graph.entity_name(e.tail),
                e.relation,
                e.timestamp
            )
        })
        .collect();
    edge_lines.sort();
    let mut used = tokenizer.count(&child_section);
    let mut kept = Vec::new();
    for line in edge_lines {
        let cost = tokenizer.count(&line);
        if used + cost > cfg.report_input_limit && !kept.is_empty() {
            break;
        }
        used += cost;
        kept.push(line);
        if used >= cfg.report_input_limit {
            break;
        }
    }
    let edge_section = if kept.is_empty() {
        "(none)".to_string()
    } else {
        kept.join("\n")
    };
    Ok((edge_section, child_section))
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

/// Generate the report for one node. Child reports must already exist.
/// Nodes with no attached edges and no children get a placeholder without a
/// provider call.
pub fn generate_report(
    node_id: &Timestamp,
    graph: &BiLevelGraph,
    store: &mut ReportStore,
    provider: &dyn LlmProvider,
    templates: &TemplateSet,
    cfg: &EngineConfig,
    tokenizer: &dyn Tokenizer,
) -> Result<TimeReport> {
    let node = graph
        .time_nodes()
        .get(node_id)
        .ok_or_else(|| Error::InvalidArgument(format!("no time node {node_id}")))?;
    let fingerprint = input_fingerprint(node_id, graph, store)?;

    let text = if node.attached_edges.is_empty() && node.children.is_empty() {
        PLACEHOLDER_REPORT.to_string()
    } else {
        let (edges, children) = assemble_sections(node_id, graph, store, cfg, tokenizer)?;
        let label = node_id.to_string();
        let prompt = templates.render(
            prompts::TIME_REPORT,
            &[
                ("time_label", label.as_str()),
                ("edges", edges.as_str()),
                ("child_reports", children.as_str()),
            ],
        )?;
        let req = ChatRequest::new(prompts::TIME_REPORT, prompt, cfg.max_report_tokens);
        cfg.retry.run(|| provider.complete(&req))?.text
    };

    let report = TimeReport {
        time_id: *node_id,
        token_count: tokenizer.count(&text),
        text,
        input_fingerprint: fingerprint,
        generated_at: store.next_version(),
    };
    store.insert(report.clone());
    Ok(report)
}

fn with_node_context(node_id: &Timestamp, err: Error) -> Error {
    match err {
        Error::Provider { kind, message } => Error::Provider {
            kind,
            message: format!("time node {node_id}: {message}"),
        },
        other => other,
    }
}

/// Bottom-up order over a set of timestamps: finest granularity first, then
/// chronological within a level.
fn bottom_up(mut nodes: Vec<Timestamp>) -> Vec<Timestamp> {
    nodes.sort_by(|a, b| {
        b.granularity()
            .rank()
            .cmp(&a.granularity().rank())
            .then(a.cmp(b))
    });
    nodes
}

/// Generate reports for every time node, bottom-up. Nodes whose stored
/// report already matches the current input fingerprint are skipped.
/// Returns the regenerated node ids in generation order.
pub fn generate_all(
    state: &mut IndexState,
    provider: &dyn LlmProvider,
    templates: &TemplateSet,
    cfg: &EngineConfig,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<Timestamp>> {
    let order = bottom_up(state.graph.time_nodes().keys().copied().collect());
    let mut regenerated = Vec::new();
    for node_id in order {
        let fingerprint = input_fingerprint(&node_id, &state.graph, &state.reports)
            .map_err(|e| with_node_context(&node_id, e))?;
        if state
            .reports
            .get(&node_id)
            .is_some_and(|r| r.input_fingerprint == fingerprint)
        {
            continue;
        }
        generate_report(
            &node_id,
            &state.graph,
            &mut state.reports,
            provider,
            templates,
            cfg,
            tokenizer,
        )
        .map_err(|e| with_node_context(&node_id, e))?;
        regenerated.push(node_id);
    }
    Ok(regenerated)
}

/// Regenerate exactly the dirty nodes from an update, children before
/// parents. Reports outside the dirty set are left byte-identical.
pub fn refresh_dirty(
    delta: &UpdateDelta,
    state: &mut IndexState,
    provider: &dyn LlmProvider,
    templates: &TemplateSet,
    cfg: &EngineConfig,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<Timestamp>> {
    let order = bottom_up(delta.dirty_time_nodes.iter().copied().collect());
    let mut regenerated = Vec::new();
    for node_id in order {
        generate_report(
            &node_id,
            &state.graph,
            &mut state.reports,
            provider,
            templates,
            cfg,
            tokenizer,
        )
        .map_err(|e| with_node_context(&node_id, e))?;
        regenerated.push(node_id);
    }
    Ok(regenerated)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
