//! Durable snapshots.
//!
//! A snapshot directory holds a manifest, one JSON-lines file per record
//! kind, and the vector indexes in binary with JSON row sidecars (see
//! docs/snapshot-format.md). Saves build a temporary sibling directory and
//! swap it in with renames, so a failed save leaves the prior snapshot
//! untouched.

use std::collections::BTreeMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::embed;
use crate::engine::IndexState;
use crate::error::{Error, Result};
use crate::graph::{BiLevelGraph, Entity, TemporalEdge, TimeNode};
use crate::ingest::{Chunk, ChunkStore};
use crate::reports::{ReportStore, TimeReport};

pub const SNAPSHOT_VERSION: u32 = 1;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ENTITIES_FILE: &str = "entities.jsonl";
pub const EDGES_FILE: &str = "edges.jsonl";
pub const TIME_NODES_FILE: &str = "time_nodes.jsonl";
pub const CHUNKS_FILE: &str = "chunks.jsonl";
pub const REPORTS_FILE: &str = "reports.jsonl";
pub const EDGE_VECTORS_FILE: &str = "edge_vectors.bin";
pub const EDGE_VECTOR_ROWS_FILE: &str = "edge_vectors.rows.json";
pub const ENTITY_VECTORS_FILE: &str = "entity_vectors.bin";
pub const ENTITY_VECTOR_ROWS_FILE: &str = "entity_vectors.rows.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub created: String,
    pub config_hash: String,
    pub counts: BTreeMap<String, u64>,
    pub files: Vec<String>,
}

/// Test hook: invoked after each file is written into the temporary
/// directory; returning an error simulates a crash mid-save.
pub type SaveHook<'a> = &'a dyn Fn(&str) -> Result<()>;

pub fn save(state: &IndexState, dir: &Path) -> Result<Manifest> {
    save_with_hook(state, dir, None)
}

pub fn save_with_hook(state: &IndexState, dir: &Path, hook: Option<SaveHook>) -> Result<Manifest> {
    let parent = dir.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(parent)?;
    let tmp = parent.join(format!(
        ".{}.tmp-{}",
        dir.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "snapshot".into()),
        std::process::id()
    ));
    if tmp.exists() {
        std::fs::remove_dir_all(&tmp)?;
    }
    let result = write_snapshot(state, &tmp, hook);
    match result {
        Ok(manifest) => {
            swap_in(&tmp, dir)?;
            Ok(manifest)
        }
        Err(e) => {
            let _ = std::fs::remove_dir_all(&tmp);
            Err(e)
        }
    }
}

fn swap_in(tmp: &Path, dir: &Path) -> Result<()> {
    if dir.exists() {
        let old = tmp.with_extension("old");
        if old.exists() {
            std::fs::remove_dir_all(&old)?;
        }
        std::fs::rename(dir, &old)?;
        std::fs::rename(tmp, dir)?;
        std::fs::remove_dir_all(&old)?;
    } else {
        std::fs::rename(tmp, dir)?;
    }
    Ok(())
}

fn write_snapshot(state: &IndexState, tmp: &Path, hook: Option<SaveHook>) -> Result<Manifest> {
    std::fs::create_dir_all(tmp)?;
    let fire = |name: &str| -> Result<()> {
        match hook {
            Some(h) => h(name),
            None => Ok(()),
        }
    };

    write_jsonl(&tmp.join(ENTITIES_FILE), state.graph.entities().values())?;
    fire(ENTITIES_FILE)?;
    write_jsonl(&tmp.join(EDGES_FILE), state.graph.edges().values())?;
    fire(EDGES_FILE)?;
    write_jsonl(
        &tmp.join(TIME_NODES_FILE),
        state.graph.time_nodes().values(),
    )?;
    fire(TIME_NODES_FILE)?;
    write_jsonl(&tmp.join(CHUNKS_FILE), state.chunks.iter().map(|(_, c)| c))?;
    fire(CHUNKS_FILE)?;
    write_jsonl(
        &tmp.join(REPORTS_FILE),
        state.reports.iter().map(|(_, r)| r),
    )?;
    fire(REPORTS_FILE)?;

    let edge_rows = embed::save_vectors_to(&tmp.join(EDGE_VECTORS_FILE), &state.edge_vectors)?;
    fire(EDGE_VECTORS_FILE)?;
    write_json(&tmp.join(EDGE_VECTOR_ROWS_FILE), &edge_rows)?;
    fire(EDGE_VECTOR_ROWS_FILE)?;
    let entity_rows =
        embed::save_vectors_to(&tmp.join(ENTITY_VECTORS_FILE), &state.entity_vectors)?;
    fire(ENTITY_VECTORS_FILE)?;
    write_json(&tmp.join(ENTITY_VECTOR_ROWS_FILE), &entity_rows)?;
    fire(ENTITY_VECTOR_ROWS_FILE)?;

    let mut counts = BTreeMap::new();
    counts.insert("entities".into(), state.graph.entities().len() as u64);
    counts.insert("edges".into(), state.graph.edges().len() as u64);
    counts.insert("time_nodes".into(), state.graph.time_nodes().len() as u64);
    counts.insert("chunks".into(), state.chunks.len() as u64);
    counts.insert("reports".into(), state.reports.len() as u64);
    counts.insert("edge_vectors".into(), state.edge_vectors.len() as u64);
    counts.insert("entity_vectors".into(), state.entity_vectors.len() as u64);
    let manifest = Manifest {
        version: SNAPSHOT_VERSION,
        created: chrono::Utc::now().to_rfc3339(),
        config_hash: state.config_hash.clone(),
        counts,
        files: vec![
            ENTITIES_FILE.into(),
            EDGES_FILE.into(),
            TIME_NODES_FILE.into(),
            CHUNKS_FILE.into(),
            REPORTS_FILE.into(),
            EDGE_VECTORS_FILE.into(),
            EDGE_VECTOR_ROWS_FILE.into(),
            ENTITY_VECTORS_FILE.into(),
            ENTITY_VECTOR_ROWS_FILE.into(),
        ],
    };
    write_json(&tmp.join(MANIFEST_FILE), &manifest)?;
    fire(MANIFEST_FILE)?;
    Ok(manifest)
}

pub fn load(dir: &Path) -> Result<IndexState> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(Error::CorruptSnapshot(format!(
            "{} has no {MANIFEST_FILE}",
            dir.display()
        )));
    }
    let manifest: Manifest = read_json(&manifest_path)?;
    if manifest.version != SNAPSHOT_VERSION {
        return Err(Error::Version {
            found: manifest.version,
            expected: SNAPSHOT_VERSION,
        });
    }

    let entities: Vec<Entity> = read_jsonl(&dir.join(ENTITIES_FILE))?;
    let edges: Vec<TemporalEdge> = read_jsonl(&dir.join(EDGES_FILE))?;
    let time_nodes: Vec<TimeNode> = read_jsonl(&dir.join(TIME_NODES_FILE))?;
    let chunks: Vec<Chunk> = read_jsonl(&dir.join(CHUNKS_FILE))?;
    let reports: Vec<TimeReport> = read_jsonl(&dir.join(REPORTS_FILE))?;

    check_count(&manifest, "entities", entities.len())?;
    check_count(&manifest, "edges", edges.len())?;
    check_count(&manifest, "time_nodes", time_nodes.len())?;
    check_count(&manifest, "chunks", chunks.len())?;
    check_count(&manifest, "reports", reports.len())?;

    let edge_rows: Vec<u64> = read_json(&dir.join(EDGE_VECTOR_ROWS_FILE))?;
    let edge_vectors = embed::load_vectors_from(&dir.join(EDGE_VECTORS_FILE), &edge_rows)?;
    let entity_rows: Vec<u64> = read_json(&dir.join(ENTITY_VECTOR_ROWS_FILE))?;
    let entity_vectors = embed::load_vectors_from(&dir.join(ENTITY_VECTORS_FILE), &entity_rows)?;
    check_count(&manifest, "edge_vectors", edge_vectors.len())?;
    check_count(&manifest, "entity_vectors", entity_vectors.len())?;

    let graph = BiLevelGraph::from_records(entities, edges, time_nodes)?;
    let mut chunk_store = ChunkStore::new();
    for chunk in chunks {
        chunk_store.insert(chunk);
    }
    let mut report_store = ReportStore::new();
    for report in reports {
        report_store.insert(report);
    }
    // vectors were current when saved, so seed the re-embed ledger from the
    // entity texts as loaded
    let embedded_entity_texts = graph
        .entities()
        .values()
        .filter(|e| entity_vectors.contains(e.id.0))
        .map(|e| {
            let text = if e.description.is_empty() {
                e.name.clone()
            } else {
                format!("{}: {}", e.name, e.description)
            };
            (e.id.0, text)
        })
        .collect();

    let state = IndexState {
        graph,
        chunks: chunk_store,
        reports: report_store,
        edge_vectors,
        entity_vectors,
        embedded_entity_texts,
        config_hash: manifest.config_hash,
    };
    state.check_integrity()?;
    Ok(state)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    read_json(&dir.join(MANIFEST_FILE))
}

fn check_count(manifest: &Manifest, key: &str, actual: usize) -> Result<()> {
    match manifest.counts.get(key) {
        Some(&expected) if expected == actual as u64 => Ok(()),
        Some(&expected) => Err(Error::CorruptSnapshot(format!(
            "manifest says {expected} {key}, found {actual}"
        ))),
        None => Err(Error::CorruptSnapshot(format!(
            "manifest missing count for {key}"
        ))),
    }
}

// ---------------------------------------------------------------------------
// File helpers
// ---------------------------------------------------------------------------

fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    records: impl Iterator<Item = &'a T>,
) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for record in records {
        serde_json::to_writer(&mut w, record)
            .map_err(|e| Error::json(path.display().to_string(), e))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let name = file_label(path);
    let file = std::fs::File::open(path).map_err(|_| Error::CorruptSnapshot(name.clone()))?;
    let mut out = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| Error::CorruptSnapshot(format!("{name}:{}: {e}", lineno + 1)))?;
        out.push(record);
    }
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| Error::json(path.display().to_string(), e))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let name = file_label(path);
    let text = std::fs::read_to_string(path).map_err(|_| Error::CorruptSnapshot(name.clone()))?;
    serde_json::from_str(&text).map_err(|e| Error::CorruptSnapshot(format!("{name}: {e}")))
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Directory layout helper for callers composing snapshot paths.
pub fn snapshot_file(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
