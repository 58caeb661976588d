//! Bi-level temporal graph: an entity/relation layer with parallel
//! timestamped edges, a hierarchical time-node layer, and cross-layer links
//! binding each edge to the time node of its exact granularity.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::{Granularity, Timestamp};

pub type ChunkId = String;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeId(pub u64);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

/// A timestamped fact: two entities, a relation description, and when.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Quadruple {
    pub head_name: String,
    pub tail_name: String,
    pub relation: String,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    /// Whitespace-normalized display name; identity is the case-folded form.
    pub name: String,
    pub description: String,
    pub source_chunks: BTreeSet<ChunkId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalEdge {
    pub id: EdgeId,
    pub head: EntityId,
    pub tail: EntityId,
    pub relation: String,
    pub timestamp: Timestamp,
    pub source_chunk: ChunkId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeNode {
    pub id: Timestamp,
    pub parent: Option<Timestamp>,
    pub children: BTreeSet<Timestamp>,
    pub attached_edges: BTreeSet<EdgeId>,
}

/// Counts reported by `stats`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsRecord {
    pub entities: usize,
    pub edges: usize,
    pub time_nodes: usize,
    pub time_nodes_by_granularity: BTreeMap<Granularity, usize>,
    pub chunks: usize,
    pub reports: usize,
}

/// What `insert_edge` did.
#[derive(Debug, Clone)]
pub struct InsertOutcome {
    pub edge_id: EdgeId,
    /// False when the quadruple was already present (dedup hit).
    pub inserted: bool,
    /// Time nodes created by this insert, leaf plus any missing ancestors.
    pub created_time_nodes: Vec<Timestamp>,
}

// ---------------------------------------------------------------------------
// BiLevelGraph
// ---------------------------------------------------------------------------

/// Entity identity: case-folded, whitespace-normalized name.
pub fn canonical_name_key(name: &str) -> String {
    name.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn display_name(name: &str) -> String {
    name.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BiLevelGraph {
    entities: BTreeMap<EntityId, Entity>,
    edges: BTreeMap<EdgeId, TemporalEdge>,
    time_nodes: BTreeMap<Timestamp, TimeNode>,
    adjacency: BTreeMap<EntityId, BTreeSet<EdgeId>>,
    name_index: BTreeMap<String, EntityId>,
    dedup: BTreeMap<(EntityId, EntityId, String, Timestamp), EdgeId>,
    next_entity: u64,
    next_edge: u64,
}

impl BiLevelGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entities(&self) -> &BTreeMap<EntityId, Entity> {
        &self.entities
    }

    pub fn edges(&self) -> &BTreeMap<EdgeId, TemporalEdge> {
        &self.edges
    }

    pub fn time_nodes(&self) -> &BTreeMap<Timestamp, TimeNode> {
        &self.time_nodes
    }

    pub fn adjacency(&self, entity: EntityId) -> Option<&BTreeSet<EdgeId>> {
        self.adjacency.get(&entity)
    }

    pub fn entity(&self, id: EntityId) -> Option<&Entity> {
        self.entities.get(&id)
    }

    pub fn edge(&self, id: EdgeId) -> Option<&TemporalEdge> {
        self.edges.get(&id)
    }

    pub fn entity_by_name(&self, name: &str) -> Option<&Entity> {
        self.name_index
            .get(&canonical_name_key(name))
            .and_then(|id| self.entities.get(id))
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        self.entities
            .get(&id)
            .map(|e| e.name.as_str())
            .unwrap_or("?")
    }

    /// Upsert an entity by canonical name; records chunk provenance.
    pub fn upsert_entity(&mut self, name: &str, chunk: &ChunkId) -> EntityId {
        let key = canonical_name_key(name);
        if let Some(&id) = self.name_index.get(&key) {
            let entity = self.entities.get_mut(&id).expect("name index consistent");
            entity.source_chunks.insert(chunk.clone());
            return id;
        }
        let id = EntityId(self.next_entity);
        self.next_entity += 1;
        self.entities.insert(
            id,
            Entity {
                id,
                name: display_name(name),
                description: String::new(),
                source_chunks: BTreeSet::from([chunk.clone()]),
            },
        );
        self.name_index.insert(key, id);
        self.adjacency.insert(id, BTreeSet::new());
        id
    }

    /// Insert a quadruple extracted from `chunk`. Entities are upserted by
    /// canonical name, the edge is deduplicated on
    /// (head, tail, relation, timestamp), and the time-node chain for the
    /// edge's timestamp is created if absent. The edge links to the node of
    /// its exact granularity; ancestors are resolved at query time.
    pub fn insert_edge(&mut self, q: &Quadruple, chunk: &ChunkId) -> InsertOutcome {
        let head = self.upsert_entity(&q.head_name, chunk);
        let tail = self.upsert_entity(&q.tail_name, chunk);
        let key = (head, tail, q.relation.clone(), q.timestamp);
        if let Some(&existing) = self.dedup.get(&key) {
            return InsertOutcome {
                edge_id: existing,
                inserted: false,
                created_time_nodes: Vec::new(),
            };
        }

        let id = EdgeId(self.next_edge);
        self.next_edge += 1;
        self.edges.insert(
            id,
            TemporalEdge {
                id,
                head,
                tail,
                relation: q.relation.clone(),
                timestamp: q.timestamp,
                source_chunk: chunk.clone(),
            },
        );
        self.dedup.insert(key, id);
        self.adjacency.entry(head).or_default().insert(id);
        self.adjacency.entry(tail).or_default().insert(id);

        let created = self.ensure_time_node(q.timestamp);
        self.time_nodes
            .get_mut(&q.timestamp)
            .expect("just ensured")
            .attached_edges
            .insert(id);

        InsertOutcome {
            edge_id: id,
            inserted: true,
            created_time_nodes: created,
        }
    }

    /// Create the time node for `ts` and any missing ancestors. Returns the
    /// newly created timestamps, finest first.
    fn ensure_time_node(&mut self, ts: Timestamp) -> Vec<Timestamp> {
        let mut created = Vec::new();
        let mut cur = ts;
        loop {
            if self.time_nodes.contains_key(&cur) {
                break;
            }
            self.time_nodes.insert(
                cur,
                TimeNode {
                    id: cur,
                    parent: cur.parent(),
                    children: BTreeSet::new(),
                    attached_edges: BTreeSet::new(),
                },
            );
            created.push(cur);
            match cur.parent() {
                Some(p) => cur = p,
                None => break,
            }
        }
        // link children upward, including into pre-existing parents
        for ts in &created {
            if let Some(p) = ts.parent() {
                if let Some(parent) = self.time_nodes.get_mut(&p) {
                    parent.children.insert(*ts);
                }
            }
        }
        created
    }

    /// True when `ts` falls inside the scope under containment in either
    /// direction: an edge matches if its timestamp equals a scope member, is
    /// covered by one, or covers one.
    pub fn timestamp_in_scope(ts: &Timestamp, scope: &BTreeSet<Timestamp>) -> bool {
        scope.iter().any(|s| s.overlaps(ts))
    }

    /// All edges whose timestamps fall inside `scope`, walking the time
    /// hierarchy instead of scanning every edge. Empty scope yields the
    /// empty set.
    pub fn edges_in_scope(&self, scope: &BTreeSet<Timestamp>) -> BTreeSet<EdgeId> {
        let mut out = BTreeSet::new();
        for member in scope {
            // member's node and everything beneath it
            let mut stack = vec![*member];
            while let Some(ts) = stack.pop() {
                if let Some(node) = self.time_nodes.get(&ts) {
                    out.extend(node.attached_edges.iter().copied());
                    stack.extend(node.children.iter().copied());
                }
            }
            // coarser nodes covering the member
            for anc in member.ancestors() {
                if let Some(node) = self.time_nodes.get(&anc) {
                    out.extend(node.attached_edges.iter().copied());
                }
            }
        }
        out
    }

    pub fn stats(&self, chunks: usize, reports: usize) -> StatsRecord {
        let mut by_gran: BTreeMap<Granularity, usize> = BTreeMap::new();
        for g in Granularity::ALL {
            by_gran.insert(g, 0);
        }
        for node in self.time_nodes.values() {
            *by_gran.entry(node.id.granularity()).or_insert(0) += 1;
        }
        StatsRecord {
            entities: self.entities.len(),
            edges: self.edges.len(),
            time_nodes: self.time_nodes.len(),
            time_nodes_by_granularity: by_gran,
            chunks,
            reports,
        }
    }

    /// Full-scan referential integrity check. Run after loads and in tests.
    pub fn check_integrity(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::CorruptSnapshot(msg));
        for edge in self.edges.values() {
            if !self.entities.contains_key(&edge.head) {
                return fail(format!(
                    "edge {} references missing head {}",
                    edge.id, edge.head
                ));
            }
            if !self.entities.contains_key(&edge.tail) {
                return fail(format!(
                    "edge {} references missing tail {}",
                    edge.id, edge.tail
                ));
            }
            match self.time_nodes.get(&edge.timestamp) {
                None => {
                    return fail(format!(
                        "edge {} has no time node for {}",
                        edge.id, edge.timestamp
                    ))
                }
                Some(node) if !node.attached_edges.contains(&edge.id) => {
                    return fail(format!(
                        "edge {} not attached to time node {}",
                        edge.id, edge.timestamp
                    ))
                }
                _ => {}
            }
            for ep in [edge.head, edge.tail] {
                if !self
                    .adjacency
                    .get(&ep)
                    .map(|s| s.contains(&edge.id))
                    .unwrap_or(false)
                {
                    return fail(format!("adjacency of {} missing edge {}", ep, edge.id));
                }
            }
        }
        for node in self.time_nodes.values() {
            for eid in &node.attached_edges {
                match self.edges.get(eid) {
                    None => {
                        return fail(format!("time node {} lists missing edge {}", node.id, eid))
                    }
                    Some(e) if e.timestamp != node.id => {
                        return fail(format!(
                            "time node {} lists edge {} timestamped {}",
                            node.id, eid, e.timestamp
                        ))
                    }
                    _ => {}
                }
            }
            if node.parent != node.id.parent() {
                return fail(format!("time node {} has wrong parent", node.id));
            }
            if let Some(p) = node.parent {
                match self.time_nodes.get(&p) {
                    None => return fail(format!("time node {} parent {} missing", node.id, p)),
                    Some(parent) if !parent.children.contains(&node.id) => {
                        return fail(format!("parent {} does not list child {}", p, node.id))
                    }
                    _ => {}
                }
            }
            for child in &node.children {
                if child.parent() != Some(node.id) {
                    return fail(format!("node {} lists non-child {}", node.id, child));
                }
                if !self.time_nodes.contains_key(child) {
                    return fail(format!("node {} lists missing child {}", node.id, child));
                }
            }
        }
        for (eid, entity) in &self.entities {
            if entity.name.is_empty() {
                return fail(format!("entity {eid} has empty name"));
            }
            if self.name_index.get(&canonical_name_key(&entity.name)) != Some(eid) {
                return fail(format!("name index disagrees for entity {eid}"));
            }
        }
        Ok(())
    }

    /// Rebuild from persisted primary records, reconstructing the derived
    /// indexes (adjacency, name and dedup maps).
    pub fn from_records(
        entities: Vec<Entity>,
        edges: Vec<TemporalEdge>,
        time_nodes: Vec<TimeNode>,
    ) -> Result<Self> {
        let mut g = BiLevelGraph::new();
        for e in entities {
            g.next_entity = g.next_entity.max(e.id.0 + 1);
            let key = canonical_name_key(&e.name);
            if g.name_index.insert(key, e.id).is_some() {
                return Err(Error::CorruptSnapshot(format!(
                    "duplicate entity name {:?}",
                    e.name
                )));
            }
            g.adjacency.insert(e.id, BTreeSet::new());
            g.entities.insert(e.id, e);
        }
        for n in time_nodes {
            g.time_nodes.insert(n.id, n);
        }
        for e in edges {
            g.next_edge = g.next_edge.max(e.id.0 + 1);
            g.adjacency.entry(e.head).or_default().insert(e.id);
            g.adjacency.entry(e.tail).or_default().insert(e.id);
            let key = (e.head, e.tail, e.relation.clone(), e.timestamp);
            if g.dedup.insert(key, e.id).is_some() {
                return Err(Error::CorruptSnapshot(format!("duplicate edge {}", e.id)));
            }
            g.edges.insert(e.id, e);
        }
        g.check_integrity()?;
        Ok(g)
    }

    /// Canonical content view used for equality across differently-built
    /// graphs: entity names, quadruples, and time-node timestamps.
    pub fn content_signature(
        &self,
    ) -> (BTreeSet<String>, BTreeSet<Quadruple>, BTreeSet<Timestamp>) {
        let names = self
            .entities
            .values()
            .map(|e| canonical_name_key(&e.name))
            .collect();
        let quads = self
            .edges
            .values()
            .map(|e| Quadruple {
                head_name: canonical_name_key(self.entity_name(e.head)),
                tail_name: canonical_name_key(self.entity_name(e.tail)),
                relation: e.relation.clone(),
                timestamp: e.timestamp,
            })
            .collect();
        let times = self.time_nodes.keys().copied().collect();
        (names, quads, times)
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
