//! Temporal graph retrieval engine.
//!
//! Indexes a document corpus into a bi-level temporal graph — entities with
//! parallel timestamped relation edges below, a year→quarter→month→day time
//! hierarchy above, cross-layer links binding each edge to its time — plus
//! per-time-node reports and embedding indexes. Supports incremental corpus
//! updates that regenerate only the affected reports, time-scoped local
//! retrieval (Personalized PageRank + temporal edge scoring), and
//! report-driven global retrieval.

pub mod config;
pub mod embed;
pub mod engine;
pub mod error;
pub mod eval;
pub mod graph;
pub mod ingest;
pub mod persist;
pub mod ppr;
pub mod prompts;
pub mod provider;
pub mod reports;
pub mod retrieval;
pub mod service;
pub mod time;
pub mod tokenize;
pub mod wire;

pub use config::{AppConfig, EngineConfig, Providers};
pub use engine::{Engine, IndexState, IngestReport};
pub use error::{Error, Result};
pub use graph::{BiLevelGraph, EdgeId, EntityId, Quadruple, StatsRecord};
pub use ingest::{Chunk, ChunkStore, Document, UpdateDelta};
pub use retrieval::{AnswerRecord, ScoringMode, TimeScope};
pub use time::{Granularity, Timestamp};
