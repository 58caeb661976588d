//! Shared fixtures for integration tests: the earnings-call case-study
//! corpus and a deterministic synthetic corpus generator.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use tgrag::config::Providers;
use tgrag::embed::MockEmbedder;
use tgrag::engine::Engine;
use tgrag::ingest::Document;
use tgrag::prompts::{self, TemplateSet};
use tgrag::provider::{MockFixtureEntry, MockLlm};
use tgrag::time::Timestamp;
use tgrag::EngineConfig;

pub const WD_Q_2020_Q3: &str = "What were Western Digital Corporation's operating cash flow, gross debt outstanding, and earnings per share in 2020 Q3?";
pub const WD_Q_2023_REVENUE: &str =
    "What was Western Digital Corporation's revenue in each quarter from 2023 Q1 to Q3?";
pub const WD_Q_GLOBAL: &str =
    "How did Western Digital Corporation's revenue evolve between 2023 Q1 and 2023 Q3?";
pub const WD_Q_NO_SCOPE: &str = "What does Western Digital Corporation do?";

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/wd")
}

pub fn wd_corpus() -> Vec<Document> {
    tgrag::ingest::load_corpus(&fixture_dir().join("corpus")).expect("fixture corpus")
}

pub fn wd_providers() -> Providers {
    let mut llm =
        MockLlm::from_fixture_file(&fixture_dir().join("llm.jsonl")).expect("fixture llm");
    llm.set_echo_templates([
        prompts::TIME_REPORT.to_string(),
        prompts::POINT_EXTRACTION.to_string(),
    ]);
    let llm = Arc::new(llm);
    Providers {
        indexing_llm: llm.clone(),
        query_llm: llm.clone(),
        judge_llm: llm,
        embedder: Arc::new(MockEmbedder::new(64, 42)),
    }
}

/// Engine with the case-study corpus fully indexed.
pub fn wd_engine() -> Engine {
    let mut engine = Engine::new(
        EngineConfig::default(),
        wd_providers(),
        TemplateSet::builtin(),
    );
    engine.build(&wd_corpus()).expect("fixture build");
    engine
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

const COMPANIES: [&str; 6] = [
    "Aurora Materials",
    "Bluecrest Logistics",
    "Cobalt Dynamics",
    "Delta Harbor Foods",
    "Everline Software",
    "Fulcrum Energy",
];
const METRICS: [&str; 5] = [
    "Revenue",
    "Net Income",
    "Operating Cash Flow",
    "Gross Margin",
    "Free Cash Flow",
];

fn lcg(state: &mut u64) -> u64 {
    *state = state
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    *state >> 11
}

#[derive(Debug, Clone)]
pub struct SynthFact {
    pub company: String,
    pub metric: String,
    pub sentence: String,
    pub timestamp: Timestamp,
    pub value: u64,
}

/// Deterministic synthetic documents plus the matching extraction fixture.
/// `quarter_pool` bounds the quarters facts may land in (cycled from
/// 2020-Q1); one chunk per document.
pub struct SynthCorpus {
    pub docs: Vec<Document>,
    pub entries: Vec<MockFixtureEntry>,
    pub facts_per_doc: Vec<Vec<SynthFact>>,
}

pub fn synthetic_corpus(
    n_docs: usize,
    seed: u64,
    id_prefix: &str,
    quarter_pool: &[Timestamp],
) -> SynthCorpus {
    let mut docs = Vec::with_capacity(n_docs);
    let mut entries = Vec::with_capacity(n_docs);
    let mut facts_per_doc = Vec::with_capacity(n_docs);
    for i in 0..n_docs {
        let mut rng = seed ^ ((i as u64 + 1) * 0x9e37_79b9);
        let company = COMPANIES[(lcg(&mut rng) as usize) % COMPANIES.len()];
        let n_facts = 2 + (lcg(&mut rng) as usize) % 3;
        let mut facts = Vec::with_capacity(n_facts);
        let mut sentences = vec![format!(
            "This is the {company} earnings discussion, document {i}."
        )];
        let mut records = Vec::new();
        for k in 0..n_facts {
            let metric = METRICS[(lcg(&mut rng) as usize) % METRICS.len()];
            let value = 100 + lcg(&mut rng) % 900;
            let quarter = quarter_pool[(lcg(&mut rng) as usize) % quarter_pool.len()];
            // every third fact lands at year granularity
            let timestamp = if k % 3 == 2 {
                Timestamp::Year(quarter.year())
            } else {
                quarter
            };
            let sentence = format!("In {timestamp}, {company}'s {metric} was ${value} million.");
            sentences.push(sentence.clone());
            records.push(format!(
                "(\"quadruple\"<|>\"{company}\"<|>\"{metric}\"<|>\"{sentence}\"<|>\"{timestamp}\")"
            ));
            facts.push(SynthFact {
                company: company.to_string(),
                metric: metric.to_string(),
                sentence,
                timestamp,
                value,
            });
        }
        let doc_id = format!("{id_prefix}-{i:03}");
        entries.push(MockFixtureEntry {
            template_id: prompts::EXTRACT_QUADRUPLES.into(),
            key: format!("{doc_id}#0000"),
            response: format!("{}<|COMPLETE|>", records.join("\n")),
        });
        docs.push(Document {
            id: doc_id,
            text: sentences.join(" "),
            metadata: BTreeMap::new(),
        });
        facts_per_doc.push(facts);
    }
    SynthCorpus {
        docs,
        entries,
        facts_per_doc,
    }
}

pub fn quarters(from: Timestamp, n: usize) -> Vec<Timestamp> {
    let mut out = vec![from];
    while out.len() < n {
        let next = out.last().unwrap().successor().unwrap();
        out.push(next);
    }
    out
}

/// Mock providers over the given fixture entries; report and answer
/// templates echo by default so every pipeline stage runs. Scope
/// identification is never echoed (the template's own examples would leak
/// into the parse); tests register scope fixtures per query.
pub fn synth_providers(entries: Vec<MockFixtureEntry>) -> Providers {
    let mut llm = MockLlm::with_entries(entries);
    llm.set_echo_templates([
        prompts::TIME_REPORT.to_string(),
        prompts::LOCAL_QA.to_string(),
        prompts::GLOBAL_SYNTHESIS.to_string(),
        prompts::POINT_EXTRACTION.to_string(),
    ]);
    let llm = Arc::new(llm);
    Providers {
        indexing_llm: llm.clone(),
        query_llm: llm.clone(),
        judge_llm: llm,
        embedder: Arc::new(MockEmbedder::new(48, 7)),
    }
}

pub fn synth_engine(entries: Vec<MockFixtureEntry>) -> Engine {
    Engine::new(
        EngineConfig::default(),
        synth_providers(entries),
        TemplateSet::builtin(),
    )
}
