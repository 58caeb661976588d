//! End-to-end pipeline behavior on the earnings-call fixture corpus.

mod common;

use std::collections::BTreeSet;

use common::*;
use tgrag::embed::VectorIndex;
use tgrag::engine::IndexState;
use tgrag::graph::Quadruple;
use tgrag::prompts::TemplateSet;
use tgrag::retrieval::{self, QueryCtx, QuerySubgraph, ScopeLogic, ScoringMode};
use tgrag::time::{Granularity, Timestamp};
use tgrag::tokenize::WhitespaceTokenizer;
use tgrag::EngineConfig;

fn ts(s: &str) -> Timestamp {
    s.parse().unwrap()
}

#[test]
fn build_counts_match_hand_tally() {
    let engine = wd_engine();
    let stats = engine.stats();
    // entities: the company + five metric entities
    assert_eq!(stats.entities, 6);
    assert_eq!(stats.edges, 10);
    // years 2020, 2022, 2023 + quarters 2020-Q2, 2020-Q3, 2023-Q1..Q3
    assert_eq!(stats.time_nodes, 8);
    assert_eq!(stats.time_nodes_by_granularity[&Granularity::Year], 3);
    assert_eq!(stats.time_nodes_by_granularity[&Granularity::Quarter], 5);
    assert_eq!(stats.time_nodes_by_granularity[&Granularity::Month], 0);
    assert_eq!(stats.chunks, 6);
    assert_eq!(stats.reports, 8);
    engine.state.check_integrity().unwrap();

    // every edge has chunk provenance
    let mut from_chunks = BTreeSet::new();
    for (_, chunk) in engine.state.chunks.iter() {
        from_chunks.extend(chunk.extracted_edges.iter().copied());
    }
    let all: BTreeSet<_> = engine.state.graph.edges().keys().copied().collect();
    assert_eq!(from_chunks, all);
}

#[test]
fn rebuild_is_deterministic() {
    let a = wd_engine();
    let b = wd_engine();
    assert_eq!(a.state, b.state);
}

#[test]
fn single_time_query_packs_the_right_chunk_first() {
    let engine = wd_engine();
    let record = engine.answer_local(WD_Q_2020_Q3, None).unwrap();
    assert_eq!(record.scope.logic, ScopeLogic::At);
    assert_eq!(record.scope.resolved, BTreeSet::from([ts("2020-Q3")]));
    assert_eq!(record.packed_chunks[0], "wd-2020-q3#0000");
    assert_eq!(
        record.answer,
        "Operating cash flow: $142 million, gross debt outstanding: $9.8 billion, earnings per share: $0.85."
    );
    // seeds are exactly the endpoints of the in-scope edges
    let seeds: Vec<String> = record.trace["seeds"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap().to_string())
        .collect();
    assert_eq!(seeds.len(), 5);
}

#[test]
fn multi_time_query_packs_the_three_quarterly_chunks() {
    let engine = wd_engine();
    let record = engine.answer_local(WD_Q_2023_REVENUE, None).unwrap();
    assert_eq!(
        record.scope.resolved,
        BTreeSet::from([ts("2023-Q1"), ts("2023-Q2"), ts("2023-Q3")])
    );
    let top3: BTreeSet<&str> = record.packed_chunks[..3]
        .iter()
        .map(|s| s.as_str())
        .collect();
    assert_eq!(
        top3,
        BTreeSet::from(["wd-2023-q1#0000", "wd-2023-q2#0000", "wd-2023-q3#0000"])
    );
    assert_eq!(
        record.answer,
        "2023 Q1: $3.7 billion, 2023 Q2: $3.1 billion, 2023 Q3: $2.8 billion."
    );
}

#[test]
fn scopeless_query_falls_back_to_all_entities_and_refuses() {
    let engine = wd_engine();
    let record = engine.answer_local(WD_Q_NO_SCOPE, None).unwrap();
    assert_eq!(record.scope.logic, ScopeLogic::None);
    assert!(record.scope.resolved.is_empty());
    // fallback seeds the whole subgraph entity set
    assert_eq!(record.trace["seeds"].as_array().unwrap().len(), 6);
    assert_eq!(record.answer, "No explicit evidence for the question");
}

#[test]
fn incremental_update_matches_scratch_build() {
    let split = |prefixes: &[&str]| {
        wd_corpus()
            .into_iter()
            .filter(|d| prefixes.iter().any(|p| d.id.starts_with(p)))
            .collect::<Vec<_>>()
    };
    let base = split(&["wd-2020", "wd-2022"]);
    let update = split(&["wd-2023"]);

    let mut incremental = tgrag::Engine::new(
        EngineConfig::default(),
        wd_providers(),
        TemplateSet::builtin(),
    );
    incremental.build(&base).unwrap();
    let stats_before = incremental.stats();
    assert_eq!(stats_before.edges, 6);

    let reports_before: Vec<(Timestamp, String)> = incremental
        .state
        .reports
        .iter()
        .map(|(ts, r)| (*ts, r.text.clone()))
        .collect();

    let report = incremental.update(&update).unwrap();
    let expected_dirty: BTreeSet<Timestamp> = ["2023", "2023-Q1", "2023-Q2", "2023-Q3"]
        .iter()
        .map(|s| ts(s))
        .collect();
    assert_eq!(report.delta.dirty_time_nodes, expected_dirty);
    assert_eq!(report.delta.new_time_nodes, expected_dirty);
    assert_eq!(report.delta.new_edges.len(), 4);

    // regeneration set == dirty set, children before parents
    let regen: BTreeSet<Timestamp> = report.regenerated_reports.iter().copied().collect();
    assert_eq!(regen, expected_dirty);
    assert_eq!(
        report.regenerated_reports.last().copied().unwrap(),
        ts("2023")
    );

    // untouched reports stay byte-identical
    for (time_id, old_text) in reports_before {
        assert_eq!(
            incremental.state.reports.get(&time_id).unwrap().text,
            old_text,
            "report {time_id} was regenerated"
        );
    }

    // equal content to a scratch build over the union
    let scratch = wd_engine();
    assert_eq!(
        incremental.state.graph.content_signature(),
        scratch.state.graph.content_signature()
    );
}

#[test]
fn update_costs_less_than_rebuild() {
    let base: Vec<_> = wd_corpus()
        .into_iter()
        .filter(|d| !d.id.starts_with("wd-2023"))
        .collect();
    let update: Vec<_> = wd_corpus()
        .into_iter()
        .filter(|d| d.id.starts_with("wd-2023"))
        .collect();

    let mut incremental = tgrag::Engine::new(
        EngineConfig::default(),
        wd_providers(),
        TemplateSet::builtin(),
    );
    incremental.build(&base).unwrap();
    let before = incremental.providers.indexing_llm.token_meter();
    incremental.update(&update).unwrap();
    let after = incremental.providers.indexing_llm.token_meter();
    let update_prompt = after.prompt_tokens - before.prompt_tokens;

    let rebuild = wd_engine();
    let rebuild_meter = rebuild.providers.indexing_llm.token_meter();
    assert!(
        update_prompt < rebuild_meter.prompt_tokens,
        "update {update_prompt} !< rebuild {}",
        rebuild_meter.prompt_tokens
    );
}

#[test]
fn global_retrieval_uses_reports_and_budget_split() {
    let engine = wd_engine();
    let record = engine.answer_global(WD_Q_GLOBAL, None).unwrap();
    // three quarter reports plus every chunk fits the 2,400-token share
    let reports: Vec<&String> = record
        .evidence
        .iter()
        .filter(|e| e.starts_with("report:"))
        .collect();
    assert_eq!(reports.len(), 3);
    assert_eq!(record.evidence.len(), 3 + 6);
    assert!(record.answer.contains("$3.7 billion"));
    assert!(record.answer.contains("$2.8 billion"));
    // points kept in importance order
    let kept = record.trace["points_kept"].as_array().unwrap();
    assert!(!kept.is_empty());
    let importances: Vec<f64> = kept
        .iter()
        .map(|p| p["importance"].as_f64().unwrap())
        .collect();
    let mut sorted = importances.clone();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    assert_eq!(importances, sorted);
}

#[test]
fn scopeless_global_query_falls_back_to_year_reports() {
    let engine = wd_engine();
    let record = engine.answer_global(WD_Q_NO_SCOPE, None).unwrap();
    assert_eq!(record.scope.logic, ScopeLogic::None);
    let reports: BTreeSet<&str> = record
        .evidence
        .iter()
        .filter(|e| e.starts_with("report:"))
        .map(|e| e.as_str())
        .collect();
    assert_eq!(
        reports,
        BTreeSet::from(["report:2020", "report:2022", "report:2023"])
    );
    assert!(record.answer.contains("quarterly financial metrics"));
}

#[test]
fn no_ppr_mode_scores_in_scope_edges_by_similarity() {
    let engine = wd_engine();
    let ctx = QueryCtx {
        state: &engine.state,
        llm: engine.providers.query_llm.as_ref(),
        embedder: engine.providers.embedder.as_ref(),
        templates: &engine.templates,
        cfg: &engine.cfg,
        tokenizer: &WhitespaceTokenizer,
        scoring_mode: ScoringMode::NoPpr,
    };
    let pipeline = retrieval::score_query(&ctx, WD_Q_2020_Q3).unwrap();
    let gamma = pipeline.subgraph.gamma();
    for (edge_id, score) in &pipeline.edge_scores {
        let edge = engine.state.graph.edge(*edge_id).unwrap();
        if edge.timestamp == ts("2020-Q3") {
            assert_eq!(*score, gamma[edge_id]);
        } else {
            assert_eq!(*score, 0.0);
        }
    }
}

#[test]
fn full_vs_no_temporal_differ_on_partial_scope_and_agree_on_total_scope() {
    let engine = wd_engine();
    let make_ctx = |mode| QueryCtx {
        state: &engine.state,
        llm: engine.providers.query_llm.as_ref(),
        embedder: engine.providers.embedder.as_ref(),
        templates: &engine.templates,
        cfg: &engine.cfg,
        tokenizer: &WhitespaceTokenizer,
        scoring_mode: mode,
    };
    // partial scope: the indicator zeroes out-of-scope edges only in FULL
    let full = retrieval::score_query(&make_ctx(ScoringMode::Full), WD_Q_2020_Q3).unwrap();
    let no_temporal =
        retrieval::score_query(&make_ctx(ScoringMode::NoTemporal), WD_Q_2020_Q3).unwrap();
    assert_ne!(full.edge_scores, no_temporal.edge_scores);

    // total scope: every edge in scope, every entity seeded -> the modes
    // coincide (uniform personalization equals standard PageRank)
    let scope: BTreeSet<Timestamp> = ["2020", "2022", "2023"].iter().map(|s| ts(s)).collect();
    let query_vec = engine
        .providers
        .embedder
        .embed(&[WD_Q_2020_Q3.to_string()])
        .unwrap()
        .remove(0);
    let subgraph =
        retrieval::position_subgraph(&query_vec, &engine.state, &scope, engine.cfg.top_k).unwrap();
    assert_eq!(subgraph.seeds, subgraph.entities);
    let s_full =
        retrieval::entity_scores(&subgraph, &engine.state.graph, ScoringMode::Full).unwrap();
    let s_nt =
        retrieval::entity_scores(&subgraph, &engine.state.graph, ScoringMode::NoTemporal).unwrap();
    for (k, v) in &s_full {
        assert!((v - s_nt[k]).abs() < 1e-12);
    }
    let e_full = retrieval::score_edges(
        &subgraph,
        &s_full,
        &scope,
        ScoringMode::Full,
        &engine.state.graph,
    );
    let e_nt = retrieval::score_edges(
        &subgraph,
        &s_nt,
        &scope,
        ScoringMode::NoTemporal,
        &engine.state.graph,
    );
    for (k, v) in &e_full {
        assert!((v - e_nt[k]).abs() < 1e-12);
    }
}

#[test]
fn chunk_ranking_invariant_under_entity_score_rescaling() {
    let engine = wd_engine();
    let ctx = QueryCtx {
        state: &engine.state,
        llm: engine.providers.query_llm.as_ref(),
        embedder: engine.providers.embedder.as_ref(),
        templates: &engine.templates,
        cfg: &engine.cfg,
        tokenizer: &WhitespaceTokenizer,
        scoring_mode: ScoringMode::Full,
    };
    let pipeline = retrieval::score_query(&ctx, WD_Q_2023_REVENUE).unwrap();
    let scaled: std::collections::BTreeMap<_, _> = pipeline
        .entity_scores
        .iter()
        .map(|(k, v)| (*k, v * 37.5))
        .collect();
    let edge_scores = retrieval::score_edges(
        &pipeline.subgraph,
        &scaled,
        &pipeline.scope.resolved,
        ScoringMode::Full,
        &engine.state.graph,
    );
    let rescored = retrieval::score_chunks(&engine.state, &pipeline.subgraph, &edge_scores, false);
    let order_a: Vec<&str> = pipeline
        .chunk_scores
        .iter()
        .map(|c| c.chunk_id.as_str())
        .collect();
    let order_b: Vec<&str> = rescored.iter().map(|c| c.chunk_id.as_str()).collect();
    assert_eq!(order_a, order_b);
}

#[test]
fn chunk_score_formula_hand_example() {
    // one chunk holding one retrieved in-scope edge: (1 + 0.5) × 0.4 = 0.6
    let mut state = IndexState::new();
    let outcome = state.graph.insert_edge(
        &Quadruple {
            head_name: "A".into(),
            tail_name: "B".into(),
            relation: "r".into(),
            timestamp: ts("2023-Q1"),
        },
        &"c0".to_string(),
    );
    let mut chunk = tgrag::Chunk {
        id: "c0".into(),
        doc_id: "d".into(),
        token_span: (0, 3),
        text: "x y z".into(),
        extracted_edges: BTreeSet::new(),
    };
    chunk.extracted_edges.insert(outcome.edge_id);
    state.chunks.insert(chunk);

    let subgraph = QuerySubgraph {
        edges: vec![(outcome.edge_id, 0.5)],
        entities: BTreeSet::new(),
        seeds: BTreeSet::new(),
    };
    let edge_scores = [(outcome.edge_id, 0.4)].into_iter().collect();
    let scored = retrieval::score_chunks(&state, &subgraph, &edge_scores, false);
    assert!((scored[0].score - 0.6).abs() < 1e-12);
}

#[test]
fn global_sum_flag_changes_only_the_sum_term() {
    let engine = wd_engine();
    let ctx = QueryCtx {
        state: &engine.state,
        llm: engine.providers.query_llm.as_ref(),
        embedder: engine.providers.embedder.as_ref(),
        templates: &engine.templates,
        cfg: &engine.cfg,
        tokenizer: &WhitespaceTokenizer,
        scoring_mode: ScoringMode::Full,
    };
    let pipeline = retrieval::score_query(&ctx, WD_Q_2020_Q3).unwrap();
    let rescored = retrieval::score_chunks(
        &engine.state,
        &pipeline.subgraph,
        &pipeline.edge_scores,
        true,
    );
    let global_sum: f64 = pipeline.edge_scores.values().sum();
    let gamma = pipeline.subgraph.gamma();
    for scored in &rescored {
        let chunk = engine.state.chunks.get(&scored.chunk_id).unwrap();
        let retrieved: Vec<_> = chunk
            .extracted_edges
            .iter()
            .filter(|e| gamma.contains_key(e))
            .collect();
        if retrieved.is_empty() {
            assert_eq!(scored.score, 0.0);
        } else {
            let w: f64 = retrieved.iter().map(|e| 1.0 + gamma[e]).product();
            assert!((scored.score - w * global_sum).abs() < 1e-9);
        }
    }
}

#[test]
fn empty_index_still_answers_through_the_prompt_contract() {
    let mut engine = tgrag::Engine::new(
        EngineConfig::default(),
        wd_providers(),
        TemplateSet::builtin(),
    );
    engine.state.config_hash = engine.cfg.content_hash();
    let record = engine.answer_local(WD_Q_NO_SCOPE, None).unwrap();
    assert!(record.packed_chunks.is_empty());
    assert_eq!(record.answer, "No explicit evidence for the question");
}

#[test]
fn identical_queries_trace_identically() {
    let a = wd_engine().answer_local(WD_Q_2023_REVENUE, None).unwrap();
    let b = wd_engine().answer_local(WD_Q_2023_REVENUE, None).unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
}

#[test]
fn vector_index_round_trips_through_state() {
    // edge vectors exist for every edge and share the configured dimension
    let engine = wd_engine();
    assert_eq!(engine.state.edge_vectors.len(), 10);
    assert_eq!(engine.state.entity_vectors.len(), 6);
    assert_eq!(engine.state.edge_vectors.dim(), 64);
    let _: &VectorIndex = &engine.state.edge_vectors;
}

#[test]
fn empty_corpus_build_errors() {
    let mut engine = tgrag::Engine::new(
        EngineConfig::default(),
        wd_providers(),
        TemplateSet::builtin(),
    );
    assert!(matches!(engine.build(&[]), Err(tgrag::Error::EmptyCorpus)));
}

#[test]
fn update_extracting_nothing_is_an_empty_delta() {
    let mut engine = wd_engine();
    let mut llm =
        tgrag::provider::MockLlm::from_fixture_file(&fixture_dir().join("llm.jsonl")).unwrap();
    llm.register(tgrag::provider::MockFixtureEntry {
        template_id: "extract_quadruples".into(),
        key: "quiet#0000".into(),
        response: "<|COMPLETE|>".into(),
    });
    llm.set_echo_templates(["time_report".to_string()]);
    engine.providers.indexing_llm = std::sync::Arc::new(llm);

    let quiet = tgrag::Document {
        id: "quiet".into(),
        text: "Nothing temporal was said in this meeting at all.".into(),
        metadata: Default::default(),
    };
    let report = engine.update(&[quiet]).unwrap();
    assert!(report.delta.new_edges.is_empty());
    assert!(report.delta.new_time_nodes.is_empty());
    assert!(report.delta.dirty_time_nodes.is_empty());
    assert!(report.regenerated_reports.is_empty());
    assert_eq!(report.delta.new_chunks, 1);
}

#[test]
fn missing_scope_report_signals_stale_index() {
    let mut engine = wd_engine();
    // wipe the reports to simulate an index whose reports were never built
    engine.state.reports = tgrag::reports::ReportStore::new();
    let err = engine.answer_global(WD_Q_GLOBAL, None).unwrap_err();
    assert!(matches!(err, tgrag::Error::MissingReport(_)), "{err}");
}

#[test]
fn edge_score_is_the_endpoint_sum_inside_scope() {
    let mut state = IndexState::new();
    let outcome = state.graph.insert_edge(
        &Quadruple {
            head_name: "A".into(),
            tail_name: "B".into(),
            relation: "r".into(),
            timestamp: ts("2023-Q1"),
        },
        &"c0".to_string(),
    );
    let edge = state.graph.edge(outcome.edge_id).unwrap().clone();
    let subgraph = QuerySubgraph {
        edges: vec![(outcome.edge_id, 0.9)],
        entities: BTreeSet::from([edge.head, edge.tail]),
        seeds: BTreeSet::from([edge.head, edge.tail]),
    };
    let entity_scores: std::collections::BTreeMap<_, _> =
        [(edge.head, 0.3), (edge.tail, 0.2)].into_iter().collect();
    let scope: BTreeSet<Timestamp> = [ts("2023-Q1")].into();
    let scores = retrieval::score_edges(
        &subgraph,
        &entity_scores,
        &scope,
        ScoringMode::Full,
        &state.graph,
    );
    assert!((scores[&outcome.edge_id] - 0.5).abs() < 1e-12);

    // out of scope: exactly zero
    let scope: BTreeSet<Timestamp> = [ts("2020-Q3")].into();
    let scores = retrieval::score_edges(
        &subgraph,
        &entity_scores,
        &scope,
        ScoringMode::Full,
        &state.graph,
    );
    assert_eq!(scores[&outcome.edge_id], 0.0);
}
