//! Operator CLI: index, update, query, stats, eval, export, serve.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use tgrag::config::{AppConfig, ProviderKind, Providers, ENV_LLM_ENDPOINT};
use tgrag::engine::Engine;
use tgrag::error::{Error, Result};
use tgrag::eval::{read_queries, run_protocol};
use tgrag::ingest::load_corpus;
use tgrag::prompts::TemplateSet;
use tgrag::service::ServiceState;

#[derive(Parser)]
#[command(
    name = "tgrag",
    version,
    about = "Temporal graph retrieval engine",
    propagate_version = true
)]
struct Cli {
    /// Config file (TOML or JSON, auto-detected). CLI flags win over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Index snapshot directory.
    #[arg(long, global = true)]
    index_dir: Option<PathBuf>,

    /// Emit machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,

    #[arg(long, global = true)]
    chunk_size: Option<usize>,

    #[arg(long, global = true)]
    overlap: Option<usize>,

    #[arg(long, global = true)]
    top_k: Option<usize>,

    #[arg(long, global = true)]
    local_budget: Option<usize>,

    #[arg(long, global = true)]
    global_budget: Option<usize>,

    #[arg(long, global = true)]
    chunk_fraction: Option<f64>,

    /// full | no-ppr | no-temporal | no-temporal-no-ppr | static
    #[arg(long, global = true)]
    scoring_mode: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an index from a corpus directory of .txt files.
    Index { corpus_dir: PathBuf },
    /// Merge a directory of new documents into the existing index.
    Update { docs_dir: PathBuf },
    /// Answer one question against the loaded index.
    Query {
        /// local | global
        #[arg(long, default_value = "local")]
        mode: String,
        /// Emit the per-stage trace.
        #[arg(long)]
        trace: bool,
        question: String,
    },
    /// Print index statistics.
    Stats,
    /// Run the three-scenario incremental evaluation protocol.
    Eval {
        /// Protocol manifest (JSON) naming corpora and query files.
        #[arg(long)]
        protocol: PathBuf,
        /// Also run the LLM judge over every scenario's predictions.
        #[arg(long)]
        judge: bool,
    },
    /// Dump the full index content as JSON.
    Export {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP JSON API over the loaded index.
    Serve {
        /// Bind address, also settable via TGRAG_BIND_ADDR.
        #[arg(long, env = "TGRAG_BIND_ADDR", default_value = "127.0.0.1:7070")]
        addr: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

struct Setup {
    app: AppConfig,
    providers: Providers,
    templates: TemplateSet,
    index_dir: Option<PathBuf>,
}

fn setup(cli: &Cli) -> Result<Setup> {
    let mut app = match &cli.config {
        Some(path) => AppConfig::load(path)?,
        None => {
            let mut app = AppConfig::default();
            // endpoint in the environment implies the HTTP provider
            if std::env::var(ENV_LLM_ENDPOINT).is_ok() {
                app.providers.llm.kind = ProviderKind::Http;
            }
            app
        }
    };
    if let Some(v) = cli.chunk_size {
        app.engine.chunk_size = v;
    }
    if let Some(v) = cli.overlap {
        app.engine.overlap = v;
    }
    if let Some(v) = cli.top_k {
        app.engine.top_k = v;
    }
    if let Some(v) = cli.local_budget {
        app.engine.local_budget = v;
    }
    if let Some(v) = cli.global_budget {
        app.engine.global_budget = v;
    }
    if let Some(v) = cli.chunk_fraction {
        app.engine.chunk_fraction = v;
    }
    if let Some(v) = &cli.scoring_mode {
        app.engine.scoring_mode = v.parse()?;
    }
    app.engine.validate()?;

    let templates = match &app.templates_dir {
        Some(dir) => TemplateSet::with_overrides(dir)?,
        None => TemplateSet::builtin(),
    };
    let providers = Providers::from_config(&app.providers, app.engine.retry)?;
    let index_dir = cli.index_dir.clone().or_else(|| app.index_dir.clone());
    Ok(Setup {
        app,
        providers,
        templates,
        index_dir,
    })
}

fn require_index_dir(setup: &Setup) -> Result<&Path> {
    setup.index_dir.as_deref().ok_or_else(|| {
        Error::Config("no index directory (pass --index-dir or set index_dir)".into())
    })
}

fn load_engine(setup: &Setup) -> Result<Engine> {
    let dir = require_index_dir(setup)?;
    Engine::load(
        dir,
        setup.app.engine.clone(),
        setup.providers.clone(),
        setup.templates.clone(),
    )
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string(value).map_err(|e| Error::json("stdout", e))?;
    println!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let setup = setup(&cli)?;
    match &cli.command {
        Command::Index { corpus_dir } => {
            let dir = require_index_dir(&setup)?.to_path_buf();
            let corpus = load_corpus(corpus_dir)?;
            let mut engine = Engine::new(
                setup.app.engine.clone(),
                setup.providers.clone(),
                setup.templates.clone(),
            );
            let report = engine.build(&corpus)?;
            engine.save(&dir)?;
            let summary = serde_json::json!({
                "stats": engine.stats(),
                "new_edges": report.delta.new_edges.len(),
                "new_time_nodes": report.delta.new_time_nodes.len(),
                "reports_generated": report.regenerated_reports.len(),
                "skipped_records": report.delta.skipped_records,
                "indexing_meter": engine.providers.indexing_llm.token_meter(),
            });
            if cli.json {
                print_json(&summary)?;
            } else {
                println!("indexed {} documents into {}", corpus.len(), dir.display());
                println!("{}", serde_json::to_string_pretty(&summary).unwrap());
            }
            Ok(())
        }
        Command::Update { docs_dir } => {
            let dir = require_index_dir(&setup)?.to_path_buf();
            let docs = load_corpus(docs_dir)?;
            let mut engine = load_engine(&setup)?;
            let report = engine.update(&docs)?;
            engine.save(&dir)?;
            let summary = serde_json::json!({
                "delta": report.delta,
                "reports_regenerated": report.regenerated_reports,
                "stats": engine.stats(),
            });
            if cli.json {
                print_json(&summary)?;
            } else {
                println!("{}", serde_json::to_string_pretty(&summary).unwrap());
            }
            Ok(())
        }
        Command::Query {
            mode,
            trace,
            question,
        } => {
            let engine = load_engine(&setup)?;
            let record = match mode.as_str() {
                "local" => engine.answer_local(question, None)?,
                "global" => engine.answer_global(question, None)?,
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "mode must be local or global, got {other:?}"
                    )))
                }
            };
            if cli.json {
                print_json(&record)?;
            } else {
                println!("{}", record.answer);
                if *trace {
                    println!("{}", serde_json::to_string_pretty(&record.trace).unwrap());
                }
            }
            Ok(())
        }
        Command::Stats => {
            let engine = load_engine(&setup)?;
            let stats = engine.stats();
            if cli.json {
                print_json(&stats)?;
            } else {
                println!("{}", serde_json::to_string_pretty(&stats).unwrap());
            }
            Ok(())
        }
        Command::Eval { protocol, judge } => {
            let spec = ProtocolSpec::load(protocol)?;
            let base_corpus = load_corpus(&spec.base_corpus)?;
            let new_corpus = load_corpus(&spec.new_corpus)?;
            let base_queries = read_queries(&spec.base_queries)?;
            let new_queries = read_queries(&spec.new_queries)?;
            let mut engine = Engine::new(
                setup.app.engine.clone(),
                setup.providers.clone(),
                setup.templates.clone(),
            );
            let report = run_protocol(
                &mut engine,
                &base_corpus,
                &new_corpus,
                &base_queries,
                &new_queries,
            )?;
            let judgments = if *judge {
                let mut out = Vec::new();
                for scenario in &report.scenarios {
                    let summary = tgrag::eval::judge(
                        &scenario.records,
                        setup.providers.judge_llm.as_ref(),
                        &setup.templates,
                    )?;
                    out.push((scenario.scenario.clone(), summary));
                }
                Some(out)
            } else {
                None
            };
            if cli.json {
                match &judgments {
                    Some(j) => {
                        let judged: Vec<serde_json::Value> = j
                            .iter()
                            .map(|(name, summary)| {
                                serde_json::json!({"scenario": name, "judge": summary})
                            })
                            .collect();
                        print_json(&serde_json::json!({
                            "scenarios": report.scenarios,
                            "judgments": judged,
                        }))?;
                    }
                    None => print_json(&report)?,
                }
            } else {
                print!("{}", report.render_table());
                if let Some(j) = &judgments {
                    for (name, summary) in j {
                        println!(
                            "judge [{name}]: correct {:.3}, refusal {:.3}, incorrect {:.3} ({} unparsed)",
                            summary.mean_correct,
                            summary.mean_refusal,
                            summary.mean_incorrect,
                            summary.unparsed
                        );
                    }
                }
            }
            Ok(())
        }
        Command::Export { out } => {
            let engine = load_engine(&setup)?;
            let state = &engine.state;
            let dump = serde_json::json!({
                "stats": state.stats(),
                "entities": state.graph.entities().values().collect::<Vec<_>>(),
                "edges": state.graph.edges().values().collect::<Vec<_>>(),
                "time_nodes": state.graph.time_nodes().values().collect::<Vec<_>>(),
                "reports": state.reports.iter().map(|(_, r)| r).collect::<Vec<_>>(),
            });
            match out {
                Some(path) => {
                    std::fs::write(path, serde_json::to_string_pretty(&dump).unwrap())?;
                }
                None => println!("{}", serde_json::to_string(&dump).unwrap()),
            }
            Ok(())
        }
        Command::Serve { addr } => {
            let engine = load_engine(&setup)?;
            let state = ServiceState::new(
                engine.state,
                setup.app.engine.clone(),
                setup.providers.clone(),
                setup.templates.clone(),
                setup.index_dir.clone(),
            );
            let addr = addr.clone();
            let runtime = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()?;
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&addr).await?;
                eprintln!("listening on {addr}");
                tgrag::service::run(listener, state).await
            })?;
            Ok(())
        }
    }
}

#[derive(Debug, Deserialize)]
struct ProtocolSpec {
    base_corpus: PathBuf,
    new_corpus: PathBuf,
    base_queries: PathBuf,
    new_queries: PathBuf,
}

impl ProtocolSpec {
    fn load(path: &Path) -> Result<ProtocolSpec> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut spec: ProtocolSpec =
            serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut spec.base_corpus,
            &mut spec.new_corpus,
            &mut spec.base_queries,
            &mut spec.new_queries,
        ] {
            if p.is_relative() {
                *p = base.join(&p);
            }
        }
        Ok(spec)
    }
}
