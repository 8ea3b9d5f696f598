use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use genedit_core::clock::SystemClock;
use genedit_core::editflow::Verdict;
use genedit_core::generation::{generate, GenerationConfig};
use genedit_core::knowledge::KnowledgeStore;
use genedit_core::provider::{ChatProvider, HttpProvider, HttpProviderConfig, ScriptedProvider};

use genedit_service::commands::{self, CliError, EvalArgs, IngestSource};
use genedit_service::config::ServiceConfig;
use genedit_service::state::{build_executor, build_provider, AppState};

#[derive(Parser)]
#[command(name = "genedit", about = "Text-to-SQL generation with feedback-driven knowledge edits")]
struct Cli {
    /// Service config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Use a scripted provider instead of the configured one.
    #[arg(long, global = true)]
    provider_script: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP API.
    Serve {
        /// Overrides the configured listen address.
        #[arg(long)]
        listen: Option<std::net::SocketAddr>,
    },
    /// Generate SQL for one question and print the trace.
    Generate {
        query: String,
        #[arg(long)]
        db: Option<String>,
        #[arg(long)]
        version: Option<String>,
    },
    /// Execution accuracy on a BIRD-layout benchmark directory.
    Eval {
        #[arg(long)]
        benchmark: PathBuf,
        #[arg(long)]
        fraction: f64,
        #[arg(long)]
        seed: u64,
        /// schema_linking, instructions, examples, pseudo_sql or decomposition.
        #[arg(long)]
        ablate: Vec<String>,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        /// Knowledge directory to start from.
        #[arg(long)]
        knowledge: Option<PathBuf>,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the JSON report instead of the table.
        #[arg(long)]
        json: bool,
    },
    /// Add records to the knowledge set.
    Ingest {
        #[command(subcommand)]
        source: IngestCommand,
        #[arg(long, default_value = "cli")]
        actor: String,
    },
    /// Knowledge-set versions.
    Checkpoint {
        #[command(subcommand)]
        action: CheckpointCommand,
    },
    /// Golden-case regression runs.
    Regression {
        #[command(subcommand)]
        action: RegressionCommand,
    },
}

#[derive(Subcommand)]
enum IngestCommand {
    /// JSON array of {name, description, keywords}.
    Intents { file: PathBuf },
    /// JSON array of {id?, nl_text, sql, intents, db_id?}.
    QueryLog { file: PathBuf },
    /// Plain-text documents; guidelines are extracted by the provider.
    Docs { files: Vec<PathBuf> },
    /// Tables and columns of a configured database.
    Schema { db_id: String },
}

#[derive(Subcommand)]
enum CheckpointCommand {
    List,
    Revert {
        version: String,
        #[arg(long, default_value = "cli")]
        actor: String,
    },
}

#[derive(Subcommand)]
enum RegressionCommand {
    Run {
        #[arg(long)]
        golden: Option<PathBuf>,
        /// Check a session's submitted edits instead of head alone.
        #[arg(long)]
        session: Option<String>,
    },
}

fn load_config(cli: &Cli) -> Result<ServiceConfig, CliError> {
    let path = cli.config.as_ref().ok_or("this command needs --config <file>")?;
    let mut config = ServiceConfig::load(path)?;
    if let Some(script) = &cli.provider_script {
        config.provider = genedit_service::config::ProviderSettings::Scripted { script: script.clone() };
    }
    Ok(config)
}

/// `--provider-script`, else the configured provider, else the environment.
fn provider(cli: &Cli, config: Option<&ServiceConfig>) -> Result<Arc<dyn ChatProvider>, CliError> {
    if let Some(script) = &cli.provider_script {
        return Ok(Arc::new(ScriptedProvider::from_file(script)?));
    }
    if let Some(c) = config {
        return Ok(build_provider(&c.provider)?);
    }
    let http = HttpProviderConfig::from_env()
        .ok_or("no provider: pass --provider-script, --config, or set GENEDIT_PROVIDER_URL")?;
    Ok(Arc::new(HttpProvider::new(http)?))
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("json"));
}

fn open_store(config: &ServiceConfig) -> Result<Arc<KnowledgeStore>, CliError> {
    Ok(Arc::new(KnowledgeStore::open(&config.knowledge_dir, Arc::new(SystemClock))?))
}

async fn serve(config: ServiceConfig, listen: Option<std::net::SocketAddr>) -> Result<(), CliError> {
    let addr = listen.unwrap_or(config.listen);
    let state = tokio::task::spawn_blocking(move || AppState::from_config(&config)).await??;
    let app = genedit_service::router(Arc::new(state));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    match &cli.command {
        Command::Serve { listen } => {
            let config = load_config(&cli)?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(serve(config, *listen))?;
        }
        Command::Generate { query, db, version } => {
            let config = load_config(&cli)?;
            let store = open_store(&config)?;
            let executor = build_executor(&config)?;
            let provider = provider(&cli, Some(&config))?;
            let snapshot = store.snapshot(version.as_deref().unwrap_or(&store.head()))?;
            let db = db.clone().unwrap_or_else(|| config.default_db().to_string());
            let trace = generate(query, &db, &snapshot, provider.as_ref(), &executor, &config.generation());
            println!("{}", trace.to_json());
        }
        Command::Eval { benchmark, fraction, seed, ablate, workers, knowledge, out, json } => {
            let config = cli.config.as_ref().map(|_| load_config(&cli)).transpose()?;
            let provider = provider(&cli, config.as_ref())?;
            let generation = config.as_ref().map(ServiceConfig::generation).unwrap_or_else(GenerationConfig::default);
            let args = EvalArgs {
                benchmark: benchmark.clone(),
                fraction: *fraction,
                seed: *seed,
                ablate: ablate.clone(),
                workers: *workers,
                knowledge: knowledge.clone().or_else(|| config.as_ref().map(|c| c.knowledge_dir.clone())),
            };
            let report = commands::eval(&args, provider.as_ref(), &generation)?;
            if let Some(path) = out {
                std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
            }
            if *json {
                print_json(&report);
            } else {
                print!("{}", report.table());
            }
        }
        Command::Ingest { source, actor } => {
            let config = load_config(&cli)?;
            let store = open_store(&config)?;
            let executor = build_executor(&config)?;
            let source = match source {
                IngestCommand::Intents { file } => IngestSource::Intents(file.clone()),
                IngestCommand::QueryLog { file } => IngestSource::QueryLog(file.clone()),
                IngestCommand::Docs { files } => IngestSource::Docs(files.clone()),
                IngestCommand::Schema { db_id } => IngestSource::Schema(db_id.clone()),
            };
            let provider = provider(&cli, Some(&config))?;
            print_json(&commands::ingest(&store, &source, provider.as_ref(), &executor, actor)?);
        }
        Command::Checkpoint { action } => {
            let config = load_config(&cli)?;
            let store = open_store(&config)?;
            match action {
                CheckpointCommand::List => {
                    let mut versions = store.versions();
                    versions.reverse();
                    print_json(&serde_json::json!({ "head": store.head(), "versions": versions }));
                }
                CheckpointCommand::Revert { version, actor } => {
                    let new_version = store.revert(version, actor)?;
                    print_json(&serde_json::json!({ "reverted_to": version, "version_id": new_version }));
                }
            }
        }
        Command::Regression { action: RegressionCommand::Run { golden, session } } => {
            let config = load_config(&cli)?;
            let store = open_store(&config)?;
            let executor = build_executor(&config)?;
            let provider = provider(&cli, Some(&config))?;
            let report = commands::regression(
                store,
                &config.sessions_file(),
                golden.as_deref().unwrap_or(&config.golden_file),
                session.as_deref(),
                provider.as_ref(),
                &executor,
                &config.generation(),
                config.workers,
            )?;
            print_json(&report);
            let failing = report.cases.iter().any(|c| !c.new_ex);
            if report.verdict == Verdict::Fail || (session.is_none() && failing) {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("genedit: {e}");
            ExitCode::from(2)
        }
    }
}
