//! `discharge-eval`: batch front end for the discharge-planning evaluation harness.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use discharge_core::buffer::DiscrepancyStore;
use discharge_core::guidelines::{index_chunks, load_chunks, RetrievalIndex};
use discharge_core::harness::{
    comparison_csv, comparison_markdown, read_summaries, replay_run_id, write_comparison, BackendSpec, Cohort,
    ConfigName, EpisodeResult, Harness, RunConfig, RunObserver, RunSummary,
};
use discharge_core::ingest::{assemble_bundles, filter_active, load_ndjson, ActiveFilterPolicy};
use discharge_core::planner::{HttpBackendConfig, ScriptedPolicy};
use discharge_core::snapshot::{is_eligible, summarize};
use discharge_service::ServiceConfig;
use tracing::{info, warn};

mod settings;

use settings::{BackendKind, FileConfig, Session, SessionArgs, DEFAULT_ADDR, TOKEN_ENV};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Run(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

fn run_err(e: impl std::fmt::Display) -> CliError {
    CliError::Run(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "discharge-eval", version, about = "Planner/Auditor reliability evaluation for discharge planning")]
struct Cli {
    /// Log filter (tracing env-filter syntax); RUST_LOG wins when set.
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load an NDJSON directory or Bundle file and report patient and eligibility counts.
    Ingest {
        path: PathBuf,
    },
    /// Run one or more ablation configurations and print the comparison table.
    Run {
        #[command(flatten)]
        session: SessionArgs,
        /// Comma-separated config names, or `all`.
        #[arg(long)]
        configs: Option<String>,
        /// Policy for a buffer_replay run included via `all`.
        #[arg(long)]
        replay_policy: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        /// Prefix for run ids (and so buffer entry ids). Defaults to a timestamp.
        #[arg(long)]
        run_tag: Option<String>,
    },
    /// Replay pending discrepancy-buffer entries.
    Replay {
        #[command(flatten)]
        session: SessionArgs,
    },
    /// Render summaries from a run directory.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long, value_enum, default_value = "md")]
        format: ReportFormat,
    },
    /// Serve the HTTP API until interrupted.
    Serve {
        #[command(flatten)]
        session: SessionArgs,
        #[arg(long)]
        replay_policy: Option<PathBuf>,
        #[arg(long)]
        addr: Option<SocketAddr>,
        /// Allowed CORS origin; repeatable.
        #[arg(long = "allowed-origin")]
        allowed_origins: Vec<String>,
        /// Static dashboard build to serve under /ui.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReportFormat {
    Csv,
    Md,
    Json,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .or_else(|_| tracing_subscriber::EnvFilter::try_new(&cli.log))
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();

    let result = match cli.command {
        Command::Ingest { path } => ingest(&path),
        Command::Run { session, configs, replay_policy, workers, run_tag } => {
            run(&session, configs, replay_policy, workers, run_tag)
        }
        Command::Replay { session } => replay(&session),
        Command::Report { run_dir, format } => report(&run_dir, format),
        Command::Serve { session, replay_policy, addr, allowed_origins, ui_dir } => {
            serve(&session, replay_policy, addr, allowed_origins, ui_dir)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn ingest(path: &Path) -> Result<(), CliError> {
    if !path.exists() {
        return Err(CliError::Usage(format!("{} does not exist", path.display())));
    }
    let report = load_ndjson(path).map_err(run_err)?;
    for w in &report.warnings {
        eprintln!("warning: {}: {}", w.location, w.message);
    }
    let resources = report.resources.len();
    let assembled = assemble_bundles(report.resources);
    for w in &assembled.warnings {
        eprintln!("warning: {}: {}", w.location, w.message);
    }
    let policy = ActiveFilterPolicy::default();
    let eligible = assembled.bundles.iter().filter(|b| is_eligible(&summarize(&filter_active(b, &policy)))).count();
    println!("resources: {resources}, skipped: {}", report.warnings.len() + assembled.warnings.len());
    println!("patients: {}, eligible: {eligible}", assembled.bundles.len());
    Ok(())
}

fn parse_configs(list: &str, pending: usize) -> Result<Vec<ConfigName>, CliError> {
    let mut out = Vec::new();
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if item == "all" {
            out.extend(ConfigName::ABLATION);
            if pending > 0 {
                out.push(ConfigName::BufferReplay);
            }
        } else {
            out.push(item.parse().map_err(|e| CliError::Usage(format!("{e}")))?);
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage("no configs given".into()));
    }
    Ok(out)
}

fn load_index(path: Option<&Path>) -> Result<RetrievalIndex, CliError> {
    let Some(path) = path else { return Ok(RetrievalIndex::empty()) };
    if !path.exists() {
        return Err(CliError::Usage(format!("guidelines file {} does not exist", path.display())));
    }
    index_chunks(load_chunks(path).map_err(run_err)?).map_err(run_err)
}

fn backend_spec(kind: BackendKind, policy: Option<&Path>) -> Result<BackendSpec, CliError> {
    match kind {
        BackendKind::Scripted => {
            let policy = match policy {
                Some(p) => {
                    let text = std::fs::read_to_string(p)
                        .map_err(|e| CliError::Usage(format!("cannot read policy {}: {e}", p.display())))?;
                    ScriptedPolicy::from_json(&text)
                        .map_err(|e| CliError::Usage(format!("invalid policy {}: {e}", p.display())))?
                }
                None => ScriptedPolicy::default(),
            };
            Ok(BackendSpec::Scripted(policy))
        }
        BackendKind::Http => HttpBackendConfig::from_env().map(BackendSpec::Http).ok_or_else(|| {
            CliError::Usage(format!("--backend http needs {}", discharge_core::planner::ENV_ENDPOINT))
        }),
    }
}

/// Logs per-episode progress.
struct Progress;

impl RunObserver for Progress {
    fn episode_completed(&self, run_id: &str, result: &EpisodeResult) {
        info!(run_id, episode = %result.episode_id, skipped = result.skipped, "episode done");
    }
}

fn session_for(
    s: &Session,
    spec: &BackendSpec,
    cohort: &Cohort,
    index: &RetrievalIndex,
) -> Result<Harness, CliError> {
    Harness::from_spec(cohort.clone(), index.clone(), spec, s.seed, DiscrepancyStore::new(&s.buffer)).map_err(run_err)
}

fn print_table(summaries: &[RunSummary]) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(comparison_markdown(summaries).as_bytes());
    let _ = out.flush();
}

fn run(
    args: &SessionArgs,
    configs: Option<String>,
    replay_policy: Option<PathBuf>,
    workers: Option<usize>,
    run_tag: Option<String>,
) -> Result<(), CliError> {
    let file = FileConfig::load(args.config.as_deref())?;
    let s = Session::merge(args, &file);
    let list = configs.or_else(|| file.configs.as_ref().map(|c| c.join(","))).unwrap_or_else(|| "all".into());
    let pending = DiscrepancyStore::new(&s.buffer).pending().map_err(run_err)?.len();
    let names = parse_configs(&list, pending)?;
    let workers = workers.or(file.workers).unwrap_or(1);

    let mut cfgs = Vec::new();
    for &name in &names {
        let mut cfg = RunConfig::new(name).with_seed(s.seed).with_patient_limit(s.limit);
        cfg.worker_count = workers;
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        cfgs.push(cfg);
    }
    let spec = s.cohort_spec()?;
    let index = load_index(s.guidelines.as_deref())?;
    let main_spec = backend_spec(s.backend, s.policy.as_deref())?;
    let replay_policy = replay_policy.or(file.replay_policy).or_else(|| s.policy.clone());
    let replay_spec = backend_spec(s.backend, replay_policy.as_deref())?;
    let cohort = Cohort::resolve(spec, s.limit, &ActiveFilterPolicy::default()).map_err(run_err)?;
    info!(patients = cohort.len(), "cohort resolved");

    let main = session_for(&s, &main_spec, &cohort, &index)?;
    let replay = session_for(&s, &replay_spec, &cohort, &index)?;
    let tag = run_tag.or(file.run_tag).unwrap_or_else(default_tag);

    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    for cfg in &cfgs {
        let (harness, run_id) = if cfg.name == ConfigName::BufferReplay {
            let pending = replay.buffer.pending().map_err(run_err)?;
            (&replay, replay_run_id(&pending))
        } else {
            (&main, format!("{tag}-{}", cfg.name))
        };
        let run_dir = s.out.join(cfg.name.as_str());
        match harness.run(cfg, &run_id, &run_dir, &Progress) {
            Ok(outcome) => summaries.push(outcome.summary),
            Err(e) => {
                warn!(config = %cfg.name, "run failed: {e}");
                failures.push(format!("{}: {e}", cfg.name));
            }
        }
    }
    if !summaries.is_empty() {
        write_comparison(&s.out, &summaries).map_err(run_err)?;
        print_table(&summaries);
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Run(failures.join("; ")))
    }
}

fn default_tag() -> String {
    let ms = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or_default();
    format!("r{ms}")
}

fn replay(args: &SessionArgs) -> Result<(), CliError> {
    let file = FileConfig::load(args.config.as_deref())?;
    let s = Session::merge(args, &file);
    let store = DiscrepancyStore::new(&s.buffer);
    let pending = store.pending().map_err(run_err)?;
    if pending.is_empty() {
        return Err(CliError::Run(format!("discrepancy buffer {} has no pending entries", s.buffer.display())));
    }
    let cfg = RunConfig::new(ConfigName::BufferReplay).with_seed(s.seed).with_patient_limit(s.limit);
    let spec = s.cohort_spec()?;
    let index = load_index(s.guidelines.as_deref())?;
    let backend = backend_spec(s.backend, s.policy.as_deref())?;
    let cohort = Cohort::resolve(spec, s.limit, &ActiveFilterPolicy::default()).map_err(run_err)?;
    let harness = session_for(&s, &backend, &cohort, &index)?;
    let outcome = harness
        .run(&cfg, &replay_run_id(&pending), &s.out.join(ConfigName::BufferReplay.as_str()), &Progress)
        .map_err(run_err)?;
    let summaries = [outcome.summary];
    write_comparison(&s.out, &summaries).map_err(run_err)?;
    print_table(&summaries);
    Ok(())
}

fn report(run_dir: &Path, format: ReportFormat) -> Result<(), CliError> {
    let path = if run_dir.is_dir() { run_dir.join("summary.json") } else { run_dir.to_path_buf() };
    let summaries = read_summaries(&path).map_err(run_err)?;
    let body = match format {
        ReportFormat::Md => comparison_markdown(&summaries),
        ReportFormat::Csv => comparison_csv(&summaries),
        ReportFormat::Json => {
            // Keep the file's shape: a lone object stays an object.
            let text = std::fs::read_to_string(&path).map_err(run_err)?;
            let single = text.trim_start().starts_with('{');
            let json = if single {
                serde_json::to_string_pretty(&summaries[0])
            } else {
                serde_json::to_string_pretty(&summaries)
            };
            json.map_err(run_err)? + "\n"
        }
    };
    print!("{body}");
    Ok(())
}

fn serve(
    args: &SessionArgs,
    replay_policy: Option<PathBuf>,
    addr: Option<SocketAddr>,
    allowed_origins: Vec<String>,
    ui_dir: Option<PathBuf>,
) -> Result<(), CliError> {
    let file = FileConfig::load(args.config.as_deref())?;
    let s = Session::merge(args, &file);
    let cohort = s.cohort_spec()?.to_string();
    let index = load_index(s.guidelines.as_deref())?;
    let mut cfg = ServiceConfig::new(&s.out, cohort, index, backend_spec(s.backend, s.policy.as_deref())?);
    if let Some(p) = replay_policy.or(file.replay_policy) {
        cfg.replay_backend = Some(backend_spec(s.backend, Some(&p))?);
    }
    cfg.buffer_path = s.buffer.clone();
    cfg.default_seed = s.seed;
    cfg.patient_limit = s.limit;
    let origins = if allowed_origins.is_empty() { file.allowed_origins.unwrap_or_default() } else { allowed_origins };
    if !origins.is_empty() {
        cfg.allowed_origins = origins;
    }
    cfg.ui_dir = ui_dir.or(file.ui_dir);
    cfg.bearer_token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
    let addr = addr.or(file.addr).unwrap_or_else(|| DEFAULT_ADDR.parse().expect("default address"));

    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(run_err)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(run_err)?;
        let local = listener.local_addr().map_err(run_err)?;
        println!("listening on http://{local}");
        let _ = std::io::stdout().flush();
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        discharge_service::serve_listener(cfg, listener, shutdown).await.map_err(run_err)
    })
}
