use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Deserialize;

use crate::CliError;

pub const DEFAULT_BUFFER: &str = "data/discrepancy_buffer.jsonl";
pub const DEFAULT_OUT: &str = "runs";
pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";
pub const TOKEN_ENV: &str = "DISCHARGE_API_TOKEN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Scripted,
    Http,
}

/// Values a JSON `--config` file may set. Flags take precedence.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub cohort: Option<String>,
    pub configs: Option<Vec<String>>,
    pub limit: Option<usize>,
    pub seed: Option<u64>,
    pub backend: Option<BackendKind>,
    pub out: Option<PathBuf>,
    pub policy: Option<PathBuf>,
    pub replay_policy: Option<PathBuf>,
    pub guidelines: Option<PathBuf>,
    pub buffer: Option<PathBuf>,
    pub workers: Option<usize>,
    pub run_tag: Option<String>,
    pub addr: Option<SocketAddr>,
    pub allowed_origins: Option<Vec<String>>,
    pub ui_dir: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }
}

/// Flags shared by every subcommand that builds a harness session.
#[derive(Debug, Clone, Args)]
pub struct SessionArgs {
    /// JSON file with default values for these flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// NDJSON directory, Bundle file, or FHIR server base URL.
    #[arg(long)]
    pub cohort: Option<String>,
    /// Maximum patients (or buffer entries) per run.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// Scripted backend policy (JSON). Defaults to the built-in policy.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Guideline chunks (JSON array) for retrieval. Without it retrieval returns nothing.
    #[arg(long)]
    pub guidelines: Option<PathBuf>,
    /// Discrepancy buffer file.
    #[arg(long)]
    pub buffer: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// `SessionArgs` merged with the config file and defaults.
#[derive(Debug, Clone)]
pub struct Session {
    pub cohort: Option<String>,
    pub limit: usize,
    pub seed: u64,
    pub backend: BackendKind,
    pub policy: Option<PathBuf>,
    pub guidelines: Option<PathBuf>,
    pub buffer: PathBuf,
    pub out: PathBuf,
}

impl Session {
    pub fn merge(args: &SessionArgs, file: &FileConfig) -> Self {
        Self {
            cohort: args.cohort.clone().or_else(|| file.cohort.clone()),
            limit: args.limit.or(file.limit).unwrap_or(50),
            seed: args.seed.or(file.seed).unwrap_or(0),
            backend: args.backend.or(file.backend).unwrap_or(BackendKind::Scripted),
            policy: args.policy.clone().or_else(|| file.policy.clone()),
            guidelines: args.guidelines.clone().or_else(|| file.guidelines.clone()),
            buffer: args.buffer.clone().or_else(|| file.buffer.clone()).unwrap_or_else(|| DEFAULT_BUFFER.into()),
            out: args.out.clone().or_else(|| file.out.clone()).unwrap_or_else(|| DEFAULT_OUT.into()),
        }
    }

    /// The cohort spec; a local path must exist.
    pub fn cohort_spec(&self) -> Result<&str, CliError> {
        let spec = self.cohort.as_deref().ok_or_else(|| CliError::Usage("--cohort is required".into()))?;
        let remote = spec.starts_with("http://") || spec.starts_with("https://");
        if !remote && !Path::new(spec).exists() {
            return Err(CliError::Usage(format!("cohort path {spec} does not exist")));
        }
        Ok(spec)
    }
}
