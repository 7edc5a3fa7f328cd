use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use genz_cli::config::{apply_override, DataSource, OracleBackend, RunConfig};
use genz_cli::{report, runner, CliError};

#[derive(Parser)]
#[command(name = "genz", version, about = "Learn interpretable LLM-queried features with generalized EM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its artifacts.
    Run(RunArgs),
    /// Summarize a finished run.
    Report { dir: PathBuf },
    /// Continue an interrupted run from its latest checkpoint.
    Resume { dir: PathBuf },
    /// Run against the remote endpoint while recording every exchange to a transcript.
    TranscriptRecord(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set discovery.k_add=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    oracle: Option<OracleBackend>,
    #[arg(long)]
    transcript: Option<PathBuf>,
    #[arg(long)]
    extract_model: Option<String>,
    #[arg(long)]
    mine_model: Option<String>,
    #[arg(long, requires = "format")]
    data: Option<PathBuf>,
    /// items_json, lines or ratings_matrix.
    #[arg(long, requires = "data")]
    format: Option<String>,
    #[arg(long)]
    split_fraction: Option<f64>,
    /// Seeds both the split and discovery.
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn into_config(self, recording: bool) -> Result<RunConfig, CliError> {
        let mut value = match &self.config {
            Some(path) => {
                let raw = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(vec![format!("cannot read config {}: {e}", path.display())]))?;
                serde_json::from_str(&raw).map_err(|e| {
                    CliError::Config(vec![format!("config {} is not valid JSON: {e}", path.display())])
                })?
            }
            None => json!({}),
        };
        let mut sets: Vec<(String, Value)> = Vec::new();
        if let Some(out) = self.out {
            sets.push(("output_dir".into(), json!(out)));
        }
        let backend = if recording { Some(OracleBackend::Remote) } else { self.oracle };
        if let Some(b) = backend {
            sets.push(("oracle.backend".into(), serde_json::to_value(b).expect("enum serializes")));
        }
        if let Some(t) = self.transcript {
            sets.push(("oracle.transcript".into(), json!(t)));
        }
        if let Some(m) = self.extract_model {
            sets.push(("oracle.extract_model".into(), json!(m)));
        }
        if let Some(m) = self.mine_model {
            sets.push(("oracle.mine_model".into(), json!(m)));
        }
        if let (Some(path), Some(format)) = (self.data, self.format) {
            let source = DataSource::from_flag(path, &format)?;
            sets.push(("data".into(), serde_json::to_value(source).expect("data source serializes")));
        }
        if let Some(f) = self.split_fraction {
            sets.push(("split.train_fraction".into(), json!(f)));
        }
        if let Some(s) = self.seed {
            sets.push(("split.seed".into(), json!(s)));
            sets.push(("discovery.seed".into(), json!(s)));
        }
        let mut errors = Vec::new();
        for (key, v) in sets {
            if let Err(e) = apply_override(&mut value, &format!("{key}={v}")) {
                errors.push(e);
            }
        }
        for o in &self.overrides {
            if let Err(e) = apply_override(&mut value, o) {
                errors.push(e);
            }
        }
        if !errors.is_empty() {
            return Err(CliError::Config(errors));
        }
        // Split has no serde default per field; fill the missing half so overrides can set one.
        if let Some(split) = value.get_mut("split").and_then(Value::as_object_mut) {
            split.entry("train_fraction").or_insert(json!(0.8));
            split.entry("seed").or_insert(json!(0));
        }
        let mut cfg = RunConfig::from_value(value)?;
        cfg.absolutize_paths()?;
        if recording && cfg.oracle.transcript.is_none() {
            return Err(CliError::Config(vec!["transcript-record needs --transcript".into()]));
        }
        Ok(cfg)
    }
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run(args) => {
            let cfg = args.into_config(false)?;
            let summary = runner::run(&cfg)?;
            log::info!("finished: {}", serde_json::to_string(&summary).unwrap_or_default());
            print!("{}", report::report(&cfg.output_dir)?);
        }
        Command::TranscriptRecord(args) => {
            let cfg = args.into_config(true)?;
            runner::run(&cfg)?;
            print!("{}", report::report(&cfg.output_dir)?);
        }
        Command::Resume { dir } => {
            runner::resume(&dir)?;
            print!("{}", report::report(&dir)?);
        }
        Command::Report { dir } => print!("{}", report::report(&dir)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
