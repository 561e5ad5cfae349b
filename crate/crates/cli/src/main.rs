mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use config::{Format, LoadedConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Convergence(String),
    /// A verification command ran to completion and some check failed.
    #[error("{0}")]
    Check(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Convergence(_) => "convergence",
            CliError::Check(_) => "check",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Check(_) => 1,
            CliError::Config(_) => 2,
            CliError::Convergence(_) => 3,
        }
    }
}

impl From<homconc::Error> for CliError {
    fn from(e: homconc::Error) -> Self {
        match e {
            homconc::Error::NonConvergence { .. } => CliError::Convergence(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "homconc", version, about = "Cell correctors, effective tensors and field-concentration bounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Accepted for interface stability; every computation is deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the cell problem and write correctors and the effective tensor.
    SolveCell(Common),
    /// Concentration moments `f_p` over a p-grid.
    Moments(Common),
    /// Lower bounds and Chebyshev tails from a macro solve and its cells.
    Bound(Common),
    /// Self-consistency checks of the closed-form crystallite solution.
    VerifyOracle(Common),
    /// Fine-scale sweep over epsilon.
    Sweep(Common),
}

impl Command {
    fn split(&self) -> (&'static str, &Common) {
        match self {
            Command::SolveCell(c) => ("solve-cell", c),
            Command::Moments(c) => ("moments", c),
            Command::Bound(c) => ("bound", c),
            Command::VerifyOracle(c) => ("verify-oracle", c),
            Command::Sweep(c) => ("sweep", c),
        }
    }
}

/// Writes command outputs and records what was written.
pub struct Output {
    pub dir: PathBuf,
    formats: Vec<Format>,
    pub files: Vec<String>,
}

impl Output {
    fn new(dir: PathBuf, formats: Vec<Format>) -> Result<Self, CliError> {
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir, formats, files: Vec::new() })
    }

    pub fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    pub fn csv(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        if self.formats.contains(&Format::Csv) {
            let p = self.path(name);
            std::fs::write(p, body)?;
        }
        Ok(())
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        if self.formats.contains(&Format::Json) {
            let p = self.path(name);
            std::fs::write(p, serde_json::to_string_pretty(value)? + "\n")?;
        }
        Ok(())
    }

    /// Written regardless of `output.formats`.
    pub fn always_json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let p = self.path(name);
        std::fs::write(p, serde_json::to_string_pretty(value)? + "\n")?;
        Ok(())
    }
}

fn provenance(name: &str, cfg: &LoadedConfig, common: &Common, tolerances: &Value, files: &[String]) -> Value {
    json!({
        "command": name,
        "config": cfg.path.display().to_string(),
        "config_sha256": hex::encode(Sha256::digest(&cfg.bytes)),
        "versions": { "homconc": homconc::VERSION, "homconc-cli": env!("CARGO_PKG_VERSION") },
        "tolerances": tolerances,
        "threads": common.threads,
        "seed": common.seed,
        "files": files,
    })
}

fn output_dir(cfg: &LoadedConfig, common: &Common) -> PathBuf {
    match (&common.out, &cfg.run.output.directory) {
        (Some(o), _) => o.clone(),
        (None, Some(d)) => cfg.resolve(d),
        (None, None) => cfg.base.join("out"),
    }
}

fn run(name: &str, common: &Common, command: &Command) -> Result<(), CliError> {
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let cfg = LoadedConfig::load(&common.config)?;
    let mut out = Output::new(output_dir(&cfg, common), cfg.run.output.formats.clone())?;
    let result = match command {
        Command::SolveCell(_) => commands::solve_cell(&cfg, &mut out),
        Command::Moments(_) => commands::moments(&cfg, &mut out),
        Command::Bound(_) => commands::bound(&cfg, &mut out),
        Command::VerifyOracle(_) => commands::verify_oracle(&cfg, &mut out),
        Command::Sweep(_) => commands::sweep(&cfg, &mut out),
    };
    let tolerances = match &result {
        Ok(t) => t.clone(),
        Err(_) => Value::Null,
    };
    let mut files = out.files.clone();
    files.push("provenance.json".into());
    out.always_json("provenance.json", &provenance(name, &cfg, common, &tolerances, &files))?;
    if let Err(e) = &result {
        write_error(&out.dir, e);
    }
    result.map(|_| ())
}

fn error_json(e: &CliError) -> Value {
    json!({ "error": { "kind": e.kind(), "exit_code": e.exit_code(), "message": e.to_string() } })
}

fn write_error(dir: &Path, e: &CliError) {
    let _ = std::fs::write(dir.join("error.json"), serde_json::to_string_pretty(&error_json(e)).unwrap() + "\n");
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, common) = cli.command.split();
    match run(name, common, &cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(e.exit_code())
        }
    }
}
