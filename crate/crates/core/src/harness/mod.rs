//! Command-line entry points: structure checks, learning, inference and
//! traffic benchmarks.

mod bench;
mod config;
mod infer;
mod learn;
mod member;
mod validate;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::net::{AbortReason, SessionError};
use crate::protocols::ProtocolError;
use crate::spn::ParseError;

pub use bench::BenchArgs;
pub use config::{RunConfig, Settings};
pub use infer::InferArgs;
pub use learn::{LearnArgs, LearnMode};
pub use member::{MemberArgs, MemberTask};
pub use validate::ValidateArgs;

/// Whether share files may be combined back into plaintext.
pub const RECONSTRUCT_ALLOWED: bool = cfg!(any(debug_assertions, feature = "debug-reconstruct"));

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    /// A debug comparison against plaintext learning failed.
    #[error("{0}")]
    Mismatch(String),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 1 usage or input, 2 validation, 3 protocol, 4 connectivity,
    /// 5 degenerate data.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) | HarnessError::Io { .. } | HarnessError::Parse(_) => 1,
            HarnessError::Validation(_) => 2,
            HarnessError::Mismatch(_) => 3,
            HarnessError::Protocol(e) if e.is_degenerate() => 5,
            HarnessError::Protocol(e) => match e {
                ProtocolError::Query(_) => 1,
                ProtocolError::Structure(_)
                | ProtocolError::Selectivity { .. }
                | ProtocolError::Arith(_)
                | ProtocolError::Model(_)
                | ProtocolError::PartyCount { .. } => 2,
                ProtocolError::Session(s) if is_connectivity(s) => 4,
                _ => 3,
            },
        }
    }
}

fn is_connectivity(e: &SessionError) -> bool {
    match e {
        SessionError::Transport(_) => true,
        SessionError::Aborted { reason, .. } => matches!(
            reason,
            AbortReason::Disconnected(_) | AbortReason::Deadlock { .. }
        ),
        _ => false,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "privspn",
    version,
    about = "Private sum-product network learning and inference"
)]
pub struct Cli {
    /// TOML file with run parameters; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a structure (and optionally datasets) and print its statistics.
    Validate(ValidateArgs),
    /// Learn weights in plaintext or jointly over shares.
    Learn(LearnArgs),
    /// Answer a conditional query from plaintext weights or share files.
    Infer(InferArgs),
    /// Traffic and wall time over structures and party counts.
    Bench(BenchArgs),
    /// Run one member of a distributed session.
    Member(MemberArgs),
}

impl Cli {
    pub fn run(self, out: &mut dyn Write) -> Result<(), HarnessError> {
        let file = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        match self.command {
            Command::Validate(a) => validate::run(a, file, out),
            Command::Learn(a) => learn::run(a, file, out),
            Command::Infer(a) => infer::run(a, file, out),
            Command::Bench(a) => bench::run(a, file, out),
            Command::Member(a) => member::run(a, file, out),
        }
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code. Diagnostics go to stderr.
pub fn main_with<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match cli.run(out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn emit(out: &mut dyn Write, text: impl AsRef<str>) -> Result<(), HarnessError> {
    out.write_all(text.as_ref().as_bytes())
        .map_err(|e| HarnessError::io(Path::new("<stdout>"), e))
}
