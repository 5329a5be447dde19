//! Command line front end: generate benchmark suites, sweep writers against
//! certified optima, certify the solver pair, score exported memories, and
//! run cost-rule sensitivity audits. All outputs are plain CSV/JSON so any
//! plotter can redraw the figures; fixed seeds give byte-identical files.

mod certify;
mod generate;
mod score;
mod sensitivity;
mod sweep;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use thiserror::Error;

use memsel::generator::{Distribution, GeneratorError};
use memsel::package::{CostRule, PackageError};
use memsel::scoring::{PrunePolicy, ScoringError};
use memsel::solver::SolverError;
use memsel::writers::WriterError;

/// Failure classes map one-to-one onto exit codes: 1 usage, 2 failed
/// certification, 3 bad or out-of-scope data. Success is 0.
#[derive(Debug, Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Certification(String),
    #[error("{0}")]
    Data(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Certification(_) => 2,
            Failure::Data(_) => 3,
        }
    }
}

impl From<PackageError> for Failure {
    fn from(err: PackageError) -> Failure {
        Failure::Data(err.to_string())
    }
}

impl From<GeneratorError> for Failure {
    fn from(err: GeneratorError) -> Failure {
        // Generator parameters come straight from flags or override files.
        Failure::Usage(err.to_string())
    }
}

impl From<WriterError> for Failure {
    fn from(err: WriterError) -> Failure {
        match err {
            WriterError::InvalidParameter(_) => Failure::Usage(err.to_string()),
            WriterError::Package(inner) => inner.into(),
        }
    }
}

impl From<SolverError> for Failure {
    fn from(err: SolverError) -> Failure {
        match err {
            SolverError::Scope { .. } => Failure::Data(err.to_string()),
            SolverError::Package(inner) => inner.into(),
        }
    }
}

impl From<ScoringError> for Failure {
    fn from(err: ScoringError) -> Failure {
        match err {
            ScoringError::InvalidParameter(_) => Failure::Usage(err.to_string()),
            ScoringError::Solver(inner) => inner.into(),
            ScoringError::Writer(inner) => inner.into(),
            other => Failure::Data(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "memsel",
    version,
    about = "Budgeted memory-store selection: exact optima, write policies, export scoring"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample benchmark packages and write a suite manifest.
    Generate(generate::GenerateArgs),
    /// Evaluate methods against certified optima across a budget grid.
    Sweep(sweep::SweepArgs),
    /// Cross-check branch-and-bound against an independent enumerator.
    Certify(certify::CertifyArgs),
    /// Score exported memories under package and union denominators.
    ScoreExport(score::ScoreExportArgs),
    /// Compare optima and method rankings across cost rules and k.
    Sensitivity(sensitivity::SensitivityArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Generate(args) => generate::run(args),
        Command::Sweep(args) => sweep::run(args),
        Command::Certify(args) => certify::run(args),
        Command::ScoreExport(args) => score::run(args),
        Command::Sensitivity(args) => sensitivity::run(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}

// ---- shared plumbing -------------------------------------------------------

pub(crate) fn read_file(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path)
        .map_err(|err| Failure::Data(format!("cannot read {}: {err}", path.display())))
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path)
        .map_err(|err| Failure::Data(format!("cannot read {}: {err}", path.display())))
}

/// Write via a sibling temp file and rename, so interrupted runs never leave
/// half a file behind.
pub(crate) fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|err| {
            Failure::Data(format!("cannot create {}: {err}", parent.display()))
        })?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents)
        .map_err(|err| Failure::Data(format!("cannot write {}: {err}", tmp.display())))?;
    std::fs::rename(&tmp, path)
        .map_err(|err| Failure::Data(format!("cannot move into {}: {err}", path.display())))
}

pub(crate) fn parse_distribution(s: &str) -> Result<Distribution, String> {
    Distribution::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Distribution::ALL.iter().map(|d| d.as_str()).collect();
        format!("unknown distribution {s:?}; expected one of {}", names.join(", "))
    })
}

pub(crate) fn parse_cost_rule(s: &str) -> Result<CostRule, String> {
    CostRule::parse(s).ok_or_else(|| format!("unknown cost rule {s:?}; expected word or byte-overhead"))
}

pub(crate) fn parse_policy(s: &str) -> Result<PrunePolicy, String> {
    PrunePolicy::parse(s).ok_or_else(|| {
        let names: Vec<&str> = PrunePolicy::ALL.iter().map(|p| p.as_str()).collect();
        format!("unknown prune policy {s:?}; expected one of {}", names.join(", "))
    })
}

pub(crate) fn parse_budget(s: &str) -> Result<f64, String> {
    let value: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if !value.is_finite() || value <= 0.0 {
        return Err(format!("budget must be positive and finite, got {s}"));
    }
    Ok(value)
}

pub(crate) fn parse_k(s: &str) -> Result<usize, String> {
    match s {
        "1" => Ok(1),
        "2" => Ok(2),
        _ => Err(format!("k must be 1 or 2, got {s:?}")),
    }
}

/// Names accepted by `--methods`, in the order they appear in reports.
pub(crate) const METHOD_REGISTRY: [&str; 8] = [
    "opt",
    "gvt",
    "estimated_gvt",
    "density_only",
    "recency_raw",
    "no_tombstone_opt",
    "fact_only_opt",
    "summary_only_opt",
];

pub(crate) fn parse_method(s: &str) -> Result<String, String> {
    if METHOD_REGISTRY.contains(&s) {
        Ok(s.to_string())
    } else {
        Err(format!(
            "unknown method {s:?}; expected one of {}",
            METHOD_REGISTRY.join(", ")
        ))
    }
}

/// Runs `work` on a rayon pool with `jobs` threads (0 = one per core).
pub(crate) fn with_pool<T: Send>(
    jobs: u32,
    work: impl FnOnce() -> T + Send,
) -> Result<T, Failure> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if jobs > 0 {
        builder = builder.num_threads(jobs as usize);
    }
    let pool = builder
        .build()
        .map_err(|err| Failure::Data(format!("cannot start worker pool: {err}")))?;
    Ok(pool.install(work))
}

/// Positive finite floats order the same as their IEEE bit patterns, which
/// makes budgets usable as BTreeMap keys.
pub(crate) fn budget_key(budget: f64) -> u64 {
    debug_assert!(budget.is_finite() && budget > 0.0);
    budget.to_bits()
}

pub(crate) fn manifest_relative(manifest: &Path, entry_path: &str) -> PathBuf {
    let candidate = Path::new(entry_path);
    if candidate.is_absolute() {
        candidate.to_path_buf()
    } else {
        match manifest.parent() {
            Some(dir) => dir.join(candidate),
            None => candidate.to_path_buf(),
        }
    }
}
