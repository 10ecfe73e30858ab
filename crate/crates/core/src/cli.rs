//! Command-line front end: `run`, `gen`, `audit` and `verify`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use crate::abc::{verify_export, ChainFileError};
use crate::audit::{audit, oracle_constraints, FairnessReport, ORACLE_MAX_REQUESTS};
use crate::leaders::EngineMode;
use crate::simnet::{self, RunStats, Scenario, SimError, Trace};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Chain(#[from] ChainFileError),
    #[error("{0}")]
    Usage(String),
}

#[derive(Debug, Parser)]
#[command(name = "fairlab", version, about = "Order-fairness protocol lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Output format for summaries and reports.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Structured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Generator {
    Cycle,
    Segments,
    Benign,
    Probabilistic,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Execute a scenario file and audit the result.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        mode: Option<EngineMode>,
        #[arg(long)]
        rmax: Option<usize>,
        /// Overrides the adversary seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the trace here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the chain export here.
        #[arg(long)]
        chain: Option<PathBuf>,
    },
    /// Emit a scenario file from a built-in generator.
    Gen {
        #[arg(value_enum)]
        generator: Generator,
        #[arg(long, default_value_t = EngineMode::Neverending)]
        mode: EngineMode,
        #[arg(long)]
        rmax: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        parties: usize,
        #[arg(long)]
        faults: Option<usize>,
        /// Segment families (segments, probabilistic).
        #[arg(long, default_value_t = 2)]
        depth: usize,
        /// Request count (benign).
        #[arg(long, default_value_t = 4)]
        requests: usize,
        /// Delivery probability (probabilistic).
        #[arg(long, default_value_t = 0.05)]
        p: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Audit a trace file.
    Audit {
        trace: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-verify every block certificate in a chain file.
    Verify {
        chain: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Everything `run` reports about one simulation.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub mode: EngineMode,
    pub stats: RunStats,
    pub report: FairnessReport,
    pub gating: bool,
}

impl RunSummary {
    pub fn new(sc: &Scenario, stats: RunStats, report: FairnessReport) -> Self {
        RunSummary {
            scenario: sc
                .origin
                .clone()
                .unwrap_or_else(|| sc.digest()[..16].to_string()),
            mode: sc.mode,
            gating: report.gating_holds(),
            stats,
            report,
        }
    }

    pub fn text(&self) -> String {
        let s = &self.stats;
        let mut out = String::new();
        let _ = writeln!(out, "scenario       {} ({})", self.scenario, self.mode);
        let _ = writeln!(out, "steps          {}", s.steps);
        let _ = writeln!(
            out,
            "blocks         {} ({} while injecting)",
            s.blocks, s.blocks_before_stop
        );
        let _ = writeln!(out, "delivered      {}", s.delivered);
        let _ = writeln!(
            out,
            "pending        {} at injection stop, {} at end",
            s.pending_at_stop, s.pending
        );
        let _ = writeln!(
            out,
            "max order      {} ({} while injecting)",
            s.max_order, s.max_order_before_stop
        );
        let _ = writeln!(out, "fallbacks      {}", s.fallback_activations);
        if let Some(step) = s.first_block_step {
            let _ = writeln!(out, "first block    step {step}");
        }
        let _ = write!(out, "{}", self.report);
        out
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn emit(out: &mut dyn Write, path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => write_file(p, text),
        None => out
            .write_all(text.as_bytes())
            .map_err(|source| CliError::Io {
                path: PathBuf::from("<stdout>"),
                source,
            }),
    }
}

fn structured<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

/// Parses `args` (program name first) and runs the command, writing
/// human output to `out`. Returns the process exit code.
pub fn run_command<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let target: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = write!(target, "{}", e.render());
            return code;
        }
    };
    match execute(cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_USAGE
        }
    }
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<i32, CliError> {
    let format = cli.format;
    match cli.command {
        Command::Run {
            scenario,
            mode,
            rmax,
            seed,
            out: trace_path,
            chain,
        } => {
            let mut sc = Scenario::from_toml(&read(&scenario)?)?;
            if let Some(m) = mode {
                sc.mode = m;
            }
            if rmax.is_some() {
                sc.r_max = rmax;
            }
            if let Some(s) = seed {
                sc.adversary_seed = s;
            }
            let result = simnet::run(&sc)?;
            if let Some(p) = trace_path {
                write_file(&p, &result.trace.to_jsonl())?;
            }
            if let Some(p) = chain {
                write_file(&p, &result.chain.export_jsonl())?;
            }
            let summary = RunSummary::new(&sc, result.stats, audit(&result.trace));
            let text = match format {
                Format::Text => summary.text() + "\n",
                Format::Structured => structured(&summary),
            };
            emit(out, None, &text)?;
            Ok(if summary.gating {
                EXIT_OK
            } else {
                EXIT_VIOLATION
            })
        }
        Command::Gen {
            generator,
            mode,
            rmax,
            seed,
            parties,
            faults,
            depth,
            requests,
            p,
            out: path,
        } => {
            let mut sc = match generator {
                Generator::Cycle => simnet::cycle(parties, mode),
                Generator::Benign => simnet::benign(parties, requests, mode),
                Generator::Segments => segments_for(parties, depth, mode)?,
                Generator::Probabilistic => {
                    simnet::probabilistic(segments_for(parties, depth, mode)?, p, seed)?
                }
            };
            if let Some(t) = faults {
                sc.t = t;
            }
            sc.r_max = rmax;
            sc.key_seed = seed;
            sc.validate()?;
            emit(out, path.as_deref(), &sc.to_toml())?;
            Ok(EXIT_OK)
        }
        Command::Audit { trace, out: path } => {
            let trace = Trace::from_jsonl(&read(&trace)?)?;
            let report = audit(&trace);
            let oracle = if trace.header.requests.len() <= ORACLE_MAX_REQUESTS {
                oracle_constraints(&trace).ok().map(|o| {
                    o.actual.relative_holds(&trace) == report.relative_block_fairness.holds
                        && o.actual.timed_holds(&trace) == report.timed_fairness.holds
                })
            } else {
                None
            };
            let text = match format {
                Format::Text => {
                    let mut t = report.to_string();
                    match oracle {
                        Some(true) => t.push_str("\noracle: agrees"),
                        Some(false) => t.push_str("\noracle: DISAGREES"),
                        None => t.push_str("\noracle: skipped (too many requests)"),
                    }
                    t + "\n"
                }
                Format::Structured => structured(&report),
            };
            emit(out, path.as_deref(), &text)?;
            let agrees = oracle.unwrap_or(true);
            Ok(if report.gating_holds() && agrees {
                EXIT_OK
            } else {
                EXIT_VIOLATION
            })
        }
        Command::Verify { chain, out: path } => {
            let result = verify_export(&read(&chain)?)?;
            let text = match format {
                Format::Text => {
                    let mut t = format!(
                        "{} blocks, {} failures\n",
                        result.blocks,
                        result.failures.len()
                    );
                    for (b, why) in &result.failures {
                        let _ = writeln!(t, "    block {b}: {why}");
                    }
                    t
                }
                Format::Structured => structured(&serde_json::json!({
                    "blocks": result.blocks,
                    "failures": result.failures,
                })),
            };
            emit(out, path.as_deref(), &text)?;
            Ok(if result.ok() { EXIT_OK } else { EXIT_VIOLATION })
        }
    }
}

fn segments_for(parties: usize, depth: usize, mode: EngineMode) -> Result<Scenario, CliError> {
    if parties != 4 {
        return Err(CliError::Usage(format!(
            "segments is defined for 4 parties, got {parties}"
        )));
    }
    Ok(simnet::segments(depth, mode)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run_command(
            std::iter::once("fairlab").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn gen_output_reparses() {
        let (code, text, _) = call(&["gen", "segments", "--depth", "2", "--seed", "7"]);
        assert_eq!(code, 0);
        let sc = Scenario::from_toml(&text).unwrap();
        assert_eq!(sc.requests.len(), 8);
        assert_eq!(sc.key_seed, 7);
        assert_eq!(Scenario::from_toml(&sc.to_toml()).unwrap(), sc);
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(call(&["frobnicate"]).0, EXIT_USAGE);
        assert_eq!(call(&["gen", "cycle", "--bogus"]).0, EXIT_USAGE);
        assert_eq!(call(&["gen", "segments", "--parties", "7"]).0, EXIT_USAGE);
        assert_eq!(call(&["gen", "probabilistic", "--p", "0"]).0, EXIT_USAGE);
        let (code, _, err) = call(&["run", "/nonexistent/scenario.toml"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("nonexistent"));
        assert_eq!(call(&["--help"]).0, EXIT_OK);
    }
}
