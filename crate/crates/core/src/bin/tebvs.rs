//! Command-line front end: one-shot planning, closed-loop simulation,
//! benchmarking and the seeded check suites.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tebvs::bench::checks::run_all;
use tebvs::bench::{one_shot_config, plan_once, run_benchmark, BenchOptions, ReportFormat};
use tebvs::sim::episode::{run_episode, PlannerKind};
use tebvs::sim::scenario::Scenario;
use tebvs::vsloop::OuterStatus;

#[derive(Parser)]
#[command(
    name = "tebvs",
    version,
    about = "Timed-elastic-band planning with variable splitting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize one band on a scenario; writes the band and the outer trace.
    Plan {
        #[command(flatten)]
        common: Common,
        /// Where to write the outer-iteration trace (JSON lines).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run one closed-loop episode; writes the per-tick trace.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "teb-vs")]
        planner: Planner,
    },
    /// Run episodes for each planner and write the variation report.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Planners to compare; repeat or comma-separate. Defaults to all three.
        #[arg(long, value_enum, value_delimiter = ',')]
        planner: Vec<Planner>,
        #[arg(long, default_value_t = 1)]
        repetitions: usize,
        /// Episodes run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Run the seeded property suites.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// `corridor` or a scenario TOML file.
    #[arg(long, default_value = "corridor")]
    scenario: String,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Zero all wall-clock fields so output is reproducible.
    #[arg(long)]
    no_timing: bool,
    /// Accepted for symmetry with `check`; planners are deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Planner {
    Dwa,
    Teb,
    #[value(name = "teb-vs", alias = "teb_vs")]
    TebVs,
}

impl From<Planner> for PlannerKind {
    fn from(p: Planner) -> Self {
        match p {
            Planner::Dwa => PlannerKind::Dwa,
            Planner::Teb => PlannerKind::Teb,
            Planner::TebVs => PlannerKind::TebVs,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Jsonlines,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Jsonlines => ReportFormat::Jsonlines,
        }
    }
}

enum Failure {
    /// Bad arguments, config or input files.
    Input(String),
    /// Ran to completion but a planner or check failed.
    Planner(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Input(e.to_string())
    }
}

fn open(out: &Option<PathBuf>) -> Result<Box<dyn Write>, Failure> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).map_err(|e| format!("{}: {e}", path.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load(common: &Common) -> Result<Scenario, Failure> {
    Scenario::resolve(&common.scenario)
        .map_err(|e| Failure::Input(format!("scenario {}: {e}", common.scenario)))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Plan { common, trace } => {
            let scenario = load(&common)?;
            let plan = plan_once(&scenario, &one_shot_config(&scenario))
                .map_err(|e| Failure::Planner(e.to_string()))?;
            let mut w = open(&common.out)?;
            plan.write_band(&mut w)?;
            w.flush()?;
            if let Some(path) = &trace {
                let mut t = open(&Some(path.clone()))?;
                plan.result.trace.write_jsonl(&mut t, !common.no_timing)?;
                t.flush()?;
            }
            let k = &plan.kkt;
            eprintln!(
                "status {:?} outer {} primal_eq {:.3e} primal_ineq {:.3e} monotone {} flagged {}",
                plan.result.status,
                plan.result.trace.len(),
                k.primal_eq,
                k.primal_ineq,
                plan.monotonicity.passed,
                plan.monotonicity.flagged.len()
            );
            if let OuterStatus::InnerFailure(msg) = &plan.result.status {
                return Err(Failure::Planner(format!("inner solve failed: {msg}")));
            }
            Ok(())
        }
        Command::Simulate { common, planner } => {
            let scenario = load(&common)?;
            let trace = run_episode(&scenario, planner.into());
            let mut w = open(&common.out)?;
            match common.format {
                Format::Csv => trace.write_csv(&mut w, !common.no_timing)?,
                Format::Jsonlines => {
                    for r in &trace.records {
                        let mut r = *r;
                        if common.no_timing {
                            r.plan_ms = 0.0;
                        }
                        serde_json::to_writer(&mut w, &r)?;
                        writeln!(w)?;
                    }
                }
            }
            w.flush()?;
            if trace.success() {
                Ok(())
            } else {
                Err(Failure::Planner(format!(
                    "{}: {:?}{}",
                    trace.planner,
                    trace.status,
                    trace.failure.map(|f| format!(" ({f})")).unwrap_or_default()
                )))
            }
        }
        Command::Bench {
            common,
            planner,
            repetitions,
            jobs,
        } => {
            let scenario = load(&common)?;
            let planners: Vec<PlannerKind> = if planner.is_empty() {
                PlannerKind::ALL.to_vec()
            } else {
                planner.into_iter().map(Into::into).collect()
            };
            let options = BenchOptions {
                repetitions,
                jobs,
                ..BenchOptions::default()
            };
            let report = run_benchmark(&scenario, &planners, &options)?;
            let mut w = open(&common.out)?;
            report.write(&mut w, common.format.into(), !common.no_timing)?;
            w.flush()?;
            if report.all_succeeded() {
                Ok(())
            } else {
                let failed: Vec<String> = report
                    .planners
                    .iter()
                    .filter(|p| p.successes < p.runs)
                    .map(|p| format!("{} {}/{}", p.planner, p.runs - p.successes, p.runs))
                    .collect();
                Err(Failure::Planner(format!(
                    "failed episodes: {}",
                    failed.join(", ")
                )))
            }
        }
        Command::Check { seed, out } => {
            let results = run_all(seed).map_err(|e| Failure::Planner(e.to_string()))?;
            let mut w = open(&out)?;
            for r in &results {
                writeln!(w, "{r}")?;
            }
            w.flush()?;
            let failed = results.iter().filter(|r| !r.passed()).count();
            if failed == 0 {
                Ok(())
            } else {
                Err(Failure::Planner(format!("{failed} check suite(s) failed")))
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Planner(msg)) => {
            eprintln!("tebvs: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Input(msg)) => {
            eprintln!("tebvs: {msg}");
            ExitCode::from(2)
        }
    }
}
