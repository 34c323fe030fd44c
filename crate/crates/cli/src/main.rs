//! `profile`: run, record, replay and calibrate from the command line.
//!
//! Exit codes: 0 on success, 1 on a usage error, 2 on a runtime error.

use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use profiler_core::compensation::{calibration_sweep, CalibrationConfig};
use profiler_core::report::{self, Direction, SortKey, SortOrder};
use profiler_core::trace::{read_trace, record_script, replay, write_trace};
use profiler_core::workload::{run_with, RunOptions, DEFAULT_MAX_DEPTH};
use profiler_core::{
    parse, ClockKind, HookRegistry, Mode, Profile, Profiler, Script, SessionConfig, TimeSource,
};

#[derive(Parser, Debug)]
#[command(
    name = "profile",
    version,
    about = "Flat and call-graph instrumentation profiler"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Profile a workload script and print the report.
    Run {
        script: PathBuf,
        #[command(flatten)]
        report: ReportArgs,
        #[arg(long, value_enum, default_value_t = Clock::Virtual)]
        clock: Clock,
        #[arg(long, default_value_t = DEFAULT_MAX_DEPTH)]
        max_depth: usize,
    },
    /// Replay a recorded trace into a profiler and print the report.
    Replay {
        trace: PathBuf,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Run a workload script and write its event trace.
    Record {
        script: PathBuf,
        #[arg(short = 'o', long = "out")]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Clock::Virtual)]
        clock: Clock,
        #[arg(long, default_value_t = DEFAULT_MAX_DEPTH)]
        max_depth: usize,
    },
    /// Fit profiling overhead against call count on a tight loop.
    Calibrate {
        #[arg(long, value_enum, default_value_t = CalibrateMode::Both)]
        mode: CalibrateMode,
        #[arg(long, value_enum, default_value_t = Clock::Real)]
        clock: Clock,
        /// Comma-separated call counts.
        #[arg(long, value_delimiter = ',', default_values_t = [100u64, 1_000, 10_000, 100_000])]
        calls: Vec<u64>,
        /// Work per call in nanoseconds.
        #[arg(long, default_value_t = 0)]
        work: u64,
        /// Handler cost injected per event, in nanoseconds (virtual clock only).
        #[arg(long, default_value_t = 0)]
        inject_cost: u64,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(short = 'o', long = "out")]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Flat)]
    mode: ModeArg,
    #[arg(long, value_enum, default_value_t = SortArg::SelfTime)]
    sort: SortArg,
    /// Sort ascending.
    #[arg(long, conflicts_with = "desc")]
    asc: bool,
    /// Sort descending (default).
    #[arg(long)]
    desc: bool,
    #[arg(long, value_enum, default_value_t = Output::Text)]
    output: Output,
    #[arg(short = 'o', long = "out")]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    Flat,
    Graph,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Flat => Mode::Flat,
            ModeArg::Graph => Mode::Graph,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum CalibrateMode {
    Flat,
    Graph,
    Both,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SortArg {
    #[value(name = "self")]
    SelfTime,
    Total,
    Calls,
    Name,
    FirstCall,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Output {
    Text,
    #[value(alias = "structured")]
    Json,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Clock {
    Real,
    Virtual,
}

impl Clock {
    fn source(self) -> TimeSource {
        match self {
            Clock::Real => TimeSource::real(),
            Clock::Virtual => TimeSource::virtual_clock(),
        }
    }
}

impl ReportArgs {
    fn order(&self) -> SortOrder {
        let key = match self.sort {
            SortArg::SelfTime => SortKey::SelfTime,
            SortArg::Total => SortKey::TotalPerCall,
            SortArg::Calls => SortKey::Calls,
            SortArg::Name => SortKey::Name,
            SortArg::FirstCall => SortKey::FirstCall,
        };
        let direction = if self.asc {
            Direction::Ascending
        } else {
            Direction::Descending
        };
        SortOrder::new(key, direction)
    }

    fn emit(&self, profile: &Profile) -> Result<()> {
        let text = match self.output {
            Output::Text => report::render(profile, self.order()),
            Output::Json => report::export_structured(profile),
        };
        write_output(self.out.as_deref(), text.as_bytes())
    }
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, bytes).with_context(|| format!("cannot write {}", p.display())),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
            Ok(())
        }
    }
}

fn load_script(path: &Path) -> Result<Script> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse(&text).with_context(|| format!("{}", path.display()))
}

fn cmd_run(script: &Path, report: &ReportArgs, clock: Clock, max_depth: usize) -> Result<()> {
    let script = load_script(script)?;
    let registry = HookRegistry::new(clock.source());
    let profiler = Profiler::new(SessionConfig::new(report.mode.into()));
    profiler.start(&registry)?;
    let outcome = run_with(&script, &registry, RunOptions { max_depth });
    let profile = profiler.stop(&registry)?;
    outcome?;
    report.emit(&profile)
}

fn cmd_replay(trace: &Path, report: &ReportArgs) -> Result<()> {
    let file = fs::File::open(trace).with_context(|| format!("cannot read {}", trace.display()))?;
    let events =
        read_trace(BufReader::new(file)).with_context(|| format!("{}", trace.display()))?;
    let profile =
        replay(&events, report.mode.into()).with_context(|| format!("{}", trace.display()))?;
    report.emit(&profile)
}

fn cmd_record(script: &Path, out: Option<&Path>, clock: Clock, max_depth: usize) -> Result<()> {
    let script = load_script(script)?;
    let events = record_script(&script, clock.source(), RunOptions { max_depth })?;
    let mut buf = Vec::new();
    write_trace(&events, &mut buf)?;
    write_output(out, &buf)
}

#[allow(clippy::too_many_arguments)]
fn cmd_calibrate(
    mode: CalibrateMode,
    clock: Clock,
    calls: Vec<u64>,
    work: u64,
    inject_cost: u64,
    repeats: usize,
    out: Option<&Path>,
) -> Result<()> {
    let modes = match mode {
        CalibrateMode::Flat => vec![Mode::Flat],
        CalibrateMode::Graph => vec![Mode::Graph],
        CalibrateMode::Both => vec![Mode::Flat, Mode::Graph],
    };
    let config = CalibrationConfig {
        calls,
        work_ns: work,
        clock: match clock {
            Clock::Real => ClockKind::Real,
            Clock::Virtual => ClockKind::Virtual,
        },
        injected_cost_ns: inject_cost,
        repeats,
        modes,
    };
    let report = calibration_sweep(&config)?;
    write_output(out, report.to_string().as_bytes())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Run {
            script,
            report,
            clock,
            max_depth,
        } => cmd_run(&script, &report, clock, max_depth),
        Command::Replay { trace, report } => cmd_replay(&trace, &report),
        Command::Record {
            script,
            out,
            clock,
            max_depth,
        } => cmd_record(&script, out.as_deref(), clock, max_depth),
        Command::Calibrate {
            mode,
            clock,
            calls,
            work,
            inject_cost,
            repeats,
            out,
        } => cmd_calibrate(
            mode,
            clock,
            calls,
            work,
            inject_cost,
            repeats,
            out.as_deref(),
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("profile: {e:#}");
            ExitCode::from(2)
        }
    }
}
