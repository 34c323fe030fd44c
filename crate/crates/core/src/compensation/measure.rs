use std::fmt;

use thiserror::Error;

use super::{calibrate, BiasModel, CalibrationError};
use crate::engine::EngineError;
use crate::events::HookRegistry;
use crate::session::{Mode, Profiler, SessionConfig};
use crate::timebase::{ClockKind, TimeSource};
use crate::workload::{self, FuncDef, RuntimeError, Script, Stmt};

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
}

/// `def tight() { work W; }  repeat N { call tight; }`
pub fn tight_loop(ncalls: u64, work_ns: u64) -> Script {
    let body = if work_ns > 0 {
        vec![Stmt::Work(work_ns)]
    } else {
        Vec::new()
    };
    Script::new(
        vec![FuncDef {
            name: "tight".into(),
            body,
        }],
        vec![Stmt::Repeat(ncalls, vec![Stmt::Call("tight".into())])],
    )
    .expect("tight loop is a valid script")
}

/// Paired measurement of one workload with and without a profiler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverheadSample {
    pub ncalls: u64,
    /// Elapsed time with no handler installed.
    pub uninstrumented_ns: u64,
    /// Elapsed time seen by the profiled run before compensation.
    pub instrumented_ns: u64,
    /// The profile's program total after compensation.
    pub compensated_ns: u64,
}

impl OverheadSample {
    /// Everything profiling added to the run, handler time included.
    pub fn gross_seconds(&self) -> f64 {
        (self.instrumented_ns as f64 - self.uninstrumented_ns as f64) / 1e9
    }

    /// What compensation could not remove: the per-call dispatch bias.
    pub fn residual_seconds(&self) -> f64 {
        (self.compensated_ns as f64 - self.uninstrumented_ns as f64) / 1e9
    }

    /// Residual relative to the uninstrumented run.
    pub fn residual_fraction(&self) -> f64 {
        if self.uninstrumented_ns == 0 {
            return 0.0;
        }
        (self.compensated_ns as f64 - self.uninstrumented_ns as f64) / self.uninstrumented_ns as f64
    }
}

fn source_for(clock: ClockKind) -> TimeSource {
    match clock {
        ClockKind::Real => TimeSource::real(),
        ClockKind::Virtual => TimeSource::virtual_clock(),
    }
}

fn uninstrumented(script: &Script, clock: ClockKind) -> Result<u64, MeasureError> {
    let registry = HookRegistry::new(source_for(clock));
    let t0 = registry.source().now();
    workload::run(script, &registry)?;
    Ok(registry.source().now().0 - t0.0)
}

fn instrumented(
    script: &Script,
    mode: Mode,
    clock: ClockKind,
    injected_cost_ns: u64,
) -> Result<(u64, u64, u64), MeasureError> {
    let registry = HookRegistry::new(source_for(clock));
    let profiler = Profiler::new(SessionConfig::new(mode).with_injected_cost(injected_cost_ns));
    profiler.start(&registry)?;
    let run = workload::run(script, &registry);
    let profile = profiler.stop(&registry)?;
    run?;
    let ncalls = profile
        .flat()
        .records
        .iter()
        .filter(|r| !r.is_toplevel())
        .map(|r| r.ncalls)
        .sum();
    let compensated = profile.program_total_ns();
    Ok((ncalls, compensated + profile.overhead_ns(), compensated))
}

/// Runs `script` bare and under a `mode` profiler, `repeats` times each, and
/// keeps the fastest observation of each quantity.
pub fn measure_overhead(
    script: &Script,
    mode: Mode,
    clock: ClockKind,
    injected_cost_ns: u64,
    repeats: usize,
) -> Result<OverheadSample, MeasureError> {
    let mut best: Option<OverheadSample> = None;
    for _ in 0..repeats.max(1) {
        let bare = uninstrumented(script, clock)?;
        let (ncalls, raw, compensated) = instrumented(script, mode, clock, injected_cost_ns)?;
        let s = OverheadSample {
            ncalls,
            uninstrumented_ns: bare,
            instrumented_ns: raw,
            compensated_ns: compensated,
        };
        best = Some(match best {
            None => s,
            Some(b) => OverheadSample {
                ncalls,
                uninstrumented_ns: b.uninstrumented_ns.min(s.uninstrumented_ns),
                instrumented_ns: b.instrumented_ns.min(s.instrumented_ns),
                compensated_ns: b.compensated_ns.min(s.compensated_ns),
            },
        });
    }
    Ok(best.expect("at least one repeat"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CalibrationConfig {
    pub calls: Vec<u64>,
    pub work_ns: u64,
    pub clock: ClockKind,
    pub injected_cost_ns: u64,
    pub repeats: usize,
    pub modes: Vec<Mode>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            calls: vec![100, 1_000, 10_000, 100_000],
            work_ns: 0,
            clock: ClockKind::Real,
            injected_cost_ns: 0,
            repeats: 3,
            modes: vec![Mode::Flat, Mode::Graph],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeCalibration {
    pub mode: Mode,
    pub samples: Vec<OverheadSample>,
    /// Fit of total profiling cost against call count.
    pub gross: BiasModel,
    /// Fit of what remains after compensation; its slope is the bias.
    pub residual: BiasModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub config: CalibrationConfig,
    pub modes: Vec<ModeCalibration>,
}

impl CalibrationReport {
    pub fn mode(&self, mode: Mode) -> Option<&ModeCalibration> {
        self.modes.iter().find(|m| m.mode == mode)
    }

    /// Graph gross slope over flat gross slope, when both modes ran.
    pub fn graph_flat_ratio(&self) -> Option<f64> {
        let flat = self.mode(Mode::Flat)?.gross.slope;
        let graph = self.mode(Mode::Graph)?.gross.slope;
        (flat != 0.0).then(|| graph / flat)
    }
}

/// Profiles the tight loop at every configured call count in every mode
/// and fits gross and residual overhead lines.
pub fn calibration_sweep(config: &CalibrationConfig) -> Result<CalibrationReport, MeasureError> {
    let mut modes = Vec::new();
    for &mode in &config.modes {
        let mut samples = Vec::new();
        for &n in &config.calls {
            let script = tight_loop(n, config.work_ns);
            samples.push(measure_overhead(
                &script,
                mode,
                config.clock,
                config.injected_cost_ns,
                config.repeats,
            )?);
        }
        let gross = calibrate(
            &samples
                .iter()
                .map(|s| (s.ncalls, s.gross_seconds()))
                .collect::<Vec<_>>(),
        )?;
        let residual = calibrate(
            &samples
                .iter()
                .map(|s| (s.ncalls, s.residual_seconds()))
                .collect::<Vec<_>>(),
        )?;
        modes.push(ModeCalibration {
            mode,
            samples,
            gross,
            residual,
        });
    }
    Ok(CalibrationReport {
        config: config.clone(),
        modes,
    })
}

fn secs(ns: u64) -> f64 {
    ns as f64 / 1e9
}

impl fmt::Display for CalibrationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let clock = match self.config.clock {
            ClockKind::Real => "real",
            ClockKind::Virtual => "virtual",
        };
        writeln!(
            f,
            "Overhead calibration: {clock} clock, {} ns work per call, injected handler cost {} ns, best of {}",
            self.config.work_ns, self.config.injected_cost_ns, self.config.repeats
        )?;
        for m in &self.modes {
            writeln!(f)?;
            writeln!(f, "[{}]", m.mode)?;
            writeln!(
                f,
                "{:>10} {:>16} {:>16} {:>16} {:>14} {:>14}",
                "calls", "bare (s)", "profiled (s)", "compensated (s)", "gross (s)", "residual (s)"
            )?;
            for s in &m.samples {
                writeln!(
                    f,
                    "{:>10} {:>16.9} {:>16.9} {:>16.9} {:>14.9} {:>14.9}",
                    s.ncalls,
                    secs(s.uninstrumented_ns),
                    secs(s.instrumented_ns),
                    secs(s.compensated_ns),
                    s.gross_seconds(),
                    s.residual_seconds()
                )?;
            }
            writeln!(
                f,
                "gross overhead   slope {:.6e} s/call  intercept {:.6e} s  r^2 {:.6}",
                m.gross.slope, m.gross.intercept, m.gross.r_squared
            )?;
            writeln!(
                f,
                "residual bias    slope {:.6e} s/call  intercept {:.6e} s  r^2 {:.6}",
                m.residual.slope, m.residual.intercept, m.residual.r_squared
            )?;
        }
        if let Some(r) = self.graph_flat_ratio() {
            writeln!(f)?;
            writeln!(f, "graph/flat gross slope ratio: {r:.3}")?;
        }
        writeln!(f)?;
        writeln!(
            f,
            "The residual slope is advisory; it is not subtracted from profiles."
        )
    }
}
