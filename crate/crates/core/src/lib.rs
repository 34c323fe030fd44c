//! Deterministic instrumentation profiler.
//!
//! A workload interpreter sends function call/return events through a
//! [`HookRegistry`]; an installed [`Profiler`] feeds them into either the
//! flat engine (per-function statistics) or the call-graph engine
//! (per caller -> callee arc statistics). Handler time is measured and
//! compensated out of every timestamp. Sessions can be recorded to CSV
//! traces and replayed, and reports render as fixed-width text or JSON.
//!
//! ```
//! use profiler_core::{parse, report, HookRegistry, Mode, Profiler, SessionConfig, TimeSource};
//!
//! let script = parse("def f() { work 20; } call f;").unwrap();
//! let registry = HookRegistry::new(TimeSource::virtual_clock());
//! let profiler = Profiler::new(SessionConfig::new(Mode::Flat));
//! profiler.start(&registry).unwrap();
//! profiler_core::run(&script, &registry).unwrap();
//! let profile = profiler.stop(&registry).unwrap();
//! assert_eq!(profile.flat().record("f").unwrap().total_ns, 20);
//! print!("{}", report::render(&profile, Default::default()));
//! ```

pub mod compensation;
pub mod engine;
pub mod events;
pub mod report;
pub mod session;
pub mod timebase;
pub mod trace;
pub mod workload;

pub use compensation::{calibrate, BiasModel, OverheadLedger};
pub use engine::{
    percent_time, ArcRecord, CallGraphEngine, CallGraphProfile, CallRecord, EngineError,
    FlatEngine, FlatProfile, SessionInfo,
};
pub use events::{EventKind, FunctionId, FunctionType, HookRegistry, ProfileEvent, TOPLEVEL};
pub use report::{Direction, SortKey, SortOrder};
pub use session::{Mode, Profile, Profiler, SessionConfig};
pub use timebase::{ClockKind, TimeSource, Timestamp};
pub use workload::{parse, run, Script};

/// Profiles `script` in one session on `source`: start, run, stop.
///
/// The session is stopped even when the script fails, so the registry is
/// left empty; the script's error is returned in that case.
pub fn profile_script(
    script: &Script,
    source: TimeSource,
    config: SessionConfig,
) -> Result<Profile, ProfileRunError> {
    let registry = HookRegistry::new(source);
    let profiler = Profiler::new(config);
    profiler.start(&registry)?;
    let outcome = run(script, &registry);
    let profile = profiler.stop(&registry)?;
    outcome?;
    Ok(profile)
}

#[derive(Debug, thiserror::Error)]
pub enum ProfileRunError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Runtime(#[from] workload::RuntimeError),
}
