//! A profiling session: an engine plus its overhead ledger, installed into a
//! [`HookRegistry`] as the event handler.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::compensation::OverheadLedger;
use crate::engine::{CallGraphEngine, CallGraphProfile, EngineError, FlatEngine, FlatProfile};
use crate::events::{EventHandler, EventKind, HookRegistry, ProfileEvent};
use crate::timebase::{TimeSource, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Flat,
    Graph,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Flat => "flat",
            Mode::Graph => "graph",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "flat" => Ok(Mode::Flat),
            "graph" => Ok(Mode::Graph),
            other => Err(format!("unknown mode `{other}` (expected flat or graph)")),
        }
    }
}

/// Result of a session in either mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Profile {
    Flat(FlatProfile),
    Graph(CallGraphProfile),
}

impl Profile {
    pub fn mode(&self) -> Mode {
        match self {
            Profile::Flat(_) => Mode::Flat,
            Profile::Graph(_) => Mode::Graph,
        }
    }

    /// Per-function view; for a call-graph profile this is its rollup.
    pub fn flat(&self) -> FlatProfile {
        match self {
            Profile::Flat(p) => p.clone(),
            Profile::Graph(g) => g.rollup(),
        }
    }

    pub fn program_total_ns(&self) -> u64 {
        match self {
            Profile::Flat(p) => p.program_total_ns,
            Profile::Graph(g) => g.program_total_ns,
        }
    }

    pub fn overhead_ns(&self) -> u64 {
        match self {
            Profile::Flat(p) => p.session.overhead_ns,
            Profile::Graph(g) => g.session.overhead_ns,
        }
    }

    pub fn into_flat(self) -> Option<FlatProfile> {
        match self {
            Profile::Flat(p) => Some(p),
            Profile::Graph(_) => None,
        }
    }

    pub fn into_graph(self) -> Option<CallGraphProfile> {
        match self {
            Profile::Graph(g) => Some(g),
            Profile::Flat(_) => None,
        }
    }

    fn set_overhead(&mut self, ns: u64) {
        match self {
            Profile::Flat(p) => p.session.overhead_ns = ns,
            Profile::Graph(g) => g.session.overhead_ns = ns,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionConfig {
    pub mode: Mode,
    /// Subtract measured handler time from every timestamp.
    pub compensate: bool,
    /// Extra virtual time each handler invocation consumes. Virtual clocks only.
    pub injected_cost_ns: u64,
}

impl SessionConfig {
    pub fn new(mode: Mode) -> Self {
        SessionConfig {
            mode,
            compensate: true,
            injected_cost_ns: 0,
        }
    }

    pub fn with_injected_cost(mut self, ns: u64) -> Self {
        self.injected_cost_ns = ns;
        self
    }

    pub fn uncompensated(mut self) -> Self {
        self.compensate = false;
        self
    }
}

#[derive(Debug)]
enum Engine {
    Flat(FlatEngine),
    Graph(CallGraphEngine),
}

impl Engine {
    fn is_running(&self) -> bool {
        match self {
            Engine::Flat(e) => e.is_running(),
            Engine::Graph(e) => e.is_running(),
        }
    }
}

#[derive(Debug)]
struct SessionState {
    config: SessionConfig,
    engine: Engine,
    ledger: OverheadLedger,
    source: Option<TimeSource>,
}

impl SessionState {
    fn engine_time(&self, raw: Timestamp) -> Result<Timestamp, EngineError> {
        if self.config.compensate {
            Ok(self.ledger.compensated_time(raw)?)
        } else {
            Ok(raw)
        }
    }
}

impl EventHandler for SessionState {
    fn handle(&mut self, event: &ProfileEvent) -> Result<(), EngineError> {
        let at = self.engine_time(event.raw_time)?;
        match (&mut self.engine, event.kind) {
            (Engine::Flat(e), EventKind::Call) => e.on_call(&event.function, at)?,
            (Engine::Flat(e), EventKind::Return) => {
                e.on_return(&event.function, at)?;
            }
            (Engine::Graph(e), EventKind::Call) => e.on_call(&event.function, at)?,
            (Engine::Graph(e), EventKind::Return) => e.on_return(&event.function, at)?,
        }
        let source = self.source.as_ref().ok_or(EngineError::NotRunning)?;
        if self.config.injected_cost_ns > 0 {
            source.advance(self.config.injected_cost_ns)?;
        }
        let spent = source.now().0.saturating_sub(event.raw_time.0);
        self.ledger.record_handler_cost(spent)?;
        Ok(())
    }
}

/// Handle to a profiling session. Cloning yields another handle to the same session.
#[derive(Clone)]
pub struct Profiler {
    state: Rc<RefCell<SessionState>>,
}

impl Profiler {
    pub fn new(config: SessionConfig) -> Self {
        let engine = match config.mode {
            Mode::Flat => Engine::Flat(FlatEngine::new()),
            Mode::Graph => Engine::Graph(CallGraphEngine::new()),
        };
        Profiler {
            state: Rc::new(RefCell::new(SessionState {
                config,
                engine,
                ledger: OverheadLedger::new(),
                source: None,
            })),
        }
    }

    pub fn mode(&self) -> Mode {
        self.state.borrow().config.mode
    }

    /// Notes the start time and installs this session as the registry's handler.
    pub fn start(&self, registry: &HookRegistry) -> Result<(), EngineError> {
        let mut st = self.state.borrow_mut();
        if st.engine.is_running() || st.source.is_some() {
            return Err(EngineError::AlreadyStarted);
        }
        if st.config.injected_cost_ns > 0 && !registry.source().is_virtual() {
            return Err(crate::timebase::TimeError::NotVirtual.into());
        }
        let handler: Rc<RefCell<dyn EventHandler>> = self.state.clone();
        if !registry.set_profiler(handler) {
            return Err(EngineError::AlreadyInstalled);
        }
        let source = registry.source().clone();
        let at = st.engine_time(source.now())?;
        st.source = Some(source);
        match &mut st.engine {
            Engine::Flat(e) => e.start(at),
            Engine::Graph(e) => e.start(at),
        }
    }

    /// Uninstalls the handler and freezes the profile. Frames still open are
    /// unwound at the stop time and flagged truncated.
    pub fn stop(&self, registry: &HookRegistry) -> Result<Profile, EngineError> {
        let mut st = self.state.borrow_mut();
        if !st.engine.is_running() {
            return Err(EngineError::NotRunning);
        }
        registry.clear_profiler();
        let now = st.source.as_ref().ok_or(EngineError::NotRunning)?.now();
        let at = st.engine_time(now)?;
        let overhead = st.ledger.cumulative_ns();
        let mut profile = match &mut st.engine {
            Engine::Flat(e) => Profile::Flat(e.stop(at)?),
            Engine::Graph(e) => Profile::Graph(e.stop(at)?),
        };
        profile.set_overhead(overhead);
        Ok(profile)
    }
}

impl fmt::Debug for Profiler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Profiler")
            .field("mode", &self.mode())
            .finish()
    }
}
