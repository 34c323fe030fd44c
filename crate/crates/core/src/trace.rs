//! Event traces: recording, CSV serialization and replay.
//!
//! One event per line, no header, LF line endings:
//!
//! ```text
//! <timestamp_ns>,<call|return>,<name>,<script|builtin|toplevel>
//! ```
//!
//! A recorded session is bracketed by a `#toplevel` call at the session
//! start and a `#toplevel` return at the session stop, so replay can
//! reproduce the session bounds exactly. Traces without the bracket are
//! accepted; the first and last event times then bound the session.

use std::cell::RefCell;
use std::io::{self, BufRead, Write};
use std::rc::Rc;

use thiserror::Error;

use crate::engine::EngineError;
use crate::events::{
    DispatchError, EventHandler, EventKind, FunctionId, FunctionType, HookRegistry, ProfileEvent,
};
use crate::session::{Mode, Profile, Profiler, SessionConfig};
use crate::timebase::{TimeSource, Timestamp};
use crate::workload::{self, RunOptions, RuntimeError, Script};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace I/O: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: timestamp {found} precedes previous timestamp {prev}")]
    Order { line: usize, prev: u64, found: u64 },
    #[error("function name `{0}` cannot be written to a trace")]
    InvalidName(String),
    #[error("event {index}: `#toplevel` may only open and close the trace")]
    MisplacedToplevel { index: usize },
    #[error("event {index}: {source}")]
    Replay {
        index: usize,
        #[source]
        source: DispatchError,
    },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

fn kind_from_str(s: &str) -> Option<EventKind> {
    match s {
        "call" => Some(EventKind::Call),
        "return" => Some(EventKind::Return),
        _ => None,
    }
}

pub fn write_trace<'a, W: Write>(
    events: impl IntoIterator<Item = &'a ProfileEvent>,
    mut sink: W,
) -> Result<(), TraceError> {
    for e in events {
        let name = e.function.name();
        if name.contains([',', '\n', '\r']) {
            return Err(TraceError::InvalidName(name.to_string()));
        }
        writeln!(
            sink,
            "{},{},{},{}",
            e.raw_time.0,
            e.kind.as_str(),
            name,
            e.function.ftype()
        )?;
    }
    sink.flush()?;
    Ok(())
}

/// Strictly parses a trace. Any malformed line fails the whole read.
pub fn read_trace<R: BufRead>(source: R) -> Result<Vec<ProfileEvent>, TraceError> {
    let mut out = Vec::new();
    let mut prev = 0u64;
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let parse_err = |message: String| TraceError::Parse {
            line: lineno,
            message,
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(parse_err(format!(
                "expected 4 comma-separated fields, found {}",
                fields.len()
            )));
        }
        let ts: u64 = fields[0]
            .parse()
            .map_err(|_| parse_err(format!("bad timestamp `{}`", fields[0])))?;
        let kind = kind_from_str(fields[1])
            .ok_or_else(|| parse_err(format!("unknown event kind `{}`", fields[1])))?;
        let ftype: FunctionType = fields[3]
            .parse()
            .map_err(|_| parse_err(format!("unknown function type `{}`", fields[3])))?;
        let function = FunctionId::new(fields[2], ftype).map_err(|e| parse_err(e.to_string()))?;
        if ts < prev {
            return Err(TraceError::Order {
                line: lineno,
                prev,
                found: ts,
            });
        }
        prev = ts;
        out.push(ProfileEvent {
            function,
            kind,
            raw_time: Timestamp(ts),
        });
    }
    Ok(out)
}

/// Collects events as they are dispatched.
#[derive(Debug, Default)]
pub struct Recorder {
    events: Vec<ProfileEvent>,
}

impl Recorder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> &[ProfileEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<ProfileEvent> {
        self.events
    }
}

impl EventHandler for Recorder {
    fn handle(&mut self, event: &ProfileEvent) -> Result<(), EngineError> {
        self.events.push(event.clone());
        Ok(())
    }
}

/// Runs `script` with a recorder installed, bracketing the events with the
/// `#toplevel` session markers.
pub fn record_script(
    script: &Script,
    source: TimeSource,
    opts: RunOptions,
) -> Result<Vec<ProfileEvent>, RuntimeError> {
    let registry = HookRegistry::new(source);
    let recorder = Rc::new(RefCell::new(Recorder::new()));
    let root = FunctionId::toplevel();
    recorder.borrow_mut().events.push(ProfileEvent {
        function: root.clone(),
        kind: EventKind::Call,
        raw_time: registry.source().now(),
    });
    let handler: Rc<RefCell<dyn EventHandler>> = recorder.clone();
    if !registry.set_profiler(handler) {
        unreachable!("fresh registry has no handler");
    }
    let result = workload::run_with(script, &registry, opts);
    registry.clear_profiler();
    result?;
    let stop = registry.source().now();
    let mut rec = recorder.borrow_mut();
    rec.events.push(ProfileEvent {
        function: root,
        kind: EventKind::Return,
        raw_time: stop,
    });
    Ok(std::mem::take(&mut rec.events))
}

/// Feeds a trace through a fresh session on a virtual clock that jumps to
/// each event's timestamp before the event is dispatched.
pub fn replay(events: &[ProfileEvent], mode: Mode) -> Result<Profile, TraceError> {
    let mut body = events;
    let mut start = events.first().map(|e| e.raw_time).unwrap_or_default();
    let mut stop = events.last().map(|e| e.raw_time).unwrap_or_default();

    if let Some(first) = body.first() {
        if first.function.is_toplevel() {
            if first.kind != EventKind::Call {
                return Err(TraceError::MisplacedToplevel { index: 0 });
            }
            start = first.raw_time;
            body = &body[1..];
        }
    }
    let first = events.len() - body.len();
    if let Some(last) = body.last() {
        if last.function.is_toplevel() {
            if last.kind != EventKind::Return {
                return Err(TraceError::MisplacedToplevel {
                    index: events.len() - 1,
                });
            }
            stop = last.raw_time;
            body = &body[..body.len() - 1];
        }
    }

    let clock = TimeSource::virtual_at(start);
    let registry = HookRegistry::new(clock.clone());
    let profiler = Profiler::new(SessionConfig::new(mode));
    profiler.start(&registry)?;
    for (offset, e) in (first..).zip(body) {
        if e.function.is_toplevel() {
            registry.clear_profiler();
            return Err(TraceError::MisplacedToplevel { index: offset });
        }
        if e.raw_time < clock.now() {
            registry.clear_profiler();
            return Err(TraceError::Order {
                line: offset + 1,
                prev: clock.now().0,
                found: e.raw_time.0,
            });
        }
        clock.advance_to(e.raw_time).map_err(EngineError::from)?;
        if let Err(source) = registry.send_event(&e.function, e.kind) {
            registry.clear_profiler();
            return Err(TraceError::Replay {
                index: offset,
                source,
            });
        }
    }
    clock.advance_to(stop).map_err(EngineError::from)?;
    Ok(profiler.stop(&registry)?)
}
