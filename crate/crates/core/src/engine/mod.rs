//! Flat and call-graph profiling engines.
//!
//! Both engines consume call/return events whose timestamps have already
//! been compensated for profiler overhead. They keep a time-stack that
//! mirrors the interpreter call stack; popping a frame yields the
//! activation's inclusive time (call to return) and exclusive time
//! (inclusive minus the inclusive time of its direct children).
//!
//! Terminology used throughout: `total` is inclusive, `self` is exclusive,
//! so `self <= total` always.

mod callgraph;
mod flat;

pub use callgraph::{ArcRecord, CallGraphEngine, CallGraphProfile};
pub use flat::{FlatEngine, FlatProfile, TimeFrame};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compensation::CompensationError;
use crate::events::{FunctionType, TOPLEVEL};
use crate::timebase::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("profiler already started")]
    AlreadyStarted,
    #[error("profiler is not running")]
    NotRunning,
    #[error("another profiler is already installed")]
    AlreadyInstalled,
    #[error("malformed event stream: return from `{found}` with no open call")]
    Underflow { found: String },
    #[error(
        "malformed event stream: return from `{found}` but innermost open call is `{expected}`"
    )]
    MismatchedReturn { expected: String, found: String },
    #[error("malformed event stream: workload event names the reserved `{TOPLEVEL}`")]
    ToplevelEvent,
    #[error("event at {at} precedes the previous event at {last}")]
    TimeReversed { last: Timestamp, at: Timestamp },
    #[error(transparent)]
    Compensation(#[from] CompensationError),
    #[error("clock error: {0}")]
    Clock(#[from] crate::timebase::TimeError),
}

/// Per-function statistics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub name: String,
    pub ftype: FunctionType,
    pub ncalls: u64,
    /// Inclusive nanoseconds, counted only from outermost activations so
    /// recursion cannot exceed the time actually elapsed.
    pub total_ns: u64,
    /// Exclusive nanoseconds, summed over every activation.
    pub self_ns: u64,
    /// Some activation was still open when profiling stopped.
    pub truncated: bool,
    /// Sequence number of the function's first call (0 is the program root).
    pub first_call: u64,
}

/// Session bounds and the handler time compensated out of the profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SessionInfo {
    pub start_ns: u64,
    pub stop_ns: u64,
    pub overhead_ns: u64,
}

/// A finished activation, as returned when a frame is popped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completed {
    pub name: std::rc::Rc<str>,
    pub total_ns: u64,
    pub self_ns: u64,
    pub outermost: bool,
}

/// Computes `100 * self / program_total`.
pub fn percent_time(self_ns: u64, program_total_ns: u64) -> Result<f64, PercentError> {
    if program_total_ns == 0 {
        return Err(PercentError);
    }
    Ok(100.0 * self_ns as f64 / program_total_ns as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("percentage undefined for a zero-length program")]
pub struct PercentError;
