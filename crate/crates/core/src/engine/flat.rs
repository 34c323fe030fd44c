use std::collections::HashMap;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::{CallRecord, Completed, EngineError, SessionInfo};
use crate::events::{FunctionId, FunctionType, TOPLEVEL};
use crate::timebase::Timestamp;

/// One live activation on the time-stack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeFrame {
    pub function: FunctionId,
    pub entry: Timestamp,
    /// Inclusive time of completed direct children ("tick").
    pub child_ns: u64,
    /// No frame for the same function is below this one.
    pub outermost: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Idle,
    Running,
    Stopped,
}

/// Flat profiler: statistics per function, regardless of caller.
#[derive(Debug)]
pub struct FlatEngine {
    state: State,
    stack: Vec<TimeFrame>,
    active: HashMap<Rc<str>, u32>,
    records: HashMap<Rc<str>, CallRecord>,
    first_calls: HashMap<Rc<str>, u64>,
    call_seq: u64,
    start: Timestamp,
    last: Timestamp,
}

impl Default for FlatEngine {
    fn default() -> Self {
        Self::new()
    }
}

impl FlatEngine {
    pub fn new() -> Self {
        FlatEngine {
            state: State::Idle,
            stack: Vec::new(),
            active: HashMap::new(),
            records: HashMap::new(),
            first_calls: HashMap::new(),
            call_seq: 0,
            start: Timestamp::ZERO,
            last: Timestamp::ZERO,
        }
    }

    pub fn is_running(&self) -> bool {
        self.state == State::Running
    }

    /// The live time-stack, outermost first. Includes the root frame.
    pub fn stack(&self) -> &[TimeFrame] {
        &self.stack
    }

    /// Number of open workload frames (the root frame is not counted).
    pub fn depth(&self) -> usize {
        self.stack.len().saturating_sub(1)
    }

    /// The function whose frame is on top, or the root if no workload frame is open.
    pub(crate) fn top_function(&self) -> Option<&FunctionId> {
        self.stack.last().map(|f| &f.function)
    }

    /// Begins a session at `at`, pushing the frame for the program root.
    pub fn start(&mut self, at: Timestamp) -> Result<(), EngineError> {
        if self.state != State::Idle {
            return Err(EngineError::AlreadyStarted);
        }
        self.state = State::Running;
        self.start = at;
        self.last = at;
        let root = FunctionId::toplevel();
        self.first_calls.insert(Rc::from(TOPLEVEL), 0);
        self.push(root, at);
        Ok(())
    }

    fn check_time(&mut self, at: Timestamp) -> Result<(), EngineError> {
        if self.state != State::Running {
            return Err(EngineError::NotRunning);
        }
        if at < self.last {
            return Err(EngineError::TimeReversed {
                last: self.last,
                at,
            });
        }
        self.last = at;
        Ok(())
    }

    fn push(&mut self, function: FunctionId, at: Timestamp) {
        let key: Rc<str> = Rc::from(function.name());
        let count = self.active.entry(key).or_insert(0);
        let outermost = *count == 0;
        *count += 1;
        self.stack.push(TimeFrame {
            function,
            entry: at,
            child_ns: 0,
            outermost,
        });
    }

    pub fn on_call(&mut self, function: &FunctionId, at: Timestamp) -> Result<(), EngineError> {
        if function.is_toplevel() {
            return Err(EngineError::ToplevelEvent);
        }
        self.check_time(at)?;
        self.call_seq += 1;
        if !self.first_calls.contains_key(function.name()) {
            self.first_calls
                .insert(Rc::from(function.name()), self.call_seq);
        }
        self.push(function.clone(), at);
        Ok(())
    }

    pub fn on_return(
        &mut self,
        function: &FunctionId,
        at: Timestamp,
    ) -> Result<Completed, EngineError> {
        if function.is_toplevel() {
            return Err(EngineError::ToplevelEvent);
        }
        if self.state != State::Running {
            return Err(EngineError::NotRunning);
        }
        match self.stack.last() {
            Some(top) if top.function.is_toplevel() || self.stack.len() < 2 => {
                return Err(EngineError::Underflow {
                    found: function.name().to_string(),
                })
            }
            Some(top) if top.function.name() != function.name() => {
                return Err(EngineError::MismatchedReturn {
                    expected: top.function.name().to_string(),
                    found: function.name().to_string(),
                })
            }
            _ => {}
        }
        self.check_time(at)?;
        Ok(self.pop(at, false))
    }

    /// Pops the top frame at `at`, folding it into its record and its parent.
    fn pop(&mut self, at: Timestamp, truncated: bool) -> Completed {
        let frame = self.stack.pop().expect("pop on empty time-stack");
        let total = at
            .checked_since(frame.entry)
            .expect("event times are checked to be non-decreasing");
        let self_ns = total - frame.child_ns;
        let name: Rc<str> = Rc::from(frame.function.name());

        if let Some(count) = self.active.get_mut(&name) {
            *count -= 1;
        }
        let first_call = self.first_calls.get(&name).copied().unwrap_or(0);
        let rec = self
            .records
            .entry(name.clone())
            .or_insert_with(|| CallRecord {
                name: name.to_string(),
                ftype: frame.function.ftype(),
                ncalls: 0,
                total_ns: 0,
                self_ns: 0,
                truncated: false,
                first_call,
            });
        rec.ncalls += 1;
        rec.self_ns += self_ns;
        if frame.outermost {
            rec.total_ns += total;
        }
        if truncated && !frame.function.is_toplevel() {
            rec.truncated = true;
        }
        if let Some(parent) = self.stack.last_mut() {
            parent.child_ns += total;
        }
        Completed {
            name,
            total_ns: total,
            self_ns,
            outermost: frame.outermost,
        }
    }

    /// Force-returns the innermost open workload frame at `at`.
    pub(crate) fn unwind_one(&mut self, at: Timestamp) -> Result<Option<Completed>, EngineError> {
        if self.depth() == 0 {
            return Ok(None);
        }
        self.check_time(at)?;
        Ok(Some(self.pop(at, true)))
    }

    /// Ends the session at `at`: open workload frames are unwound innermost
    /// first and flagged truncated, then the root frame is closed.
    pub fn stop(&mut self, at: Timestamp) -> Result<FlatProfile, EngineError> {
        self.check_time(at)?;
        while self.unwind_one(at)?.is_some() {}
        self.pop(at, false);
        self.state = State::Stopped;

        let mut records: Vec<CallRecord> = self.records.drain().map(|(_, r)| r).collect();
        records.sort_by(|a, b| a.name.cmp(&b.name));
        let program_total_ns = at.0 - self.start.0;
        Ok(FlatProfile {
            session: SessionInfo {
                start_ns: self.start.0,
                stop_ns: at.0,
                overhead_ns: 0,
            },
            program_total_ns,
            records,
        })
    }
}

/// Frozen result of a flat profiling session. Records are sorted by name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlatProfile {
    pub session: SessionInfo,
    pub program_total_ns: u64,
    pub records: Vec<CallRecord>,
}

impl FlatProfile {
    /// Builds a profile from explicit records, e.g. for rendering fixtures.
    pub fn from_records(session: SessionInfo, mut records: Vec<CallRecord>) -> Self {
        records.sort_by(|a, b| a.name.cmp(&b.name));
        FlatProfile {
            program_total_ns: session.stop_ns - session.start_ns,
            session,
            records,
        }
    }

    pub fn record(&self, name: &str) -> Option<&CallRecord> {
        self.records
            .binary_search_by(|r| r.name.as_str().cmp(name))
            .ok()
            .map(|i| &self.records[i])
    }

    pub fn toplevel(&self) -> Option<&CallRecord> {
        self.record(TOPLEVEL)
    }

    pub fn has_truncated(&self) -> bool {
        self.records.iter().any(|r| r.truncated)
    }
}

impl CallRecord {
    pub fn is_toplevel(&self) -> bool {
        self.ftype == FunctionType::Toplevel
    }
}
