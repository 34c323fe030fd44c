use std::collections::HashMap;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::flat::{FlatEngine, FlatProfile};
use super::{CallRecord, EngineError, SessionInfo};
use crate::events::{FunctionId, TOPLEVEL};
use crate::timebase::Timestamp;

/// Statistics for one caller -> callee pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArcRecord {
    pub caller: String,
    pub callee: String,
    pub ncalls: u64,
    /// Inclusive nanoseconds, counted only from the outermost activation of
    /// this arc when it recurses.
    pub total_ns: u64,
    pub self_ns: u64,
    /// Sequence number of the first call along this arc.
    pub first_call: u64,
}

type ArcKey = (Rc<str>, Rc<str>);

#[derive(Debug)]
struct ArcFrame {
    key: ArcKey,
    outermost: bool,
}

/// Call-graph profiler. Runs a [`FlatEngine`] for the per-function rollup and
/// tracks, alongside its time-stack, which arc each activation belongs to.
#[derive(Debug, Default)]
pub struct CallGraphEngine {
    flat: FlatEngine,
    arc_stack: Vec<ArcFrame>,
    arc_active: HashMap<ArcKey, u32>,
    arcs: HashMap<ArcKey, ArcRecord>,
    arc_seq: u64,
}

impl CallGraphEngine {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_running(&self) -> bool {
        self.flat.is_running()
    }

    pub fn depth(&self) -> usize {
        self.flat.depth()
    }

    pub fn start(&mut self, at: Timestamp) -> Result<(), EngineError> {
        self.flat.start(at)
    }

    /// Pushes a frame; the arc's caller is whatever is on top right now, the
    /// program root when no workload frame is open.
    pub fn on_call(&mut self, function: &FunctionId, at: Timestamp) -> Result<(), EngineError> {
        let caller: Rc<str> = match self.flat.top_function() {
            Some(top) => Rc::from(top.name()),
            None => return Err(EngineError::NotRunning),
        };
        self.flat.on_call(function, at)?;
        let key: ArcKey = (caller, Rc::from(function.name()));
        let count = self.arc_active.entry(key.clone()).or_insert(0);
        let outermost = *count == 0;
        *count += 1;
        self.arc_seq += 1;
        let seq = self.arc_seq;
        self.arcs.entry(key.clone()).or_insert_with(|| ArcRecord {
            caller: key.0.to_string(),
            callee: key.1.to_string(),
            ncalls: 0,
            total_ns: 0,
            self_ns: 0,
            first_call: seq,
        });
        self.arc_stack.push(ArcFrame { key, outermost });
        Ok(())
    }

    pub fn on_return(&mut self, function: &FunctionId, at: Timestamp) -> Result<(), EngineError> {
        let done = self.flat.on_return(function, at)?;
        self.close_arc(done.total_ns, done.self_ns);
        Ok(())
    }

    fn close_arc(&mut self, total_ns: u64, self_ns: u64) {
        let frame = self
            .arc_stack
            .pop()
            .expect("arc stack tracks the time-stack");
        if let Some(count) = self.arc_active.get_mut(&frame.key) {
            *count -= 1;
        }
        let arc = self
            .arcs
            .get_mut(&frame.key)
            .expect("arc record created on call");
        arc.ncalls += 1;
        arc.self_ns += self_ns;
        if frame.outermost {
            arc.total_ns += total_ns;
        }
    }

    /// Ends the session, unwinding open frames as the flat engine does.
    pub fn stop(&mut self, at: Timestamp) -> Result<CallGraphProfile, EngineError> {
        if !self.flat.is_running() {
            return Err(EngineError::NotRunning);
        }
        while let Some(done) = self.flat.unwind_one(at)? {
            self.close_arc(done.total_ns, done.self_ns);
        }
        let rollup = self.flat.stop(at)?;
        let mut arcs: Vec<ArcRecord> = self.arcs.drain().map(|(_, a)| a).collect();
        arcs.sort_by(|a, b| (&a.caller, &a.callee).cmp(&(&b.caller, &b.callee)));
        Ok(CallGraphProfile {
            session: rollup.session,
            program_total_ns: rollup.program_total_ns,
            records: rollup.records,
            arcs,
        })
    }
}

/// Frozen call-graph result: arcs sorted by (caller, callee) plus the
/// per-function rollup, which is exactly what the flat engine would produce.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallGraphProfile {
    pub session: SessionInfo,
    pub program_total_ns: u64,
    pub records: Vec<CallRecord>,
    pub arcs: Vec<ArcRecord>,
}

impl CallGraphProfile {
    pub fn rollup(&self) -> FlatProfile {
        FlatProfile {
            session: self.session,
            program_total_ns: self.program_total_ns,
            records: self.records.clone(),
        }
    }

    pub fn record(&self, name: &str) -> Option<&CallRecord> {
        self.records
            .binary_search_by(|r| r.name.as_str().cmp(name))
            .ok()
            .map(|i| &self.records[i])
    }

    pub fn arc(&self, caller: &str, callee: &str) -> Option<&ArcRecord> {
        self.arcs
            .binary_search_by(|a| (a.caller.as_str(), a.callee.as_str()).cmp(&(caller, callee)))
            .ok()
            .map(|i| &self.arcs[i])
    }

    /// Arcs whose caller is `caller`, in (callee) order.
    pub fn callees<'a>(&'a self, caller: &'a str) -> impl Iterator<Item = &'a ArcRecord> + 'a {
        let start = self.arcs.partition_point(|a| a.caller.as_str() < caller);
        self.arcs[start..]
            .iter()
            .take_while(move |a| a.caller == caller)
    }

    pub fn arcs_into<'a>(&'a self, callee: &'a str) -> impl Iterator<Item = &'a ArcRecord> + 'a {
        self.arcs.iter().filter(move |a| a.callee == callee)
    }

    pub fn toplevel_callees(&self) -> impl Iterator<Item = &ArcRecord> {
        self.callees(TOPLEVEL)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(name: &str) -> FunctionId {
        FunctionId::script(name).unwrap()
    }

    fn t(ns: u64) -> Timestamp {
        Timestamp(ns)
    }

    #[test]
    fn arcs_from_interval_trace() {
        let mut e = CallGraphEngine::new();
        e.start(t(0)).unwrap();
        e.on_call(&f("A"), t(0)).unwrap();
        e.on_call(&f("B"), t(10)).unwrap();
        e.on_return(&f("B"), t(30)).unwrap();
        e.on_call(&f("B"), t(35)).unwrap();
        e.on_return(&f("B"), t(40)).unwrap();
        e.on_return(&f("A"), t(50)).unwrap();
        let p = e.stop(t(50)).unwrap();
        let ab = p.arc("A", "B").unwrap();
        assert_eq!((ab.ncalls, ab.total_ns, ab.self_ns), (2, 25, 25));
        let ta = p.arc(TOPLEVEL, "A").unwrap();
        assert_eq!((ta.ncalls, ta.total_ns, ta.self_ns), (1, 50, 25));
        assert_eq!(p.arcs.len(), 2);
    }

    #[test]
    fn distinct_callers_make_distinct_arcs() {
        let mut e = CallGraphEngine::new();
        e.start(t(0)).unwrap();
        for caller in ["A", "B"] {
            e.on_call(&f(caller), t(0)).unwrap();
            e.on_call(&f("C"), t(0)).unwrap();
            e.on_return(&f("C"), t(0)).unwrap();
            e.on_return(&f(caller), t(0)).unwrap();
        }
        let p = e.stop(t(0)).unwrap();
        assert!(p.arc("A", "C").is_some());
        assert!(p.arc("B", "C").is_some());
        assert_eq!(p.arcs_into("C").count(), 2);
        assert_eq!(p.toplevel_callees().count(), 2);
    }

    #[test]
    fn self_recursive_arc() {
        let mut e = CallGraphEngine::new();
        e.start(t(0)).unwrap();
        e.on_call(&f("A"), t(0)).unwrap();
        e.on_call(&f("A"), t(5)).unwrap();
        e.on_call(&f("A"), t(6)).unwrap();
        e.on_return(&f("A"), t(7)).unwrap();
        e.on_return(&f("A"), t(9)).unwrap();
        e.on_return(&f("A"), t(20)).unwrap();
        let p = e.stop(t(20)).unwrap();
        let aa = p.arc("A", "A").unwrap();
        // inner spans: [5,9] outermost on this arc, [6,7] nested
        assert_eq!((aa.ncalls, aa.total_ns, aa.self_ns), (2, 4, 4));
        let ta = p.arc(TOPLEVEL, "A").unwrap();
        assert_eq!((ta.ncalls, ta.total_ns, ta.self_ns), (1, 20, 16));
        assert_eq!(p.record("A").unwrap().ncalls, 3);
    }

    #[test]
    fn empty_session_has_no_arcs() {
        let mut e = CallGraphEngine::new();
        e.start(t(3)).unwrap();
        let p = e.stop(t(9)).unwrap();
        assert!(p.arcs.is_empty());
        assert_eq!(p.records.len(), 1);
        assert_eq!(p.program_total_ns, 6);
    }

    #[test]
    fn stop_unwinds_open_arcs() {
        let mut e = CallGraphEngine::new();
        e.start(t(0)).unwrap();
        e.on_call(&f("A"), t(10)).unwrap();
        e.on_call(&f("B"), t(20)).unwrap();
        let p = e.stop(t(50)).unwrap();
        let ab = p.arc("A", "B").unwrap();
        assert_eq!((ab.ncalls, ab.total_ns), (1, 30));
        let ta = p.arc(TOPLEVEL, "A").unwrap();
        assert_eq!((ta.ncalls, ta.total_ns, ta.self_ns), (1, 40, 10));
        assert!(p.record("A").unwrap().truncated);
    }

    #[test]
    fn mismatched_return_surfaces() {
        let mut e = CallGraphEngine::new();
        e.start(t(0)).unwrap();
        e.on_call(&f("A"), t(0)).unwrap();
        assert!(matches!(
            e.on_return(&f("B"), t(1)),
            Err(EngineError::MismatchedReturn { .. })
        ));
    }
}
