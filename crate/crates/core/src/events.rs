//! Event delivery between the interpreter and whichever profiler is installed.
//!
//! The interpreter calls [`HookRegistry::send_event`] on every function entry
//! and exit. At most one [`EventHandler`] is installed at a time; while none
//! is installed events are dropped. Delivery is synchronous and a handler may
//! not dispatch events itself.

use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::EngineError;
use crate::timebase::{TimeSource, Timestamp};

/// Name of the pseudo-function standing for the program root.
pub const TOPLEVEL: &str = "#toplevel";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FunctionType {
    Script,
    Builtin,
    Toplevel,
}

impl FunctionType {
    pub fn as_str(self) -> &'static str {
        match self {
            FunctionType::Script => "script",
            FunctionType::Builtin => "builtin",
            FunctionType::Toplevel => "toplevel",
        }
    }
}

impl fmt::Display for FunctionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FunctionType {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "script" => Ok(FunctionType::Script),
            "builtin" => Ok(FunctionType::Builtin),
            "toplevel" => Ok(FunctionType::Toplevel),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FunctionIdError {
    #[error("function name is empty")]
    EmptyName,
    #[error("`{TOPLEVEL}` is reserved for the program root")]
    ReservedName,
    #[error("`{TOPLEVEL}` must have function type toplevel")]
    ToplevelType,
}

/// Identity of a profiled function: its name (the record key) and its type.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct FunctionId {
    name: Rc<str>,
    ftype: FunctionType,
}

impl FunctionId {
    pub fn new(name: &str, ftype: FunctionType) -> Result<Self, FunctionIdError> {
        if name.is_empty() {
            return Err(FunctionIdError::EmptyName);
        }
        match (name == TOPLEVEL, ftype == FunctionType::Toplevel) {
            (true, false) => return Err(FunctionIdError::ReservedName),
            (false, true) => return Err(FunctionIdError::ToplevelType),
            _ => {}
        }
        Ok(FunctionId {
            name: Rc::from(name),
            ftype,
        })
    }

    pub fn script(name: &str) -> Result<Self, FunctionIdError> {
        Self::new(name, FunctionType::Script)
    }

    pub fn toplevel() -> Self {
        FunctionId {
            name: Rc::from(TOPLEVEL),
            ftype: FunctionType::Toplevel,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn ftype(&self) -> FunctionType {
        self.ftype
    }

    pub fn is_toplevel(&self) -> bool {
        self.ftype == FunctionType::Toplevel
    }
}

impl fmt::Debug for FunctionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.name, self.ftype)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Call,
    Return,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Call => "call",
            EventKind::Return => "return",
        }
    }
}

/// One call or return occurrence, stamped with the raw (uncompensated) time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProfileEvent {
    pub function: FunctionId,
    pub kind: EventKind,
    pub raw_time: Timestamp,
}

impl ProfileEvent {
    pub fn call(function: FunctionId, raw_time: u64) -> Self {
        ProfileEvent {
            function,
            kind: EventKind::Call,
            raw_time: Timestamp(raw_time),
        }
    }

    pub fn ret(function: FunctionId, raw_time: u64) -> Self {
        ProfileEvent {
            function,
            kind: EventKind::Return,
            raw_time: Timestamp(raw_time),
        }
    }
}

/// Receives events from the registry.
pub trait EventHandler {
    fn handle(&mut self, event: &ProfileEvent) -> Result<(), EngineError>;
}

pub type SharedHandler = Rc<RefCell<dyn EventHandler>>;

#[derive(Debug, Error)]
pub enum DispatchError {
    #[error("send_event called from inside a profiler handler")]
    Reentrant,
    #[error(transparent)]
    Handler(#[from] EngineError),
}

/// Holds the installed profiler (if any) and the session clock.
pub struct HookRegistry {
    installed: RefCell<Option<SharedHandler>>,
    source: TimeSource,
    dispatching: Cell<bool>,
}

impl HookRegistry {
    pub fn new(source: TimeSource) -> Self {
        HookRegistry {
            installed: RefCell::new(None),
            source,
            dispatching: Cell::new(false),
        }
    }

    pub fn source(&self) -> &TimeSource {
        &self.source
    }

    /// Installs `handler` if the slot is free. Returns `false` and leaves the
    /// current handler in place otherwise.
    pub fn set_profiler(&self, handler: SharedHandler) -> bool {
        let mut slot = self.installed.borrow_mut();
        if slot.is_some() {
            return false;
        }
        *slot = Some(handler);
        true
    }

    /// Uninstalls the current handler. Returns whether one was installed.
    pub fn clear_profiler(&self) -> bool {
        self.installed.borrow_mut().take().is_some()
    }

    pub fn is_installed(&self) -> bool {
        self.installed.borrow().is_some()
    }

    /// Stamps the event with the session clock and delivers it to the
    /// installed handler, if there is one.
    pub fn send_event(&self, function: &FunctionId, kind: EventKind) -> Result<(), DispatchError> {
        let handler = match &*self.installed.borrow() {
            Some(h) => Rc::clone(h),
            None => return Ok(()),
        };
        if self.dispatching.replace(true) {
            return Err(DispatchError::Reentrant);
        }
        let event = ProfileEvent {
            function: function.clone(),
            kind,
            raw_time: self.source.now(),
        };
        let result = match handler.try_borrow_mut() {
            Ok(mut h) => h.handle(&event).map_err(DispatchError::from),
            Err(_) => Err(DispatchError::Reentrant),
        };
        self.dispatching.set(false);
        result
    }
}

impl fmt::Debug for HookRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HookRegistry")
            .field("installed", &self.is_installed())
            .field("source", &self.source)
            .finish()
    }
}

thread_local! {
    static GLOBAL: HookRegistry = HookRegistry::new(TimeSource::real());
}

/// Runs `f` against this thread's process-wide registry (real clock).
///
/// Sessions that need a virtual clock build their own [`HookRegistry`].
pub fn with_global_registry<R>(f: impl FnOnce(&HookRegistry) -> R) -> R {
    GLOBAL.with(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Default)]
    struct Collect(Vec<ProfileEvent>);

    impl EventHandler for Collect {
        fn handle(&mut self, event: &ProfileEvent) -> Result<(), EngineError> {
            self.0.push(event.clone());
            Ok(())
        }
    }

    fn collector() -> Rc<RefCell<Collect>> {
        Rc::new(RefCell::new(Collect::default()))
    }

    #[test]
    fn set_and_clear_profiler() {
        let reg = HookRegistry::new(TimeSource::virtual_clock());
        let h1 = collector();
        let h2 = collector();
        assert!(reg.set_profiler(h1.clone()));
        assert!(!reg.set_profiler(h2.clone()));
        assert!(reg.clear_profiler());
        assert!(!reg.clear_profiler());
        assert!(reg.set_profiler(h2));
    }

    #[test]
    fn refused_install_keeps_existing_handler() {
        let reg = HookRegistry::new(TimeSource::virtual_clock());
        let h1 = collector();
        let h2 = collector();
        reg.set_profiler(h1.clone());
        reg.set_profiler(h2.clone());
        let f = FunctionId::script("f").unwrap();
        reg.send_event(&f, EventKind::Call).unwrap();
        assert_eq!(h1.borrow().0.len(), 1);
        assert!(h2.borrow().0.is_empty());
    }

    #[test]
    fn events_without_handler_are_dropped() {
        let reg = HookRegistry::new(TimeSource::virtual_clock());
        let f = FunctionId::script("f").unwrap();
        reg.send_event(&f, EventKind::Call).unwrap();
        let h = collector();
        reg.set_profiler(h.clone());
        reg.clear_profiler();
        reg.send_event(&f, EventKind::Return).unwrap();
        assert!(h.borrow().0.is_empty());
    }

    #[test]
    fn handler_receives_stamped_event() {
        let src = TimeSource::virtual_clock();
        let reg = HookRegistry::new(src.clone());
        let h = collector();
        reg.set_profiler(h.clone());
        let f = FunctionId::script("f").unwrap();
        src.advance(7).unwrap();
        reg.send_event(&f, EventKind::Call).unwrap();
        reg.send_event(&f, EventKind::Return).unwrap();
        let got = &h.borrow().0;
        assert_eq!(got[0], ProfileEvent::call(f.clone(), 7));
        assert_eq!(got[1].kind, EventKind::Return);
    }

    struct Reenter {
        reg: Rc<HookRegistry>,
    }

    impl EventHandler for Reenter {
        fn handle(&mut self, event: &ProfileEvent) -> Result<(), EngineError> {
            match self.reg.send_event(&event.function, EventKind::Return) {
                Err(DispatchError::Reentrant) => Ok(()),
                other => panic!("expected reentrancy error, got {other:?}"),
            }
        }
    }

    #[test]
    fn reentrant_dispatch_is_rejected() {
        let reg = Rc::new(HookRegistry::new(TimeSource::virtual_clock()));
        reg.set_profiler(Rc::new(RefCell::new(Reenter { reg: reg.clone() })));
        let f = FunctionId::script("f").unwrap();
        reg.send_event(&f, EventKind::Call).unwrap();
        reg.clear_profiler();
    }

    #[test]
    fn function_id_validation() {
        assert_eq!(FunctionId::script(""), Err(FunctionIdError::EmptyName));
        assert_eq!(
            FunctionId::script(TOPLEVEL),
            Err(FunctionIdError::ReservedName)
        );
        assert_eq!(
            FunctionId::new("main", FunctionType::Toplevel),
            Err(FunctionIdError::ToplevelType)
        );
        assert!(FunctionId::new(TOPLEVEL, FunctionType::Toplevel)
            .unwrap()
            .is_toplevel());
        assert_eq!(
            FunctionId::new("sin", FunctionType::Builtin)
                .unwrap()
                .name(),
            "sin"
        );
    }

    #[test]
    fn global_registry_is_shared_within_thread() {
        let h = collector();
        assert!(with_global_registry(|r| r.set_profiler(h.clone())));
        assert!(with_global_registry(|r| r.is_installed()));
        assert!(with_global_registry(|r| r.clear_profiler()));
    }
}
