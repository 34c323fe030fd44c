//! Timestamp source shared by the interpreter, the hook registry and the engines.
//!
//! A [`TimeSource`] is either backed by the monotonic OS clock or is a virtual
//! clock that only moves when told to. All times are integer nanoseconds
//! relative to the moment the source was created; conversion to seconds or
//! milliseconds happens only when a report is rendered.
//!
//! The measured quantity is wall time on the monotonic clock, not CPU time.

use std::cell::Cell;
use std::fmt;
use std::rc::Rc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Nanoseconds since an arbitrary session origin.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn as_nanos(self) -> u64 {
        self.0
    }

    /// Nanoseconds elapsed since `earlier`, or `None` if `earlier` is later.
    pub fn checked_since(self, earlier: Timestamp) -> Option<u64> {
        self.0.checked_sub(earlier.0)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum TimeError {
    #[error("cannot advance a real-time clock; only virtual clocks advance on request")]
    NotVirtual,
    #[error("virtual clock overflowed u64 nanoseconds")]
    Overflow,
}

/// Which kind of clock a [`TimeSource`] wraps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockKind {
    Real,
    Virtual,
}

enum Clock {
    Real { origin: Instant },
    Virtual { current: Cell<u64> },
}

/// Cheaply cloneable handle to a clock. Clones observe the same time.
///
/// Handles are `!Send`; a source belongs to the thread running the session.
#[derive(Clone)]
pub struct TimeSource {
    clock: Rc<Clock>,
}

impl TimeSource {
    /// A monotonic clock whose origin is "now".
    pub fn real() -> Self {
        TimeSource {
            clock: Rc::new(Clock::Real {
                origin: Instant::now(),
            }),
        }
    }

    /// A virtual clock at 0.
    pub fn virtual_clock() -> Self {
        Self::virtual_at(Timestamp::ZERO)
    }

    pub fn virtual_at(start: Timestamp) -> Self {
        TimeSource {
            clock: Rc::new(Clock::Virtual {
                current: Cell::new(start.0),
            }),
        }
    }

    pub fn kind(&self) -> ClockKind {
        match *self.clock {
            Clock::Real { .. } => ClockKind::Real,
            Clock::Virtual { .. } => ClockKind::Virtual,
        }
    }

    pub fn is_virtual(&self) -> bool {
        self.kind() == ClockKind::Virtual
    }

    #[inline]
    pub fn now(&self) -> Timestamp {
        match &*self.clock {
            // Instant is monotonic, and saturating nanos fit u64 for ~584 years.
            Clock::Real { origin } => Timestamp(origin.elapsed().as_nanos() as u64),
            Clock::Virtual { current } => Timestamp(current.get()),
        }
    }

    /// Moves a virtual clock forward by `dt` nanoseconds and returns the new time.
    pub fn advance(&self, dt: u64) -> Result<Timestamp, TimeError> {
        match &*self.clock {
            Clock::Real { .. } => Err(TimeError::NotVirtual),
            Clock::Virtual { current } => {
                let next = current.get().checked_add(dt).ok_or(TimeError::Overflow)?;
                current.set(next);
                Ok(Timestamp(next))
            }
        }
    }

    /// Moves a virtual clock to `to` if that is in the future; otherwise leaves it.
    pub(crate) fn advance_to(&self, to: Timestamp) -> Result<Timestamp, TimeError> {
        let now = self.now();
        self.advance(to.0.saturating_sub(now.0))
    }

    /// Lets `dt` nanoseconds of time pass: advances a virtual clock, busy-spins a real one.
    ///
    /// A spin is used instead of a sleep so the time is actually consumed on
    /// this thread.
    pub fn consume(&self, dt: u64) -> Result<(), TimeError> {
        match &*self.clock {
            Clock::Virtual { .. } => self.advance(dt).map(|_| ()),
            Clock::Real { .. } => {
                if dt == 0 {
                    return Ok(());
                }
                let deadline = self.now().0.saturating_add(dt);
                while self.now().0 < deadline {
                    std::hint::spin_loop();
                }
                Ok(())
            }
        }
    }
}

impl fmt::Debug for TimeSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TimeSource")
            .field("kind", &self.kind())
            .field("now", &self.now())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fresh_virtual_source_reads_zero() {
        assert_eq!(TimeSource::virtual_clock().now(), Timestamp(0));
    }

    #[test]
    fn advance_moves_virtual_clock() {
        let src = TimeSource::virtual_clock();
        assert_eq!(src.advance(10).unwrap(), Timestamp(10));
        assert_eq!(src.advance(0).unwrap(), Timestamp(10));
        assert_eq!(src.now(), Timestamp(10));
    }

    #[test]
    fn clones_share_the_clock() {
        let a = TimeSource::virtual_clock();
        let b = a.clone();
        a.advance(5).unwrap();
        assert_eq!(b.now(), Timestamp(5));
    }

    #[test]
    fn real_source_refuses_advance() {
        let src = TimeSource::real();
        assert_eq!(src.advance(5), Err(TimeError::NotVirtual));
    }

    #[test]
    fn real_source_is_monotonic() {
        let src = TimeSource::real();
        let mut last = src.now();
        for _ in 0..1000 {
            let t = src.now();
            assert!(t >= last);
            last = t;
        }
    }

    #[test]
    fn real_consume_spins_for_at_least_dt() {
        let src = TimeSource::real();
        let t0 = src.now();
        src.consume(200_000).unwrap();
        assert!(src.now().0 - t0.0 >= 200_000);
    }

    #[test]
    fn advance_overflow_is_an_error() {
        let src = TimeSource::virtual_at(Timestamp(u64::MAX - 1));
        assert_eq!(src.advance(2), Err(TimeError::Overflow));
        assert_eq!(src.now(), Timestamp(u64::MAX - 1));
    }

    proptest! {
        #[test]
        fn virtual_time_is_exact_sum_of_advances(steps in proptest::collection::vec(0u64..1_000_000_000, 0..200)) {
            let src = TimeSource::virtual_clock();
            for &d in &steps {
                src.advance(d).unwrap();
            }
            prop_assert_eq!(src.now().0, steps.iter().sum::<u64>());
        }
    }
}
