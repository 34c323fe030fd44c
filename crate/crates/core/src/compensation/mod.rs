//! Overhead compensation and per-call bias calibration.
//!
//! Every event handler times itself; the elapsed handler time is added to
//! a session-wide [`OverheadLedger`], and each raw timestamp the engines see
//! has the ledger total subtracted first. Whatever overhead the handler
//! cannot see (the dispatch path into and out of it) remains, and grows
//! linearly with the number of calls. [`calibrate`] fits that line; the
//! slope is the per-call bias. It is reported, never subtracted.

mod measure;

pub use measure::{
    calibration_sweep, measure_overhead, tight_loop, CalibrationConfig, CalibrationReport,
    MeasureError, ModeCalibration, OverheadSample,
};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timebase::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompensationError {
    #[error("overhead ledger ({overhead} ns) exceeds raw time {raw}")]
    LedgerExceedsElapsed { overhead: u64, raw: Timestamp },
    #[error("overhead ledger overflowed")]
    Overflow,
}

/// Running total of handler time observed during a session.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OverheadLedger {
    cumulative: u64,
}

impl OverheadLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cumulative_ns(&self) -> u64 {
        self.cumulative
    }

    /// `raw` minus all handler time accrued so far.
    pub fn compensated_time(&self, raw: Timestamp) -> Result<Timestamp, CompensationError> {
        raw.0.checked_sub(self.cumulative).map(Timestamp).ok_or(
            CompensationError::LedgerExceedsElapsed {
                overhead: self.cumulative,
                raw,
            },
        )
    }

    pub fn record_handler_cost(&mut self, dt: u64) -> Result<(), CompensationError> {
        self.cumulative = self
            .cumulative
            .checked_add(dt)
            .ok_or(CompensationError::Overflow)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("a linear fit needs at least two distinct call counts, got {0}")]
    Degenerate(usize),
    #[error("non-finite overhead sample at ncalls={0}")]
    NonFinite(u64),
}

/// Least-squares line through (ncalls, overhead seconds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasModel {
    /// Seconds per call.
    pub slope: f64,
    /// Seconds.
    pub intercept: f64,
    pub r_squared: f64,
    pub sample_points: Vec<(u64, f64)>,
}

impl BiasModel {
    pub fn predict(&self, ncalls: u64) -> f64 {
        self.slope * ncalls as f64 + self.intercept
    }
}

/// Ordinary least squares, unweighted.
pub fn calibrate(points: &[(u64, f64)]) -> Result<BiasModel, CalibrationError> {
    if let Some(&(n, _)) = points.iter().find(|(_, y)| !y.is_finite()) {
        return Err(CalibrationError::NonFinite(n));
    }
    let mut xs: Vec<u64> = points.iter().map(|p| p.0).collect();
    xs.sort_unstable();
    xs.dedup();
    if xs.len() < 2 {
        return Err(CalibrationError::Degenerate(xs.len()));
    }

    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        let dx = x as f64 - mean_x;
        let dy = y - mean_y;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = points
        .iter()
        .map(|&(x, y)| {
            let r = y - (slope * x as f64 + intercept);
            r * r
        })
        .sum();
    // A flat line through constant data is a perfect fit.
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(BiasModel {
        slope,
        intercept,
        r_squared,
        sample_points: points.to_vec(),
    })
}

impl fmt::Display for BiasModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "slope      {:.6e} s/call", self.slope)?;
        writeln!(f, "intercept  {:.6e} s", self.intercept)?;
        writeln!(f, "r^2        {:.6}", self.r_squared)?;
        writeln!(f, "{:>12}  {:>16}", "calls", "overhead (s)")?;
        for (n, y) in &self.sample_points {
            writeln!(f, "{n:>12}  {y:>16.9}")?;
        }
        Ok(())
    }
}
