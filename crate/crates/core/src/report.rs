//! Text and JSON rendering of frozen profiles.
//!
//! Column glossary for the flat table:
//!
//! * `% time`: self time as a share of the whole program run.
//! * `cumulative seconds`: running sum of self seconds down the table.
//! * `self seconds`: exclusive time (children excluded).
//! * `calls`: number of activations.
//! * `self ms/call`, `total ms/call`: exclusive and inclusive time per call.
//!
//! Derived values are computed from integer nanoseconds and rounded half-up
//! to two decimals only when printed. The JSON export keeps raw integers.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::engine::{ArcRecord, CallGraphProfile, CallRecord, FlatProfile};
use crate::events::TOPLEVEL;
use crate::session::Profile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SortKey {
    SelfTime,
    TotalPerCall,
    Calls,
    Name,
    FirstCall,
}

impl FromStr for SortKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "self" => Ok(SortKey::SelfTime),
            "total" => Ok(SortKey::TotalPerCall),
            "calls" => Ok(SortKey::Calls),
            "name" => Ok(SortKey::Name),
            "first-call" => Ok(SortKey::FirstCall),
            other => Err(format!(
                "unknown sort key `{other}` (expected self, total, calls, name or first-call)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Ascending,
    Descending,
}

/// Row order for reports. Ties always fall back to ascending name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SortOrder {
    pub key: SortKey,
    pub direction: Direction,
}

impl Default for SortOrder {
    fn default() -> Self {
        SortOrder {
            key: SortKey::SelfTime,
            direction: Direction::Descending,
        }
    }
}

impl SortOrder {
    pub fn new(key: SortKey, direction: Direction) -> Self {
        SortOrder { key, direction }
    }
}

/// The sortable facts shared by function records and arcs.
struct SortFacts<'a> {
    name: &'a str,
    ncalls: u64,
    total_ns: u64,
    self_ns: u64,
    first_call: u64,
}

impl<'a> From<&'a CallRecord> for SortFacts<'a> {
    fn from(r: &'a CallRecord) -> Self {
        SortFacts {
            name: &r.name,
            ncalls: r.ncalls,
            total_ns: r.total_ns,
            self_ns: r.self_ns,
            first_call: r.first_call,
        }
    }
}

impl<'a> From<&'a ArcRecord> for SortFacts<'a> {
    fn from(a: &'a ArcRecord) -> Self {
        SortFacts {
            name: &a.callee,
            ncalls: a.ncalls,
            total_ns: a.total_ns,
            self_ns: a.self_ns,
            first_call: a.first_call,
        }
    }
}

fn compare(order: SortOrder, a: &SortFacts, b: &SortFacts) -> Ordering {
    let primary = match order.key {
        SortKey::SelfTime => a.self_ns.cmp(&b.self_ns),
        // total/ncalls compared exactly by cross-multiplying
        SortKey::TotalPerCall => (a.total_ns as u128 * b.ncalls.max(1) as u128)
            .cmp(&(b.total_ns as u128 * a.ncalls.max(1) as u128)),
        SortKey::Calls => a.ncalls.cmp(&b.ncalls),
        SortKey::Name => a.name.cmp(b.name),
        SortKey::FirstCall => a.first_call.cmp(&b.first_call),
    };
    let primary = match order.direction {
        Direction::Ascending => primary,
        Direction::Descending => primary.reverse(),
    };
    primary.then_with(|| a.name.cmp(b.name))
}

/// Integer hundredths, rounded half-up: `num / den * 100`.
fn hundredths(num: u128, den: u128) -> u128 {
    (2 * num * 100 + den) / (2 * den)
}

struct Fixed2(u128);

impl fmt::Display for Fixed2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = format!("{}.{:02}", self.0 / 100, self.0 % 100);
        f.pad(&s)
    }
}

const NS_PER_SEC: u128 = 1_000_000_000;
const NS_PER_MS: u128 = 1_000_000;

fn seconds(ns: u128) -> Fixed2 {
    Fixed2(hundredths(ns, NS_PER_SEC))
}

fn ms_per_call(ns: u64, ncalls: u64) -> Fixed2 {
    Fixed2(hundredths(ns as u128, ncalls.max(1) as u128 * NS_PER_MS))
}

/// One rendered table row, values already rounded for display.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlatReportRow {
    pub pct_time: String,
    pub cumulative_seconds: String,
    pub self_seconds: String,
    pub calls: u64,
    pub self_ms_per_call: String,
    pub total_ms_per_call: String,
    pub name: String,
}

/// Computes the table rows in display order.
pub fn flat_rows(profile: &FlatProfile, order: SortOrder) -> Vec<FlatReportRow> {
    let mut records: Vec<&CallRecord> = profile.records.iter().collect();
    records.sort_by(|a, b| compare(order, &SortFacts::from(*a), &SortFacts::from(*b)));
    let total = profile.program_total_ns as u128;
    let mut running: u128 = 0;
    records
        .into_iter()
        .map(|r| {
            running += r.self_ns as u128;
            let pct = if total == 0 {
                "-".to_string()
            } else {
                Fixed2(hundredths(r.self_ns as u128 * 100, total)).to_string()
            };
            let mut name = r.name.clone();
            if r.truncated {
                name.push_str(" (truncated)");
            }
            FlatReportRow {
                pct_time: pct,
                cumulative_seconds: seconds(running).to_string(),
                self_seconds: seconds(r.self_ns as u128).to_string(),
                calls: r.ncalls,
                self_ms_per_call: ms_per_call(r.self_ns, r.ncalls).to_string(),
                total_ms_per_call: ms_per_call(r.total_ns, r.ncalls).to_string(),
                name,
            }
        })
        .collect()
}

pub fn render_flat(profile: &FlatProfile, order: SortOrder) -> String {
    let mut out = String::new();
    out.push_str("Flat profile:\n\n");
    out.push_str("     %   cumulative       self               self      total\n");
    out.push_str("  time      seconds    seconds      calls  ms/call    ms/call  name\n");
    for row in flat_rows(profile, order) {
        let _ = writeln!(
            out,
            "{:>6} {:>12} {:>10} {:>10} {:>8} {:>10}  {}",
            row.pct_time,
            row.cumulative_seconds,
            row.self_seconds,
            row.calls,
            row.self_ms_per_call,
            row.total_ms_per_call,
            row.name
        );
    }
    out
}

struct GraphLine {
    label: String,
    arc: ArcRecord,
    cycle: bool,
}

fn walk<'a>(
    profile: &'a CallGraphProfile,
    order: SortOrder,
    caller: &'a str,
    depth: usize,
    path: &mut HashSet<&'a str>,
    lines: &mut Vec<GraphLine>,
) {
    let mut children: Vec<&ArcRecord> = profile.callees(caller).collect();
    children.sort_by(|a, b| compare(order, &SortFacts::from(*a), &SortFacts::from(*b)));
    for arc in children {
        let cycle = path.contains(arc.callee.as_str());
        lines.push(GraphLine {
            label: format!(
                "{:indent$}{} -> {}",
                "",
                arc.caller,
                arc.callee,
                indent = 2 * depth
            ),
            arc: arc.clone(),
            cycle,
        });
        if !cycle {
            path.insert(&arc.callee);
            walk(profile, order, &arc.callee, depth + 1, path, lines);
            path.remove(arc.callee.as_str());
        }
    }
}

/// Depth-first arc listing from `#toplevel`. An arc reachable from several
/// callers appears under each; an arc back into a function already on the
/// current path is printed once, tagged `[cycle]`, and not expanded.
pub fn render_graph(profile: &CallGraphProfile, order: SortOrder) -> String {
    let mut lines = Vec::new();
    let mut path = HashSet::from([TOPLEVEL]);
    walk(profile, order, TOPLEVEL, 0, &mut path, &mut lines);

    let width = lines
        .iter()
        .map(|l| l.label.chars().count())
        .max()
        .unwrap_or(0)
        .max("arc".len());
    let mut out = String::new();
    out.push_str("Call graph (seconds; ms/call is inclusive time per call):\n\n");
    let _ = writeln!(
        out,
        "{:<width$}  {:>10} {:>10} {:>10} {:>10}",
        "arc", "calls", "self", "total", "ms/call"
    );
    for l in &lines {
        let _ = write!(
            out,
            "{:<width$}  {:>10} {:>10} {:>10} {:>10}",
            l.label,
            l.arc.ncalls,
            seconds(l.arc.self_ns as u128),
            seconds(l.arc.total_ns as u128),
            ms_per_call(l.arc.total_ns, l.arc.ncalls),
        );
        if l.cycle {
            out.push_str("  [cycle]");
        }
        out.push('\n');
    }
    out
}

/// Text report for either mode; graph profiles get the tree followed by
/// their per-function table.
pub fn render(profile: &Profile, order: SortOrder) -> String {
    match profile {
        Profile::Flat(p) => render_flat(p, order),
        Profile::Graph(g) => {
            let mut out = render_graph(g, order);
            out.push('\n');
            out.push_str(&render_flat(&g.rollup(), order));
            out
        }
    }
}

/// JSON document with all times as integer nanoseconds.
pub fn export_structured(profile: &Profile) -> String {
    let mut s = serde_json::to_string_pretty(profile).expect("profiles always serialize");
    s.push('\n');
    s
}

pub fn import_structured(text: &str) -> Result<Profile, serde_json::Error> {
    serde_json::from_str(text)
}
