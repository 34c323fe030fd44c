//! Test-only oracle and random generators.
//!
//! The oracle does not use the engines' time-stack accounting: it matches
//! calls to returns, then derives every statistic from the resulting
//! activation intervals (child spans found by index ranges, inclusive time
//! as the measure of a union of intervals).

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use profiler_core::workload::{FuncDef, Stmt};
use profiler_core::{EventKind, FunctionId, ProfileEvent, Script, TOPLEVEL};
use rand::rngs::StdRng;
use rand::Rng;

#[derive(Debug, Clone)]
pub struct Activation {
    pub name: String,
    pub parent: String,
    pub depth: usize,
    pub call_idx: usize,
    pub ret_idx: usize,
    pub t0: u64,
    pub t1: u64,
    pub open: bool,
}

impl Activation {
    fn span(&self) -> u64 {
        self.t1 - self.t0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Stats {
    pub ncalls: u64,
    pub total_ns: u64,
    pub self_ns: u64,
    pub truncated: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Oracle {
    pub program_total_ns: u64,
    pub functions: BTreeMap<String, Stats>,
    pub arcs: BTreeMap<(String, String), Stats>,
    pub recursive: bool,
}

/// Measure of the union of closed intervals.
fn union_length(mut spans: Vec<(u64, u64)>) -> u64 {
    spans.sort_unstable();
    let mut total = 0;
    let mut cur: Option<(u64, u64)> = None;
    for (a, b) in spans {
        cur = match cur {
            Some((s, e)) if a <= e => Some((s, e.max(b))),
            Some((s, e)) => {
                total += e - s;
                Some((a, b))
            }
            None => Some((a, b)),
        };
    }
    if let Some((s, e)) = cur {
        total += e - s;
    }
    total
}

/// Builds activation intervals from user events (no `#toplevel` lines).
/// Calls still open at the end are closed at `stop`.
pub fn activations(events: &[ProfileEvent], stop: u64) -> Vec<Activation> {
    let mut open: Vec<usize> = Vec::new();
    let mut acts: Vec<Activation> = Vec::new();
    for (i, e) in events.iter().enumerate() {
        match e.kind {
            EventKind::Call => {
                let parent = open
                    .last()
                    .map(|&j| acts[j].name.clone())
                    .unwrap_or_else(|| TOPLEVEL.to_string());
                acts.push(Activation {
                    name: e.function.name().to_string(),
                    parent,
                    depth: open.len(),
                    call_idx: i,
                    ret_idx: usize::MAX,
                    t0: e.raw_time.0,
                    t1: 0,
                    open: true,
                });
                open.push(acts.len() - 1);
            }
            EventKind::Return => {
                let j = open.pop().expect("oracle input must be well nested");
                assert_eq!(
                    acts[j].name,
                    e.function.name(),
                    "oracle input must be well nested"
                );
                acts[j].ret_idx = i;
                acts[j].t1 = e.raw_time.0;
                acts[j].open = false;
            }
        }
    }
    for j in open {
        acts[j].t1 = stop;
    }
    acts
}

pub fn oracle(events: &[ProfileEvent], start: u64, stop: u64) -> Oracle {
    let acts = activations(events, stop);

    // per depth: activations ordered by call index, with prefix sums of spans
    let max_depth = acts.iter().map(|a| a.depth).max().map_or(0, |d| d + 1);
    let mut by_depth: Vec<Vec<(usize, u64)>> = vec![Vec::new(); max_depth];
    for a in &acts {
        by_depth[a.depth].push((a.call_idx, a.span()));
    }
    let prefix: Vec<Vec<u64>> = by_depth
        .iter()
        .map(|v| {
            let mut p = vec![0u64];
            for &(_, s) in v {
                p.push(p.last().unwrap() + s);
            }
            p
        })
        .collect();
    let child_span_sum = |a: &Activation| -> u64 {
        let d = a.depth + 1;
        if d >= by_depth.len() {
            return 0;
        }
        let v = &by_depth[d];
        let lo = v.partition_point(|&(c, _)| c <= a.call_idx);
        let hi = v.partition_point(|&(c, _)| c < a.ret_idx);
        prefix[d][hi] - prefix[d][lo]
    };

    let mut functions: BTreeMap<String, Stats> = BTreeMap::new();
    let mut arcs: BTreeMap<(String, String), Stats> = BTreeMap::new();
    let mut fn_spans: HashMap<String, Vec<(u64, u64)>> = HashMap::new();
    let mut arc_spans: HashMap<(String, String), Vec<(u64, u64)>> = HashMap::new();
    for a in &acts {
        let self_ns = a.span() - child_span_sum(a);
        let f = functions.entry(a.name.clone()).or_default();
        f.ncalls += 1;
        f.self_ns += self_ns;
        f.truncated |= a.open;
        fn_spans
            .entry(a.name.clone())
            .or_default()
            .push((a.t0, a.t1));
        let key = (a.parent.clone(), a.name.clone());
        let arc = arcs.entry(key.clone()).or_default();
        arc.ncalls += 1;
        arc.self_ns += self_ns;
        arc_spans.entry(key).or_default().push((a.t0, a.t1));
    }
    for (name, spans) in fn_spans {
        functions.get_mut(&name).unwrap().total_ns = union_length(spans);
    }
    for (key, spans) in arc_spans {
        arcs.get_mut(&key).unwrap().total_ns = union_length(spans);
    }

    let program_total_ns = stop - start;
    let top_children: u64 = acts.iter().filter(|a| a.depth == 0).map(|a| a.span()).sum();
    functions.insert(
        TOPLEVEL.to_string(),
        Stats {
            ncalls: 1,
            total_ns: program_total_ns,
            self_ns: program_total_ns - top_children,
            truncated: false,
        },
    );

    // recursive if some activation is nested inside another of the same function
    let mut recursive = false;
    let mut on_stack: HashMap<&str, usize> = HashMap::new();
    let mut stack: Vec<&str> = Vec::new();
    for e in events {
        match e.kind {
            EventKind::Call => {
                let c = on_stack.entry(e.function.name()).or_insert(0);
                recursive |= *c > 0;
                *c += 1;
                stack.push(e.function.name());
            }
            EventKind::Return => {
                if let Some(n) = stack.pop() {
                    *on_stack.get_mut(n).unwrap() -= 1;
                }
            }
        }
    }

    Oracle {
        program_total_ns,
        functions,
        arcs,
        recursive,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TraceShape {
    pub max_functions: usize,
    pub max_depth: usize,
    pub max_events: usize,
    pub allow_recursion: bool,
    /// Leave some calls open at the end instead of returning them.
    pub leave_open: bool,
}

/// A random well-nested user trace plus session bounds.
#[derive(Debug, Clone)]
pub struct RandomTrace {
    pub events: Vec<ProfileEvent>,
    pub start: u64,
    pub stop: u64,
}

impl RandomTrace {
    /// The trace bracketed by `#toplevel` session markers, as recorded.
    pub fn bracketed(&self) -> Vec<ProfileEvent> {
        let mut v = Vec::with_capacity(self.events.len() + 2);
        v.push(ProfileEvent::call(FunctionId::toplevel(), self.start));
        v.extend(self.events.iter().cloned());
        v.push(ProfileEvent::ret(FunctionId::toplevel(), self.stop));
        v
    }
}

fn gap(rng: &mut StdRng) -> u64 {
    if rng.gen_bool(0.2) {
        0
    } else {
        rng.gen_range(1..=1_000)
    }
}

pub fn random_trace(rng: &mut StdRng, shape: TraceShape) -> RandomTrace {
    let nfuncs = rng.gen_range(1..=shape.max_functions);
    let ids: Vec<FunctionId> = (0..nfuncs)
        .map(|i| FunctionId::script(&format!("f{i}")).unwrap())
        .collect();
    let target = rng.gen_range(0..=shape.max_events / 2) * 2;
    let start = rng.gen_range(0..10_000);
    let mut t = start;
    let mut stack: Vec<usize> = Vec::new();
    let mut events = Vec::with_capacity(target);
    let p_call = rng.gen_range(0.35..0.65);

    while events.len() < target {
        let remaining = target - events.len();
        let must_close = !shape.leave_open && stack.len() >= remaining;
        let can_call = stack.len() < shape.max_depth && !must_close;
        let want_call = stack.is_empty() || (can_call && rng.gen_bool(p_call));
        t += gap(rng);
        if want_call && can_call {
            let choices: Vec<usize> = (0..nfuncs)
                .filter(|i| shape.allow_recursion || !stack.contains(i))
                .collect();
            if choices.is_empty() {
                let top = stack.pop().unwrap();
                events.push(ProfileEvent::ret(ids[top].clone(), t));
                continue;
            }
            let f = choices[rng.gen_range(0..choices.len())];
            stack.push(f);
            events.push(ProfileEvent::call(ids[f].clone(), t));
        } else if let Some(top) = stack.pop() {
            events.push(ProfileEvent::ret(ids[top].clone(), t));
        } else {
            break;
        }
    }
    if !shape.leave_open {
        while let Some(top) = stack.pop() {
            t += gap(rng);
            events.push(ProfileEvent::ret(ids[top].clone(), t));
        }
    } else if stack.is_empty() && !ids.is_empty() {
        t += gap(rng);
        events.push(ProfileEvent::call(ids[0].clone(), t));
    }
    let stop = t + gap(rng);
    RandomTrace {
        events,
        start,
        stop,
    }
}

/// Number of calls `script` performs, or `None` if it exceeds `limit`.
pub fn call_count(defs: &[FuncDef], body: &[Stmt], limit: u64) -> Option<u64> {
    // defs may only call later defs, so resolve from the back
    let mut per_fn: HashMap<&str, u64> = HashMap::new();
    fn count(stmts: &[Stmt], per_fn: &HashMap<&str, u64>, limit: u64) -> Option<u64> {
        let mut n: u64 = 0;
        for s in stmts {
            n = n.checked_add(match s {
                Stmt::Work(_) => 0,
                Stmt::Call(name) => 1 + per_fn[name.as_str()],
                Stmt::Repeat(k, b) => count(b, per_fn, limit)?.checked_mul(*k)?,
            })?;
            if n > limit {
                return None;
            }
        }
        Some(n)
    }
    for d in defs.iter().rev() {
        let c = count(&d.body, &per_fn, limit)?;
        per_fn.insert(&d.name, c);
    }
    count(body, &per_fn, limit)
}

fn random_block(rng: &mut StdRng, callable: &[String], depth: usize) -> Vec<Stmt> {
    let len = rng.gen_range(1..=5);
    (0..len)
        .map(|_| match rng.gen_range(0..10) {
            0..=3 => Stmt::Work(rng.gen_range(0..5_000)),
            4..=7 if !callable.is_empty() => {
                Stmt::Call(callable[rng.gen_range(0..callable.len())].clone())
            }
            8 | 9 if depth < 2 => {
                Stmt::Repeat(rng.gen_range(0..6), random_block(rng, callable, depth + 1))
            }
            _ => Stmt::Work(rng.gen_range(0..100)),
        })
        .collect()
}

/// A random script whose call graph is acyclic and whose run stays small.
pub fn random_script(rng: &mut StdRng) -> Script {
    loop {
        let n = rng.gen_range(1..=12);
        let names: Vec<String> = (0..n).map(|i| format!("fn_{i}")).collect();
        let defs: Vec<FuncDef> = (0..n)
            .map(|i| FuncDef {
                name: names[i].clone(),
                body: random_block(rng, &names[i + 1..], 0),
            })
            .collect();
        let mut body = random_block(rng, &names, 0);
        if !names.is_empty() {
            body.push(Stmt::Call(names[0].clone()));
        }
        if call_count(&defs, &body, 20_000).is_some() {
            return Script::new(defs, body).expect("generated script is valid");
        }
    }
}
