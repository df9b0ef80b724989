//! Dynamic checking of runs against policies: a trace checker over the
//! committed trace, an online epoch detector over the raw trace, failure
//! schedules that target policy instructions, and the comparisons between
//! runs used by the test suite.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use serde::Serialize;

use crate::exec::trace::{committed, input_values, steps};
use crate::exec::{self, Event, InputOracle, Mode, Options, Outcome, ReplayOracle, Run, Schedule, Tau};
use crate::lang::{Program, Site};
use crate::policy::{consistent_id, fresh_id, PolicyDecls, PolicyId};
use crate::taint::{chains_in_ctx, FuncSummaries, InputDepMap, Provenance};

/// Policies a trace violates, by the interval definitions over the committed
/// trace. A fresh binding is violated when a reboot falls after its earliest
/// input and no later than its last use. A consistent set is violated when a
/// reboot falls between its earliest and latest input.
pub fn check_trace(pd: &PolicyDecls, trace: &[Event]) -> BTreeSet<PolicyId> {
    let c = committed(trace);
    let reboots: Vec<Tau> = c.iter().filter(|e| matches!(e, Event::Reboot { .. })).map(Event::tau).collect();
    let crosses =
        |lo: Tau, hi: Tau, inclusive: bool| reboots.iter().any(|&r| r > lo && if inclusive { r <= hi } else { r < hi });
    let mut last_use: BTreeMap<Tau, Tau> = BTreeMap::new();
    for e in &c {
        if let Event::Use { tau, decl_tau, .. } = e {
            let u = last_use.entry(*decl_tau).or_insert(*tau);
            *u = (*u).max(*tau);
        }
    }
    let mut groups: BTreeMap<u32, BTreeSet<Tau>> = BTreeMap::new();
    let mut out = BTreeSet::new();
    for e in &c {
        match e {
            Event::Fresh { tau, site, inputs, .. } => {
                if let (Some(&lo), Some(&hi)) = (inputs.first(), last_use.get(tau)) {
                    if crosses(lo, hi, true) {
                        out.insert(fresh_id(site));
                    }
                }
            }
            Event::Cnst { set, inputs, .. } => groups.entry(*set).or_default().extend(inputs),
            _ => {}
        }
    }
    for (n, inputs) in groups {
        if let (Some(&lo), Some(&hi)) = (inputs.first(), inputs.last()) {
            if crosses(lo, hi, false) {
                out.insert(consistent_id(n));
            }
        }
    }
    out.retain(|id| pd.get(id).is_some());
    out
}

#[derive(Clone, Default)]
struct DetectorState {
    /// Latest inputs of each consistent declaration instance.
    records: BTreeMap<(u32, Site, Vec<Site>), BTreeSet<Tau>>,
    violated: BTreeSet<PolicyId>,
}

/// Online detector. Every input is stamped with the current power epoch; a
/// reboot starts a new epoch. A fresh use fires when one of the binding's
/// inputs is from an older epoch; a consistent declaration fires when the
/// recorded inputs of its set span more than one epoch. Detector state is
/// nonvolatile and rolls back with the region it was updated in.
pub fn detect(pd: &PolicyDecls, trace: &[Event]) -> BTreeSet<PolicyId> {
    let mut epoch = 0u64;
    let mut epoch_of: BTreeMap<Tau, u64> = BTreeMap::new();
    let mut fresh: BTreeMap<Tau, (Site, BTreeSet<Tau>)> = BTreeMap::new();
    let mut st = DetectorState::default();
    let mut snapshot: Option<DetectorState> = None;
    for e in trace {
        match e {
            Event::Input { tau, .. } => {
                epoch_of.insert(*tau, epoch);
            }
            Event::Begin { .. } => snapshot = Some(st.clone()),
            Event::End { .. } => snapshot = None,
            Event::Reboot { in_region, .. } => {
                epoch += 1;
                if *in_region {
                    if let Some(s) = &snapshot {
                        st = s.clone();
                    }
                }
            }
            Event::Fresh { tau, site, inputs, .. } => {
                fresh.insert(*tau, (site.clone(), inputs.clone()));
            }
            Event::Use { decl_tau, .. } => {
                if let Some((site, inputs)) = fresh.get(decl_tau) {
                    if inputs.iter().any(|t| epoch_of.get(t) != Some(&epoch)) {
                        st.violated.insert(fresh_id(site));
                    }
                }
            }
            Event::Cnst { site, ctx, set, inputs, .. } => {
                st.records.insert((*set, site.clone(), ctx.clone()), inputs.clone());
                let epochs: BTreeSet<Option<&u64>> = st
                    .records
                    .iter()
                    .filter(|((n, _, _), _)| n == set)
                    .flat_map(|(_, ts)| ts.iter().map(|t| epoch_of.get(t)))
                    .collect();
                if epochs.len() > 1 {
                    st.violated.insert(consistent_id(*set));
                }
            }
            _ => {}
        }
    }
    st.violated.retain(|id| pd.get(id).is_some());
    st.violated
}

/// Failure points that make an unprotected program violate its policies:
/// before each use of a fresh binding and before each input of a consistent
/// set after its first. Points are `(site, attempt)` in a failure-free run.
pub fn pathological_points(p: &Program, pd: &PolicyDecls, fuel: u64) -> BTreeSet<(Site, u32)> {
    let run = exec::run_continuous(p, fuel);
    let mut at_tau: BTreeMap<Tau, (Site, u32)> = BTreeMap::new();
    let mut fresh: BTreeMap<Tau, bool> = BTreeMap::new();
    let mut groups: BTreeMap<u32, BTreeSet<Tau>> = BTreeMap::new();
    let mut out = BTreeSet::new();
    for e in &run.trace {
        match e {
            Event::Step { tau, chain, occ } => {
                at_tau.insert(*tau, (chain.last().expect("nonempty chain").clone(), *occ));
            }
            Event::Fresh { tau, site, inputs, .. } => {
                fresh.insert(*tau, !inputs.is_empty() && pd.get(&fresh_id(site)).is_some());
            }
            Event::Use { tau, decl_tau, .. } => {
                if fresh.get(decl_tau) == Some(&true) {
                    out.extend(at_tau.get(tau).cloned());
                }
            }
            Event::Cnst { set, inputs, .. } if pd.get(&consistent_id(*set)).is_some() => {
                groups.entry(*set).or_default().extend(inputs);
            }
            _ => {}
        }
    }
    for inputs in groups.values() {
        for t in inputs.iter().skip(1) {
            out.extend(at_tau.get(t).cloned());
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct SimRow {
    pub benchmark: String,
    pub points: usize,
    pub jit_violating: usize,
    pub atomic_violating: usize,
    pub jit_pct: f64,
    pub atomic_pct: f64,
    /// Runs where the detector and the trace checker disagreed.
    pub detector_mismatches: usize,
    pub millis: u128,
}

fn pct(k: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        100.0 * k as f64 / n as f64
    }
}

/// Runs one single-failure run per pathological point: the original program
/// under just-in-time checkpointing and the transformed one with regions.
pub fn simulate(
    name: &str,
    original: &Program,
    transformed: &Program,
    pd: &PolicyDecls,
    off: u64,
    fuel: u64,
) -> SimRow {
    let start = Instant::now();
    let points = pathological_points(original, pd, fuel);
    let mut row = SimRow {
        benchmark: name.to_string(),
        points: points.len(),
        jit_violating: 0,
        atomic_violating: 0,
        jit_pct: 0.0,
        atomic_pct: 0.0,
        detector_mismatches: 0,
        millis: 0,
    };
    for pt in &points {
        let schedule = Schedule::AtLabels { points: BTreeSet::from([pt.clone()]), n: off };
        for (prog, mode) in [(original, Mode::Jit), (transformed, Mode::Atomic)] {
            let opts = Options { mode, schedule: schedule.clone(), fuel, audit: false };
            let r = exec::run(prog, &opts, &mut exec::ClockOracle);
            let v = check_trace(pd, &r.trace);
            if v != detect(pd, &r.trace) {
                row.detector_mismatches += 1;
            }
            if !v.is_empty() {
                match mode {
                    Mode::Jit => row.jit_violating += 1,
                    Mode::Atomic => row.atomic_violating += 1,
                }
            }
        }
    }
    row.jit_pct = pct(row.jit_violating, row.points);
    row.atomic_pct = pct(row.atomic_violating, row.points);
    row.millis = start.elapsed().as_millis();
    row
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ExhaustiveReport {
    pub runs: usize,
    pub violations: usize,
    pub detector_mismatches: usize,
    pub faults: usize,
    pub refinement_failures: usize,
    /// First few violating runs as `(k, n, policies)`.
    pub examples: Vec<(u64, u64, Vec<PolicyId>)>,
}

/// Injects one failure before every real step of a failure-free run, for
/// each outage length in `offs`, and checks every resulting trace.
pub fn exhaustive(p: &Program, pd: &PolicyDecls, offs: &[u64], mode: Mode, fuel: u64) -> ExhaustiveReport {
    let base = exec::run_continuous(p, fuel);
    let mut rep = ExhaustiveReport::default();
    for &n in offs {
        for k in 0..base.steps {
            let opts = Options { mode, schedule: Schedule::Exhaustive { k, n }, fuel, audit: false };
            let r = exec::run(p, &opts, &mut exec::ClockOracle);
            rep.runs += 1;
            if matches!(r.outcome, Outcome::Fault(_)) {
                rep.faults += 1;
            }
            let v = check_trace(pd, &r.trace);
            if v != detect(pd, &r.trace) {
                rep.detector_mismatches += 1;
            }
            if refines(p, &r, fuel).is_err() {
                rep.refinement_failures += 1;
            }
            if !v.is_empty() {
                rep.violations += 1;
                if rep.examples.len() < 5 {
                    rep.examples.push((k, n, v.into_iter().collect()));
                }
            }
        }
    }
    rep
}

/// Whether the committed statement sequence of `r` is what a failure-free
/// run reading the same input values executes: equal when `r` finished, a
/// prefix otherwise.
pub fn refines(p: &Program, r: &Run, fuel: u64) -> Result<(), String> {
    let c = committed(&r.trace);
    let mut oracle = ReplayOracle::new(input_values(&c));
    let cont = exec::run(p, &Options { fuel, ..Options::default() }, &mut oracle);
    let (a, b) = (steps(&c), steps(&cont.trace));
    let ok = if r.finished() { a == b && r.outcome == cont.outcome } else { b.starts_with(&a) };
    if ok {
        Ok(())
    } else {
        let at = a.iter().zip(&b).position(|(x, y)| x != y).unwrap_or(a.len().min(b.len()));
        Err(format!(
            "committed trace departs from the failure-free run at step {at} ({} vs {} steps)",
            a.len(),
            b.len()
        ))
    }
}

/// Trace with region markers and reboots removed.
pub fn strip_markers(trace: &[Event]) -> Vec<Event> {
    trace.iter().filter(|e| !e.is_marker() && !matches!(e, Event::Reboot { .. })).cloned().collect()
}

/// Definitions whose dynamic dependences are not covered by the static
/// analysis, as `(site, ctx, missing chains)`.
pub fn taint_escapes(
    run: &Run,
    fs: &FuncSummaries,
    deps: &InputDepMap,
) -> Vec<(Site, Vec<Site>, BTreeSet<Provenance>)> {
    let prov: BTreeMap<Tau, Provenance> = run
        .trace
        .iter()
        .filter_map(|e| match e {
            Event::Input { tau, prov, .. } => Some((*tau, prov.clone())),
            _ => None,
        })
        .collect();
    let mut out = vec![];
    for e in &run.trace {
        if let Event::Def { site, ctx, taint, .. } = e {
            let dynamic: BTreeSet<Provenance> = taint.iter().filter_map(|t| prov.get(t).cloned()).collect();
            if dynamic.is_empty() {
                continue;
            }
            let stat = chains_in_ctx(fs, ctx, &site.func, &deps.def_deps(site, ctx));
            let missing: BTreeSet<Provenance> = dynamic.difference(&stat).cloned().collect();
            if !missing.is_empty() {
                out.push((site.clone(), ctx.clone(), missing));
            }
        }
    }
    out
}

/// Runs with an oracle and a schedule and returns the policies violated,
/// checked both ways.
pub fn run_and_check(
    p: &Program,
    pd: &PolicyDecls,
    opts: &Options,
    oracle: &mut dyn InputOracle,
) -> (Run, BTreeSet<PolicyId>, BTreeSet<PolicyId>) {
    let r = exec::run(p, opts, oracle);
    let t = check_trace(pd, &r.trace);
    let d = detect(pd, &r.trace);
    (r, t, d)
}
