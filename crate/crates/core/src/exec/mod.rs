//! Intermittent execution. One machine runs a program under just-in-time
//! checkpointing or with undo-logged atomic regions, injects power failures
//! from a schedule, and records an observation trace.

mod machine;
pub mod oracle;
pub mod trace;

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use crate::lang::{Program, Site};
pub use oracle::{ClockOracle, InputOracle, ProvenanceOracle, ReplayOracle};
pub use trace::{committed, Event};

/// Logical time.
pub type Tau = u64;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum RVal {
    Int(i64),
    Bool(bool),
    /// Address of a memory cell.
    Ref(usize),
}

impl RVal {
    fn int(&self) -> Result<i64, ExecError> {
        match self {
            RVal::Int(n) => Ok(*n),
            other => Err(ExecError::Type(format!("expected an integer, found {other:?}"))),
        }
    }

    fn bool(&self) -> Result<bool, ExecError> {
        match self {
            RVal::Bool(b) => Ok(*b),
            other => Err(ExecError::Type(format!("expected a boolean, found {other:?}"))),
        }
    }
}

impl fmt::Display for RVal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RVal::Int(n) => write!(f, "{n}"),
            RVal::Bool(b) => write!(f, "{b}"),
            RVal::Ref(c) => write!(f, "&{c}"),
        }
    }
}

/// A nonvolatile memory cell: a value and the input times it depends on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Cell {
    pub val: RVal,
    pub taint: BTreeSet<Tau>,
}

impl Cell {
    fn new(val: RVal) -> Self {
        Cell { val, taint: BTreeSet::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error, Serialize)]
pub enum ExecError {
    #[error("unbound name `{0}`")]
    Unbound(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("index {index} out of bounds for `{array}` of length {len}")]
    OutOfBounds { array: String, index: i64, len: usize },
    #[error("division by zero")]
    DivByZero,
    #[error("arithmetic overflow")]
    Overflow,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Just-in-time checkpointing; atomic markers have no effect.
    #[default]
    Jit,
    /// Undo-logged atomic regions on top of just-in-time checkpointing.
    #[value(alias = "transformed")]
    Atomic,
}

/// When power fails.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum Schedule {
    #[default]
    None,
    /// Before the given attempt (1-based) of each listed statement, off for `n`.
    AtLabels { points: BTreeSet<(Site, u32)>, n: u64 },
    /// Once, before real step `k` (0-based), off for `n`.
    Exhaustive { k: u64, n: u64 },
    /// Before each real step with probability `p`, off for a uniform time in 1..=1000.
    Random { seed: u64, p: f64 },
}

#[derive(Clone, Debug)]
pub struct Options {
    pub mode: Mode,
    pub schedule: Schedule,
    /// Maximum number of real steps, re-executions included.
    pub fuel: u64,
    /// Compare all pre-region memory against its region-entry state after each rollback.
    pub audit: bool,
}

impl Default for Options {
    fn default() -> Self {
        Options { mode: Mode::Jit, schedule: Schedule::None, fuel: 100_000, audit: false }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome", content = "detail", rename_all = "snake_case")]
pub enum Outcome {
    Finished(RVal),
    Fault(ExecError),
    FuelExhausted,
}

#[derive(Clone, Debug)]
pub struct Run {
    pub outcome: Outcome,
    pub trace: Vec<Event>,
    pub memory: Vec<Cell>,
    pub steps: u64,
    pub failures: u64,
    pub tau: Tau,
    pub audit_failures: Vec<String>,
}

impl Run {
    pub fn finished(&self) -> bool {
        matches!(self.outcome, Outcome::Finished(_))
    }

    pub fn values(&self) -> Vec<RVal> {
        self.memory.iter().map(|c| c.val.clone()).collect()
    }
}

/// Runs `p` from its entry.
pub fn run(p: &Program, opts: &Options, oracle: &mut dyn InputOracle) -> Run {
    machine::Machine::new(p, opts, oracle).run()
}

/// Failure-free run with the clock oracle.
pub fn run_continuous(p: &Program, fuel: u64) -> Run {
    run(p, &Options { fuel, ..Options::default() }, &mut ClockOracle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse;

    fn at(points: &[(&str, u32, u32)], n: u64) -> Schedule {
        Schedule::AtLabels { points: points.iter().map(|(f, l, o)| (Site::new(f, *l), *o)).collect(), n }
    }

    #[test]
    fn continuous_run_computes_result() {
        let p = parse("fn f(x) { let y = x * 2; ret y + 1 } fn main() { let a = [1, 2, 3]; let b = f(a[2]); ret b }")
            .unwrap();
        let r = run_continuous(&p, 1000);
        assert_eq!(r.outcome, Outcome::Finished(RVal::Int(7)));
    }

    #[test]
    fn references_write_through() {
        let p = parse("fn g(r) { *r := *r + 5; ret 0 } fn main() { let x = 1; let z = g(&x); ret x }").unwrap();
        assert_eq!(run_continuous(&p, 1000).outcome, Outcome::Finished(RVal::Int(6)));
    }

    #[test]
    fn jit_failure_resumes_in_place_and_advances_time() {
        let p = parse("input s; fn main() { let a = s(); let b = s(); ret b - a }").unwrap();
        let ok = run_continuous(&p, 100);
        assert_eq!(ok.outcome, Outcome::Finished(RVal::Int(1)));
        let opts = Options { schedule: at(&[("main", 1, 1)], 50), ..Options::default() };
        let r = run(&p, &opts, &mut ClockOracle);
        assert_eq!(r.outcome, Outcome::Finished(RVal::Int(52)));
        assert_eq!(r.failures, 1);
    }

    #[test]
    fn region_rollback_reexecutes_and_restores_omega() {
        let src = "input s; fn main() { let c = 0; atomic(1, {c}) { c := c + 1; let a = s(); } ret c }";
        let p = parse(src).unwrap();
        let opts =
            Options { mode: Mode::Atomic, schedule: at(&[("main", 2, 1)], 10), audit: true, ..Options::default() };
        let r = run(&p, &opts, &mut ClockOracle);
        assert_eq!(r.outcome, Outcome::Finished(RVal::Int(1)));
        assert!(r.audit_failures.is_empty());
        let c = committed(&r.trace);
        assert_eq!(trace::steps(&c), trace::steps(&run_continuous(&p, 100).trace));
    }

    #[test]
    fn missing_omega_entry_is_caught_by_audit() {
        let src = "input s; fn main() { let c = 0; atomic(1, {}) { c := c + 1; let a = s(); } ret c }";
        let p = parse(src).unwrap();
        let opts =
            Options { mode: Mode::Atomic, schedule: at(&[("main", 2, 1)], 10), audit: true, ..Options::default() };
        let r = run(&p, &opts, &mut ClockOracle);
        assert_eq!(r.outcome, Outcome::Finished(RVal::Int(2)));
        assert!(!r.audit_failures.is_empty());
    }

    #[test]
    fn division_by_zero_faults() {
        let p = parse("fn main() { let z = 0; let q = 1 / z; ret q }").unwrap();
        assert_eq!(run_continuous(&p, 100).outcome, Outcome::Fault(ExecError::DivByZero));
    }
}
