//! Freshness and temporal-consistency checking for intermittent programs.
//!
//! Programs in a small imperative language mark input-derived bindings as
//! `Fresh` or `Consistent(n)`. The pipeline computes interprocedural input
//! taint ([`taint`]), turns annotations into policies ([`policy`]), places
//! one atomic region per policy ([`infer`]), and checks placements
//! independently ([`checker`]). [`exec`] runs programs under simulated power
//! failures and [`verify`] checks the resulting traces.
//!
//! ```
//! let src = "input temp; fn main() { let alarm = 0; let x = temp(); Fresh(x); \
//!            if x > 30 { alarm := 1; } ret alarm }";
//! let a = intermit::analyze(intermit::lang::parse(src).unwrap());
//! let inf = intermit::infer::infer_atomic(&a.program, &a.policies);
//! assert!(intermit::checker::check_regions(&inf.program, &a.policies, &inf.pm).ok);
//! ```

pub mod cfg;
pub mod checker;
pub mod exec;
pub mod gen;
pub mod infer;
pub mod lang;
pub mod policy;
pub mod report;
pub mod taint;
pub mod verify;

use lang::{Diagnostic, Program};
use policy::{PolicyDecls, PolicyWarning};
use taint::{FuncSummaries, InputDepMap};

/// Static analysis results for one program.
#[derive(Clone, Debug)]
pub struct Analysis {
    pub program: Program,
    pub diagnostics: Vec<Diagnostic>,
    pub summaries: FuncSummaries,
    pub deps: InputDepMap,
    pub policies: PolicyDecls,
    pub warnings: Vec<PolicyWarning>,
}

/// Validates, summarizes and builds policies.
pub fn analyze(program: Program) -> Analysis {
    let diagnostics = lang::validate(&program);
    let summaries = taint::build_summary(&program);
    let deps = taint::build_input_deps(&program, &summaries);
    let (policies, warnings) = policy::build_policies(&program, &summaries, &deps);
    Analysis { program, diagnostics, summaries, deps, policies, warnings }
}
