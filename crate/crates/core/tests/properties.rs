//! Property tests over generated programs.

use std::collections::BTreeSet;

use proptest::prelude::*;

use intermit::cfg::{build_cfg, Cfg};
use intermit::exec::trace::steps;
use intermit::exec::{self, ClockOracle, Mode, Options, ProvenanceOracle, Schedule};
use intermit::gen::random_source;
use intermit::infer::infer_atomic;
use intermit::lang::{parse, pretty_print, validate};
use intermit::{analyze, checker, verify};

fn config() -> ProptestConfig {
    ProptestConfig { cases: 100, ..ProptestConfig::default() }
}

/// Blocks reachable from the entry without passing through `avoid`.
fn reach_avoiding(cfg: &Cfg, avoid: usize, forward: bool) -> BTreeSet<usize> {
    let start = if forward { cfg.entry } else { cfg.exit };
    let mut seen = BTreeSet::new();
    if start == avoid {
        return seen;
    }
    let mut stack = vec![start];
    while let Some(b) = stack.pop() {
        if !seen.insert(b) {
            continue;
        }
        let bb = cfg.block(b);
        let next = if forward { &bb.succs } else { &bb.preds };
        stack.extend(next.iter().copied().filter(|&n| n != avoid));
    }
    seen
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn print_then_parse_is_identity(seed in any::<u64>()) {
        let p = parse(&random_source(seed, 60)).unwrap();
        let q = parse(&pretty_print(&p)).unwrap();
        prop_assert_eq!(p, q);
    }

    #[test]
    fn transformed_output_reparses_to_itself(seed in any::<u64>()) {
        let p = parse(&random_source(seed, 60)).unwrap();
        prop_assume!(validate(&p).is_empty());
        let a = analyze(p);
        let inf = infer_atomic(&a.program, &a.policies);
        let text = pretty_print(&inf.program);
        prop_assert_eq!(parse(&text).unwrap(), inf.program);
    }

    #[test]
    fn dominators_match_path_oracle(seed in any::<u64>()) {
        let p = parse(&random_source(seed, 60)).unwrap();
        for f in &p.funcs {
            let cfg = build_cfg(f);
            let all = reach_avoiding(&cfg, usize::MAX, true);
            for &a in &all {
                let fwd = reach_avoiding(&cfg, a, true);
                let bwd = reach_avoiding(&cfg, a, false);
                for &b in &all {
                    let dom = a == b || !fwd.contains(&b);
                    let pdom = a == b || !bwd.contains(&b);
                    prop_assert_eq!(cfg.dominates(a, b), dom, "dom {} {} in {}", a, b, f.name);
                    prop_assert_eq!(cfg.post_dominates(a, b), pdom, "pdom {} {} in {}", a, b, f.name);
                }
            }
        }
    }

    #[test]
    fn inferred_regions_pass_both_checks(seed in any::<u64>()) {
        let p = parse(&random_source(seed, 60)).unwrap();
        prop_assume!(validate(&p).is_empty());
        let a = analyze(p);
        prop_assert!(checker::check_summaries(&a.program, &a.summaries, &a.policies).ok);
        let inf = infer_atomic(&a.program, &a.policies);
        let v = checker::check_regions(&inf.program, &a.policies, &inf.pm);
        prop_assert!(v.ok, "{:?}\n{}", v.diagnostics, pretty_print(&inf.program));
        let derived = checker::derive_policy_map(&inf.program, &a.policies);
        prop_assert!(checker::check_regions(&inf.program, &a.policies, &derived).ok);
    }

    #[test]
    fn inference_is_idempotent_on_labels(seed in any::<u64>()) {
        let p = parse(&random_source(seed, 60)).unwrap();
        prop_assume!(validate(&p).is_empty());
        let a = analyze(p);
        let inf = infer_atomic(&a.program, &a.policies);
        prop_assert_eq!(inf.program.sites(), a.program.sites());
        let again = analyze(inf.program.clone());
        prop_assert_eq!(again.policies, a.policies);
    }

    #[test]
    fn regions_hold_under_random_failures(seed in any::<u64>(), sched in 0u64..1000) {
        let p = parse(&random_source(seed, 60)).unwrap();
        prop_assume!(validate(&p).is_empty());
        let a = analyze(p);
        let inf = infer_atomic(&a.program, &a.policies);
        let opts = Options { mode: Mode::Atomic, schedule: Schedule::Random { seed: sched, p: 0.1 }, fuel: 50_000, audit: true };
        let (r, t, d) = verify::run_and_check(&inf.program, &a.policies, &opts, &mut ClockOracle);
        prop_assert!(t.is_empty(), "{:?}", t);
        prop_assert_eq!(&t, &d);
        prop_assert!(r.audit_failures.is_empty(), "{:?}", r.audit_failures);
        prop_assert!(verify::refines(&inf.program, &r, 50_000).is_ok());
    }

    #[test]
    fn jit_detector_matches_trace_checker(seed in any::<u64>(), sched in 0u64..1000) {
        let p = parse(&random_source(seed, 60)).unwrap();
        prop_assume!(validate(&p).is_empty());
        let a = analyze(p);
        let opts = Options { schedule: Schedule::Random { seed: sched, p: 0.2 }, fuel: 50_000, ..Options::default() };
        let (r, t, d) = verify::run_and_check(&a.program, &a.policies, &opts, &mut ClockOracle);
        prop_assert_eq!(t, d);
        prop_assert!(verify::taint_escapes(&r, &a.summaries, &a.deps).is_empty());
    }

    #[test]
    fn failure_free_regions_only_add_markers(seed in any::<u64>()) {
        let p = parse(&random_source(seed, 60)).unwrap();
        prop_assume!(validate(&p).is_empty());
        let a = analyze(p);
        let inf = infer_atomic(&a.program, &a.policies);
        let quiet = Options { fuel: 50_000, ..Options::default() };
        let j = exec::run(&a.program, &quiet, &mut ProvenanceOracle { seed });
        let at = exec::run(&inf.program, &Options { mode: Mode::Atomic, ..quiet }, &mut ProvenanceOracle { seed });
        prop_assert_eq!(steps(&at.trace), steps(&j.trace));
        prop_assert_eq!(at.outcome, j.outcome);
    }
}
