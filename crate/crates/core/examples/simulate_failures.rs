//! Injects one failure at each pathological point, with and without regions.

use intermit::{analyze, exec::Mode, infer, lang, verify};

fn main() {
    let src = include_str!("../corpus/photo.oct");
    let a = analyze(lang::parse(src).expect("parses"));
    let inf = infer::infer_atomic(&a.program, &a.policies);
    for off in [1, 10, 1000] {
        let row = verify::simulate("photo", &a.program, &inf.program, &a.policies, off, 100_000);
        println!(
            "off={off:>4}: {} points, jit {:.0}% violating, atomic {:.0}% violating",
            row.points, row.jit_pct, row.atomic_pct
        );
    }
    let rep = verify::exhaustive(&inf.program, &a.policies, &[1, 1000], Mode::Atomic, 100_000);
    println!(
        "exhaustive: {} runs, {} violating, {} refinement failures",
        rep.runs, rep.violations, rep.refinement_failures
    );
}
