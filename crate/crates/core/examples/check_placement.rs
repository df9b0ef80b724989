//! Checks a hand-placed region that ends too early, then the inferred one.

use intermit::{analyze, checker, infer, lang};

const EARLY: &str = "input temp, hum;
fn main() {
    atomic(1, {}) {
        let t = temp();
        Consistent(t, 1);
    }
    let h = hum();
    Consistent(h, 1);
    ret t + h
}";

fn main() {
    let a = analyze(lang::parse(EARLY).expect("parses"));
    let pm = checker::derive_policy_map(&a.program, &a.policies);
    let v = checker::check_regions(&a.program, &a.policies, &pm);
    println!("hand placement ok: {}", v.ok);
    for d in &v.diagnostics {
        println!("  {d}");
    }
    let inf = infer::infer_atomic(&a.program, &a.policies);
    let v = checker::check_regions(&inf.program, &a.policies, &inf.pm);
    println!("inferred placement ok: {}", v.ok);
}
