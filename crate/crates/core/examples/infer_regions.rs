//! Places one atomic region per policy and prints the transformed program.

use intermit::{analyze, infer, lang};

fn main() {
    let src = include_str!("../corpus/tire.oct");
    let a = analyze(lang::parse(src).expect("parses"));
    let inf = infer::infer_atomic(&a.program, &a.policies);
    for r in &inf.regions {
        println!("region {} for {} in {}: {} .. {}", r.id, r.policy, r.func, r.start, r.end);
    }
    for w in &inf.warnings {
        println!("warning: {}", w.message);
    }
    println!("\n{}", lang::pretty_print(&inf.program));
}
