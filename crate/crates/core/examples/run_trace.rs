//! Runs a program under random power failures and prints its trace.

use intermit::exec::{self, Mode, Options, Schedule};
use intermit::{analyze, infer, lang, verify};

fn main() {
    let src = include_str!("../corpus/confirm.oct");
    let a = analyze(lang::parse(src).expect("parses"));
    let inf = infer::infer_atomic(&a.program, &a.policies);
    let opts = Options { mode: Mode::Atomic, schedule: Schedule::Random { seed: 7, p: 0.1 }, ..Options::default() };
    let r = exec::run(&inf.program, &opts, &mut exec::ClockOracle);
    print!("{}", exec::trace::dump(&r.trace));
    println!("{:?} after {} failures", r.outcome, r.failures);
    println!("violated: {:?}", verify::check_trace(&a.policies, &r.trace));
}
