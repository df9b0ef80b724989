//! Generates random annotated programs and checks the inferred regions
//! under random failures.

use intermit::exec::{self, Mode, Options, Schedule};
use intermit::{gen, verify};

fn main() {
    let progs = gen::checked_programs(0, 20, 40);
    let mut violating = 0;
    for g in &progs {
        let opts =
            Options { mode: Mode::Atomic, schedule: Schedule::Random { seed: g.seed, p: 0.1 }, ..Options::default() };
        let r = exec::run(&g.transformed, &opts, &mut exec::ClockOracle);
        if !verify::check_trace(&g.policies, &r.trace).is_empty() {
            violating += 1;
        }
    }
    println!("{} programs, {violating} violating", progs.len());
    if let Some(g) = progs.first() {
        println!("\nseed {}:\n{}", g.seed, g.source);
    }
}
