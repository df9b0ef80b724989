//! Taint summaries and policies for the greenhouse monitor.

fn main() {
    let src = include_str!("../corpus/greenhouse.oct");
    let a = intermit::analyze(intermit::lang::parse(src).expect("parses"));
    assert!(a.diagnostics.is_empty(), "{:?}", a.diagnostics);
    println!("{}", a.summaries.dump());
    println!("{}", a.policies.dump());
}
