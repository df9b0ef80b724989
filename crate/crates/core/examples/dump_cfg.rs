//! Prints the control-flow graph of `main` as Graphviz dot.

fn main() {
    let src = include_str!("../corpus/cem.oct");
    let p = intermit::lang::parse(src).expect("parses");
    let cfg = intermit::cfg::build_cfg(p.entry_func());
    print!("{}", cfg.to_dot());
}
