//! Seeded generator of random annotated programs, for property tests and
//! bulk verification.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checker::{check_regions, check_summaries};
use crate::infer::infer_atomic;
use crate::lang::{parse, validate, Program};
use crate::policy::{build_policies, PolicyDecls};
use crate::taint::{build_input_deps, build_summary};

#[derive(Clone, Copy, PartialEq, Eq)]
enum Param {
    None,
    Scalar,
    Ref,
}

#[derive(Clone)]
struct Var {
    name: String,
    /// Plain mutable scalar.
    mutable: bool,
    annotated: bool,
    array: Option<usize>,
}

struct Gen {
    rng: ChaCha8Rng,
    params: Vec<Param>,
    inputs: usize,
    next: usize,
    budget: usize,
}

impl Gen {
    fn fresh_name(&mut self) -> String {
        self.next += 1;
        format!("v{}", self.next)
    }

    fn atom(&mut self, scope: &[Var], refp: Option<&str>) -> String {
        let scalars: Vec<&Var> = scope.iter().filter(|v| v.array.is_none()).collect();
        let arrays: Vec<&Var> = scope.iter().filter(|v| v.array.is_some()).collect();
        match self.rng.gen_range(0..10) {
            0..=2 => self.rng.gen_range(0..20).to_string(),
            3 if refp.is_some() => format!("*{}", refp.unwrap()),
            4 if !arrays.is_empty() => {
                let a = arrays.choose(&mut self.rng).unwrap();
                format!("{}[{}]", a.name, self.rng.gen_range(0..a.array.unwrap()))
            }
            _ if !scalars.is_empty() => scalars.choose(&mut self.rng).unwrap().name.clone(),
            _ => self.rng.gen_range(0..20).to_string(),
        }
    }

    fn expr(&mut self, scope: &[Var], refp: Option<&str>) -> String {
        let a = self.atom(scope, refp);
        match self.rng.gen_range(0..3) {
            0 => a,
            1 => format!("{a} + {}", self.atom(scope, refp)),
            _ => format!("{a} - {}", self.atom(scope, refp)),
        }
    }

    fn cond(&mut self, scope: &[Var], refp: Option<&str>) -> String {
        let op = ["<", "<=", "==", "!=", ">"].choose(&mut self.rng).unwrap();
        format!("{} {op} {}", self.expr(scope, refp), self.expr(scope, refp))
    }

    fn annot(&mut self) -> String {
        match self.rng.gen_range(0..6) {
            0 | 1 => "fresh ".into(),
            2 => format!("consistent({}) ", self.rng.gen_range(1..=2)),
            _ => String::new(),
        }
    }

    fn block(
        &mut self,
        f: usize,
        scope: &mut Vec<Var>,
        refp: Option<&str>,
        depth: usize,
        out: &mut String,
        indent: usize,
    ) {
        let len = self.rng.gen_range(1..=5);
        let pad = "    ".repeat(indent);
        for _ in 0..len {
            if self.budget == 0 {
                break;
            }
            self.budget -= 1;
            let callees: Vec<usize> = (f + 1..self.params.len()).collect();
            let mutables: Vec<String> = scope.iter().filter(|v| v.mutable).map(|v| v.name.clone()).collect();
            match self.rng.gen_range(0..12) {
                0 | 1 => {
                    let x = self.fresh_name();
                    let s = self.rng.gen_range(0..self.inputs);
                    let an = self.annot();
                    out.push_str(&format!("{pad}let {an}{x} = s{s}();\n"));
                    scope.push(Var { name: x, mutable: an.is_empty(), annotated: !an.is_empty(), array: None });
                }
                2 | 3 => {
                    let x = self.fresh_name();
                    let e = self.expr(scope, refp);
                    let an = if self.rng.gen_bool(0.3) { self.annot() } else { String::new() };
                    out.push_str(&format!("{pad}let {an}{x} = {e};\n"));
                    scope.push(Var { name: x, mutable: an.is_empty(), annotated: !an.is_empty(), array: None });
                }
                4 | 5 if !callees.is_empty() => {
                    let g = *callees.choose(&mut self.rng).unwrap();
                    let arg = match self.params[g] {
                        Param::None => String::new(),
                        Param::Scalar => self.expr(scope, refp),
                        Param::Ref => match mutables.choose(&mut self.rng) {
                            Some(m) => format!("&{m}"),
                            None => {
                                let m = self.fresh_name();
                                out.push_str(&format!("{pad}let {m} = 0;\n"));
                                self.budget = self.budget.saturating_sub(1);
                                scope.push(Var { name: m.clone(), mutable: true, annotated: false, array: None });
                                format!("&{m}")
                            }
                        },
                    };
                    let x = self.fresh_name();
                    let an = self.annot();
                    out.push_str(&format!("{pad}let {an}{x} = f{g}({arg});\n"));
                    scope.push(Var { name: x, mutable: an.is_empty(), annotated: !an.is_empty(), array: None });
                }
                6 if !mutables.is_empty() => {
                    let x = mutables.choose(&mut self.rng).unwrap().clone();
                    let e = self.expr(scope, refp);
                    out.push_str(&format!("{pad}{x} := {e};\n"));
                }
                7 if refp.is_some() => {
                    let e = self.expr(scope, refp);
                    out.push_str(&format!("{pad}*{} := {e};\n", refp.unwrap()));
                }
                8 => {
                    let x = self.fresh_name();
                    let n = self.rng.gen_range(1..=3);
                    let items: Vec<String> = (0..n).map(|_| self.atom(scope, refp)).collect();
                    out.push_str(&format!("{pad}let {x} = [{}];\n", items.join(", ")));
                    scope.push(Var { name: x, mutable: false, annotated: false, array: Some(n) });
                }
                9 => {
                    let arrays: Vec<(String, usize)> =
                        scope.iter().filter_map(|v| v.array.map(|n| (v.name.clone(), n))).collect();
                    if let Some((a, n)) = arrays.choose(&mut self.rng).cloned() {
                        let i = self.rng.gen_range(0..n);
                        let e = self.expr(scope, refp);
                        out.push_str(&format!("{pad}{a}[{i}] := {e};\n"));
                    } else {
                        out.push_str(&format!("{pad}skip;\n"));
                    }
                }
                10 | 11 if depth < 2 => {
                    let c = self.cond(scope, refp);
                    out.push_str(&format!("{pad}if {c} {{\n"));
                    let mut inner = scope.clone();
                    self.block(f, &mut inner, refp, depth + 1, out, indent + 1);
                    if self.rng.gen_bool(0.5) {
                        out.push_str(&format!("{pad}}} else {{\n"));
                        let mut inner = scope.clone();
                        self.block(f, &mut inner, refp, depth + 1, out, indent + 1);
                    }
                    out.push_str(&format!("{pad}}}\n"));
                }
                _ => out.push_str(&format!("{pad}skip;\n")),
            }
        }
    }
}

/// Source text of a random program with at most about `max_labels`
/// statements. Function `fI` only calls `fJ` with `J > I`, so the call graph
/// is acyclic; `f0` is the entry.
pub fn random_source(seed: u64, max_labels: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nf = rng.gen_range(1..=4);
    let inputs = rng.gen_range(1..=3);
    let mut params = vec![Param::None];
    for _ in 1..nf {
        params.push(*[Param::None, Param::Scalar, Param::Ref].choose(&mut rng).unwrap());
    }
    let mut g = Gen { rng, params, inputs, next: 0, budget: max_labels.saturating_sub(nf) };
    let names: Vec<String> = (0..inputs).map(|i| format!("s{i}")).collect();
    let mut out = format!("input {};\nentry f0;\n", names.join(", "));
    for f in 0..nf {
        let mut scope = vec![];
        let (head, refp) = match g.params[f] {
            Param::None => (format!("fn f{f}()"), None),
            Param::Scalar => {
                scope.push(Var { name: "p".into(), mutable: false, annotated: false, array: None });
                (format!("fn f{f}(p)"), None)
            }
            Param::Ref => (format!("fn f{f}(p)"), Some("p")),
        };
        out.push_str(&format!("\n{head} {{\n"));
        let mut body = String::new();
        g.block(f, &mut scope, refp, 0, &mut body, 1);
        out.push_str(&body);
        let plain: Vec<&Var> = scope.iter().filter(|v| !v.annotated && v.array.is_none()).collect();
        let ret = match plain.choose(&mut g.rng) {
            Some(v) => v.name.clone(),
            None => "0".into(),
        };
        out.push_str(&format!("    ret {ret}\n}}\n"));
    }
    out
}

/// A generated program together with its policies.
pub struct Generated {
    pub seed: u64,
    pub source: String,
    pub program: Program,
    pub transformed: Program,
    pub policies: PolicyDecls,
}

/// Generates programs from consecutive seeds starting at `seed`, keeping the
/// ones that validate, stay within `max_labels`, and whose inferred regions
/// pass both checks. Stops after `count` programs or `count * 50` attempts.
pub fn checked_programs(seed: u64, count: usize, max_labels: usize) -> Vec<Generated> {
    let mut out = vec![];
    let mut s = seed;
    while out.len() < count && s < seed + (count as u64) * 50 {
        let source = random_source(s, max_labels);
        s += 1;
        let p = match parse(&source) {
            Ok(p) => p,
            Err(_) => continue,
        };
        if p.size() > max_labels || !validate(&p).is_empty() {
            continue;
        }
        let fs = build_summary(&p);
        let deps = build_input_deps(&p, &fs);
        let (pd, _) = build_policies(&p, &fs, &deps);
        if !check_summaries(&p, &fs, &pd).ok {
            continue;
        }
        let inf = infer_atomic(&p, &pd);
        if !check_regions(&inf.program, &pd, &inf.pm).ok {
            continue;
        }
        out.push(Generated { seed: s - 1, source, program: p, transformed: inf.program, policies: pd });
    }
    out
}
