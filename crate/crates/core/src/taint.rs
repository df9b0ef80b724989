//! Context-sensitive input-taint summaries.
//!
//! Each function has a local summary (taint it produces regardless of who
//! called it) and one caller summary per call site targeting it. Taint that
//! enters through the argument is tagged `argBy(..)` and only flows back to
//! the call site it came from. Following `retBy`, `pbr` and `argBy` links
//! through the summaries rebuilds the full call chain of an input.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::lang::{param_kinds, Block, Expr, FuncDecl, Init, Kind, Label, Name, Program, Site, StmtKind, UnOp, Value};

/// Call sites from the entry function down to an input statement.
pub type Provenance = Vec<Site>;

pub fn show_provenance(p: &[Site]) -> String {
    p.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("::")
}

/// How taint reached a function.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FromTp {
    /// Input statement at this label of the current function.
    Local(Label),
    /// Returned by the callee invoked at this label.
    RetBy(Name, Label),
    /// Written through the reference passed to the callee at this label.
    Pbr(Name, Label),
    /// Entered through the parameter; the inner tag is the caller's.
    ArgBy(Box<FromTp>),
}

impl fmt::Display for FromTp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FromTp::Local(l) => write!(f, "local({l})"),
            FromTp::RetBy(g, l) => write!(f, "retBy({g},{l})"),
            FromTp::Pbr(g, l) => write!(f, "pbr({g},{l})"),
            FromTp::ArgBy(inner) => write!(f, "argBy({inner})"),
        }
    }
}

impl FromTp {
    pub fn is_arg(&self) -> bool {
        matches!(self, FromTp::ArgBy(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sink {
    Ret,
    RefArg,
    Arg,
}

impl fmt::Display for Sink {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sink::Ret => "ret",
            Sink::RefArg => "&arg",
            Sink::Arg => "arg",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaintEntry {
    pub sink: Sink,
    pub input: Site,
    pub from: FromTp,
}

impl fmt::Display for TaintEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} <- (input:{}, fromTp:{})", self.sink, self.input, self.from)
    }
}

/// A dependence on one input statement, tagged with how it arrived.
pub type Dep = (Site, FromTp);
pub type TaintSet = BTreeSet<Dep>;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FuncSummary {
    pub local: BTreeSet<TaintEntry>,
    pub callers: BTreeMap<Site, BTreeSet<TaintEntry>>,
}

impl FuncSummary {
    /// Entries visible to the call at `site`: local ones plus that caller's.
    pub fn visible(&self, site: &Site, sink: Sink) -> impl Iterator<Item = &TaintEntry> {
        self.local.iter().chain(self.callers.get(site).into_iter().flatten()).filter(move |e| e.sink == sink)
    }

    pub fn is_empty(&self) -> bool {
        self.local.is_empty() && self.callers.values().all(|s| s.is_empty())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FuncSummaries {
    pub funcs: BTreeMap<Name, FuncSummary>,
}

impl FuncSummaries {
    pub fn get(&self, f: &str) -> Option<&FuncSummary> {
        self.funcs.get(f)
    }

    pub fn is_empty(&self) -> bool {
        self.funcs.values().all(|s| s.is_empty())
    }

    /// One line per entry, grouped by function and summary.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (f, s) in &self.funcs {
            for e in &s.local {
                out.push_str(&format!("{f} local {e}\n"));
            }
            for (site, es) in &s.callers {
                for e in es {
                    out.push_str(&format!("{f} caller{site} {e}\n"));
                }
            }
        }
        out
    }
}

/// The analysis context a function body is walked under.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CtxKey {
    Local,
    Caller(Site),
}

/// Per-statement dependence sets, split by analysis context.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InputDepMap {
    /// Taint of the variable a statement defines (or of the location it writes).
    pub defs: BTreeMap<Site, BTreeMap<CtxKey, TaintSet>>,
    /// Taint of the expressions a statement evaluates.
    pub reads: BTreeMap<Site, BTreeMap<CtxKey, TaintSet>>,
}

impl InputDepMap {
    fn pick(m: &BTreeMap<Site, BTreeMap<CtxKey, TaintSet>>, site: &Site, ctx: &[Site]) -> TaintSet {
        let mut out = TaintSet::new();
        if let Some(per) = m.get(site) {
            if let Some(s) = per.get(&CtxKey::Local) {
                out.extend(s.iter().cloned());
            }
            if let Some(last) = ctx.last() {
                if let Some(s) = per.get(&CtxKey::Caller(last.clone())) {
                    out.extend(s.iter().cloned());
                }
            }
        }
        out
    }

    /// Dependences of the definition at `site` when reached through `ctx`.
    pub fn def_deps(&self, site: &Site, ctx: &[Site]) -> TaintSet {
        Self::pick(&self.defs, site, ctx)
    }

    pub fn read_deps(&self, site: &Site, ctx: &[Site]) -> TaintSet {
        Self::pick(&self.reads, site, ctx)
    }

    /// Dependences of the definition at `site` under any context.
    pub fn def_deps_any(&self, site: &Site) -> TaintSet {
        self.defs.get(site).map(|m| m.values().flatten().cloned().collect()).unwrap_or_default()
    }
}

/// Variable taint environment.
pub type Env = BTreeMap<Name, TaintSet>;

/// Dependences of an expression: the union over everything it reads.
/// `refs` maps reference variables to the name holding the pointee's taint.
pub fn deps_of(env: &Env, refs: &BTreeMap<Name, Name>, e: &Expr) -> TaintSet {
    let mut out = TaintSet::new();
    collect(env, refs, e, &mut out);
    out
}

fn collect(env: &Env, refs: &BTreeMap<Name, Name>, e: &Expr, out: &mut TaintSet) {
    match e {
        Expr::Var(x) => {
            if let Some(s) = env.get(x) {
                out.extend(s.iter().cloned());
            }
        }
        Expr::Val(_) => {}
        Expr::Index(a, i) => {
            if let Some(s) = env.get(a) {
                out.extend(s.iter().cloned());
            }
            collect(env, refs, i, out);
        }
        Expr::Bin(_, l, r) => {
            collect(env, refs, l, out);
            collect(env, refs, r, out);
        }
        Expr::Un(UnOp::Deref, inner) => {
            if let Expr::Var(r) = &**inner {
                if let Some(s) = refs.get(r).and_then(|h| env.get(h)) {
                    out.extend(s.iter().cloned());
                }
            }
        }
        Expr::Un(_, inner) => collect(env, refs, inner, out),
    }
}

/// Computes the summaries of every function to a fixed point.
pub fn build_summary(p: &Program) -> FuncSummaries {
    let kinds = param_kinds(p);
    let mut fs = FuncSummaries::default();
    for f in &p.funcs {
        fs.funcs.insert(f.name.clone(), FuncSummary::default());
    }
    let jobs = jobs(p);
    loop {
        let mut changed = false;
        for (fname, key) in &jobs {
            let f = p.func(fname).expect("job for known function");
            let fx = walk_function(&kinds, &fs, f, key);
            for (callee, site, entries) in fx.args {
                let slot = fs.funcs.get_mut(&callee).expect("callee").callers.entry(site).or_default();
                for e in entries {
                    changed |= slot.insert(e);
                }
            }
            let summ = fs.funcs.get_mut(fname).expect("function");
            let slot = match key {
                CtxKey::Local => &mut summ.local,
                CtxKey::Caller(s) => summ.callers.entry(s.clone()).or_default(),
            };
            for e in fx.outs {
                changed |= slot.insert(e);
            }
        }
        if !changed {
            break;
        }
    }
    // Caller summaries keep only what the local summary does not already say.
    for s in fs.funcs.values_mut() {
        let local = s.local.clone();
        for set in s.callers.values_mut() {
            set.retain(|e| !local.contains(e));
        }
        s.callers.retain(|_, set| !set.is_empty());
    }
    fs
}

/// Dependence sets of every statement under the (already converged) summaries.
pub fn build_input_deps(p: &Program, fs: &FuncSummaries) -> InputDepMap {
    let kinds = param_kinds(p);
    let mut map = InputDepMap::default();
    for (fname, key) in jobs(p) {
        let f = p.func(&fname).expect("job for known function");
        let fx = walk_function(&kinds, fs, f, &key);
        for (l, t) in fx.defs {
            map.defs.entry(Site { func: fname.clone(), label: l }).or_default().insert(key.clone(), t);
        }
        for (l, t) in fx.reads {
            map.reads.entry(Site { func: fname.clone(), label: l }).or_default().insert(key.clone(), t);
        }
    }
    map
}

fn jobs(p: &Program) -> Vec<(Name, CtxKey)> {
    let mut out = vec![];
    for fname in p.topo_order() {
        out.push((fname.clone(), CtxKey::Local));
        for g in &p.funcs {
            for (l, callee) in g.calls() {
                if callee == fname {
                    out.push((fname.clone(), CtxKey::Caller(Site { func: g.name.clone(), label: l })));
                }
            }
        }
    }
    out
}

#[derive(Default)]
struct Effects {
    args: Vec<(Name, Site, Vec<TaintEntry>)>,
    outs: Vec<TaintEntry>,
    defs: BTreeMap<Label, TaintSet>,
    reads: BTreeMap<Label, TaintSet>,
}

struct Walker<'a> {
    fs: &'a FuncSummaries,
    func: &'a Name,
    fx: Effects,
}

fn walk_function(kinds: &BTreeMap<Name, Kind>, fs: &FuncSummaries, f: &FuncDecl, key: &CtxKey) -> Effects {
    let mut env = Env::new();
    let mut refs = BTreeMap::new();
    let ref_param = kinds.get(&f.name).map(|k| matches!(k, Kind::Ref(_))).unwrap_or(false);
    if let Some(x) = &f.param {
        let mut t = TaintSet::new();
        if let CtxKey::Caller(site) = key {
            let summ = fs.get(&f.name).expect("summary");
            for e in summ.callers.get(site).into_iter().flatten() {
                if e.sink == Sink::Arg {
                    t.insert((e.input.clone(), FromTp::ArgBy(Box::new(e.from.clone()))));
                }
            }
        }
        env.insert(x.clone(), t);
        if ref_param {
            refs.insert(x.clone(), x.clone());
        }
    }
    let mut w = Walker { fs, func: &f.name, fx: Effects::default() };
    w.block(&f.body, &mut env, &mut refs, &TaintSet::new());
    for (input, from) in deps_of(&env, &refs, &f.ret) {
        w.fx.outs.push(TaintEntry { sink: Sink::Ret, input, from });
    }
    if ref_param {
        let x = f.param.as_ref().expect("param");
        for (input, from) in env.get(x).cloned().unwrap_or_default() {
            if !from.is_arg() {
                w.fx.outs.push(TaintEntry { sink: Sink::RefArg, input, from });
            }
        }
    }
    w.fx
}

impl Walker<'_> {
    fn site(&self, l: Label) -> Site {
        Site { func: self.func.clone(), label: l }
    }

    fn block(&mut self, b: &Block, env: &mut Env, refs: &mut BTreeMap<Name, Name>, ctrl: &TaintSet) {
        for s in b {
            let l = match &s.kind {
                StmtKind::Atomic { body, .. } => {
                    self.block(body, env, refs, ctrl);
                    continue;
                }
                _ => s.label(),
            };
            let mut read = TaintSet::new();
            for e in s.own_exprs() {
                read.extend(deps_of(env, refs, e));
            }
            self.fx.reads.insert(l, read);
            match &s.kind {
                StmtKind::Skip | StmtKind::Atomic { .. } => {}
                StmtKind::Assign(x, e) => {
                    let t: TaintSet = deps_of(env, refs, e).union(ctrl).cloned().collect();
                    self.fx.defs.insert(l, t.clone());
                    env.insert(x.clone(), t);
                }
                StmtKind::AssignIndex(a, i, e) => {
                    let mut t = deps_of(env, refs, i);
                    t.extend(deps_of(env, refs, e));
                    t.extend(ctrl.iter().cloned());
                    let slot = env.entry(a.clone()).or_default();
                    slot.extend(t);
                    self.fx.defs.insert(l, slot.clone());
                }
                StmtKind::AssignDeref(r, e) => {
                    let mut t = deps_of(env, refs, e);
                    t.extend(ctrl.iter().cloned());
                    if let Some(h) = refs.get(r).cloned() {
                        let slot = env.entry(h).or_default();
                        slot.extend(t);
                        self.fx.defs.insert(l, slot.clone());
                    }
                }
                StmtKind::Let { var, init, .. } => {
                    let t = self.init(l, init, env, refs, ctrl);
                    if let Init::Expr(Expr::Val(Value::Ref(x) | Value::RefElem(x, _))) = init {
                        refs.insert(var.clone(), x.clone());
                    }
                    self.fx.defs.insert(l, t.clone());
                    env.insert(var.clone(), t);
                }
                StmtKind::If { cond, then, els } => {
                    let inner: TaintSet = deps_of(env, refs, cond).union(ctrl).cloned().collect();
                    let (mut env_t, mut refs_t) = (env.clone(), refs.clone());
                    self.block(then, &mut env_t, &mut refs_t, &inner);
                    self.block(els, env, refs, &inner);
                    for (x, t) in env_t {
                        env.entry(x).or_default().extend(t);
                    }
                    for (r, h) in refs_t {
                        refs.entry(r).or_insert(h);
                    }
                }
            }
        }
    }

    fn init(&mut self, l: Label, init: &Init, env: &mut Env, refs: &BTreeMap<Name, Name>, ctrl: &TaintSet) -> TaintSet {
        let mut t = ctrl.clone();
        match init {
            Init::Expr(e) => t.extend(deps_of(env, refs, e)),
            Init::Array(es) => {
                for e in es {
                    t.extend(deps_of(env, refs, e));
                }
            }
            Init::Input(_) => {
                t.insert((self.site(l), FromTp::Local(l)));
            }
            Init::Call { callee, arg } => {
                let site = self.site(l);
                // The location a reference argument designates, if any.
                let target = match arg {
                    Some(Expr::Val(Value::Ref(x) | Value::RefElem(x, _))) => Some(x.clone()),
                    Some(Expr::Var(r)) if refs.contains_key(r) => refs.get(r).cloned(),
                    _ => None,
                };
                let arg_taint = match (&target, arg) {
                    (Some(h), _) => env.get(h).cloned().unwrap_or_default(),
                    (None, Some(e)) => deps_of(env, refs, e),
                    (None, None) => TaintSet::new(),
                };
                let entries =
                    arg_taint.into_iter().map(|(input, from)| TaintEntry { sink: Sink::Arg, input, from }).collect();
                self.fx.args.push((callee.clone(), site.clone(), entries));
                let summ = self.fs.get(callee).expect("callee summary");
                for e in summ.visible(&site, Sink::Ret) {
                    t.insert((e.input.clone(), FromTp::RetBy(callee.clone(), l)));
                }
                if let Some(h) = target {
                    let mut pbr: TaintSet = ctrl.clone();
                    for e in summ.visible(&site, Sink::RefArg) {
                        pbr.insert((e.input.clone(), FromTp::Pbr(callee.clone(), l)));
                    }
                    env.entry(h).or_default().extend(pbr);
                }
            }
        }
        t
    }
}

/// Hard cap on link-following depth; deeper means the summaries are broken.
const MAX_DEPTH: usize = 256;

/// Resolves a dependence of function `f` reached through `ctx` into full
/// call chains ending at `input`.
pub fn resolve(fs: &FuncSummaries, ctx: &[Site], f: &Name, input: &Site, from: &FromTp) -> BTreeSet<Provenance> {
    let mut out = BTreeSet::new();
    resolve_into(fs, ctx.to_vec(), f, input, from, &mut out, 0);
    out
}

fn resolve_into(
    fs: &FuncSummaries,
    ctx: Vec<Site>,
    f: &Name,
    input: &Site,
    from: &FromTp,
    out: &mut BTreeSet<Provenance>,
    depth: usize,
) {
    if depth > MAX_DEPTH {
        return;
    }
    match from {
        FromTp::Local(l) => {
            let here = Site { func: f.clone(), label: *l };
            if &here == input {
                let mut chain = ctx;
                chain.push(here);
                out.insert(chain);
            }
        }
        FromTp::RetBy(g, l) | FromTp::Pbr(g, l) => {
            let sink = if matches!(from, FromTp::RetBy(..)) { Sink::Ret } else { Sink::RefArg };
            let site = Site { func: f.clone(), label: *l };
            let summ = match fs.get(g) {
                Some(s) => s,
                None => return,
            };
            let mut next = ctx.clone();
            next.push(site.clone());
            for e in summ.visible(&site, sink) {
                if &e.input == input {
                    resolve_into(fs, next.clone(), g, input, &e.from, out, depth + 1);
                }
            }
        }
        FromTp::ArgBy(inner) => {
            let mut up = ctx;
            if let Some(site) = up.pop() {
                let caller = site.func.clone();
                resolve_into(fs, up, &caller, input, inner, out, depth + 1);
            }
        }
    }
}

/// Every full provenance of a dependence observed at `use_site`, over all
/// calling contexts of its function.
pub fn call_chain(p: &Program, fs: &FuncSummaries, dep: &Dep, use_site: &Site) -> BTreeSet<Provenance> {
    let mut out = BTreeSet::new();
    for ctx in p.contexts(&use_site.func) {
        out.extend(resolve(fs, &ctx, &use_site.func, &dep.0, &dep.1));
    }
    out
}

/// Provenances of a whole dependence set at `site` under one context.
pub fn chains_in_ctx(fs: &FuncSummaries, ctx: &[Site], func: &Name, deps: &TaintSet) -> BTreeSet<Provenance> {
    let mut out = BTreeSet::new();
    for (input, from) in deps {
        out.extend(resolve(fs, ctx, func, input, from));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse;

    #[test]
    fn no_inputs_no_taint() {
        let p = parse("fn f(x) { let y = x + 1; ret y } fn main() { let a = f(2); ret a }").unwrap();
        assert!(build_summary(&p).is_empty());
    }

    #[test]
    fn input_in_same_function_gives_singleton_chain() {
        let p = parse("input s; fn main() { skip; let x = s(); ret x }").unwrap();
        let fs = build_summary(&p);
        let site = Site::new("main", 1);
        let chains = call_chain(&p, &fs, &(site.clone(), FromTp::Local(1)), &site);
        assert_eq!(chains, BTreeSet::from([vec![site]]));
    }

    #[test]
    fn pass_by_reference_reaches_caller() {
        let src = "input s;
            fn fill(p) { let v = s(); *p := v; ret 0 }
            fn main() { let x = 0; let r = fill(&x); let y = x; ret y }";
        let p = parse(src).unwrap();
        let fs = build_summary(&p);
        let fill = fs.get("fill").unwrap();
        assert!(fill.local.iter().any(|e| e.sink == Sink::RefArg && e.from == FromTp::Local(0)));
        let deps = build_input_deps(&p, &fs);
        let d = deps.def_deps(&Site::new("main", 2), &[]);
        assert!(d.contains(&(Site::new("fill", 0), FromTp::Pbr(name_of("fill"), 1))));
        let chains = chains_in_ctx(&fs, &[], &name_of("main"), &d);
        assert_eq!(chains, BTreeSet::from([vec![Site::new("main", 1), Site::new("fill", 0)]]));
    }

    fn name_of(s: &str) -> Name {
        crate::lang::name(s)
    }

    #[test]
    fn argument_taint_returns_only_to_its_caller() {
        let src = "input s;
            fn id(v) { ret v }
            fn main() { let a = s(); let b = id(a); let c = id(3); ret b + c }";
        let p = parse(src).unwrap();
        let fs = build_summary(&p);
        let id = fs.get("id").unwrap();
        assert!(id.local.is_empty());
        assert!(id.callers.contains_key(&Site::new("main", 1)));
        assert!(!id.callers.contains_key(&Site::new("main", 2)));
        let deps = build_input_deps(&p, &fs);
        assert!(deps.def_deps(&Site::new("main", 2), &[]).is_empty());
        assert!(!deps.def_deps(&Site::new("main", 1), &[]).is_empty());
    }

    #[test]
    fn branch_condition_taints_both_arms() {
        let src = "input s;
            fn main() { let a = s(); let x = 0; if a > 1 { x := 1; } else { x := 2; } ret x }";
        let p = parse(src).unwrap();
        let fs = build_summary(&p);
        let deps = build_input_deps(&p, &fs);
        for l in [3, 4] {
            assert_eq!(deps.def_deps(&Site::new("main", l), &[]).len(), 1);
        }
    }
}
