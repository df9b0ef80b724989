use std::collections::{BTreeMap, BTreeSet};

use super::{CheckDiag, Verdict};
use crate::lang::{param_kinds, Block, Expr, Init, Kind, Name, Program, Site, StmtKind, UnOp, Value};
use crate::policy::{check_use, consistent_id, fresh_id, Policy, PolicyDecls};
use crate::taint::{FromTp, FuncSummaries, FuncSummary, Provenance, Sink, TaintEntry};

type Ins = BTreeSet<(Site, FromTp)>;

/// Checks that `fs` and `pd` soundly describe the input flow of `p`.
pub fn check_summaries(p: &Program, fs: &FuncSummaries, pd: &PolicyDecls) -> Verdict {
    let kinds = param_kinds(p);
    let mut diags = vec![];
    let empty = FuncSummary::default();
    for f in &p.funcs {
        let summ = fs.get(&f.name).unwrap_or(&empty);
        let mut keys: Vec<Option<Site>> = vec![None];
        for g in &p.funcs {
            for (l, callee) in g.calls() {
                if callee == f.name {
                    keys.push(Some(Site { func: g.name.clone(), label: l }));
                }
            }
        }
        let all_ctx = p.contexts(&f.name);
        for key in keys {
            // The calling contexts this walk stands for.
            let ctxs: Vec<Vec<Site>> = match &key {
                None => all_ctx.clone(),
                Some(k) => all_ctx.iter().filter(|c| c.last() == Some(k)).cloned().collect(),
            };
            let mut st = FnCheck {
                fs,
                pd,
                func: &f.name,
                ctxs,
                aliases: BTreeMap::new(),
                fresh: BTreeMap::new(),
                diags: &mut diags,
            };
            let mut env: BTreeMap<Name, Ins> = BTreeMap::new();
            let by_ref = matches!(kinds.get(&f.name), Some(Kind::Ref(_)));
            if let Some(x) = &f.param {
                let mut ins = Ins::new();
                if let Some(k) = &key {
                    for e in summ.callers.get(k).into_iter().flatten().filter(|e| e.sink == Sink::Arg) {
                        ins.insert((e.input.clone(), FromTp::ArgBy(Box::new(e.from.clone()))));
                    }
                }
                env.insert(x.clone(), ins);
                if by_ref {
                    st.aliases.insert(x.clone(), x.clone());
                }
            }
            st.cmd(&f.body, &mut env, &Ins::new());
            // Ret: what flows out must be in this function's summary.
            let site = Site { func: f.name.clone(), label: f.label_count() };
            let out = st.eval(&env, &f.ret);
            st.require_out(summ, &key, Sink::Ret, &out, &site);
            if by_ref {
                let x = f.param.as_ref().expect("param");
                let pbr: Ins = env.get(x).into_iter().flatten().filter(|(_, t)| !t.is_arg()).cloned().collect();
                st.require_out(summ, &key, Sink::RefArg, &pbr, &site);
            }
        }
    }
    Verdict::from_diags(diags)
}

struct FnCheck<'a> {
    fs: &'a FuncSummaries,
    pd: &'a PolicyDecls,
    func: &'a Name,
    ctxs: Vec<Vec<Site>>,
    /// May-alias map: reference variable to the single name it points to.
    aliases: BTreeMap<Name, Name>,
    fresh: BTreeMap<Name, Site>,
    diags: &'a mut Vec<CheckDiag>,
}

impl FnCheck<'_> {
    fn diag(&mut self, rule: &'static str, site: &Site, message: String) {
        self.diags.push(CheckDiag { rule, site: site.to_string(), message });
    }

    fn eval(&self, env: &BTreeMap<Name, Ins>, e: &Expr) -> Ins {
        match e {
            Expr::Var(x) => env.get(x).cloned().unwrap_or_default(),
            Expr::Val(_) => Ins::new(),
            Expr::Index(a, i) => {
                let mut s = env.get(a).cloned().unwrap_or_default();
                s.extend(self.eval(env, i));
                s
            }
            Expr::Bin(_, l, r) => {
                let mut s = self.eval(env, l);
                s.extend(self.eval(env, r));
                s
            }
            Expr::Un(UnOp::Deref, inner) => match &**inner {
                Expr::Var(r) => self.aliases.get(r).and_then(|t| env.get(t)).cloned().unwrap_or_default(),
                _ => Ins::new(),
            },
            Expr::Un(_, inner) => self.eval(env, inner),
        }
    }

    fn require_out(&mut self, summ: &FuncSummary, key: &Option<Site>, sink: Sink, out: &Ins, site: &Site) {
        for (input, from) in out {
            let entry = TaintEntry { sink, input: input.clone(), from: from.clone() };
            let listed = summ.local.contains(&entry)
                || key.as_ref().and_then(|k| summ.callers.get(k)).map(|s| s.contains(&entry)).unwrap_or(false);
            if !listed {
                let ctx = key.as_ref().map(|k| format!("caller {k}")).unwrap_or_else(|| "local".into());
                self.diag("Ret", site, format!("{ctx} summary of `{}` lacks `{entry}`", self.func));
            }
        }
    }

    fn cmd(&mut self, b: &Block, env: &mut BTreeMap<Name, Ins>, ctrl: &Ins) {
        for s in b {
            if let StmtKind::Atomic { body, .. } = &s.kind {
                self.cmd(body, env, ctrl);
                continue;
            }
            let site = Site { func: self.func.clone(), label: s.label() };
            for e in s.own_exprs() {
                if !check_use(self.pd, &self.fresh, e, &site) {
                    self.diag("CheckUse", &site, "fresh variable read here is not a recorded use".into());
                }
            }
            match &s.kind {
                StmtKind::Skip | StmtKind::Atomic { .. } => {}
                StmtKind::Assign(x, e) => {
                    let v = union(self.eval(env, e), ctrl);
                    env.insert(x.clone(), v);
                }
                StmtKind::AssignIndex(a, i, e) => {
                    let v = union(union(self.eval(env, i), &self.eval(env, e)), ctrl);
                    env.entry(a.clone()).or_default().extend(v);
                }
                StmtKind::AssignDeref(r, e) => {
                    let v = union(self.eval(env, e), ctrl);
                    if let Some(t) = self.aliases.get(r).cloned() {
                        env.entry(t).or_default().extend(v);
                    }
                }
                StmtKind::Let { var, annot, init } => {
                    let v = match init {
                        Init::Input(_) => union(Ins::from([(site.clone(), FromTp::Local(site.label))]), ctrl),
                        Init::Expr(Expr::Val(Value::Ref(t) | Value::RefElem(t, _))) => {
                            self.aliases.insert(var.clone(), t.clone());
                            ctrl.clone()
                        }
                        Init::Expr(e) => union(self.eval(env, e), ctrl),
                        Init::Array(es) => {
                            let mut v = ctrl.clone();
                            for e in es {
                                v.extend(self.eval(env, e));
                            }
                            v
                        }
                        Init::Call { callee, arg } => self.call(&site, callee, arg.as_ref(), env, ctrl),
                    };
                    if annot.fresh {
                        self.policy_covers("Let-fresh", &fresh_id(&site), &site, &v);
                        self.fresh.insert(var.clone(), site.clone());
                    }
                    if let Some(n) = annot.consistent {
                        self.policy_covers("Let-consistent", &consistent_id(n), &site, &v);
                    }
                    env.insert(var.clone(), v);
                }
                StmtKind::If { cond, then, els } => {
                    let inner = union(self.eval(env, cond), ctrl);
                    let saved_alias = self.aliases.clone();
                    let saved_fresh = self.fresh.clone();
                    let mut env_t = env.clone();
                    self.cmd(then, &mut env_t, &inner);
                    self.aliases = saved_alias.clone();
                    self.fresh = saved_fresh.clone();
                    self.cmd(els, env, &inner);
                    self.aliases = saved_alias;
                    self.fresh = saved_fresh;
                    for (x, v) in env_t {
                        env.entry(x).or_default().extend(v);
                    }
                }
            }
        }
    }

    /// Call-nr / Call-r.
    fn call(
        &mut self,
        site: &Site,
        callee: &Name,
        arg: Option<&Expr>,
        env: &mut BTreeMap<Name, Ins>,
        ctrl: &Ins,
    ) -> Ins {
        let target = match arg {
            Some(Expr::Val(Value::Ref(t) | Value::RefElem(t, _))) => Some(t.clone()),
            Some(Expr::Var(r)) => self.aliases.get(r).cloned(),
            _ => None,
        };
        let ins = match (&target, arg) {
            (Some(t), _) => env.get(t).cloned().unwrap_or_default(),
            (None, Some(e)) => self.eval(env, e),
            (None, None) => Ins::new(),
        };
        let empty = FuncSummary::default();
        let summ = self.fs.get(callee).unwrap_or(&empty);
        let rule = if target.is_some() { "Call-r" } else { "Call-nr" };
        let caller_sum = summ.callers.get(site);
        for (input, from) in &ins {
            let entry = TaintEntry { sink: Sink::Arg, input: input.clone(), from: from.clone() };
            if !caller_sum.map(|s| s.contains(&entry)).unwrap_or(false) {
                self.diag(rule, site, format!("caller summary of `{callee}` at {site} lacks `{entry}`"));
            }
        }
        let visible = |sink: Sink| -> Vec<Site> {
            summ.local
                .iter()
                .chain(caller_sum.into_iter().flatten())
                .filter(|e| e.sink == sink)
                .map(|e| e.input.clone())
                .collect()
        };
        if let Some(t) = target {
            let mut pbr = ctrl.clone();
            for input in visible(Sink::RefArg) {
                pbr.insert((input, FromTp::Pbr(callee.clone(), site.label)));
            }
            env.entry(t).or_default().extend(pbr);
        }
        let mut out = ctrl.clone();
        for input in visible(Sink::Ret) {
            out.insert((input, FromTp::RetBy(callee.clone(), site.label)));
        }
        out
    }

    /// Let-fresh / Let-consistent: every chain of `ins` is in the policy.
    fn policy_covers(&mut self, rule: &'static str, pid: &str, site: &Site, ins: &Ins) {
        let recorded: BTreeSet<Provenance> = match self.pd.get(pid) {
            Some(Policy::Fresh { inputs, decl, .. }) if rule == "Let-fresh" && decl == site => inputs.clone(),
            Some(Policy::Consistent { inputs, decls, .. }) if rule == "Let-consistent" && decls.contains(site) => {
                inputs.clone()
            }
            _ => {
                self.diag(rule, site, format!("no policy `{pid}` declares this binding"));
                return;
            }
        };
        let mut missing = BTreeSet::new();
        for ctx in &self.ctxs {
            for (input, from) in ins {
                for chain in follow(self.fs, ctx, self.func, input, from) {
                    if !recorded.contains(&chain) {
                        missing.insert(chain);
                    }
                }
            }
        }
        for chain in missing {
            let shown: Vec<String> = chain.iter().map(|s| s.to_string()).collect();
            self.diag(rule, site, format!("input {} missing from `{pid}`", shown.join("::")));
        }
    }
}

fn union(mut a: Ins, b: &Ins) -> Ins {
    a.extend(b.iter().cloned());
    a
}

/// Chains an input dependence into full provenances with an explicit
/// worklist over (context, function, tag).
fn follow(fs: &FuncSummaries, ctx: &[Site], func: &Name, input: &Site, from: &FromTp) -> BTreeSet<Provenance> {
    let mut out = BTreeSet::new();
    let mut work: Vec<(Vec<Site>, Name, FromTp)> = vec![(ctx.to_vec(), func.clone(), from.clone())];
    let mut budget = 100_000usize;
    while let Some((ctx, f, tag)) = work.pop() {
        budget = match budget.checked_sub(1) {
            Some(b) => b,
            None => break,
        };
        match &tag {
            FromTp::Local(l) => {
                if input.func == f && input.label == *l {
                    let mut c = ctx;
                    c.push(input.clone());
                    out.insert(c);
                }
            }
            FromTp::ArgBy(inner) => {
                let mut up = ctx;
                if let Some(call) = up.pop() {
                    work.push((up, call.func, (**inner).clone()));
                }
            }
            FromTp::RetBy(g, l) | FromTp::Pbr(g, l) => {
                let want = if matches!(tag, FromTp::RetBy(..)) { Sink::Ret } else { Sink::RefArg };
                let (g, l) = (g.clone(), *l);
                let call = Site { func: f.clone(), label: l };
                if let Some(s) = fs.get(&g) {
                    let entries = s.local.iter().chain(s.callers.get(&call).into_iter().flatten());
                    for e in entries.filter(|e| e.sink == want && &e.input == input) {
                        let mut down = ctx.clone();
                        down.push(call.clone());
                        work.push((down, g.clone(), e.from.clone()));
                    }
                }
            }
        }
    }
    out
}
