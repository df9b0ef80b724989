use std::collections::{BTreeMap, BTreeSet};

use super::{CheckDiag, Verdict};
use crate::lang::{Init, Name, Program, Site, Stmt, StmtKind};
use crate::policy::{PolicyDecls, PolicyId, PolicyMap};
use crate::taint::{show_provenance, Provenance};

/// One path's view: open regions innermost last, and the policy
/// instructions reached inside each open region so far.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct PathState {
    open: Vec<u32>,
    reached: BTreeMap<u32, BTreeSet<Provenance>>,
}

/// What runs after the current statement: the rest of each enclosing block,
/// innermost first, up through the callers.
enum Cont<'a> {
    Done,
    Then { func: &'a Name, ctx: &'a [Site], rest: &'a [Stmt], next: &'a Cont<'a> },
}

struct Checker<'a> {
    prog: &'a Program,
    pm: &'a PolicyMap,
    /// Item chain to the policies it belongs to.
    owners: BTreeMap<Provenance, Vec<PolicyId>>,
    items: BTreeMap<PolicyId, BTreeSet<Provenance>>,
    diags: Vec<CheckDiag>,
}

/// Checks atomic-region placement against the policies and the region map.
pub fn check_regions(p: &Program, pd: &PolicyDecls, pm: &PolicyMap) -> Verdict {
    let mut c = Checker { prog: p, pm, owners: BTreeMap::new(), items: BTreeMap::new(), diags: vec![] };
    for (aid, pids) in &pm.regions {
        for pid in pids {
            if pd.get(pid).is_none() {
                c.diags.push(CheckDiag {
                    rule: "PolicyMap",
                    site: format!("region {aid}"),
                    message: format!("maps to unknown policy `{pid}`"),
                });
            }
        }
    }
    for (pid, pol) in pd.iter() {
        let items = pol.items(p);
        for it in &items {
            c.owners.entry(it.clone()).or_default().push(pid.clone());
        }
        c.items.insert(pid.clone(), items);
    }
    let entry = p.entry_func();
    let start = BTreeSet::from([PathState { open: vec![], reached: BTreeMap::new() }]);
    c.block(&entry.name, &[], &entry.body, &Cont::Done, start);
    Verdict::from_diags(c.diags)
}

impl<'a> Checker<'a> {
    fn block(
        &mut self,
        func: &'a Name,
        ctx: &[Site],
        stmts: &'a [Stmt],
        cont: &Cont<'_>,
        mut states: BTreeSet<PathState>,
    ) -> BTreeSet<PathState> {
        for (i, s) in stmts.iter().enumerate() {
            let after = Cont::Then { func, ctx, rest: &stmts[i + 1..], next: cont };
            states = self.stmt(func, ctx, s, &after, states);
        }
        states
    }

    fn stmt(
        &mut self,
        func: &'a Name,
        ctx: &[Site],
        s: &'a Stmt,
        after: &Cont<'_>,
        states: BTreeSet<PathState>,
    ) -> BTreeSet<PathState> {
        if let StmtKind::Atomic { id, body, .. } = &s.kind {
            let entered = states
                .into_iter()
                .map(|mut st| {
                    st.open.push(*id);
                    st.reached.entry(*id).or_default();
                    st
                })
                .collect();
            let out = self.block(func, ctx, body, after, entered);
            return out.into_iter().map(|st| self.end_region(*id, st, after)).collect();
        }
        let site = Site { func: func.clone(), label: s.label() };
        let mut chain = ctx.to_vec();
        chain.push(site.clone());
        let states = self.visit_item(&chain, states);
        match &s.kind {
            StmtKind::If { then, els, .. } => {
                let mut out = self.block(func, ctx, then, after, states.clone());
                out.extend(self.block(func, ctx, els, after, states));
                out
            }
            StmtKind::Let { init: Init::Call { callee, .. }, .. } => {
                let g = self.prog.func(callee).expect("resolved call");
                self.block(&g.name, &chain, &g.body, after, states)
            }
            _ => states,
        }
    }

    /// Instr-S / Instr-N: a policy instruction must run inside its region.
    fn visit_item(&mut self, chain: &Provenance, states: BTreeSet<PathState>) -> BTreeSet<PathState> {
        let owners = match self.owners.get(chain) {
            Some(o) => o.clone(),
            None => return states,
        };
        let mut out = BTreeSet::new();
        for mut st in states {
            for pid in &owners {
                match self.pm.region_of(pid) {
                    Some(a) if st.open.contains(&a) => {
                        st.reached.entry(a).or_default().insert(chain.clone());
                    }
                    Some(a) => {
                        let where_ = match st.open.last() {
                            Some(b) => format!("inside region {b}"),
                            None => "outside any region".into(),
                        };
                        self.diag("Instr-S", chain, format!("`{pid}` instruction runs {where_}, not in region {a}"));
                    }
                    None => self.diag("Instr-N", chain, format!("`{pid}` has no region but its instruction runs here")),
                }
            }
            out.insert(st);
        }
        out
    }

    /// Atomic: at region end every obligation is met or can no longer occur.
    fn end_region(&mut self, id: u32, mut st: PathState, after: &Cont<'_>) -> PathState {
        let reached = st.reached.remove(&id).unwrap_or_default();
        if let Some(pos) = st.open.iter().rposition(|&a| a == id) {
            st.open.remove(pos);
        }
        let pids = self.pm.regions.get(&id).cloned().unwrap_or_default();
        let mut later: Option<BTreeSet<Provenance>> = None;
        for pid in pids {
            let items = match self.items.get(&pid) {
                Some(i) => i.clone(),
                None => continue,
            };
            // An instance that reached none of the policy's instructions
            // (the region running under another context) owes it nothing.
            if items.is_disjoint(&reached) {
                continue;
            }
            for it in items.difference(&reached) {
                let fwd = later.get_or_insert_with(|| self.forward(after));
                if fwd.contains(it) {
                    self.diags.push(CheckDiag {
                        rule: "Atomic",
                        site: format!("region {id}"),
                        message: format!(
                            "`{pid}` instruction {} can still run after the region ends",
                            show_provenance(it)
                        ),
                    });
                }
            }
        }
        st
    }

    /// Every statement chain that may execute after the continuation point.
    fn forward(&self, cont: &Cont<'_>) -> BTreeSet<Provenance> {
        let mut out = BTreeSet::new();
        let mut cur = cont;
        while let Cont::Then { func, ctx, rest, next } = cur {
            for s in *rest {
                self.subtree(func, ctx, s, &mut out);
            }
            cur = next;
        }
        out
    }

    fn subtree(&self, func: &Name, ctx: &[Site], s: &Stmt, out: &mut BTreeSet<Provenance>) {
        match &s.kind {
            StmtKind::Atomic { body, .. } => {
                for t in body {
                    self.subtree(func, ctx, t, out);
                }
            }
            _ => {
                let site = Site { func: func.clone(), label: s.label() };
                let mut chain = ctx.to_vec();
                chain.push(site);
                match &s.kind {
                    StmtKind::If { then, els, .. } => {
                        for t in then.iter().chain(els) {
                            self.subtree(func, ctx, t, out);
                        }
                    }
                    StmtKind::Let { init: Init::Call { callee, .. }, .. } => {
                        let g = self.prog.func(callee).expect("resolved call");
                        for t in &g.body {
                            self.subtree(&g.name, &chain, t, out);
                        }
                    }
                    _ => {}
                }
                out.insert(chain);
            }
        }
    }

    fn diag(&mut self, rule: &'static str, chain: &Provenance, message: String) {
        self.diags.push(CheckDiag { rule, site: show_provenance(chain), message });
    }
}

/// Recovers a policy map from a program whose regions were placed by hand
/// or by another tool: each policy goes to the outermost region enclosing
/// its first instruction. Policies with no enclosing region stay unmapped.
pub fn derive_policy_map(p: &Program, pd: &PolicyDecls) -> PolicyMap {
    let mut pm = PolicyMap::default();
    for (pid, pol) in pd.iter() {
        let first = match pol.items(p).into_iter().next() {
            Some(f) => f,
            None => continue,
        };
        if let Some(a) = outermost_region(p, &first) {
            pm.regions.entry(a).or_default().push(pid.clone());
        }
    }
    pm
}

/// Outermost atomic region enclosing any step of the chain.
fn outermost_region(p: &Program, chain: &Provenance) -> Option<u32> {
    for site in chain {
        let f = p.func(&site.func)?;
        if let Some(a) = enclosing(&f.body, site.label) {
            return Some(a);
        }
    }
    None
}

fn enclosing(b: &[Stmt], label: u32) -> Option<u32> {
    fn find(b: &[Stmt], label: u32, outer: Option<u32>) -> Option<Option<u32>> {
        for s in b {
            if s.label == Some(label) {
                return Some(outer);
            }
            match &s.kind {
                StmtKind::Atomic { id, body, .. } => {
                    if let Some(r) = find(body, label, outer.or(Some(*id))) {
                        return Some(r);
                    }
                }
                StmtKind::If { then, els, .. } => {
                    if let Some(r) = find(then, label, outer).or_else(|| find(els, label, outer)) {
                        return Some(r);
                    }
                }
                _ => {}
            }
        }
        None
    }
    find(b, label, None).flatten()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infer::infer_atomic;
    use crate::lang::parse;

    #[test]
    fn region_in_shared_callee_is_accepted_under_other_contexts() {
        let src = "input s;
            fn main() { let fresh a = get(1); let b = a + 1; let consistent(1) c = get(2); ret b }
            fn get(p) { let v = s(); ret v }";
        let a = crate::analyze(parse(src).unwrap());
        let inf = infer_atomic(&a.program, &a.policies);
        let v = check_regions(&inf.program, &a.policies, &inf.pm);
        assert!(v.ok, "{:?}", v.diagnostics);
    }

    #[test]
    fn policy_split_across_two_instances_fails() {
        let src = "input s;
            fn main() { let x = get(); Consistent(x, 1); let y = get(); Consistent(y, 1); ret 0 }
            fn get() { atomic(1, {}) { let v = s(); } ret v }";
        let a = crate::analyze(parse(src).unwrap());
        let pm = PolicyMap { regions: BTreeMap::from([(1, vec!["consistent@1".to_string()])]) };
        let v = check_regions(&a.program, &a.policies, &pm);
        assert!(v.diagnostics.iter().any(|d| d.rule == "Atomic"), "{:?}", v.diagnostics);
    }
}
