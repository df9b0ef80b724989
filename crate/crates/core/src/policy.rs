//! Policies derived from `fresh` / `consistent(n)` bindings, and the map from
//! atomic regions to the policies they enforce.

use std::collections::{BTreeMap, BTreeSet};

use crate::lang::{Block, Expr, Label, Name, Program, Site, Stmt, StmtKind};
use crate::taint::{chains_in_ctx, show_provenance, FuncSummaries, InputDepMap, Provenance};

pub type PolicyId = String;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Policy {
    Fresh { decl: Site, inputs: BTreeSet<Provenance>, uses: BTreeSet<Site> },
    Consistent { set: u32, decls: BTreeSet<Site>, inputs: BTreeSet<Provenance> },
}

impl Policy {
    pub fn inputs(&self) -> &BTreeSet<Provenance> {
        match self {
            Policy::Fresh { inputs, .. } | Policy::Consistent { inputs, .. } => inputs,
        }
    }

    pub fn is_fresh(&self) -> bool {
        matches!(self, Policy::Fresh { .. })
    }

    /// Dynamic instruction instances the policy constrains, as full call
    /// chains: every input, plus every use of a fresh variable under every
    /// context of its function. A policy without inputs constrains nothing.
    pub fn items(&self, p: &Program) -> BTreeSet<Provenance> {
        let mut out = self.inputs().clone();
        if out.is_empty() {
            return out;
        }
        if let Policy::Fresh { uses, .. } = self {
            for u in uses {
                for mut ctx in p.contexts(&u.func) {
                    ctx.push(u.clone());
                    out.insert(ctx);
                }
            }
        }
        out
    }
}

pub fn fresh_id(decl: &Site) -> PolicyId {
    format!("fresh@{}:{}", decl.func, decl.label)
}

pub fn consistent_id(n: u32) -> PolicyId {
    format!("consistent@{n}")
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PolicyDecls {
    pub policies: BTreeMap<PolicyId, Policy>,
}

impl PolicyDecls {
    pub fn get(&self, id: &str) -> Option<&Policy> {
        self.policies.get(id)
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PolicyId, &Policy)> {
        self.policies.iter()
    }

    /// Ids of policies with at least one input.
    pub fn non_vacuous(&self) -> Vec<PolicyId> {
        self.policies.iter().filter(|(_, p)| !p.inputs().is_empty()).map(|(id, _)| id.clone()).collect()
    }

    /// Human-readable listing, one policy per block.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (id, pol) in &self.policies {
            out.push_str(id);
            out.push('\n');
            match pol {
                Policy::Fresh { decl, uses, .. } => {
                    out.push_str(&format!("  decl {decl}\n"));
                    for u in uses {
                        out.push_str(&format!("  use {u}\n"));
                    }
                }
                Policy::Consistent { decls, .. } => {
                    for d in decls {
                        out.push_str(&format!("  decl {d}\n"));
                    }
                }
            }
            for i in pol.inputs() {
                out.push_str(&format!("  input {}\n", show_provenance(i)));
            }
        }
        out
    }
}

/// Region id to the policies that region enforces.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PolicyMap {
    pub regions: BTreeMap<u32, Vec<PolicyId>>,
}

impl PolicyMap {
    /// Region assigned to a policy, if any.
    pub fn region_of(&self, pid: &str) -> Option<u32> {
        self.regions.iter().find(|(_, ps)| ps.iter().any(|p| p == pid)).map(|(a, _)| *a)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct PolicyWarning {
    pub policy: PolicyId,
    pub message: String,
}

/// Builds one fresh policy per fresh binding and one consistent policy per set id.
pub fn build_policies(p: &Program, fs: &FuncSummaries, deps: &InputDepMap) -> (PolicyDecls, Vec<PolicyWarning>) {
    let mut pd = PolicyDecls::default();
    for f in &p.funcs {
        let mut bindings = vec![];
        crate::lang::walk_block(&f.body, &mut |s| {
            if let StmtKind::Let { var, annot, .. } = &s.kind {
                if !annot.is_empty() {
                    bindings.push((s.label(), var.clone(), *annot));
                }
            }
        });
        for (l, var, annot) in bindings {
            let decl = Site { func: f.name.clone(), label: l };
            let mut inputs = BTreeSet::new();
            for ctx in p.contexts(&f.name) {
                inputs.extend(chains_in_ctx(fs, &ctx, &f.name, &deps.def_deps(&decl, &ctx)));
            }
            if annot.fresh {
                let uses =
                    fresh_uses(&f.body, l, &var).into_iter().map(|u| Site { func: f.name.clone(), label: u }).collect();
                pd.policies.insert(fresh_id(&decl), Policy::Fresh { decl: decl.clone(), inputs: inputs.clone(), uses });
            }
            if let Some(n) = annot.consistent {
                let entry = pd.policies.entry(consistent_id(n)).or_insert_with(|| Policy::Consistent {
                    set: n,
                    decls: BTreeSet::new(),
                    inputs: BTreeSet::new(),
                });
                if let Policy::Consistent { decls, inputs: all, .. } = entry {
                    decls.insert(decl);
                    all.extend(inputs);
                }
            }
        }
    }
    let mut warnings = vec![];
    for (id, pol) in &pd.policies {
        if pol.inputs().is_empty() {
            warnings.push(PolicyWarning {
                policy: id.clone(),
                message: "depends on no input reachable from the entry; the policy is vacuous".into(),
            });
        }
    }
    (pd, warnings)
}

/// Splices atomic bodies into their enclosing block.
pub(crate) fn flatten(block: &Block) -> Vec<&Stmt> {
    let mut out = vec![];
    for s in block {
        if let StmtKind::Atomic { body, .. } = &s.kind {
            out.extend(flatten(body));
        } else {
            out.push(s);
        }
    }
    out
}

/// Labels of statements in the scope of the binding at `decl` that read `var`.
pub fn fresh_uses(body: &Block, decl: Label, var: &Name) -> BTreeSet<Label> {
    let mut out = BTreeSet::new();
    find_scope(body, decl, var, &mut out);
    out
}

fn find_scope(block: &Block, decl: Label, var: &Name, out: &mut BTreeSet<Label>) -> bool {
    let flat = flatten(block);
    for (i, s) in flat.iter().enumerate() {
        if s.label == Some(decl) {
            for t in &flat[i + 1..] {
                collect_reads(t, var, out);
            }
            return true;
        }
        if let StmtKind::If { then, els, .. } = &s.kind {
            if find_scope(then, decl, var, out) || find_scope(els, decl, var, out) {
                return true;
            }
        }
    }
    false
}

fn collect_reads(s: &Stmt, var: &Name, out: &mut BTreeSet<Label>) {
    if reads(s, var) {
        out.insert(s.label());
    }
    match &s.kind {
        StmtKind::If { then, els, .. } => {
            for t in flatten(then).into_iter().chain(flatten(els)) {
                collect_reads(t, var, out);
            }
        }
        StmtKind::Atomic { body, .. } => {
            for t in flatten(body) {
                collect_reads(t, var, out);
            }
        }
        _ => {}
    }
}

/// Whether the statement's own expressions mention `var`.
pub fn reads(s: &Stmt, var: &Name) -> bool {
    s.own_exprs().iter().any(|e| e.free_vars().contains(var))
}

/// Whether every fresh variable read by `e` at `site` has `site` recorded as
/// a use. `fresh` maps the fresh variables in scope to their declarations.
pub fn check_use(pd: &PolicyDecls, fresh: &BTreeMap<Name, Site>, e: &Expr, site: &Site) -> bool {
    e.free_vars().iter().all(|x| match fresh.get(x) {
        None => true,
        Some(decl) => match pd.get(&fresh_id(decl)) {
            Some(Policy::Fresh { uses, .. }) => uses.contains(site),
            _ => false,
        },
    })
}

/// Ids of every policy a statement at `site` under `ctx` is an item of.
pub fn policies_of_item(pd: &PolicyDecls, p: &Program, chain: &Provenance) -> Vec<PolicyId> {
    pd.policies.iter().filter(|(_, pol)| pol.items(p).contains(chain)).map(|(id, _)| id.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{name, parse};
    use crate::taint::{build_input_deps, build_summary};

    fn policies(src: &str) -> (Program, PolicyDecls, Vec<PolicyWarning>) {
        let p = parse(src).unwrap();
        let fs = build_summary(&p);
        let deps = build_input_deps(&p, &fs);
        let (pd, w) = build_policies(&p, &fs, &deps);
        (p, pd, w)
    }

    #[test]
    fn constant_fresh_binding_is_vacuous_but_records_uses() {
        let (_, pd, w) = policies("fn main() { let fresh x = 3; let y = x + 1; ret y }");
        let pol = pd.get("fresh@main:0").unwrap();
        assert!(pol.inputs().is_empty());
        assert!(matches!(pol, Policy::Fresh { uses, .. } if uses.contains(&Site::new("main", 1))));
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn consistent_sets_merge_by_id() {
        let (_, pd, _) =
            policies("input a, b; fn main() { let x = a(); Consistent(x, 2); let y = b(); Consistent(y, 2); ret 0 }");
        assert_eq!(pd.policies.len(), 1);
        let pol = pd.get("consistent@2").unwrap();
        assert_eq!(pol.inputs().len(), 2);
    }

    #[test]
    fn check_use_flips_when_use_removed() {
        let (_, mut pd, _) = policies("input s; fn main() { let t = s(); Fresh(t); if t > 3 { skip; } ret 0 }");
        let fresh = BTreeMap::from([(name("t"), Site::new("main", 0))]);
        let cond = Expr::bin(crate::lang::BinOp::Gt, Expr::var("t"), Expr::int(3));
        let site = Site::new("main", 1);
        assert!(check_use(&pd, &fresh, &cond, &site));
        assert!(check_use(&pd, &fresh, &Expr::int(1), &site));
        if let Some(Policy::Fresh { uses, .. }) = pd.policies.get_mut("fresh@main:0") {
            uses.clear();
        }
        assert!(!check_use(&pd, &fresh, &cond, &site));
    }

    #[test]
    fn uses_follow_scope_through_regions() {
        let src = "input s; fn main() { atomic(1, {}) { let t = s(); Fresh(t); } let u = t; ret u }";
        let (_, pd, _) = policies(src);
        match pd.get("fresh@main:0").unwrap() {
            Policy::Fresh { uses, .. } => assert_eq!(uses, &BTreeSet::from([Site::new("main", 1)])),
            _ => unreachable!(),
        }
    }
}
