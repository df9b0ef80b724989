//! Atomic region inference.
//!
//! For each policy: find the deepest function instance whose execution covers
//! every policy instruction, lift each instruction to the call site in that
//! function that leads to it, take the closest common dominator and
//! post-dominator of the lifted blocks, tighten both ends to the first and
//! last lifted instruction, and wrap that span in an atomic region.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::cfg::{build_cfg, Cfg};
use crate::lang::{
    walk_block, Block, Expr, FuncDecl, Init, Label, Name, OmegaLoc, Program, Site, Stmt, StmtKind, Value,
};
use crate::policy::{PolicyDecls, PolicyId, PolicyMap, PolicyWarning};
use crate::taint::Provenance;

/// A function together with the call chain that reaches it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Candidate {
    pub func: Name,
    pub ctx: Vec<Site>,
}

/// Deepest function instance, searched depth-first from the entry, whose
/// subtree executes every item.
pub fn find_candidate(p: &Program, items: &BTreeSet<Provenance>) -> Option<Candidate> {
    if items.is_empty() {
        return None;
    }
    fn dfs(p: &Program, f: &Name, ctx: &mut Vec<Site>, items: &BTreeSet<Provenance>) -> Option<Candidate> {
        let fd = p.func(f)?;
        for (l, g) in fd.calls() {
            ctx.push(Site { func: f.clone(), label: l });
            let found = dfs(p, &g, ctx, items);
            ctx.pop();
            if found.is_some() {
                return found;
            }
        }
        let covers = items.iter().all(|it| it.len() > ctx.len() && it[..ctx.len()] == ctx[..]);
        covers.then(|| Candidate { func: f.clone(), ctx: ctx.clone() })
    }
    dfs(p, &p.entry, &mut vec![], items)
}

/// Maps each item to the label in the candidate function through which it runs.
pub fn lift(items: &BTreeSet<Provenance>, cand: &Candidate) -> BTreeSet<Label> {
    items.iter().map(|it| it[cand.ctx.len()].label).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Point {
    Before(Label),
    After(Label),
}

impl Point {
    pub fn label(self) -> Label {
        match self {
            Point::Before(l) | Point::After(l) => l,
        }
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Point::Before(l) => write!(f, "before {l}"),
            Point::After(l) => write!(f, "after {l}"),
        }
    }
}

/// Latest start and earliest end that still enclose every lifted label.
pub fn truncate(cfg: &Cfg, lifted: &BTreeSet<Label>) -> Option<(Point, Point)> {
    let blocks: BTreeSet<usize> = lifted.iter().filter_map(|&l| cfg.block_of(l)).collect();
    let refs = cfg.refs(blocks.iter().copied());
    let start_dom = cfg.closest_common_dom(&refs).ok()?;
    let end_dom = cfg.closest_common_postdom(&refs).ok()?;

    let start = {
        let bb = cfg.block(start_dom);
        match bb.labels.iter().find(|l| lifted.contains(l)) {
            Some(&l) => Point::Before(l),
            None => {
                // No item here: the block ends in the branch that leads to them.
                let mut b = start_dom;
                loop {
                    if let Some(&l) = cfg.block(b).labels.last() {
                        break Point::Before(l);
                    }
                    b = cfg.idom(b)?;
                }
            }
        }
    };
    let end = {
        let bb = cfg.block(end_dom);
        match bb.labels.iter().rev().find(|l| lifted.contains(l)) {
            Some(&l) => Point::After(l),
            None => match bb.join_of {
                Some(l) => Point::After(l),
                None => Point::After(*lifted.iter().max()?),
            },
        }
    };
    Some((start, end))
}

/// Every location the region body may write that outlives one execution of it.
pub fn compute_checkpoint_set(body: &Block, ref_vars: &BTreeSet<Name>) -> BTreeSet<OmegaLoc> {
    let mut omega = BTreeSet::new();
    walk_block(body, &mut |s| match &s.kind {
        StmtKind::Assign(x, _) | StmtKind::AssignIndex(x, _, _) => {
            omega.insert(OmegaLoc::Var(x.clone()));
        }
        StmtKind::AssignDeref(r, _) => {
            omega.insert(OmegaLoc::Deref(r.clone()));
        }
        StmtKind::Let { init: Init::Expr(Expr::Val(Value::Ref(x) | Value::RefElem(x, _))), .. } => {
            omega.insert(OmegaLoc::Var(x.clone()));
        }
        StmtKind::Let { init: Init::Call { arg: Some(a), .. }, .. } => match a {
            Expr::Val(Value::Ref(x) | Value::RefElem(x, _)) => {
                omega.insert(OmegaLoc::Var(x.clone()));
            }
            Expr::Var(r) if ref_vars.contains(r) => {
                omega.insert(OmegaLoc::Deref(r.clone()));
            }
            _ => {}
        },
        _ => {}
    });
    omega
}

/// Names of reference type in `f`: a by-reference parameter and `let r = &x` bindings.
pub fn ref_vars(p: &Program, f: &FuncDecl) -> BTreeSet<Name> {
    let mut out = BTreeSet::new();
    if let (Some(x), Some(crate::lang::Kind::Ref(_))) = (&f.param, crate::lang::param_kinds(p).get(&f.name)) {
        out.insert(x.clone());
    }
    walk_block(&f.body, &mut |s| {
        if let StmtKind::Let { var, init: Init::Expr(e), .. } = &s.kind {
            if e.is_ref_value() {
                out.insert(var.clone());
            }
        }
    });
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionInfo {
    pub id: u32,
    pub policy: PolicyId,
    pub func: Name,
    pub ctx: Vec<Site>,
    pub start: Point,
    pub end: Point,
    pub omega: BTreeSet<OmegaLoc>,
}

#[derive(Clone, Debug)]
pub struct Inference {
    pub pm: PolicyMap,
    pub program: Program,
    pub regions: Vec<RegionInfo>,
    pub warnings: Vec<PolicyWarning>,
}

/// Places one atomic region per non-vacuous policy.
pub fn infer_atomic(p: &Program, pd: &PolicyDecls) -> Inference {
    let mut out = p.clone();
    let mut pm = PolicyMap::default();
    let mut regions = vec![];
    let mut warnings = vec![];
    let mut next_id = max_region_id(p) + 1;
    let mut cfgs: BTreeMap<Name, Cfg> = BTreeMap::new();
    for (pid, pol) in pd.iter() {
        let items = pol.items(p);
        let cand = match find_candidate(p, &items) {
            Some(c) => c,
            None => {
                warnings
                    .push(PolicyWarning { policy: pid.clone(), message: "no instructions to enclose; skipped".into() });
                continue;
            }
        };
        let fd = p.func(&cand.func).expect("candidate exists");
        let cfg = cfgs.entry(cand.func.clone()).or_insert_with(|| build_cfg(fd));
        let lifted = lift(&items, &cand);
        let (start, end) = truncate(cfg, &lifted).expect("lifted labels lie in one function");
        let id = next_id;
        next_id += 1;
        let body = &mut out.func_mut(&cand.func).expect("candidate exists").body;
        insert_region(body, start.label(), end.label(), id);
        pm.regions.insert(id, vec![pid.clone()]);
        regions.push(RegionInfo {
            id,
            policy: pid.clone(),
            func: cand.func.clone(),
            ctx: cand.ctx.clone(),
            start,
            end,
            omega: BTreeSet::new(),
        });
    }
    // Checkpoint sets are computed last so nested regions see their final bodies.
    let ids: BTreeSet<u32> = regions.iter().map(|r| r.id).collect();
    let mut omegas = BTreeMap::new();
    for i in 0..out.funcs.len() {
        let refs = ref_vars(&out, &out.funcs[i]);
        fill_omega(&mut out.funcs[i].body, &refs, &ids, &mut omegas);
    }
    for r in &mut regions {
        r.omega = omegas.get(&r.id).cloned().unwrap_or_default();
    }
    Inference { pm, program: out, regions, warnings }
}

fn max_region_id(p: &Program) -> u32 {
    let mut m = 0;
    for f in &p.funcs {
        each_atomic(&f.body, &mut |id| m = m.max(id));
    }
    m
}

fn each_atomic(b: &Block, f: &mut dyn FnMut(u32)) {
    for s in b {
        match &s.kind {
            StmtKind::Atomic { id, body, .. } => {
                f(*id);
                each_atomic(body, f);
            }
            StmtKind::If { then, els, .. } => {
                each_atomic(then, f);
                each_atomic(els, f);
            }
            _ => {}
        }
    }
}

fn fill_omega(b: &mut Block, refs: &BTreeSet<Name>, ids: &BTreeSet<u32>, out: &mut BTreeMap<u32, BTreeSet<OmegaLoc>>) {
    for s in b.iter_mut() {
        match &mut s.kind {
            StmtKind::Atomic { id, omega, body } => {
                if ids.contains(id) {
                    *omega = compute_checkpoint_set(body, refs);
                    out.insert(*id, omega.clone());
                }
                fill_omega(body, refs, ids, out);
            }
            StmtKind::If { then, els, .. } => {
                fill_omega(then, refs, ids, out);
                fill_omega(els, refs, ids, out);
            }
            _ => {}
        }
    }
}

/// Position of a labeled statement: child indices and the sub-block taken at
/// each step (0 then-arm, 1 else-arm, 2 region body).
fn path_to(b: &Block, label: Label) -> Option<Vec<(usize, u8)>> {
    for (i, s) in b.iter().enumerate() {
        if s.label == Some(label) {
            return Some(vec![(i, u8::MAX)]);
        }
        let subs: Vec<(u8, &Block)> = match &s.kind {
            StmtKind::If { then, els, .. } => vec![(0, then), (1, els)],
            StmtKind::Atomic { body, .. } => vec![(2, body)],
            _ => vec![],
        };
        for (arm, sub) in subs {
            if let Some(mut rest) = path_to(sub, label) {
                rest.insert(0, (i, arm));
                return Some(rest);
            }
        }
    }
    None
}

fn sub_block_mut(s: &mut Stmt, arm: u8) -> &mut Block {
    match (&mut s.kind, arm) {
        (StmtKind::If { then, .. }, 0) => then,
        (StmtKind::If { els, .. }, 1) => els,
        (StmtKind::Atomic { body, .. }, 2) => body,
        _ => unreachable!("path step matches statement shape"),
    }
}

/// Wraps the statements from the one labeled `first` through the one labeled
/// `last` in a new region, at their lowest common enclosing block.
pub fn insert_region(body: &mut Block, first: Label, last: Label, id: u32) {
    let p = path_to(body, first).expect("start label exists");
    let q = path_to(body, last).expect("end label exists");
    let mut depth = 0;
    while depth + 1 < p.len() && depth + 1 < q.len() && p[depth] == q[depth] {
        depth += 1;
    }
    let mut block = body;
    for &(i, arm) in &p[..depth] {
        block = sub_block_mut(&mut block[i], arm);
    }
    let (i, j) = (p[depth].0, q[depth].0);
    let inner: Block = block.drain(i..=j).collect();
    block.insert(i, Stmt::new(StmtKind::Atomic { id, omega: BTreeSet::new(), body: inner }));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse;

    #[test]
    fn candidate_is_deepest_cover() {
        let p = parse("input s; fn b() { let x = s(); let y = s(); ret x + y } fn a() { let r = b(); ret r } fn main() { let r = a(); ret r }").unwrap();
        let items = BTreeSet::from([
            vec![Site::new("main", 0), Site::new("a", 0), Site::new("b", 0)],
            vec![Site::new("main", 0), Site::new("a", 0), Site::new("b", 1)],
        ]);
        let c = find_candidate(&p, &items).unwrap();
        assert_eq!(&*c.func, "b");
        assert_eq!(lift(&items, &c), BTreeSet::from([0, 1]));
    }

    #[test]
    fn truncate_skips_leading_unrelated() {
        let p = parse("input s; fn main() { skip; skip; skip; let x = s(); let y = s(); skip; ret x + y }").unwrap();
        let cfg = build_cfg(p.entry_func());
        let (s, e) = truncate(&cfg, &BTreeSet::from([3, 4])).unwrap();
        assert_eq!((s, e), (Point::Before(3), Point::After(4)));
    }

    #[test]
    fn truncate_without_items_in_dominator_starts_at_branch() {
        let src = "input s; fn main() { let c = 1; skip; if c > 0 { let x = s(); } else { let y = s(); } skip; ret 0 }";
        let p = parse(src).unwrap();
        let cfg = build_cfg(p.entry_func());
        let (s, e) = truncate(&cfg, &BTreeSet::from([3, 4])).unwrap();
        assert_eq!((s, e), (Point::Before(2), Point::After(2)));
    }

    #[test]
    fn checkpoint_set_covers_writes() {
        let p = parse("fn main() { let a = [1, 2]; let x = a[0]; a[1] := x; x := 3; ret x }").unwrap();
        let omega = compute_checkpoint_set(&p.entry_func().body, &BTreeSet::new());
        let want: BTreeSet<OmegaLoc> =
            [OmegaLoc::Var(crate::lang::name("a")), OmegaLoc::Var(crate::lang::name("x"))].into_iter().collect();
        assert_eq!(omega, want);
    }
}
