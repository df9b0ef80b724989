use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::ast::*;

/// A validation finding attached to a statement.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Diagnostic {
    #[serde(serialize_with = "crate::report::ser_display")]
    pub site: Site,
    pub message: String,
}

/// What a name denotes, as far as scoping and aliasing are concerned.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Kind {
    Scalar,
    Array,
    /// Mutable reference; `Some(x)` when the target is a local of this function.
    Ref(Option<Name>),
}

#[derive(Clone, Debug)]
struct Binding {
    name: Name,
    kind: Kind,
    immutable: bool,
}

/// Kind of every function parameter, inferred from call sites.
pub fn param_kinds(p: &Program) -> BTreeMap<Name, Kind> {
    infer_params(p).0
}

fn infer_params(p: &Program) -> (BTreeMap<Name, Kind>, Vec<Diagnostic>) {
    let mut kinds: BTreeMap<Name, Kind> = BTreeMap::new();
    let mut diags = vec![];
    for fname in p.topo_order() {
        let f = match p.func(&fname) {
            Some(f) => f,
            None => continue,
        };
        let own = kinds.get(&fname).cloned().unwrap_or(Kind::Scalar);
        let mut refs: BTreeSet<Name> = BTreeSet::new();
        if own != Kind::Scalar {
            if let Some(x) = &f.param {
                refs.insert(x.clone());
            }
        }
        // Ref-typed locals: `let r = &x`.
        walk_block(&f.body, &mut |s| {
            if let StmtKind::Let { var, init: Init::Expr(e), .. } = &s.kind {
                if e.is_ref_value() {
                    refs.insert(var.clone());
                }
            }
        });
        walk_block(&f.body, &mut |s| {
            if let StmtKind::Let { init: Init::Call { callee, arg: Some(a) }, .. } = &s.kind {
                let is_ref = a.is_ref_value() || matches!(a, Expr::Var(x) if refs.contains(x));
                let k = if is_ref { Kind::Ref(None) } else { Kind::Scalar };
                match kinds.get(callee) {
                    Some(prev) if *prev != k => diags.push(Diagnostic {
                        site: Site { func: fname.clone(), label: s.label() },
                        message: format!("call sites of `{callee}` disagree on whether its parameter is a reference"),
                    }),
                    Some(_) => {}
                    None => {
                        kinds.insert(callee.clone(), k);
                    }
                }
            }
        });
    }
    for f in &p.funcs {
        kinds.entry(f.name.clone()).or_insert(Kind::Scalar);
    }
    (kinds, diags)
}

/// Checks scoping, immutability of annotated bindings, and the single-owner
/// rule for mutable references. An empty result means the program is valid.
pub fn validate(p: &Program) -> Vec<Diagnostic> {
    let (kinds, mut diags) = infer_params(p);
    let mut aids = BTreeSet::new();
    for f in &p.funcs {
        let mut v = FnValidator {
            prog: p,
            func: f,
            kinds: &kinds,
            scope: vec![],
            borrowed: BTreeMap::new(),
            diags: vec![],
            aids: &mut aids,
        };
        if f.name == p.entry && f.param.is_some() {
            v.diag(0, "the entry function takes no parameter".into());
        }
        if let Some(x) = &f.param {
            let kind = kinds.get(&f.name).cloned().unwrap_or(Kind::Scalar);
            v.scope.push(Binding { name: x.clone(), kind, immutable: false });
        }
        // The body's bindings stay in scope for `ret`.
        v.stmts(&f.body);
        v.ret(&f.ret);
        diags.extend(v.diags);
    }
    diags.sort();
    diags.dedup();
    diags
}

struct FnValidator<'a> {
    prog: &'a Program,
    func: &'a FuncDecl,
    kinds: &'a BTreeMap<Name, Kind>,
    scope: Vec<Binding>,
    /// Locals currently borrowed mutably, mapped to the borrowing reference.
    borrowed: BTreeMap<Name, Name>,
    diags: Vec<Diagnostic>,
    aids: &'a mut BTreeSet<u32>,
}

impl FnValidator<'_> {
    fn diag(&mut self, label: Label, message: String) {
        self.diags.push(Diagnostic { site: Site { func: self.func.name.clone(), label }, message });
    }

    fn lookup(&self, x: &Name) -> Option<&Binding> {
        self.scope.iter().rev().find(|b| &b.name == x)
    }

    fn block(&mut self, b: &Block) {
        let mark = self.scope.len();
        self.stmts(b);
        self.pop_to(mark);
    }

    fn pop_to(&mut self, mark: usize) {
        for b in self.scope.drain(mark..) {
            if let Kind::Ref(Some(t)) = &b.kind {
                if self.borrowed.get(t) == Some(&b.name) {
                    self.borrowed.remove(t);
                }
            }
        }
    }

    // Atomic bodies share the enclosing scope.
    fn stmts(&mut self, b: &Block) {
        for s in b {
            self.stmt(s);
        }
    }

    fn stmt(&mut self, s: &Stmt) {
        let l = s.label.unwrap_or(0);
        match &s.kind {
            StmtKind::Skip => {}
            StmtKind::Assign(x, e) => {
                self.expr(l, e);
                self.check_write(l, x, Kind::Scalar);
            }
            StmtKind::AssignIndex(a, i, e) => {
                self.expr(l, i);
                self.expr(l, e);
                self.check_write(l, a, Kind::Array);
            }
            StmtKind::AssignDeref(r, e) => {
                self.expr(l, e);
                match self.lookup(r).map(|b| b.kind.clone()) {
                    None => self.diag(l, format!("use of undeclared variable `{r}`")),
                    Some(Kind::Ref(_)) => {}
                    Some(_) => self.diag(l, format!("`*{r} :=` needs `{r}` to be a reference")),
                }
            }
            StmtKind::Let { var, annot, init } => {
                let kind = match init {
                    Init::Expr(e) if e.is_ref_value() => self.borrow(l, e, Some(var)),
                    Init::Expr(e) => {
                        self.expr(l, e);
                        Kind::Scalar
                    }
                    Init::Array(es) => {
                        for e in es {
                            self.expr(l, e);
                        }
                        if es.is_empty() {
                            self.diag(l, format!("array `{var}` has no elements"));
                        }
                        Kind::Array
                    }
                    Init::Input(_) => Kind::Scalar,
                    Init::Call { callee, arg } => {
                        self.call_arg(l, callee, arg.as_ref());
                        Kind::Scalar
                    }
                };
                if !annot.is_empty() && kind != Kind::Scalar {
                    self.diag(l, format!("annotated binding `{var}` must hold a plain value"));
                }
                if self.lookup(var).is_some() {
                    self.diag(l, format!("`{var}` is already bound in this scope"));
                }
                self.scope.push(Binding { name: var.clone(), kind, immutable: !annot.is_empty() });
            }
            StmtKind::If { cond, then, els } => {
                self.expr(l, cond);
                self.block(then);
                self.block(els);
            }
            StmtKind::Atomic { id, body, .. } => {
                if !self.aids.insert(*id) {
                    let first = first_label(body).unwrap_or(0);
                    self.diag(first, format!("atomic region id {id} is used more than once"));
                }
                self.stmts(body);
            }
        }
    }

    fn check_write(&mut self, l: Label, x: &Name, want: Kind) {
        let b = match self.lookup(x) {
            None => return self.diag(l, format!("use of undeclared variable `{x}`")),
            Some(b) => b.clone(),
        };
        if b.immutable {
            self.diag(l, format!("cannot assign to `{x}`: fresh/consistent bindings are immutable"));
        }
        if b.kind != want {
            let what = if want == Kind::Array { "an array" } else { "a plain variable" };
            self.diag(l, format!("`{x}` is not {what}"));
        }
        if let Some(r) = self.borrowed.get(x) {
            let r = r.clone();
            self.diag(l, format!("cannot assign to `{x}` while `{r}` holds a mutable reference to it"));
        }
    }

    /// Checks a `&x` / `&a[i]` value; `holder` is the binding that keeps it alive.
    fn borrow(&mut self, l: Label, e: &Expr, holder: Option<&Name>) -> Kind {
        let (target, want) = match e {
            Expr::Val(Value::Ref(x)) => (x, Kind::Scalar),
            Expr::Val(Value::RefElem(a, _)) => (a, Kind::Array),
            _ => unreachable!("borrow of non-reference"),
        };
        let b = match self.lookup(target) {
            None => {
                self.diag(l, format!("use of undeclared variable `{target}`"));
                return Kind::Ref(None);
            }
            Some(b) => b.clone(),
        };
        if b.kind != want {
            self.diag(l, format!("cannot take that reference to `{target}`"));
        }
        if b.immutable {
            self.diag(l, format!("cannot take a mutable reference to immutable `{target}`"));
        }
        if let Some(prev) = self.borrowed.get(target) {
            let prev = prev.clone();
            self.diag(l, format!("second mutable reference to `{target}` while `{prev}` is live"));
        }
        if let Some(h) = holder {
            self.borrowed.insert(target.clone(), h.clone());
        }
        Kind::Ref(Some(target.clone()))
    }

    fn call_arg(&mut self, l: Label, callee: &Name, arg: Option<&Expr>) {
        let has_param = self.prog.func(callee).map(|g| g.param.is_some()).unwrap_or(false);
        if has_param != arg.is_some() {
            self.diag(l, format!("`{callee}` expects {} argument", if has_param { "one" } else { "no" }));
        }
        let arg = match arg {
            Some(a) => a,
            None => return,
        };
        if arg.is_ref_value() {
            self.borrow(l, arg, None);
            return;
        }
        if let Expr::Var(x) = arg {
            if let Some(Binding { kind: Kind::Ref(_), .. }) = self.lookup(x) {
                return;
            }
        }
        let _ = self.kinds;
        self.expr(l, arg);
    }

    fn ret(&mut self, e: &Expr) {
        let l = self.func.label_count();
        for x in e.free_vars() {
            if let Some(b) = self.lookup(&x) {
                if b.immutable {
                    let msg = format!("annotated variable `{x}` cannot be returned directly; bind a copy first");
                    self.diag(l, msg);
                }
            }
        }
        self.expr(l, e);
    }

    fn expr(&mut self, l: Label, e: &Expr) {
        match e {
            Expr::Var(x) => match self.lookup(x).map(|b| b.kind.clone()) {
                None => self.diag(l, format!("use of undeclared variable `{x}`")),
                Some(Kind::Scalar) => {}
                Some(Kind::Array) => self.diag(l, format!("array `{x}` used as a value")),
                Some(Kind::Ref(_)) => self.diag(l, format!("reference `{x}` used as a value; read it with `*{x}`")),
            },
            Expr::Val(Value::Ref(x)) | Expr::Val(Value::RefElem(x, _)) => {
                self.diag(l, format!("reference to `{x}` may only bind a variable or be passed to a call"))
            }
            Expr::Val(_) => {}
            Expr::Index(a, i) => {
                match self.lookup(a).map(|b| b.kind.clone()) {
                    None => self.diag(l, format!("use of undeclared variable `{a}`")),
                    Some(Kind::Array) => {}
                    Some(_) => self.diag(l, format!("`{a}` is not an array")),
                }
                self.expr(l, i);
            }
            Expr::Bin(_, a, b) => {
                self.expr(l, a);
                self.expr(l, b);
            }
            Expr::Un(UnOp::Deref, inner) => match &**inner {
                Expr::Var(r) => match self.lookup(r).map(|b| b.kind.clone()) {
                    None => self.diag(l, format!("use of undeclared variable `{r}`")),
                    Some(Kind::Ref(_)) => {}
                    Some(_) => self.diag(l, format!("`*{r}` needs `{r}` to be a reference")),
                },
                _ => self.diag(l, "only reference variables can be dereferenced".into()),
            },
            Expr::Un(_, inner) => self.expr(l, inner),
        }
    }
}

fn first_label(b: &Block) -> Option<Label> {
    let mut out = None;
    walk_block(b, &mut |s| {
        if out.is_none() {
            out = s.label;
        }
    });
    out
}
