//! Abstract syntax of the region language.
//!
//! A function body is a block of statements. A `let` binding scopes over the
//! rest of its enclosing block, which is the block form of `let x = e in c`.
//! Atomic regions are not scopes: names bound inside a region body stay
//! visible after it, mirroring the flat begin/end markers of the runtime.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

/// Interned identifier. Cheap to clone, compared by content.
pub type Name = Arc<str>;

/// Per-function statement label, assigned in pre-order starting at 0.
pub type Label = u32;

pub fn name(s: &str) -> Name {
    Arc::from(s)
}

/// A `(function, label)` pair identifying one statement of the program.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Site {
    pub func: Name,
    pub label: Label,
}

impl Site {
    pub fn new(func: &str, label: Label) -> Self {
        Site { func: name(func), label }
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.func, self.label)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::And => "&&",
            BinOp::Or => "||",
        }
    }

    /// Binding strength; larger binds tighter.
    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Eq | BinOp::Ne => 3,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 4,
            BinOp::Add | BinOp::Sub => 5,
            BinOp::Mul | BinOp::Div | BinOp::Rem => 6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum UnOp {
    Neg,
    Not,
    /// Read through a reference.
    Deref,
}

impl UnOp {
    pub fn symbol(self) -> &'static str {
        match self {
            UnOp::Neg => "-",
            UnOp::Not => "!",
            UnOp::Deref => "*",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Value {
    Int(i64),
    Bool(bool),
    /// `&x`
    Ref(Name),
    /// `&a[i]`, constant non-negative index.
    RefElem(Name, u32),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Expr {
    Var(Name),
    Val(Value),
    Index(Name, Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Un(UnOp, Box<Expr>),
}

impl Expr {
    pub fn int(n: i64) -> Expr {
        Expr::Val(Value::Int(n))
    }

    pub fn var(s: &str) -> Expr {
        Expr::Var(name(s))
    }

    pub fn bin(op: BinOp, l: Expr, r: Expr) -> Expr {
        Expr::Bin(op, Box::new(l), Box::new(r))
    }

    /// Names read by the expression, including arrays and reference targets.
    pub fn free_vars(&self) -> BTreeSet<Name> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<Name>) {
        match self {
            Expr::Var(x) => {
                out.insert(x.clone());
            }
            Expr::Val(Value::Ref(x)) | Expr::Val(Value::RefElem(x, _)) => {
                out.insert(x.clone());
            }
            Expr::Val(_) => {}
            Expr::Index(a, i) => {
                out.insert(a.clone());
                i.collect_vars(out);
            }
            Expr::Bin(_, l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
            Expr::Un(_, e) => e.collect_vars(out),
        }
    }

    pub fn is_ref_value(&self) -> bool {
        matches!(self, Expr::Val(Value::Ref(_)) | Expr::Val(Value::RefElem(..)))
    }
}

/// Right-hand side of a `let`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Init {
    Expr(Expr),
    Call {
        callee: Name,
        arg: Option<Expr>,
    },
    /// Call to a declared input function.
    Input(Name),
    /// Array literal; only valid as a binding initializer.
    Array(Vec<Expr>),
}

/// Timeliness annotation carried by a binding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Annot {
    pub fresh: bool,
    pub consistent: Option<u32>,
}

impl Annot {
    pub fn is_empty(&self) -> bool {
        !self.fresh && self.consistent.is_none()
    }
}

/// A location named in an atomic region's checkpoint set.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OmegaLoc {
    Var(Name),
    /// The location a reference variable points to.
    Deref(Name),
}

impl fmt::Display for OmegaLoc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OmegaLoc::Var(x) => write!(f, "{x}"),
            OmegaLoc::Deref(x) => write!(f, "*{x}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum StmtKind {
    Skip,
    Assign(Name, Expr),
    AssignIndex(Name, Expr, Expr),
    AssignDeref(Name, Expr),
    Let { var: Name, annot: Annot, init: Init },
    If { cond: Expr, then: Block, els: Block },
    Atomic { id: u32, omega: BTreeSet<OmegaLoc>, body: Block },
}

/// A statement. Every statement except `atomic` carries a label.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Stmt {
    pub label: Option<Label>,
    pub kind: StmtKind,
}

impl Stmt {
    pub fn new(kind: StmtKind) -> Self {
        Stmt { label: None, kind }
    }

    /// Label of a non-atomic statement.
    pub fn label(&self) -> Label {
        self.label.expect("atomic statements carry no label")
    }

    /// Expressions evaluated when this statement executes (not its children).
    pub fn own_exprs(&self) -> Vec<&Expr> {
        match &self.kind {
            StmtKind::Skip | StmtKind::Atomic { .. } => vec![],
            StmtKind::Assign(_, e) | StmtKind::AssignDeref(_, e) => vec![e],
            StmtKind::AssignIndex(_, i, e) => vec![i, e],
            StmtKind::Let { init, .. } => match init {
                Init::Expr(e) => vec![e],
                Init::Call { arg, .. } => arg.iter().collect(),
                Init::Input(_) => vec![],
                Init::Array(es) => es.iter().collect(),
            },
            StmtKind::If { cond, .. } => vec![cond],
        }
    }
}

pub type Block = Vec<Stmt>;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FuncDecl {
    pub name: Name,
    pub param: Option<Name>,
    pub body: Block,
    pub ret: Expr,
}

impl FuncDecl {
    /// Number of labels in the function.
    pub fn label_count(&self) -> u32 {
        let mut n = 0;
        walk_block(&self.body, &mut |s| {
            if s.label.is_some() {
                n += 1
            }
        });
        n
    }

    /// Finds the statement with the given label.
    pub fn stmt(&self, label: Label) -> Option<&Stmt> {
        find_in(&self.body, label)
    }

    /// Call sites of the function as `(label, callee)`, in label order.
    pub fn calls(&self) -> Vec<(Label, Name)> {
        let mut out = vec![];
        walk_block(&self.body, &mut |s| {
            if let StmtKind::Let { init: Init::Call { callee, .. }, .. } = &s.kind {
                out.push((s.label(), callee.clone()));
            }
        });
        out.sort();
        out
    }
}

fn find_in(block: &Block, label: Label) -> Option<&Stmt> {
    for s in block {
        if s.label == Some(label) {
            return Some(s);
        }
        match &s.kind {
            StmtKind::If { then, els, .. } => {
                if let Some(x) = find_in(then, label).or_else(|| find_in(els, label)) {
                    return Some(x);
                }
            }
            StmtKind::Atomic { body, .. } => {
                if let Some(x) = find_in(body, label) {
                    return Some(x);
                }
            }
            _ => {}
        }
    }
    None
}

/// Pre-order visit of every statement in a block, descending into arms and regions.
pub fn walk_block<'a>(block: &'a Block, f: &mut dyn FnMut(&'a Stmt)) {
    for s in block {
        f(s);
        match &s.kind {
            StmtKind::If { then, els, .. } => {
                walk_block(then, f);
                walk_block(els, f);
            }
            StmtKind::Atomic { body, .. } => walk_block(body, f),
            _ => {}
        }
    }
}

/// A parsed program: functions in source order, declared input functions, and
/// the entry function (named `main` unless declared otherwise).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Program {
    pub inputs: BTreeSet<Name>,
    pub entry: Name,
    pub funcs: Vec<FuncDecl>,
}

impl Program {
    pub fn func(&self, name: &str) -> Option<&FuncDecl> {
        self.funcs.iter().find(|f| &*f.name == name)
    }

    pub fn func_mut(&mut self, name: &str) -> Option<&mut FuncDecl> {
        self.funcs.iter_mut().find(|f| &*f.name == name)
    }

    pub fn entry_func(&self) -> &FuncDecl {
        self.func(&self.entry).expect("entry function exists")
    }

    pub fn stmt(&self, site: &Site) -> Option<&Stmt> {
        self.func(&site.func)?.stmt(site.label)
    }

    /// Assigns labels in pre-order per function, starting at 0. Atomic
    /// statements are skipped, so inserting regions never shifts labels.
    pub fn relabel(&mut self) {
        for f in &mut self.funcs {
            let mut next = 0;
            relabel_block(&mut f.body, &mut next);
        }
    }

    /// Every labeled site of the program.
    pub fn sites(&self) -> BTreeSet<Site> {
        let mut out = BTreeSet::new();
        for f in &self.funcs {
            walk_block(&f.body, &mut |s| {
                if let Some(l) = s.label {
                    out.insert(Site { func: f.name.clone(), label: l });
                }
            });
        }
        out
    }

    /// Functions ordered callers-first, starting from the entry. Functions not
    /// reachable from the entry come last in source order.
    pub fn topo_order(&self) -> Vec<Name> {
        let mut visited = BTreeSet::new();
        let mut post = vec![];
        fn dfs(p: &Program, f: &Name, visited: &mut BTreeSet<Name>, post: &mut Vec<Name>) {
            if !visited.insert(f.clone()) {
                return;
            }
            if let Some(fd) = p.func(f) {
                for (_, g) in fd.calls() {
                    dfs(p, &g, visited, post);
                }
            }
            post.push(f.clone());
        }
        dfs(self, &self.entry, &mut visited, &mut post);
        for f in &self.funcs {
            dfs(self, &f.name, &mut visited, &mut post);
        }
        post.reverse();
        post
    }

    /// All call-site chains from the entry to `func`. The entry itself has
    /// the single empty chain; an unreachable function has none.
    pub fn contexts(&self, func: &str) -> Vec<Vec<Site>> {
        let mut out = vec![];
        let mut stack = vec![];
        self.contexts_from(&self.entry.clone(), func, &mut stack, &mut out);
        out
    }

    fn contexts_from(&self, cur: &Name, target: &str, stack: &mut Vec<Site>, out: &mut Vec<Vec<Site>>) {
        if &**cur == target {
            out.push(stack.clone());
        }
        if let Some(fd) = self.func(cur) {
            for (l, g) in fd.calls() {
                stack.push(Site { func: cur.clone(), label: l });
                self.contexts_from(&g, target, stack, out);
                stack.pop();
            }
        }
    }

    /// Callee of the call statement at `site`, if it is one.
    pub fn callee_at(&self, site: &Site) -> Option<Name> {
        match &self.stmt(site)?.kind {
            StmtKind::Let { init: Init::Call { callee, .. }, .. } => Some(callee.clone()),
            _ => None,
        }
    }

    /// Total number of labeled statements.
    pub fn size(&self) -> usize {
        self.funcs.iter().map(|f| f.label_count() as usize).sum()
    }
}

fn relabel_block(block: &mut Block, next: &mut Label) {
    for s in block {
        match &mut s.kind {
            StmtKind::Atomic { body, .. } => {
                s.label = None;
                relabel_block(body, next);
            }
            StmtKind::If { then, els, .. } => {
                s.label = Some(*next);
                *next += 1;
                relabel_block(then, next);
                relabel_block(els, next);
            }
            _ => {
                s.label = Some(*next);
                *next += 1;
            }
        }
    }
}
