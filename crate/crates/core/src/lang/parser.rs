use std::collections::{BTreeMap, BTreeSet};

use super::ast::*;
use super::lexer::{lex, Tok, Token};
use super::ParseError;

const KEYWORDS: &[&str] = &[
    "fn",
    "let",
    "fresh",
    "consistent",
    "if",
    "else",
    "atomic",
    "ret",
    "skip",
    "input",
    "entry",
    "true",
    "false",
    "Fresh",
    "Consistent",
];

/// Parses and labels a program, then checks the call graph.
pub fn parse(src: &str) -> Result<Program, ParseError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0 };
    let mut prog = p.program()?;
    resolve_inputs(&mut prog)?;
    prog.relabel();
    check_call_graph(&prog)?;
    Ok(prog)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, expected: &str) -> Result<T, ParseError> {
        let t = &self.toks[self.pos];
        Err(ParseError::Syntax { line: t.line, col: t.col, expected: expected.to_string(), found: t.tok.describe() })
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn is_kw(&self, k: &str) -> bool {
        matches!(self.peek(), Tok::Ident(x) if x == k)
    }

    fn expect_sym(&mut self, s: &str) -> Result<(), ParseError> {
        if self.is_sym(s) {
            self.bump();
            Ok(())
        } else {
            self.err(&format!("`{s}`"))
        }
    }

    fn expect_kw(&mut self, k: &str) -> Result<(), ParseError> {
        if self.is_kw(k) {
            self.bump();
            Ok(())
        } else {
            self.err(&format!("`{k}`"))
        }
    }

    fn ident(&mut self) -> Result<Name, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                self.bump();
                Ok(name(&s))
            }
            _ => self.err("identifier"),
        }
    }

    fn int(&mut self) -> Result<i64, ParseError> {
        match self.peek().clone() {
            Tok::Int(n) => {
                self.bump();
                Ok(n)
            }
            _ => self.err("integer"),
        }
    }

    fn small_int(&mut self) -> Result<u32, ParseError> {
        let n = self.int()?;
        match u32::try_from(n) {
            Ok(v) => Ok(v),
            Err(_) => {
                self.pos -= 1;
                self.err("non-negative integer")
            }
        }
    }

    fn program(&mut self) -> Result<Program, ParseError> {
        let mut inputs = BTreeSet::new();
        let mut entry: Option<Name> = None;
        let mut funcs: Vec<FuncDecl> = vec![];
        loop {
            if matches!(self.peek(), Tok::Eof) {
                break;
            }
            if self.is_kw("input") {
                self.bump();
                loop {
                    inputs.insert(self.ident()?);
                    if self.is_sym(",") {
                        self.bump();
                    } else {
                        break;
                    }
                }
                self.expect_sym(";")?;
            } else if self.is_kw("entry") {
                self.bump();
                entry = Some(self.ident()?);
                self.expect_sym(";")?;
            } else if self.is_kw("fn") {
                let f = self.func()?;
                if funcs.iter().any(|g| g.name == f.name) || inputs.contains(&f.name) {
                    return Err(ParseError::DuplicateFunction(f.name.to_string()));
                }
                funcs.push(f);
            } else {
                return self.err("`fn`, `input` or `entry`");
            }
        }
        for f in &funcs {
            if inputs.contains(&f.name) {
                return Err(ParseError::DuplicateFunction(f.name.to_string()));
            }
        }
        let entry = entry.unwrap_or_else(|| name("main"));
        if !funcs.iter().any(|f| f.name == entry) {
            return Err(ParseError::MissingEntry(entry.to_string()));
        }
        Ok(Program { inputs, entry, funcs })
    }

    fn func(&mut self) -> Result<FuncDecl, ParseError> {
        self.expect_kw("fn")?;
        let fname = self.ident()?;
        self.expect_sym("(")?;
        let param = if self.is_sym(")") { None } else { Some(self.ident()?) };
        self.expect_sym(")")?;
        self.expect_sym("{")?;
        let body = self.stmts(true)?;
        self.expect_kw("ret")?;
        let ret = self.expr()?;
        if self.is_sym(";") {
            self.bump();
        }
        self.expect_sym("}")?;
        Ok(FuncDecl { name: fname, param, body, ret })
    }

    /// Statements up to `}` (or `ret` at function level).
    fn stmts(&mut self, top: bool) -> Result<Block, ParseError> {
        let mut out: Block = vec![];
        loop {
            if self.is_sym("}") || (top && self.is_kw("ret")) {
                return Ok(out);
            }
            if matches!(self.peek(), Tok::Eof) {
                return self.err(if top { "`ret`" } else { "`}`" });
            }
            if self.is_kw("Fresh") || self.is_kw("Consistent") {
                self.marker(&mut out)?;
                continue;
            }
            out.push(self.stmt()?);
        }
    }

    /// `Fresh(x);` or `Consistent(x, n);` right after the binding of `x`.
    fn marker(&mut self, out: &mut Block) -> Result<(), ParseError> {
        let t = &self.toks[self.pos];
        let (line, col) = (t.line, t.col);
        let fresh = self.is_kw("Fresh");
        self.bump();
        self.expect_sym("(")?;
        let x = self.ident()?;
        let n = if fresh {
            None
        } else {
            self.expect_sym(",")?;
            Some(self.small_int()?)
        };
        self.expect_sym(")")?;
        self.expect_sym(";")?;
        match out.last_mut() {
            Some(Stmt { kind: StmtKind::Let { var, annot, .. }, .. }) if *var == x => {
                if fresh {
                    annot.fresh = true;
                } else {
                    annot.consistent = n;
                }
                Ok(())
            }
            _ => Err(ParseError::AnnotationNotAtBinding { var: x.to_string(), line, col }),
        }
    }

    fn block(&mut self) -> Result<Block, ParseError> {
        self.expect_sym("{")?;
        let b = self.stmts(false)?;
        self.expect_sym("}")?;
        Ok(b)
    }

    fn stmt(&mut self) -> Result<Stmt, ParseError> {
        if self.is_kw("skip") {
            self.bump();
            self.expect_sym(";")?;
            return Ok(Stmt::new(StmtKind::Skip));
        }
        if self.is_kw("let") {
            return self.let_stmt();
        }
        if self.is_kw("if") {
            return self.if_stmt();
        }
        if self.is_kw("atomic") {
            self.bump();
            self.expect_sym("(")?;
            let id = self.small_int()?;
            self.expect_sym(",")?;
            self.expect_sym("{")?;
            let mut omega = BTreeSet::new();
            while !self.is_sym("}") {
                if self.is_sym("*") {
                    self.bump();
                    omega.insert(OmegaLoc::Deref(self.ident()?));
                } else {
                    omega.insert(OmegaLoc::Var(self.ident()?));
                }
                if self.is_sym(",") {
                    self.bump();
                } else if !self.is_sym("}") {
                    return self.err("`,` or `}`");
                }
            }
            self.expect_sym("}")?;
            self.expect_sym(")")?;
            let body = self.block()?;
            return Ok(Stmt::new(StmtKind::Atomic { id, omega, body }));
        }
        if self.is_sym("*") {
            self.bump();
            let x = self.ident()?;
            self.expect_sym(":=")?;
            let e = self.expr()?;
            self.expect_sym(";")?;
            return Ok(Stmt::new(StmtKind::AssignDeref(x, e)));
        }
        let x = self.ident()?;
        if self.is_sym("[") {
            self.bump();
            let i = self.expr()?;
            self.expect_sym("]")?;
            self.expect_sym(":=")?;
            let e = self.expr()?;
            self.expect_sym(";")?;
            return Ok(Stmt::new(StmtKind::AssignIndex(x, i, e)));
        }
        self.expect_sym(":=")?;
        let e = self.expr()?;
        self.expect_sym(";")?;
        Ok(Stmt::new(StmtKind::Assign(x, e)))
    }

    fn let_stmt(&mut self) -> Result<Stmt, ParseError> {
        self.expect_kw("let")?;
        let mut annot = Annot::default();
        loop {
            if self.is_kw("fresh") {
                self.bump();
                annot.fresh = true;
            } else if self.is_kw("consistent") {
                self.bump();
                self.expect_sym("(")?;
                annot.consistent = Some(self.small_int()?);
                self.expect_sym(")")?;
            } else {
                break;
            }
        }
        let var = self.ident()?;
        self.expect_sym("=")?;
        let init = if self.is_sym("[") {
            self.bump();
            let mut es = vec![];
            while !self.is_sym("]") {
                es.push(self.expr()?);
                if self.is_sym(",") {
                    self.bump();
                } else if !self.is_sym("]") {
                    return self.err("`,` or `]`");
                }
            }
            self.bump();
            Init::Array(es)
        } else if matches!(self.peek(), Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()))
            && matches!(self.peek_at(1), Tok::Sym("("))
        {
            let callee = self.ident()?;
            self.bump();
            let arg = if self.is_sym(")") { None } else { Some(self.expr()?) };
            self.expect_sym(")")?;
            Init::Call { callee, arg }
        } else {
            Init::Expr(self.expr()?)
        };
        self.expect_sym(";")?;
        Ok(Stmt::new(StmtKind::Let { var, annot, init }))
    }

    fn if_stmt(&mut self) -> Result<Stmt, ParseError> {
        self.expect_kw("if")?;
        let cond = self.expr()?;
        let then = self.block()?;
        let els = if self.is_kw("else") {
            self.bump();
            if self.is_kw("if") {
                vec![self.if_stmt()?]
            } else {
                self.block()?
            }
        } else {
            vec![]
        };
        Ok(Stmt::new(StmtKind::If { cond, then, els }))
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.binary(1)
    }

    fn binop(&self) -> Option<BinOp> {
        let s = match self.peek() {
            Tok::Sym(s) => *s,
            _ => return None,
        };
        Some(match s {
            "+" => BinOp::Add,
            "-" => BinOp::Sub,
            "*" => BinOp::Mul,
            "/" => BinOp::Div,
            "%" => BinOp::Rem,
            "<" => BinOp::Lt,
            "<=" => BinOp::Le,
            ">" => BinOp::Gt,
            ">=" => BinOp::Ge,
            "==" => BinOp::Eq,
            "!=" => BinOp::Ne,
            "&&" => BinOp::And,
            "||" => BinOp::Or,
            _ => return None,
        })
    }

    // Precedence climbing; all binary operators are left-associative.
    fn binary(&mut self, min: u8) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.binop() {
            if op.precedence() < min {
                break;
            }
            self.bump();
            let rhs = self.binary(op.precedence() + 1)?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        let op = match self.peek() {
            Tok::Sym("-") => Some(UnOp::Neg),
            Tok::Sym("!") => Some(UnOp::Not),
            Tok::Sym("*") => Some(UnOp::Deref),
            _ => None,
        };
        if let Some(op) = op {
            self.bump();
            // Fold `-<int>` into a literal so printing round-trips.
            if op == UnOp::Neg {
                if let Tok::Int(n) = self.peek().clone() {
                    self.bump();
                    return Ok(Expr::int(-n));
                }
            }
            return Ok(Expr::Un(op, Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek().clone() {
            Tok::Int(n) => {
                self.bump();
                Ok(Expr::int(n))
            }
            Tok::Ident(s) if s == "true" || s == "false" => {
                self.bump();
                Ok(Expr::Val(Value::Bool(s == "true")))
            }
            Tok::Sym("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Tok::Sym("&") => {
                self.bump();
                let x = self.ident()?;
                if self.is_sym("[") {
                    self.bump();
                    let i = self.small_int()?;
                    self.expect_sym("]")?;
                    Ok(Expr::Val(Value::RefElem(x, i)))
                } else {
                    Ok(Expr::Val(Value::Ref(x)))
                }
            }
            Tok::Ident(_) => {
                let x = self.ident()?;
                if self.is_sym("[") {
                    self.bump();
                    let i = self.expr()?;
                    self.expect_sym("]")?;
                    Ok(Expr::Index(x, Box::new(i)))
                } else {
                    Ok(Expr::Var(x))
                }
            }
            _ => self.err("expression"),
        }
    }
}

fn resolve_inputs(prog: &mut Program) -> Result<(), ParseError> {
    fn fix(block: &mut Block, inputs: &BTreeSet<Name>, f: &Name) -> Result<(), ParseError> {
        for s in block {
            match &mut s.kind {
                StmtKind::Let { init, .. } => {
                    if let Init::Call { callee, arg } = init {
                        if inputs.contains(callee) {
                            if arg.is_some() {
                                return Err(ParseError::InputWithArgument {
                                    caller: f.to_string(),
                                    input: callee.to_string(),
                                });
                            }
                            *init = Init::Input(callee.clone());
                        }
                    }
                }
                StmtKind::If { then, els, .. } => {
                    fix(then, inputs, f)?;
                    fix(els, inputs, f)?;
                }
                StmtKind::Atomic { body, .. } => fix(body, inputs, f)?,
                _ => {}
            }
        }
        Ok(())
    }
    let inputs = prog.inputs.clone();
    for f in &mut prog.funcs {
        let n = f.name.clone();
        fix(&mut f.body, &inputs, &n)?;
    }
    Ok(())
}

/// Resolves call targets and rejects recursion.
fn check_call_graph(prog: &Program) -> Result<(), ParseError> {
    let names: BTreeSet<&Name> = prog.funcs.iter().map(|f| &f.name).collect();
    let mut edges: BTreeMap<Name, Vec<Name>> = BTreeMap::new();
    for f in &prog.funcs {
        let mut err = None;
        walk_block(&f.body, &mut |s| {
            if let StmtKind::Let { init, .. } = &s.kind {
                let callee = match init {
                    Init::Call { callee, .. } | Init::Input(callee) => callee,
                    _ => return,
                };
                let ok = match init {
                    Init::Call { .. } => names.contains(callee),
                    _ => prog.inputs.contains(callee),
                };
                if !ok && err.is_none() {
                    err = Some(ParseError::UnresolvedCall { caller: f.name.to_string(), callee: callee.to_string() });
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        edges.insert(f.name.clone(), f.calls().into_iter().map(|(_, g)| g).collect());
    }
    // Colour-marking DFS; a grey hit is a back edge.
    let mut colour: BTreeMap<Name, u8> = BTreeMap::new();
    fn visit(
        f: &Name,
        edges: &BTreeMap<Name, Vec<Name>>,
        colour: &mut BTreeMap<Name, u8>,
        path: &mut Vec<Name>,
    ) -> Result<(), ParseError> {
        match colour.get(f) {
            Some(2) => return Ok(()),
            Some(1) => {
                let start = path.iter().position(|g| g == f).unwrap_or(0);
                let mut cycle: Vec<String> = path[start..].iter().map(|g| g.to_string()).collect();
                cycle.push(f.to_string());
                return Err(ParseError::Recursion(cycle.join(" -> ")));
            }
            _ => {}
        }
        colour.insert(f.clone(), 1);
        path.push(f.clone());
        for g in &edges[f] {
            visit(g, edges, colour, path)?;
        }
        path.pop();
        colour.insert(f.clone(), 2);
        Ok(())
    }
    for f in &prog.funcs {
        visit(&f.name, &edges, &mut colour, &mut vec![])?;
    }
    Ok(())
}
