use std::fmt::Write;

use super::ast::*;

/// Renders a program in concrete syntax. Annotations print in the
/// `let fresh` / `let consistent(n)` form; the output re-parses to an equal
/// program.
pub fn pretty_print(p: &Program) -> String {
    let mut out = String::new();
    if !p.inputs.is_empty() {
        let names: Vec<&str> = p.inputs.iter().map(|n| &**n).collect();
        let _ = writeln!(out, "input {};", names.join(", "));
    }
    if &*p.entry != "main" {
        let _ = writeln!(out, "entry {};", p.entry);
    }
    for (i, f) in p.funcs.iter().enumerate() {
        if i > 0 || !out.is_empty() {
            out.push('\n');
        }
        let param = f.param.as_deref().unwrap_or("");
        let _ = writeln!(out, "fn {}({}) {{", f.name, param);
        print_block(&mut out, &f.body, 1);
        let _ = writeln!(out, "    ret {}", expr_to_string(&f.ret));
        out.push_str("}\n");
    }
    out
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("    ");
    }
}

fn print_block(out: &mut String, b: &Block, depth: usize) {
    for s in b {
        print_stmt(out, s, depth);
    }
}

fn print_stmt(out: &mut String, s: &Stmt, depth: usize) {
    indent(out, depth);
    match &s.kind {
        StmtKind::Skip => out.push_str("skip;\n"),
        StmtKind::Assign(x, e) => {
            let _ = writeln!(out, "{x} := {};", expr_to_string(e));
        }
        StmtKind::AssignIndex(a, i, e) => {
            let _ = writeln!(out, "{a}[{}] := {};", expr_to_string(i), expr_to_string(e));
        }
        StmtKind::AssignDeref(x, e) => {
            let _ = writeln!(out, "*{x} := {};", expr_to_string(e));
        }
        StmtKind::Let { var, annot, init } => {
            out.push_str("let ");
            if annot.fresh {
                out.push_str("fresh ");
            }
            if let Some(n) = annot.consistent {
                let _ = write!(out, "consistent({n}) ");
            }
            let rhs = match init {
                Init::Expr(e) => expr_to_string(e),
                Init::Call { callee, arg } => {
                    format!("{callee}({})", arg.as_ref().map(expr_to_string).unwrap_or_default())
                }
                Init::Input(f) => format!("{f}()"),
                Init::Array(es) => {
                    let items: Vec<String> = es.iter().map(expr_to_string).collect();
                    format!("[{}]", items.join(", "))
                }
            };
            let _ = writeln!(out, "{var} = {rhs};");
        }
        StmtKind::If { cond, then, els } => {
            let _ = writeln!(out, "if {} {{", expr_to_string(cond));
            print_block(out, then, depth + 1);
            indent(out, depth);
            if els.is_empty() {
                out.push_str("}\n");
            } else {
                out.push_str("} else {\n");
                print_block(out, els, depth + 1);
                indent(out, depth);
                out.push_str("}\n");
            }
        }
        StmtKind::Atomic { id, omega, body } => {
            let locs: Vec<String> = omega.iter().map(|l| l.to_string()).collect();
            let _ = writeln!(out, "atomic({id}, {{{}}}) {{", locs.join(", "));
            print_block(out, body, depth + 1);
            indent(out, depth);
            out.push_str("}\n");
        }
    }
}

pub fn expr_to_string(e: &Expr) -> String {
    let mut s = String::new();
    write_expr(&mut s, e, 0);
    s
}

fn write_expr(out: &mut String, e: &Expr, ctx: u8) {
    match e {
        Expr::Var(x) => out.push_str(x),
        Expr::Val(v) => match v {
            Value::Int(n) if *n < 0 && ctx > 0 => {
                let _ = write!(out, "({n})");
            }
            Value::Int(n) => {
                let _ = write!(out, "{n}");
            }
            Value::Bool(b) => {
                let _ = write!(out, "{b}");
            }
            Value::Ref(x) => {
                let _ = write!(out, "&{x}");
            }
            Value::RefElem(a, i) => {
                let _ = write!(out, "&{a}[{i}]");
            }
        },
        Expr::Index(a, i) => {
            let _ = write!(out, "{a}[");
            write_expr(out, i, 0);
            out.push(']');
        }
        Expr::Bin(op, l, r) => {
            let p = op.precedence();
            if p < ctx {
                out.push('(');
            }
            write_expr(out, l, p);
            let _ = write!(out, " {} ", op.symbol());
            write_expr(out, r, p + 1);
            if p < ctx {
                out.push(')');
            }
        }
        Expr::Un(op, inner) => {
            out.push_str(op.symbol());
            // Parenthesise so `-(5)` stays a negation node and `--x` never lexes oddly.
            let needs = !matches!(**inner, Expr::Var(_) | Expr::Index(..))
                || (*op == UnOp::Neg && matches!(**inner, Expr::Val(Value::Int(_))));
            if needs {
                out.push('(');
                write_expr(out, inner, 0);
                out.push(')');
            } else {
                write_expr(out, inner, 7);
            }
        }
    }
}
