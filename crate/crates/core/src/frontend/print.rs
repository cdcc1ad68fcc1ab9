//! Pretty-printers: kernel source and a readable CDFG listing.

use std::fmt::Write;

use super::ast::*;
use crate::ir::*;

fn expr(e: &Expr, out: &mut String) {
    match e {
        Expr::Int(v) => write!(out, "{v}").unwrap(),
        Expr::Var(n) => out.push_str(n),
        Expr::Load(a, i) => {
            write!(out, "{a}[").unwrap();
            expr(i, out);
            out.push(']');
        }
        Expr::Neg(x) => {
            out.push_str("-(");
            expr(x, out);
            out.push(')');
        }
        Expr::Binary(op, a, b) => {
            out.push('(');
            expr(a, out);
            write!(out, " {} ", op.symbol()).unwrap();
            expr(b, out);
            out.push(')');
        }
        Expr::Call(f, args) => {
            write!(out, "{}(", f.name()).unwrap();
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                expr(a, out);
            }
            out.push(')');
        }
    }
}

fn stmts(body: &[Stmt], depth: usize, out: &mut String) {
    let pad = "    ".repeat(depth);
    for s in body {
        match s {
            Stmt::Assign { var, value } => {
                write!(out, "{pad}{var} = ").unwrap();
                expr(value, out);
                out.push_str(";\n");
            }
            Stmt::Store {
                array,
                index,
                value,
            } => {
                write!(out, "{pad}{array}[").unwrap();
                expr(index, out);
                out.push_str("] = ");
                expr(value, out);
                out.push_str(";\n");
            }
            Stmt::If {
                cond,
                then_body,
                else_body,
            } => {
                write!(out, "{pad}if (").unwrap();
                expr(cond, out);
                out.push_str(") {\n");
                stmts(then_body, depth + 1, out);
                if else_body.is_empty() {
                    writeln!(out, "{pad}}}").unwrap();
                } else {
                    writeln!(out, "{pad}}} else {{").unwrap();
                    stmts(else_body, depth + 1, out);
                    writeln!(out, "{pad}}}").unwrap();
                }
            }
            Stmt::Loop { var, lo, hi, body } => {
                write!(out, "{pad}loop {var} in ").unwrap();
                expr(lo, out);
                out.push_str("..");
                match hi {
                    LoopEnd::Upper(e) => expr(e, out),
                    LoopEnd::Count(e) => {
                        out.push_str(" bound-from ");
                        expr(e, out);
                    }
                }
                out.push_str(" {\n");
                stmts(body, depth + 1, out);
                writeln!(out, "{pad}}}").unwrap();
            }
        }
    }
}

/// Prints a kernel as `.mk` source that parses back to the same tree.
pub fn print_kernel(k: &Kernel) -> String {
    let mut out = format!("kernel {} {{\n", k.name);
    for a in &k.arrays {
        writeln!(out, "    array {}[{}];", a.name, a.len).unwrap();
    }
    stmts(&k.body, 1, &mut out);
    out.push_str("}\n");
    out
}

fn value(p: &Program, r: &ValueRef) -> String {
    match r {
        ValueRef::Node(n) => n.to_string(),
        ValueRef::LiveIn(v) => format!("${}", p.vars[v.0]),
        ValueRef::Imm(x) => format!("#{x}"),
    }
}

/// Human-readable CDFG listing, one block per paragraph.
pub fn dump_program(p: &Program) -> String {
    let mut out = format!("program {} entry={} exit={}\n", p.name, p.entry, p.exit);
    for m in &p.memories {
        writeln!(out, "  array {}[{}]", m.name, m.len).unwrap();
    }
    for b in &p.blocks {
        write!(out, "{}", b.id).unwrap();
        if b.loop_header {
            match b.loop_bound {
                Some(LoopBound::Const(n)) => write!(out, " header bound={n}").unwrap(),
                Some(LoopBound::Dynamic { block, node }) => {
                    write!(out, " header bound={block}/{node}").unwrap()
                }
                None => out.push_str(" header"),
            }
        }
        out.push_str(" ->");
        for (t, c) in &b.successors {
            write!(out, " {t}:{}", c.keyword()).unwrap();
        }
        out.push('\n');
        for n in &b.dfg {
            write!(out, "  {} = {}", n.id, n.opcode).unwrap();
            if let Some(a) = n.array {
                write!(out, " {}", p.memories[a.0].name).unwrap();
            }
            for i in &n.inputs {
                write!(out, " {}", value(p, i)).unwrap();
            }
            out.push('\n');
        }
        for (v, r) in &b.live_outs {
            writeln!(out, "  ${} <- {}", p.vars[v.0], value(p, r)).unwrap();
        }
    }
    out
}
