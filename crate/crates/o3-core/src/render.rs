//! Pretty-printers: parseable program source, runtime choreography terms,
//! and projected process programs.

use crate::syntax::{
    Atom, BranchOption, ChorAction, ChorInstr, Choreography, Expr, KeyAnnot, PAtom, PExpr,
    ProcInstr, ProcProcedureDecl, ProcessBehavior, Program, Value,
};
use std::fmt::Write;

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn render_value_source(v: &Value) -> String {
    match v {
        Value::Int(n) => n.to_string(),
        Value::Bool(b) => b.to_string(),
        Value::Str(s) => format!("{s:?}"),
        Value::Null => "null".into(),
        // No source literal exists for these; they only occur at runtime.
        Value::Unit => "unit".into(),
        Value::Label(l) => l.0.clone(),
    }
}

const INFIX: &[&str] = &["+", "-", "*", "<", ">", "=="];

/// Source form of an expression: bare variables, literals, applications.
pub fn render_expr_source(e: &Expr) -> String {
    match e {
        Expr::Atom(Atom::Val { value, .. }) => render_value_source(value),
        Expr::Atom(Atom::Var(lv)) => lv.name.clone(),
        Expr::Apply { func, args } if args.len() == 2 && INFIX.contains(&func.as_str()) => {
            format!(
                "({} {} {})",
                render_expr_source(&args[0]),
                func,
                render_expr_source(&args[1])
            )
        }
        Expr::Apply { func, args } => {
            let args: Vec<String> = args.iter().map(render_expr_source).collect();
            format!("{func}({})", args.join(", "))
        }
    }
}

/// Debug form of an expression: atoms show their location.
pub fn render_expr_debug(e: &Expr) -> String {
    match e {
        Expr::Atom(Atom::Val { value, at }) => format!("{}@{at}", render_value_source(value)),
        Expr::Atom(Atom::Var(lv)) => lv.to_string(),
        Expr::Apply { func, args } => {
            let args: Vec<String> = args.iter().map(render_expr_debug).collect();
            format!("{func}({})", args.join(", "))
        }
    }
}

fn render_call_args_source(args: &[Atom]) -> String {
    args.iter()
        .map(|a| match a {
            Atom::Val { value, .. } => render_value_source(value),
            Atom::Var(lv) => lv.to_string(),
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn render_chor_source(c: &Choreography, out: &mut String, depth: usize) {
    for i in &c.0 {
        match i {
            ChorInstr::Block(b) => {
                indent(out, depth);
                out.push_str("{\n");
                render_chor_source(b, out, depth + 1);
                indent(out, depth);
                out.push_str("}\n");
            }
            ChorInstr::Keyed(_, a) => {
                indent(out, depth);
                match a {
                    ChorAction::Comm { from, expr, to, var } => {
                        let _ = writeln!(out, "{from}.{} -> {to}.{var};", render_expr_source(expr));
                    }
                    ChorAction::Select { from, to, label } => {
                        let _ = writeln!(out, "{from} -> {to} [{label}];");
                    }
                    ChorAction::Compute { var, at, expr } => {
                        let _ = writeln!(out, "{at}.{var} = {};", render_expr_source(expr));
                    }
                    ChorAction::Cond { at, guard, then_branch, else_branch } => {
                        let _ = writeln!(out, "if {at}.({}) {{", render_expr_source(guard));
                        render_chor_source(then_branch, out, depth + 1);
                        indent(out, depth);
                        out.push_str("} else {\n");
                        render_chor_source(else_branch, out, depth + 1);
                        indent(out, depth);
                        out.push_str("}\n");
                    }
                    ChorAction::Call { proc, roles, args } => {
                        let roles: Vec<String> = roles.iter().map(|r| r.0.clone()).collect();
                        if args.is_empty() {
                            let _ = writeln!(out, "{proc}({});", roles.join(", "));
                        } else {
                            let _ = writeln!(
                                out,
                                "{proc}({}; {});",
                                roles.join(", "),
                                render_call_args_source(args)
                            );
                        }
                    }
                    ChorAction::CommInProgress { .. }
                    | ChorAction::SelectInProgress { .. }
                    | ChorAction::CallInProgress { .. } => {
                        // Runtime terms have no source form; emit the debug
                        // form so the output stays readable.
                        let mut dbg = String::new();
                        render_chor_runtime_instr(i, &mut dbg, depth);
                        out.push_str(dbg.trim_start());
                    }
                }
            }
        }
    }
}

/// Render a program back to parseable source. Round-trips structurally for
/// programs free of runtime terms.
pub fn render_program(p: &Program) -> String {
    let mut out = String::new();
    for d in &p.decls {
        let roles: Vec<String> = d.roles.iter().map(|r| r.0.clone()).collect();
        if d.params.is_empty() {
            let _ = writeln!(out, "proc {}({}) {{", d.name, roles.join(", "));
        } else {
            let params: Vec<String> = d.params.iter().map(|p| p.to_string()).collect();
            let _ = writeln!(out, "proc {}({}; {}) {{", d.name, roles.join(", "), params.join(", "));
        }
        render_chor_source(&d.body, &mut out, 1);
        out.push_str("}\n\n");
    }
    out.push_str("main {\n");
    render_chor_source(&p.main, &mut out, 1);
    out.push_str("}\n");
    out
}

fn key_suffix(k: &KeyAnnot) -> String {
    format!(" @({},{})", k.line, k.token)
}

fn render_chor_runtime_instr(i: &ChorInstr, out: &mut String, depth: usize) {
    match i {
        ChorInstr::Block(b) => {
            indent(out, depth);
            out.push_str("{\n");
            for j in &b.0 {
                render_chor_runtime_instr(j, out, depth + 1);
            }
            indent(out, depth);
            out.push_str("}\n");
        }
        ChorInstr::Keyed(k, a) => {
            indent(out, depth);
            match a {
                ChorAction::Comm { from, expr, to, var } => {
                    let _ = writeln!(
                        out,
                        "{from}.{} -> {to}.{var}{};",
                        render_expr_debug(expr),
                        key_suffix(k)
                    );
                }
                ChorAction::CommInProgress { from, to, var } => {
                    let _ = writeln!(out, "{from} ~> {to}.{var}{};", key_suffix(k));
                }
                ChorAction::Select { from, to, label } => {
                    let _ = writeln!(out, "{from} -> {to} [{label}]{};", key_suffix(k));
                }
                ChorAction::SelectInProgress { from, to, label } => {
                    let _ = writeln!(out, "{from} ~> {to} [{label}]{};", key_suffix(k));
                }
                ChorAction::Compute { var, at, expr } => {
                    let _ = writeln!(out, "{at}.{var} = {}{};", render_expr_debug(expr), key_suffix(k));
                }
                ChorAction::Cond { at, guard, then_branch, else_branch } => {
                    let _ = writeln!(out, "if {at}.({}){} {{", render_expr_debug(guard), key_suffix(k));
                    for j in &then_branch.0 {
                        render_chor_runtime_instr(j, out, depth + 1);
                    }
                    indent(out, depth);
                    out.push_str("} else {\n");
                    for j in &else_branch.0 {
                        render_chor_runtime_instr(j, out, depth + 1);
                    }
                    indent(out, depth);
                    out.push_str("}\n");
                }
                ChorAction::Call { proc, roles, args } => {
                    let roles: Vec<String> = roles.iter().map(|r| r.0.clone()).collect();
                    let _ = writeln!(
                        out,
                        "{proc}({}; {}){};",
                        roles.join(", "),
                        render_call_args_source(args),
                        key_suffix(k)
                    );
                }
                ChorAction::CallInProgress { pending, proc, roles, args, body } => {
                    let pend: Vec<String> = pending.iter().map(|r| r.0.clone()).collect();
                    let roles: Vec<String> = roles.iter().map(|r| r.0.clone()).collect();
                    let _ = writeln!(
                        out,
                        "{proc}<pending {}>({}; {}){} {{",
                        pend.join(","),
                        roles.join(", "),
                        render_call_args_source(args),
                        key_suffix(k)
                    );
                    for j in &body.0 {
                        render_chor_runtime_instr(j, out, depth + 1);
                    }
                    indent(out, depth);
                    out.push_str("};\n");
                }
            }
        }
    }
}

/// Render a choreography including runtime terms and integrity keys.
pub fn render_chor(c: &Choreography) -> String {
    if c.is_nil() {
        return "0".into();
    }
    let mut out = String::new();
    for i in &c.0 {
        render_chor_runtime_instr(i, &mut out, 0);
    }
    out
}

pub fn render_pexpr(e: &PExpr) -> String {
    match e {
        PExpr::Atom(PAtom::Val(v)) => render_value_source(v),
        PExpr::Atom(PAtom::Var(x)) => x.clone(),
        PExpr::Apply { func, args } if args.len() == 2 && INFIX.contains(&func.as_str()) => {
            format!("({} {} {})", render_pexpr(&args[0]), func, render_pexpr(&args[1]))
        }
        PExpr::Apply { func, args } => {
            let args: Vec<String> = args.iter().map(render_pexpr).collect();
            format!("{func}({})", args.join(", "))
        }
    }
}

fn render_proc_instr(i: &ProcInstr, out: &mut String, depth: usize) {
    indent(out, depth);
    match i {
        ProcInstr::Send { to, key, expr } => {
            let _ = writeln!(out, "send {to} {}{};", render_pexpr(expr), key_suffix(key));
        }
        ProcInstr::Recv { var, key } => {
            let _ = writeln!(out, "recv {var}{};", key_suffix(key));
        }
        ProcInstr::Set { var, expr } => {
            let _ = writeln!(out, "{var} = {};", render_pexpr(expr));
        }
        ProcInstr::Choose { to, key, label } => {
            let _ = writeln!(out, "choose {to} [{label}]{};", key_suffix(key));
        }
        ProcInstr::Branch { options } => {
            out.push_str("branch {\n");
            for BranchOption { key, label, body } in options {
                indent(out, depth + 1);
                let _ = writeln!(out, "({},{},{label}) => {{", key.line, key.token);
                render_proc_body(body, out, depth + 2);
                indent(out, depth + 1);
                out.push_str("}\n");
            }
            indent(out, depth);
            out.push_str("}\n");
        }
        ProcInstr::Cond { guard, then_branch, else_branch } => {
            let _ = writeln!(out, "if {} {{", render_pexpr(guard));
            render_proc_body(then_branch, out, depth + 1);
            indent(out, depth);
            out.push_str("} else {\n");
            render_proc_body(else_branch, out, depth + 1);
            indent(out, depth);
            out.push_str("}\n");
        }
        ProcInstr::Call { proc, procs, args, key } => {
            let procs: Vec<String> = procs.iter().map(|r| r.0.clone()).collect();
            let args: Vec<String> = args
                .iter()
                .map(|a| match a {
                    PAtom::Val(v) => render_value_source(v),
                    PAtom::Var(x) => x.clone(),
                })
                .collect();
            if args.is_empty() {
                let _ = writeln!(out, "{proc}({}){};", procs.join(", "), key_suffix(key));
            } else {
                let _ = writeln!(
                    out,
                    "{proc}({}; {}){};",
                    procs.join(", "),
                    args.join(", "),
                    key_suffix(key)
                );
            }
        }
        ProcInstr::Block(b) => {
            out.push_str("{\n");
            render_proc_body(b, out, depth + 1);
            indent(out, depth);
            out.push_str("}\n");
        }
    }
}

fn render_proc_body(p: &ProcessBehavior, out: &mut String, depth: usize) {
    if p.is_nil() {
        indent(out, depth);
        out.push_str("0\n");
        return;
    }
    for i in &p.0 {
        render_proc_instr(i, out, depth);
    }
}

/// Render a process behavior in the local-program syntax.
pub fn render_proc(p: &ProcessBehavior) -> String {
    if p.is_nil() {
        return "0".into();
    }
    let mut out = String::new();
    for i in &p.0 {
        render_proc_instr(i, &mut out, 0);
    }
    out
}

/// Render a projected procedure declaration.
pub fn render_proc_decl(d: &ProcProcedureDecl) -> String {
    let roles: Vec<String> = d.roles.iter().map(|r| r.0.clone()).collect();
    let mut head = format!("proc {}({}", d.name, roles.join(", "));
    if !d.params.is_empty() {
        head.push_str("; ");
        head.push_str(&d.params.join(", "));
    }
    let mut out = format!("{head}) {{\n");
    render_proc_body(&d.body, &mut out, 1);
    out.push_str("}\n");
    out
}
