//! Endpoint projection: compile a choreography into one local program per
//! process, plus the merge operator and the branching order used to state
//! projection correspondence.
//!
//! Projections are compared after block flattening (`flatten_proc`): blocks
//! only scope variables, and the runtime rules for calls and conditionals
//! introduce them on one side of the correspondence but not the other.

use crate::syntax::{
    chor_append, flatten_proc, keys_proc, pn_chor, proc_append, proc_concat_block, stats, Atom,
    BranchOption, ChorAction, ChorInstr, Choreography, Expr, PAtom, PExpr, ProcDecls,
    ProcInstr, ProcName, ProcProcedureDecl, ProcessBehavior, Program, TokenExpr,
};
use crate::token::Line;
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

/// Why a projection failed.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
pub enum ProjectionError {
    #[error("cannot merge the branch projections at {role} for the conditional at line {line}")]
    UnmergeableBranches { role: ProcName, line: Line },
    #[error("label '{label}' appears under two different keys when merging at {role}")]
    LabelCollision { role: ProcName, label: String },
    #[error("expression atom located at {at} inside an instruction owned by {owner}")]
    MisplacedAtom { owner: ProcName, at: ProcName },
    #[error("call to unknown procedure '{0}'")]
    UnknownProcedure(String),
}

/// Mangled name of procedure `name` projected at formal role `role`.
pub fn mangle(name: &str, role: &ProcName) -> String {
    format!("{name}__{role}")
}

/// Project an expression owned by `owner`: locations are erased; an atom
/// located elsewhere is an error.
pub fn project_expr(e: &Expr, owner: &ProcName) -> Result<PExpr, ProjectionError> {
    match e {
        Expr::Atom(Atom::Val { value, at }) => {
            if at == owner {
                Ok(PExpr::Atom(PAtom::Val(value.clone())))
            } else {
                Err(ProjectionError::MisplacedAtom { owner: owner.clone(), at: at.clone() })
            }
        }
        Expr::Atom(Atom::Var(lv)) => {
            if lv.proc == *owner {
                Ok(PExpr::Atom(PAtom::Var(lv.name.clone())))
            } else {
                Err(ProjectionError::MisplacedAtom { owner: owner.clone(), at: lv.proc.clone() })
            }
        }
        Expr::Apply { func, args } => Ok(PExpr::Apply {
            func: func.clone(),
            args: args
                .iter()
                .map(|a| project_expr(a, owner))
                .collect::<Result<Vec<_>, _>>()?,
        }),
    }
}

fn project_args(args: &[Atom], r: &ProcName) -> Vec<PAtom> {
    args.iter()
        .filter_map(|a| match a {
            Atom::Val { value, at } if at == r => Some(PAtom::Val(value.clone())),
            Atom::Var(lv) if lv.proc == *r => Some(PAtom::Var(lv.name.clone())),
            _ => None,
        })
        .collect()
}

/// Mangled-name lookup: the signatures of the choreographic declarations.
/// Projection of a call needs the formal role at the caller's position.
pub type DeclSigs = BTreeMap<String, Vec<ProcName>>;

pub fn decl_sigs(program: &Program) -> DeclSigs {
    program.decls.iter().map(|d| (d.name.clone(), d.roles.clone())).collect()
}

/// Project a choreography (runtime terms included) onto one process.
pub fn project_role(
    c: &Choreography,
    r: &ProcName,
    sigs: &DeclSigs,
) -> Result<ProcessBehavior, ProjectionError> {
    project_seq(&c.0, r, sigs)
}

fn project_seq(
    seq: &[ChorInstr],
    r: &ProcName,
    sigs: &DeclSigs,
) -> Result<ProcessBehavior, ProjectionError> {
    let Some((head, rest)) = seq.split_first() else {
        return Ok(ProcessBehavior::nil());
    };
    let cont = || project_seq(rest, r, sigs);
    match head {
        ChorInstr::Block(b) => {
            let inner = project_role(b, r, sigs)?;
            Ok(proc_concat_block(inner, cont()?))
        }
        ChorInstr::Keyed(k, a) => match a {
            ChorAction::Comm { from, expr, to, var } => {
                if r == from {
                    let mut p = vec![ProcInstr::Send {
                        to: to.clone(),
                        key: k.clone(),
                        expr: project_expr(expr, r)?,
                    }];
                    p.extend(cont()?.0);
                    Ok(ProcessBehavior(p))
                } else if r == to {
                    let mut p = vec![ProcInstr::Recv { var: var.clone(), key: k.clone() }];
                    p.extend(cont()?.0);
                    Ok(ProcessBehavior(p))
                } else {
                    cont()
                }
            }
            ChorAction::CommInProgress { to, var, .. } => {
                if r == to {
                    let mut p = vec![ProcInstr::Recv { var: var.clone(), key: k.clone() }];
                    p.extend(cont()?.0);
                    Ok(ProcessBehavior(p))
                } else {
                    cont()
                }
            }
            ChorAction::Compute { var, at, expr } => {
                if r == at {
                    let mut p = vec![ProcInstr::Set {
                        var: var.clone(),
                        expr: project_expr(expr, r)?,
                    }];
                    p.extend(cont()?.0);
                    Ok(ProcessBehavior(p))
                } else {
                    cont()
                }
            }
            ChorAction::Select { from, to, label } => {
                if r == from {
                    let mut p = vec![ProcInstr::Choose {
                        to: to.clone(),
                        key: k.clone(),
                        label: label.clone(),
                    }];
                    p.extend(cont()?.0);
                    Ok(ProcessBehavior(p))
                } else if r == to {
                    // The continuation moves inside the single offered branch.
                    Ok(ProcessBehavior(vec![ProcInstr::Branch {
                        options: vec![BranchOption {
                            key: k.clone(),
                            label: label.clone(),
                            body: cont()?,
                        }],
                    }]))
                } else {
                    cont()
                }
            }
            ChorAction::SelectInProgress { to, label, .. } => {
                if r == to {
                    Ok(ProcessBehavior(vec![ProcInstr::Branch {
                        options: vec![BranchOption {
                            key: k.clone(),
                            label: label.clone(),
                            body: cont()?,
                        }],
                    }]))
                } else {
                    cont()
                }
            }
            ChorAction::Cond { at, guard, then_branch, else_branch } => {
                if r == at {
                    let mut p = vec![ProcInstr::Cond {
                        guard: project_expr(guard, r)?,
                        then_branch: project_role(then_branch, r, sigs)?,
                        else_branch: project_role(else_branch, r, sigs)?,
                    }];
                    p.extend(cont()?.0);
                    Ok(ProcessBehavior(p))
                } else {
                    let mut involved = pn_chor(then_branch);
                    involved.extend(pn_chor(else_branch));
                    if involved.contains(r) {
                        let left = project_role(then_branch, r, sigs)?;
                        let right = project_role(else_branch, r, sigs)?;
                        let merged = merge(&left, &right).ok_or({
                            ProjectionError::UnmergeableBranches { role: r.clone(), line: k.line }
                        })?;
                        Ok(proc_concat_block(merged, cont()?))
                    } else {
                        cont()
                    }
                }
            }
            ChorAction::Call { proc, roles, args } => {
                match roles.iter().position(|p| p == r) {
                    Some(j) => {
                        let formals =
                            sigs.get(proc).ok_or_else(|| {
                                ProjectionError::UnknownProcedure(proc.clone())
                            })?;
                        let mut procs = roles.clone();
                        procs.remove(j);
                        let mut p = vec![ProcInstr::Call {
                            proc: mangle(proc, &formals[j]),
                            procs,
                            args: project_args(args, r),
                            key: k.clone(),
                        }];
                        p.extend(cont()?.0);
                        Ok(ProcessBehavior(p))
                    }
                    None => cont(),
                }
            }
            ChorAction::CallInProgress { pending, proc, roles, args, body } => {
                match roles.iter().position(|p| p == r) {
                    Some(j) if pending.contains(r) => {
                        let formals =
                            sigs.get(proc).ok_or_else(|| {
                                ProjectionError::UnknownProcedure(proc.clone())
                            })?;
                        let mut procs = roles.clone();
                        procs.remove(j);
                        let mut p = vec![ProcInstr::Call {
                            proc: mangle(proc, &formals[j]),
                            procs,
                            args: project_args(args, r),
                            key: k.clone(),
                        }];
                        p.extend(cont()?.0);
                        Ok(ProcessBehavior(p))
                    }
                    Some(_) => {
                        // Entered roles continue inside the body, then with
                        // the continuation.
                        let seq = chor_append(body.clone(), Choreography(rest.to_vec()));
                        project_role(&seq, r, sigs)
                    }
                    None => cont(),
                }
            }
        },
    }
}

/// Project a whole program: one declaration per (procedure, role) pair and
/// one process per participant of the main choreography.
pub fn project_program(
    program: &Program,
) -> Result<(ProcDecls, BTreeMap<ProcName, ProcessBehavior>), ProjectionError> {
    let sigs = decl_sigs(program);
    let mut pdecls = ProcDecls::new();
    for d in &program.decls {
        for (j, role) in d.roles.iter().enumerate() {
            let mut roles = d.roles.clone();
            roles.remove(j);
            let params: Vec<String> = d
                .params
                .iter()
                .filter(|p| p.proc == *role)
                .map(|p| p.name.clone())
                .collect();
            let body = project_role(&d.body, role, &sigs)?;
            let name = mangle(&d.name, role);
            pdecls.insert(name.clone(), ProcProcedureDecl { name, roles, params, body });
        }
    }
    let mut network = BTreeMap::new();
    for p in pn_chor(&program.main) {
        let body = project_role(&program.main, &p, &sigs)?;
        network.insert(p, body);
    }
    Ok((pdecls, network))
}

// ---------------------------------------------------------------------------
// Merge and the branching order
// ---------------------------------------------------------------------------

/// Merge two behaviors. Defined when they are structurally equal up to
/// branch instructions, whose options are unioned: options sharing a key
/// and label merge recursively, options unique to one side are kept, and a
/// label reappearing under a different key is a collision.
pub fn merge(p: &ProcessBehavior, q: &ProcessBehavior) -> Option<ProcessBehavior> {
    if p.0.len() != q.0.len() {
        return None;
    }
    let mut out = Vec::with_capacity(p.0.len());
    for (a, b) in p.0.iter().zip(q.0.iter()) {
        out.push(merge_instr(a, b)?);
    }
    Some(ProcessBehavior(out))
}

fn merge_instr(a: &ProcInstr, b: &ProcInstr) -> Option<ProcInstr> {
    match (a, b) {
        (ProcInstr::Branch { options: oa }, ProcInstr::Branch { options: ob }) => {
            let mut merged: Vec<BranchOption> = oa.clone();
            for o in ob {
                if let Some(existing) = merged
                    .iter_mut()
                    .find(|e| e.key == o.key && e.label == o.label)
                {
                    existing.body = merge(&existing.body, &o.body)?;
                } else {
                    if merged.iter().any(|e| e.label == o.label) {
                        // Same label under a different key.
                        return None;
                    }
                    merged.push(o.clone());
                }
            }
            merged.sort_by(|x, y| (x.key.line, &x.key.token).cmp(&(y.key.line, &y.key.token)));
            Some(ProcInstr::Branch { options: merged })
        }
        (
            ProcInstr::Cond { guard: g1, then_branch: t1, else_branch: e1 },
            ProcInstr::Cond { guard: g2, then_branch: t2, else_branch: e2 },
        ) if g1 == g2 => Some(ProcInstr::Cond {
            guard: g1.clone(),
            then_branch: merge(t1, t2)?,
            else_branch: merge(e1, e2)?,
        }),
        (ProcInstr::Block(p1), ProcInstr::Block(p2)) => Some(ProcInstr::Block(merge(p1, p2)?)),
        _ if a == b => Some(a.clone()),
        _ => None,
    }
}

/// The branching order `P ⊒ Q`: P offers at least the branches of Q.
/// Equivalent to `merge(P, Q) = P`. Callers normalize blocks first.
pub fn branch_geq(p: &ProcessBehavior, q: &ProcessBehavior) -> bool {
    match merge(p, q) {
        Some(m) => &m == p,
        None => false,
    }
}

/// Convenience: the branching order on block-flattened forms.
pub fn branch_geq_flat(p: &ProcessBehavior, q: &ProcessBehavior) -> bool {
    branch_geq(&flatten_proc(p), &flatten_proc(q))
}

/// The receive keys a process still owes to a choreography: keys of
/// communications-in-progress targeting `q` first, then keys of communications
/// targeting `q`, both in flattened order.
pub fn keys_q(c: &Choreography, q: &ProcName) -> Vec<(Line, TokenExpr)> {
    let flat = stats(c);
    let mut out = Vec::new();
    for i in &flat {
        if let ChorInstr::Keyed(k, ChorAction::CommInProgress { to, .. }) = i {
            if to == q {
                out.push((k.line, k.token.clone()));
            }
        }
    }
    for i in &flat {
        if let ChorInstr::Keyed(k, ChorAction::Comm { to, .. }) = i {
            if to == q {
                out.push((k.line, k.token.clone()));
            }
        }
    }
    out
}

/// Multiset inclusion of key sequences, used by the Lemma 1 style check:
/// every key owed by the choreography appears in the behavior.
pub fn keys_superset(sup: &ProcessBehavior, keys: &[(Line, TokenExpr)]) -> bool {
    let mut have: BTreeMap<(Line, TokenExpr), usize> = BTreeMap::new();
    for k in keys_proc(sup) {
        *have.entry(k).or_insert(0) += 1;
    }
    let mut need: BTreeMap<(Line, TokenExpr), usize> = BTreeMap::new();
    for k in keys {
        *need.entry(k.clone()).or_insert(0) += 1;
    }
    need.iter().all(|(k, n)| have.get(k).copied().unwrap_or(0) >= *n)
}

/// Sequential composition used when relating projections:
/// `⟦I; C⟧ = ⟦I; 0⟧ ⨟ ⟦C⟧` for instructions that are not selections at the
/// projected process.
pub fn proc_seq(p: ProcessBehavior, q: ProcessBehavior) -> ProcessBehavior {
    proc_append(p, q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::{KeyAnnot, Label, Value};

    fn pb(instrs: Vec<ProcInstr>) -> ProcessBehavior {
        ProcessBehavior(instrs)
    }

    fn opt(line: Line, label: &str, body: ProcessBehavior) -> BranchOption {
        BranchOption { key: KeyAnnot::placeholder(line), label: Label::new(label), body }
    }

    #[test]
    fn merge_unions_disjoint_branches() {
        let more = pb(vec![ProcInstr::Branch { options: vec![opt(4, "More", ProcessBehavior::nil())] }]);
        let done = pb(vec![ProcInstr::Branch { options: vec![opt(6, "Done", ProcessBehavior::nil())] }]);
        let merged = merge(&more, &done).unwrap();
        match &merged.0[0] {
            ProcInstr::Branch { options } => {
                assert_eq!(options.len(), 2);
                assert_eq!(options[0].label, Label::new("More"));
                assert_eq!(options[1].label, Label::new("Done"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn merge_is_idempotent() {
        let p = pb(vec![
            ProcInstr::Recv { var: "x".into(), key: KeyAnnot::placeholder(1) },
            ProcInstr::Branch { options: vec![opt(4, "More", ProcessBehavior::nil())] },
        ]);
        assert_eq!(merge(&p, &p), Some(p));
    }

    #[test]
    fn merge_of_send_and_recv_is_undefined() {
        let s = pb(vec![ProcInstr::Send {
            to: ProcName::new("q"),
            key: KeyAnnot::placeholder(1),
            expr: PExpr::val(Value::Int(1)),
        }]);
        let r = pb(vec![ProcInstr::Recv { var: "x".into(), key: KeyAnnot::placeholder(1) }]);
        assert_eq!(merge(&s, &r), None);
    }

    #[test]
    fn merge_rejects_label_under_two_keys() {
        let a = pb(vec![ProcInstr::Branch { options: vec![opt(4, "More", ProcessBehavior::nil())] }]);
        let b = pb(vec![ProcInstr::Branch { options: vec![opt(5, "More", ProcessBehavior::nil())] }]);
        assert_eq!(merge(&a, &b), None);
    }

    #[test]
    fn geq_is_reflexive() {
        let p = pb(vec![ProcInstr::Recv { var: "x".into(), key: KeyAnnot::placeholder(1) }]);
        assert!(branch_geq(&p, &p));
    }

    #[test]
    fn geq_absorbs_branch_subsets() {
        let both = pb(vec![ProcInstr::Branch {
            options: vec![opt(4, "A", ProcessBehavior::nil()), opt(6, "B", ProcessBehavior::nil())],
        }]);
        let one = pb(vec![ProcInstr::Branch { options: vec![opt(4, "A", ProcessBehavior::nil())] }]);
        let other = pb(vec![ProcInstr::Branch { options: vec![opt(6, "B", ProcessBehavior::nil())] }]);
        assert!(branch_geq(&both, &one));
        assert!(branch_geq(&both, &other));
        assert!(!branch_geq(&one, &other));
    }

    #[test]
    fn merge_commutes_up_to_option_order() {
        let a = pb(vec![ProcInstr::Branch {
            options: vec![opt(4, "A", ProcessBehavior::nil()), opt(6, "B", ProcessBehavior::nil())],
        }]);
        let b = pb(vec![ProcInstr::Branch { options: vec![opt(5, "C", ProcessBehavior::nil())] }]);
        assert_eq!(merge(&a, &b), merge(&b, &a));
    }
}
