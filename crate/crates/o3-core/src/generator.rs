//! Seeded random generation of well-formed, projectable, executable
//! programs, used by the round-trip, lemma, and metatheory property suites.
//!
//! All arithmetic is over integers so every generated expression evaluates,
//! and conditionals follow a knowledge-of-choice discipline (each branch
//! tells every other participant what was decided, with distinct labels),
//! so every generated program projects.

use crate::syntax::{
    Atom, ChorAction, ChorInstr, Choreography, Expr, KeyAnnot, Label, LocatedVar, ProcName,
    ProcedureDecl, Program, Value,
};
use crate::token::{Line, Token};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};

/// Size limits for generated programs.
#[derive(Debug, Clone)]
pub struct GenConfig {
    pub max_procs: usize,
    pub max_instrs: usize,
    pub max_decls: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { max_procs: 6, max_instrs: 12, max_decls: 2 }
    }
}

struct Gen {
    rng: ChaCha8Rng,
    next_line: Line,
    budget: usize,
}

impl Gen {
    fn line(&mut self, in_decl: bool) -> KeyAnnot {
        let l = self.next_line;
        self.next_line += 1;
        if in_decl {
            KeyAnnot::placeholder(l)
        } else {
            KeyAnnot::concrete(l, Token::initial())
        }
    }

    fn pick<'a, T>(&mut self, xs: &'a [T]) -> &'a T {
        &xs[self.rng.gen_range(0..xs.len())]
    }

    /// An integer expression over literals and the variables bound at `at`.
    fn int_expr(
        &mut self,
        at: &ProcName,
        bound: &BTreeMap<ProcName, Vec<String>>,
        depth: usize,
    ) -> Expr {
        let vars = bound.get(at).cloned().unwrap_or_default();
        if depth == 0 || self.rng.gen_bool(0.4) {
            return if !vars.is_empty() && self.rng.gen_bool(0.5) {
                Expr::var(at.0.clone(), self.pick(&vars).clone())
            } else {
                Expr::val(Value::Int(self.rng.gen_range(0..50)), at.0.clone())
            };
        }
        let op = *self.pick(&["+", "-", "*"]);
        let a = self.int_expr(at, bound, depth - 1);
        let b = self.int_expr(at, bound, depth - 1);
        Expr::Apply { func: op.into(), args: vec![a, b] }
    }

    fn guard_expr(&mut self, at: &ProcName, bound: &BTreeMap<ProcName, Vec<String>>) -> Expr {
        let op = *self.pick(&["<", ">", "=="]);
        let a = self.int_expr(at, bound, 1);
        let b = self.int_expr(at, bound, 1);
        Expr::Apply { func: op.into(), args: vec![a, b] }
    }

    /// A sequence of instructions over `procs`. `bound` tracks which
    /// variables are bound at each process so far at this nesting level;
    /// `callables` are the declarations this body may invoke.
    #[allow(clippy::too_many_arguments)]
    fn body(
        &mut self,
        procs: &[ProcName],
        bound: &mut BTreeMap<ProcName, Vec<String>>,
        callables: &[ProcedureDecl],
        var_pool: &[String],
        label_pool: &[&str],
        in_decl: bool,
        len: usize,
    ) -> Choreography {
        let mut items = Vec::new();
        for _ in 0..len {
            if self.budget == 0 {
                break;
            }
            match self.rng.gen_range(0..10) {
                0..=3 if procs.len() >= 2 => {
                    self.budget -= 1;
                    let from = self.pick(procs).clone();
                    let to = loop {
                        let t = self.pick(procs).clone();
                        if t != from {
                            break t;
                        }
                    };
                    let expr = self.int_expr(&from, bound, 2);
                    let var = self.pick(var_pool).clone();
                    let key = self.line(in_decl);
                    bound.entry(to.clone()).or_default().push(var.clone());
                    items.push(ChorInstr::Keyed(key, ChorAction::Comm { from, expr, to, var }));
                }
                4..=5 => {
                    self.budget -= 1;
                    let at = self.pick(procs).clone();
                    let expr = self.int_expr(&at, bound, 2);
                    let var = self.pick(var_pool).clone();
                    let key = self.line(in_decl);
                    bound.entry(at.clone()).or_default().push(var.clone());
                    items.push(ChorInstr::Keyed(key, ChorAction::Compute { var, at, expr }));
                }
                6 if procs.len() >= 2 => {
                    self.budget -= 1;
                    let from = self.pick(procs).clone();
                    let to = loop {
                        let t = self.pick(procs).clone();
                        if t != from {
                            break t;
                        }
                    };
                    let label = Label::new(*self.pick(label_pool));
                    let key = self.line(in_decl);
                    items.push(ChorInstr::Keyed(key, ChorAction::Select { from, to, label }));
                }
                7 if self.budget >= 3 => {
                    self.budget -= 1;
                    let at = self.pick(procs).clone();
                    let guard = self.guard_expr(&at, bound);
                    let key = self.line(in_decl);
                    let others: Vec<ProcName> = {
                        let mut v = Vec::new();
                        for p in procs.iter().filter(|p| **p != at) {
                            if self.rng.gen_bool(0.6) {
                                v.push(p.clone());
                            }
                        }
                        v
                    };
                    let then_branch =
                        self.cond_branch(&at, &others, bound, var_pool, in_decl, &["Ta", "Tb", "Tc", "Td", "Te", "Tf"]);
                    let else_branch =
                        self.cond_branch(&at, &others, bound, var_pool, in_decl, &["Ea", "Eb", "Ec", "Ed", "Ee", "Ef"]);
                    items.push(ChorInstr::Keyed(
                        key,
                        ChorAction::Cond { at, guard, then_branch, else_branch },
                    ));
                }
                8 if self.budget >= 2 => {
                    let inner_len = self.rng.gen_range(1..=2);
                    let mut inner_bound = bound.clone();
                    let inner = self.body(
                        procs,
                        &mut inner_bound,
                        callables,
                        var_pool,
                        label_pool,
                        in_decl,
                        inner_len,
                    );
                    if !inner.is_nil() {
                        items.push(ChorInstr::Block(inner));
                    }
                }
                _ if !callables.is_empty() && procs.len() >= 2 => {
                    let decl = self.pick(callables).clone();
                    if decl.roles.len() > procs.len() {
                        continue;
                    }
                    self.budget -= 1;
                    let mut actual: Vec<ProcName> = procs.to_vec();
                    actual.shuffle(&mut self.rng);
                    actual.truncate(decl.roles.len());
                    let mut args = Vec::new();
                    for param in &decl.params {
                        let j = decl.roles.iter().position(|r| *r == param.proc).unwrap();
                        let at = actual[j].clone();
                        let vars = bound.get(&at).cloned().unwrap_or_default();
                        if !vars.is_empty() && self.rng.gen_bool(0.5) {
                            let v = self.pick(&vars).clone();
                            args.push(Atom::Var(LocatedVar { proc: at, name: v }));
                        } else {
                            args.push(Atom::Val {
                                value: Value::Int(self.rng.gen_range(0..50)),
                                at,
                            });
                        }
                    }
                    let key = self.line(in_decl);
                    items.push(ChorInstr::Keyed(
                        key,
                        ChorAction::Call { proc: decl.name.clone(), roles: actual, args },
                    ));
                }
                _ => {}
            }
        }
        Choreography(items)
    }

    /// One conditional branch: optional local computation at the guard
    /// process, then one selection to every other involved participant.
    fn cond_branch(
        &mut self,
        at: &ProcName,
        others: &[ProcName],
        bound: &BTreeMap<ProcName, Vec<String>>,
        var_pool: &[String],
        in_decl: bool,
        labels: &[&str],
    ) -> Choreography {
        let mut instrs = Vec::new();
        if self.rng.gen_bool(0.5) {
            self.budget = self.budget.saturating_sub(1);
            let expr = self.int_expr(at, bound, 1);
            let var = self.pick(var_pool).clone();
            let k = self.line(in_decl);
            instrs.push(ChorInstr::Keyed(k, ChorAction::Compute { var, at: at.clone(), expr }));
        }
        for (i, r) in others.iter().enumerate() {
            self.budget = self.budget.saturating_sub(1);
            let k = self.line(in_decl);
            instrs.push(ChorInstr::Keyed(
                k,
                ChorAction::Select {
                    from: at.clone(),
                    to: r.clone(),
                    label: Label::new(labels[i % labels.len()]),
                },
            ));
        }
        Choreography(instrs)
    }
}

/// Generate one program from a seed. The same seed always gives the same
/// program.
pub fn generate_program(seed: u64, cfg: &GenConfig) -> Program {
    let mut g = Gen { rng: ChaCha8Rng::seed_from_u64(seed), next_line: 1, budget: cfg.max_instrs };

    let n_procs = g.rng.gen_range(2..=cfg.max_procs.max(2));
    let procs: Vec<ProcName> = (1..=n_procs).map(|i| ProcName::new(format!("p{i}"))).collect();

    let n_decls = g.rng.gen_range(0..=cfg.max_decls);
    let mut decls: Vec<ProcedureDecl> = Vec::new();
    for d in 0..n_decls {
        let n_roles = g.rng.gen_range(2..=3.min(n_procs));
        let roles: Vec<ProcName> = (1..=n_roles).map(|i| ProcName::new(format!("r{i}"))).collect();
        let n_params = g.rng.gen_range(0..=2);
        // Every declaration gets its own binder namespace so variable
        // arguments never collide with callee binders.
        let params: Vec<LocatedVar> = (0..n_params)
            .map(|i| LocatedVar {
                proc: roles[g.rng.gen_range(0..roles.len())].clone(),
                name: format!("q{d}_{i}"),
            })
            .collect();
        let var_pool: Vec<String> = (1..=3).map(|i| format!("x{d}_{i}")).collect();
        let mut bound: BTreeMap<ProcName, Vec<String>> = BTreeMap::new();
        for p in &params {
            bound.entry(p.proc.clone()).or_default().push(p.name.clone());
        }
        // Stratified: a declaration may only call earlier ones, which keeps
        // the static call depth within the declaration count.
        let body_len = g.rng.gen_range(1..=4);
        let callables = decls.clone();
        let body =
            g.body(&roles, &mut bound, &callables, &var_pool, &["La", "Lb"], true, body_len);
        let body = if body.is_nil() {
            let key = g.line(true);
            Choreography(vec![ChorInstr::Keyed(
                key,
                ChorAction::Compute {
                    var: var_pool[0].clone(),
                    at: roles[0].clone(),
                    expr: Expr::val(Value::Int(1), roles[0].0.clone()),
                },
            )])
        } else {
            body
        };
        decls.push(ProcedureDecl { name: format!("Gen{d}"), roles, params, body });
    }

    let var_pool: Vec<String> = (1..=4).map(|i| format!("m{i}")).collect();
    let mut bound = BTreeMap::new();
    let main_len = g.rng.gen_range(1..=6);
    let callables = decls.clone();
    let main = g.body(&procs, &mut bound, &callables, &var_pool, &["Ma", "Mb"], false, main_len);

    let mut labels = BTreeSet::new();
    collect_labels(&main, &mut labels);
    for d in &decls {
        collect_labels(&d.body, &mut labels);
    }
    Program { decls, main, labels }
}

fn collect_labels(c: &Choreography, out: &mut BTreeSet<Label>) {
    for i in &c.0 {
        match i {
            ChorInstr::Block(b) => collect_labels(b, out),
            ChorInstr::Keyed(_, a) => match a {
                ChorAction::Select { label, .. } | ChorAction::SelectInProgress { label, .. } => {
                    out.insert(label.clone());
                }
                ChorAction::Cond { then_branch, else_branch, .. } => {
                    collect_labels(then_branch, out);
                    collect_labels(else_branch, out);
                }
                ChorAction::CallInProgress { body, .. } => collect_labels(body, out),
                _ => {}
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::epp::project_program;
    use crate::parser::parse_program;
    use crate::render::render_program;
    use crate::wf::check_program;

    #[test]
    fn generated_programs_are_well_formed_projectable_and_round_trip() {
        let cfg = GenConfig::default();
        for seed in 0..300 {
            let program = generate_program(seed, &cfg);
            let report = check_program(&program);
            assert!(report.verdict(), "seed {seed}: {:?}", report.violations);
            project_program(&program).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
            let text = render_program(&program);
            let again =
                parse_program(&text).unwrap_or_else(|e| panic!("seed {seed}: {e}\n{text}"));
            assert_eq!(program, again, "seed {seed} round-trip\n{text}");
        }
    }

    #[test]
    fn same_seed_same_program() {
        let cfg = GenConfig::default();
        assert_eq!(generate_program(42, &cfg), generate_program(42, &cfg));
    }
}
