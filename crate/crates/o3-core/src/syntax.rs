//! Abstract syntax for choreographies and processes, plus the syntactic
//! functions the metatheory depends on: process names, free variables,
//! instruction flattening, key extraction, substitution, and procedure
//! instantiation.
//!
//! Every node is immutable after construction; operations return fresh
//! values, so configurations can be shared freely across explorations.

use crate::token::{IntegrityKey, Line, Token};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

/// A process name (`seller`, `p1`, ...).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ProcName(pub String);

impl ProcName {
    pub fn new(s: impl Into<String>) -> Self {
        ProcName(s.into())
    }
}

impl fmt::Display for ProcName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A selection label (`More`, `Done`, ...). Always an uppercase identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Label(pub String);

impl Label {
    pub fn new(s: impl Into<String>) -> Self {
        Label(s.into())
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A variable located at a process, `p.x`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LocatedVar {
    pub proc: ProcName,
    pub name: String,
}

impl LocatedVar {
    pub fn new(proc: impl Into<String>, name: impl Into<String>) -> Self {
        LocatedVar { proc: ProcName::new(proc), name: name.into() }
    }
}

impl fmt::Display for LocatedVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.proc, self.name)
    }
}

/// Runtime values. Labels are values only as message payloads of selections.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Value {
    Int(i64),
    Bool(bool),
    Str(String),
    Unit,
    Null,
    Label(Label),
}

impl Value {
    /// Plain rendering used for store keys and log entries.
    pub fn render_plain(&self) -> String {
        match self {
            Value::Int(n) => n.to_string(),
            Value::Bool(b) => b.to_string(),
            Value::Str(s) => s.clone(),
            Value::Unit => "unit".into(),
            Value::Null => "null".into(),
            Value::Label(l) => l.0.clone(),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Str(s) => write!(f, "{s:?}"),
            v => f.write_str(&v.render_plain()),
        }
    }
}

/// An atom: a located value `v@p` or a located variable `p.x`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Atom {
    Val { value: Value, at: ProcName },
    Var(LocatedVar),
}

impl Atom {
    pub fn location(&self) -> &ProcName {
        match self {
            Atom::Val { at, .. } => at,
            Atom::Var(lv) => &lv.proc,
        }
    }
}

/// A choreography-level expression. Applications name builtins only.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Expr {
    Atom(Atom),
    Apply { func: String, args: Vec<Expr> },
}

impl Expr {
    pub fn val(v: Value, at: impl Into<String>) -> Self {
        Expr::Atom(Atom::Val { value: v, at: ProcName::new(at) })
    }

    pub fn var(p: impl Into<String>, x: impl Into<String>) -> Self {
        Expr::Atom(Atom::Var(LocatedVar::new(p, x)))
    }

    /// True iff the expression contains no variable atoms.
    pub fn is_closed(&self) -> bool {
        match self {
            Expr::Atom(Atom::Var(_)) => false,
            Expr::Atom(Atom::Val { .. }) => true,
            Expr::Apply { args, .. } => args.iter().all(Expr::is_closed),
        }
    }
}

/// A token annotation: a placeholder inside procedure declarations, concrete
/// everywhere else. Keeping the placeholder a distinct variant means the
/// semantics cannot accidentally run on an uninstantiated body.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TokenExpr {
    Placeholder,
    Concrete(Token),
}

impl TokenExpr {
    pub fn concrete(&self) -> Option<&Token> {
        match self {
            TokenExpr::Placeholder => None,
            TokenExpr::Concrete(t) => Some(t),
        }
    }
}

impl fmt::Display for TokenExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenExpr::Placeholder => f.write_str("t"),
            TokenExpr::Concrete(t) => write!(f, "{t}"),
        }
    }
}

/// The integrity-key annotation carried by every instruction.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct KeyAnnot {
    pub line: Line,
    pub token: TokenExpr,
}

impl KeyAnnot {
    pub fn placeholder(line: Line) -> Self {
        KeyAnnot { line, token: TokenExpr::Placeholder }
    }

    pub fn concrete(line: Line, token: Token) -> Self {
        KeyAnnot { line, token: TokenExpr::Concrete(token) }
    }

    pub fn integrity_key(&self) -> Option<IntegrityKey> {
        self.token.concrete().map(|t| IntegrityKey::new(self.line, t.clone()))
    }
}

impl fmt::Display for KeyAnnot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.line, self.token)
    }
}

/// The payload of a keyed choreography instruction. The `InProgress`
/// variants only appear at runtime.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ChorAction {
    /// `p.e -> q.x`
    Comm { from: ProcName, expr: Expr, to: ProcName, var: String },
    /// `p ~> q.x`: sent but not yet received.
    CommInProgress { from: ProcName, to: ProcName, var: String },
    /// `p -> q [L]`
    Select { from: ProcName, to: ProcName, label: Label },
    /// `p ~> q [L]`
    SelectInProgress { from: ProcName, to: ProcName, label: Label },
    /// `p.x = e`
    Compute { var: String, at: ProcName, expr: Expr },
    /// `if p.e { C1 } else { C2 }`
    Cond { at: ProcName, guard: Expr, then_branch: Choreography, else_branch: Choreography },
    /// `X(p1..pn; a1..am)`
    Call { proc: String, roles: Vec<ProcName>, args: Vec<Atom> },
    /// A call some roles have entered; `pending` still have to.
    CallInProgress {
        pending: Vec<ProcName>,
        proc: String,
        roles: Vec<ProcName>,
        args: Vec<Atom>,
        body: Choreography,
    },
}

/// One choreography instruction: keyed action or scope block.
/// Blocks carry no integrity key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ChorInstr {
    Keyed(KeyAnnot, ChorAction),
    Block(Choreography),
}

impl ChorInstr {
    pub fn key(&self) -> Option<&KeyAnnot> {
        match self {
            ChorInstr::Keyed(k, _) => Some(k),
            ChorInstr::Block(_) => None,
        }
    }
}

/// A choreography: an instruction sequence (the end marker is implicit).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
pub struct Choreography(pub Vec<ChorInstr>);

impl Choreography {
    pub fn nil() -> Self {
        Choreography(Vec::new())
    }

    pub fn is_nil(&self) -> bool {
        self.0.is_empty()
    }
}

/// A choreographic procedure declaration `X(roles; params) = body`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcedureDecl {
    pub name: String,
    pub roles: Vec<ProcName>,
    pub params: Vec<LocatedVar>,
    pub body: Choreography,
}

/// A parsed program: declarations, main choreography, label universe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub decls: Vec<ProcedureDecl>,
    pub main: Choreography,
    pub labels: BTreeSet<Label>,
}

impl Program {
    pub fn decl(&self, name: &str) -> Option<&ProcedureDecl> {
        self.decls.iter().find(|d| d.name == name)
    }
}

// ---------------------------------------------------------------------------
// Process-level syntax
// ---------------------------------------------------------------------------

/// Process-level atom: a bare variable or a value. Locations are erased by
/// projection.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PAtom {
    Val(Value),
    Var(String),
}

/// Process-level expression.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PExpr {
    Atom(PAtom),
    Apply { func: String, args: Vec<PExpr> },
}

impl PExpr {
    pub fn val(v: Value) -> Self {
        PExpr::Atom(PAtom::Val(v))
    }

    pub fn var(x: impl Into<String>) -> Self {
        PExpr::Atom(PAtom::Var(x.into()))
    }

    pub fn is_closed(&self) -> bool {
        match self {
            PExpr::Atom(PAtom::Var(_)) => false,
            PExpr::Atom(PAtom::Val(_)) => true,
            PExpr::Apply { args, .. } => args.iter().all(PExpr::is_closed),
        }
    }

    /// True iff some application in the expression names `func`.
    pub fn mentions_builtin(&self, func: &str) -> bool {
        match self {
            PExpr::Atom(_) => false,
            PExpr::Apply { func: f, args } => {
                f == func || args.iter().any(|a| a.mentions_builtin(func))
            }
        }
    }
}

/// One option of a branch instruction.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BranchOption {
    pub key: KeyAnnot,
    pub label: Label,
    pub body: ProcessBehavior,
}

/// A process instruction.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ProcInstr {
    /// `send q e @(l,t)`
    Send { to: ProcName, key: KeyAnnot, expr: PExpr },
    /// `recv x @(l,t)` — no sender: the key determines the binding.
    Recv { var: String, key: KeyAnnot },
    /// `x = e`
    Set { var: String, expr: PExpr },
    /// `choose q [L] @(l,t)`
    Choose { to: ProcName, key: KeyAnnot, label: Label },
    /// `branch { (l,t,L) => { P } ... }`
    Branch { options: Vec<BranchOption> },
    /// `if e { P } else { Q }`
    Cond { guard: PExpr, then_branch: ProcessBehavior, else_branch: ProcessBehavior },
    /// `X__r(p1..; a1..) @(l,t)`
    Call { proc: String, procs: Vec<ProcName>, args: Vec<PAtom>, key: KeyAnnot },
    /// `{ P }`
    Block(ProcessBehavior),
}

/// A process behavior: an instruction sequence (end marker implicit).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
pub struct ProcessBehavior(pub Vec<ProcInstr>);

impl ProcessBehavior {
    pub fn nil() -> Self {
        ProcessBehavior(Vec::new())
    }

    pub fn is_nil(&self) -> bool {
        self.0.is_empty()
    }
}

/// A projected procedure declaration for one role of a choreographic
/// procedure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcProcedureDecl {
    pub name: String,
    pub roles: Vec<ProcName>,
    pub params: Vec<String>,
    pub body: ProcessBehavior,
}

/// Projected declarations, keyed by mangled name.
pub type ProcDecls = BTreeMap<String, ProcProcedureDecl>;

/// A network: named processes running in parallel.
pub type Network = BTreeMap<ProcName, ProcessBehavior>;

// ---------------------------------------------------------------------------
// pn: process names
// ---------------------------------------------------------------------------

pub fn pn_atom(a: &Atom) -> BTreeSet<ProcName> {
    let mut s = BTreeSet::new();
    s.insert(a.location().clone());
    s
}

pub fn pn_expr(e: &Expr) -> BTreeSet<ProcName> {
    match e {
        Expr::Atom(a) => pn_atom(a),
        Expr::Apply { args, .. } => args.iter().flat_map(pn_expr).collect(),
    }
}

pub fn pn_instr(i: &ChorInstr) -> BTreeSet<ProcName> {
    match i {
        ChorInstr::Block(c) => pn_chor(c),
        ChorInstr::Keyed(_, a) => match a {
            ChorAction::Comm { from, to, .. } | ChorAction::Select { from, to, .. } => {
                [from.clone(), to.clone()].into_iter().collect()
            }
            ChorAction::CommInProgress { to, .. } | ChorAction::SelectInProgress { to, .. } => {
                [to.clone()].into_iter().collect()
            }
            ChorAction::Compute { at, .. } => [at.clone()].into_iter().collect(),
            ChorAction::Cond { at, then_branch, else_branch, .. } => {
                let mut s = pn_chor(then_branch);
                s.extend(pn_chor(else_branch));
                s.insert(at.clone());
                s
            }
            ChorAction::Call { roles, .. } | ChorAction::CallInProgress { roles, .. } => {
                roles.iter().cloned().collect()
            }
        },
    }
}

pub fn pn_chor(c: &Choreography) -> BTreeSet<ProcName> {
    c.0.iter().flat_map(pn_instr).collect()
}

// ---------------------------------------------------------------------------
// fv: free located variables
// ---------------------------------------------------------------------------

pub fn fv_expr(e: &Expr) -> BTreeSet<LocatedVar> {
    match e {
        Expr::Atom(Atom::Var(lv)) => [lv.clone()].into_iter().collect(),
        Expr::Atom(Atom::Val { .. }) => BTreeSet::new(),
        Expr::Apply { args, .. } => args.iter().flat_map(fv_expr).collect(),
    }
}

fn fv_args(args: &[Atom]) -> BTreeSet<LocatedVar> {
    args.iter()
        .filter_map(|a| match a {
            Atom::Var(lv) => Some(lv.clone()),
            Atom::Val { .. } => None,
        })
        .collect()
}

/// Free located variables of a choreography. Binders are a communication's
/// receive variable (also in its in-progress form), a computation's target,
/// and procedure parameters; block- and branch-local binders do not escape.
pub fn fv_chor(c: &Choreography) -> BTreeSet<LocatedVar> {
    fv_seq(&c.0)
}

fn fv_seq(seq: &[ChorInstr]) -> BTreeSet<LocatedVar> {
    let Some((head, rest)) = seq.split_first() else {
        return BTreeSet::new();
    };
    match head {
        ChorInstr::Block(c) => {
            let mut s = fv_seq(&c.0);
            s.extend(fv_seq(rest));
            s
        }
        ChorInstr::Keyed(_, a) => match a {
            ChorAction::Comm { expr, to, var, .. } => {
                let mut s = fv_seq(rest);
                s.remove(&LocatedVar { proc: to.clone(), name: var.clone() });
                s.extend(fv_expr(expr));
                s
            }
            ChorAction::CommInProgress { to, var, .. } => {
                let mut s = fv_seq(rest);
                s.remove(&LocatedVar { proc: to.clone(), name: var.clone() });
                s
            }
            ChorAction::Compute { var, at, expr } => {
                let mut s = fv_seq(rest);
                s.remove(&LocatedVar { proc: at.clone(), name: var.clone() });
                s.extend(fv_expr(expr));
                s
            }
            ChorAction::Cond { guard, then_branch, else_branch, .. } => {
                let mut s = fv_expr(guard);
                s.extend(fv_seq(&then_branch.0));
                s.extend(fv_seq(&else_branch.0));
                s.extend(fv_seq(rest));
                s
            }
            ChorAction::Call { args, .. } => {
                let mut s = fv_args(args);
                s.extend(fv_seq(rest));
                s
            }
            ChorAction::CallInProgress { args, body, .. } => {
                let mut s = fv_args(args);
                s.extend(fv_seq(&body.0));
                s.extend(fv_seq(rest));
                s
            }
            ChorAction::Select { .. } | ChorAction::SelectInProgress { .. } => fv_seq(rest),
        },
    }
}

// ---------------------------------------------------------------------------
// stats and keys
// ---------------------------------------------------------------------------

/// The flattened instruction sequence: recurses into blocks, both branches
/// of conditionals, and the bodies of calls in progress. Blocks themselves
/// contribute nothing.
pub fn stats(c: &Choreography) -> Vec<&ChorInstr> {
    let mut out = Vec::new();
    stats_into(c, &mut out);
    out
}

fn stats_into<'a>(c: &'a Choreography, out: &mut Vec<&'a ChorInstr>) {
    for i in &c.0 {
        match i {
            ChorInstr::Block(b) => stats_into(b, out),
            ChorInstr::Keyed(_, a) => {
                out.push(i);
                match a {
                    ChorAction::Cond { then_branch, else_branch, .. } => {
                        stats_into(then_branch, out);
                        stats_into(else_branch, out);
                    }
                    ChorAction::CallInProgress { body, .. } => stats_into(body, out),
                    _ => {}
                }
            }
        }
    }
}

/// Keys of all keyed instructions, in `stats` order.
pub fn keys_chor(c: &Choreography) -> Vec<(Line, TokenExpr)> {
    stats(c)
        .iter()
        .filter_map(|i| i.key().map(|k| (k.line, k.token.clone())))
        .collect()
}

/// Keys of a process behavior. Assignments contribute nothing; a branch
/// contributes each option key and then the keys of each option body.
pub fn keys_proc(p: &ProcessBehavior) -> Vec<(Line, TokenExpr)> {
    let mut out = Vec::new();
    keys_proc_into(p, &mut out);
    out
}

fn keys_proc_into(p: &ProcessBehavior, out: &mut Vec<(Line, TokenExpr)>) {
    for i in &p.0 {
        match i {
            ProcInstr::Send { key, .. }
            | ProcInstr::Recv { key, .. }
            | ProcInstr::Choose { key, .. }
            | ProcInstr::Call { key, .. } => out.push((key.line, key.token.clone())),
            ProcInstr::Set { .. } => {}
            ProcInstr::Branch { options } => {
                for o in options {
                    out.push((o.key.line, o.key.token.clone()));
                }
                for o in options {
                    keys_proc_into(&o.body, out);
                }
            }
            ProcInstr::Cond { then_branch, else_branch, .. } => {
                keys_proc_into(then_branch, out);
                keys_proc_into(else_branch, out);
            }
            ProcInstr::Block(b) => keys_proc_into(b, out),
        }
    }
}

// ---------------------------------------------------------------------------
// Sequencing, blocks, normal forms
// ---------------------------------------------------------------------------

/// Block concatenation: `{0} ⨟ C = C`, otherwise `{B} ⨟ C = {B}; C`.
/// Bodies that are only nested empty blocks count as `0`.
pub fn concat_block(body: Choreography, cont: Choreography) -> Choreography {
    if is_terminal(&body) {
        cont
    } else {
        let mut v = Vec::with_capacity(cont.0.len() + 1);
        v.push(ChorInstr::Block(body));
        v.extend(cont.0);
        Choreography(v)
    }
}

/// Sequential composition of two choreographies.
pub fn chor_append(mut a: Choreography, b: Choreography) -> Choreography {
    a.0.extend(b.0);
    a
}

/// Process-level block concatenation, mirroring `concat_block`.
pub fn proc_concat_block(body: ProcessBehavior, cont: ProcessBehavior) -> ProcessBehavior {
    if is_terminal_proc(&body) {
        cont
    } else {
        let mut v = Vec::with_capacity(cont.0.len() + 1);
        v.push(ProcInstr::Block(body));
        v.extend(cont.0);
        ProcessBehavior(v)
    }
}

/// Sequential composition of two process behaviors.
pub fn proc_append(mut a: ProcessBehavior, b: ProcessBehavior) -> ProcessBehavior {
    a.0.extend(b.0);
    a
}

/// A choreography is terminal when it contains nothing but (possibly
/// nested) empty blocks.
pub fn is_terminal(c: &Choreography) -> bool {
    c.0.iter().all(|i| matches!(i, ChorInstr::Block(b) if is_terminal(b)))
}

pub fn is_terminal_proc(p: &ProcessBehavior) -> bool {
    p.0.iter().all(|i| matches!(i, ProcInstr::Block(b) if is_terminal_proc(b)))
}

/// Garbage-collect empty blocks, keeping all other structure. Used for
/// canonical state hashing.
pub fn gc_chor(c: &Choreography) -> Choreography {
    let mut out = Vec::new();
    for i in &c.0 {
        match i {
            ChorInstr::Block(b) => {
                let b = gc_chor(b);
                if !b.is_nil() {
                    out.push(ChorInstr::Block(b));
                }
            }
            ChorInstr::Keyed(k, a) => {
                let a = match a {
                    ChorAction::Cond { at, guard, then_branch, else_branch } => ChorAction::Cond {
                        at: at.clone(),
                        guard: guard.clone(),
                        then_branch: gc_chor(then_branch),
                        else_branch: gc_chor(else_branch),
                    },
                    ChorAction::CallInProgress { pending, proc, roles, args, body } => {
                        ChorAction::CallInProgress {
                            pending: pending.clone(),
                            proc: proc.clone(),
                            roles: roles.clone(),
                            args: args.clone(),
                            body: gc_chor(body),
                        }
                    }
                    other => other.clone(),
                };
                out.push(ChorInstr::Keyed(k.clone(), a));
            }
        }
    }
    Choreography(out)
}

pub fn gc_proc(p: &ProcessBehavior) -> ProcessBehavior {
    let mut out = Vec::new();
    for i in &p.0 {
        match i {
            ProcInstr::Block(b) => {
                let b = gc_proc(b);
                if !b.is_nil() {
                    out.push(ProcInstr::Block(b));
                }
            }
            ProcInstr::Branch { options } => out.push(ProcInstr::Branch {
                options: options
                    .iter()
                    .map(|o| BranchOption {
                        key: o.key.clone(),
                        label: o.label.clone(),
                        body: gc_proc(&o.body),
                    })
                    .collect(),
            }),
            ProcInstr::Cond { guard, then_branch, else_branch } => out.push(ProcInstr::Cond {
                guard: guard.clone(),
                then_branch: gc_proc(then_branch),
                else_branch: gc_proc(else_branch),
            }),
            other => out.push(other.clone()),
        }
    }
    ProcessBehavior(out)
}

/// Splice all block structure away, recursively. Blocks only delimit
/// variable scope, so behaviors that differ by block placement are compared
/// on this form (projection comparisons, branching order, golden fixtures).
pub fn flatten_proc(p: &ProcessBehavior) -> ProcessBehavior {
    let mut out = Vec::new();
    flatten_proc_into(p, &mut out);
    ProcessBehavior(out)
}

fn flatten_proc_into(p: &ProcessBehavior, out: &mut Vec<ProcInstr>) {
    for i in &p.0 {
        match i {
            ProcInstr::Block(b) => flatten_proc_into(b, out),
            ProcInstr::Branch { options } => out.push(ProcInstr::Branch {
                options: options
                    .iter()
                    .map(|o| BranchOption {
                        key: o.key.clone(),
                        label: o.label.clone(),
                        body: flatten_proc(&o.body),
                    })
                    .collect(),
            }),
            ProcInstr::Cond { guard, then_branch, else_branch } => out.push(ProcInstr::Cond {
                guard: guard.clone(),
                then_branch: flatten_proc(then_branch),
                else_branch: flatten_proc(else_branch),
            }),
            other => out.push(other.clone()),
        }
    }
}

/// Chor-level analogue of [`flatten_proc`].
pub fn flatten_chor(c: &Choreography) -> Choreography {
    let mut out = Vec::new();
    flatten_chor_into(c, &mut out);
    Choreography(out)
}

fn flatten_chor_into(c: &Choreography, out: &mut Vec<ChorInstr>) {
    for i in &c.0 {
        match i {
            ChorInstr::Block(b) => flatten_chor_into(b, out),
            ChorInstr::Keyed(k, a) => {
                let a = match a {
                    ChorAction::Cond { at, guard, then_branch, else_branch } => ChorAction::Cond {
                        at: at.clone(),
                        guard: guard.clone(),
                        then_branch: flatten_chor(then_branch),
                        else_branch: flatten_chor(else_branch),
                    },
                    ChorAction::CallInProgress { pending, proc, roles, args, body } => {
                        ChorAction::CallInProgress {
                            pending: pending.clone(),
                            proc: proc.clone(),
                            roles: roles.clone(),
                            args: args.clone(),
                            body: flatten_chor(body),
                        }
                    }
                    other => other.clone(),
                };
                out.push(ChorInstr::Keyed(k.clone(), a));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Substitution
// ---------------------------------------------------------------------------

fn subst_expr(e: &Expr, map: &BTreeMap<LocatedVar, Atom>) -> Expr {
    match e {
        Expr::Atom(Atom::Var(lv)) => match map.get(lv) {
            Some(a) => Expr::Atom(a.clone()),
            None => e.clone(),
        },
        Expr::Atom(Atom::Val { .. }) => e.clone(),
        Expr::Apply { func, args } => Expr::Apply {
            func: func.clone(),
            args: args.iter().map(|a| subst_expr(a, map)).collect(),
        },
    }
}

fn subst_args(args: &[Atom], map: &BTreeMap<LocatedVar, Atom>) -> Vec<Atom> {
    args.iter()
        .map(|a| match a {
            Atom::Var(lv) => map.get(lv).cloned().unwrap_or_else(|| a.clone()),
            Atom::Val { .. } => a.clone(),
        })
        .collect()
}

/// Simultaneous substitution of atoms for located variables. Substitution
/// stops at instructions that rebind the same located variable; block and
/// branch binders are local and never shadow the enclosing continuation.
pub fn substitute_many(c: &Choreography, map: &BTreeMap<LocatedVar, Atom>) -> Choreography {
    Choreography(subst_seq(&c.0, map))
}

fn subst_seq(seq: &[ChorInstr], map: &BTreeMap<LocatedVar, Atom>) -> Vec<ChorInstr> {
    if map.is_empty() {
        return seq.to_vec();
    }
    let Some((head, rest)) = seq.split_first() else {
        return Vec::new();
    };
    let without = |binder: LocatedVar| -> BTreeMap<LocatedVar, Atom> {
        let mut m = map.clone();
        m.remove(&binder);
        m
    };
    let (head1, rest_map): (ChorInstr, BTreeMap<LocatedVar, Atom>) = match head {
        ChorInstr::Block(b) => (ChorInstr::Block(substitute_many(b, map)), map.clone()),
        ChorInstr::Keyed(k, a) => match a {
            ChorAction::Comm { from, expr, to, var } => (
                ChorInstr::Keyed(
                    k.clone(),
                    ChorAction::Comm {
                        from: from.clone(),
                        expr: subst_expr(expr, map),
                        to: to.clone(),
                        var: var.clone(),
                    },
                ),
                without(LocatedVar { proc: to.clone(), name: var.clone() }),
            ),
            ChorAction::CommInProgress { to, var, .. } => (
                head.clone(),
                without(LocatedVar { proc: to.clone(), name: var.clone() }),
            ),
            ChorAction::Compute { var, at, expr } => (
                ChorInstr::Keyed(
                    k.clone(),
                    ChorAction::Compute {
                        var: var.clone(),
                        at: at.clone(),
                        expr: subst_expr(expr, map),
                    },
                ),
                without(LocatedVar { proc: at.clone(), name: var.clone() }),
            ),
            ChorAction::Cond { at, guard, then_branch, else_branch } => (
                ChorInstr::Keyed(
                    k.clone(),
                    ChorAction::Cond {
                        at: at.clone(),
                        guard: subst_expr(guard, map),
                        then_branch: substitute_many(then_branch, map),
                        else_branch: substitute_many(else_branch, map),
                    },
                ),
                map.clone(),
            ),
            ChorAction::Call { proc, roles, args } => (
                ChorInstr::Keyed(
                    k.clone(),
                    ChorAction::Call {
                        proc: proc.clone(),
                        roles: roles.clone(),
                        args: subst_args(args, map),
                    },
                ),
                map.clone(),
            ),
            ChorAction::CallInProgress { pending, proc, roles, args, body } => (
                ChorInstr::Keyed(
                    k.clone(),
                    ChorAction::CallInProgress {
                        pending: pending.clone(),
                        proc: proc.clone(),
                        roles: roles.clone(),
                        args: subst_args(args, map),
                        body: substitute_many(body, map),
                    },
                ),
                map.clone(),
            ),
            ChorAction::Select { .. } | ChorAction::SelectInProgress { .. } => {
                (head.clone(), map.clone())
            }
        },
    };
    let mut out = vec![head1];
    out.extend(subst_seq(rest, &rest_map));
    out
}

/// Replace one located variable by a located value, `C[p.x -> v@p]`.
pub fn substitute(c: &Choreography, var: &LocatedVar, v: &Value) -> Choreography {
    let mut map = BTreeMap::new();
    map.insert(var.clone(), Atom::Val { value: v.clone(), at: var.proc.clone() });
    substitute_many(c, &map)
}

fn subst_pexpr(e: &PExpr, map: &BTreeMap<String, PAtom>) -> PExpr {
    match e {
        PExpr::Atom(PAtom::Var(x)) => match map.get(x) {
            Some(a) => PExpr::Atom(a.clone()),
            None => e.clone(),
        },
        PExpr::Atom(PAtom::Val(_)) => e.clone(),
        PExpr::Apply { func, args } => PExpr::Apply {
            func: func.clone(),
            args: args.iter().map(|a| subst_pexpr(a, map)).collect(),
        },
    }
}

/// Simultaneous substitution on process behaviors.
pub fn substitute_proc_many(p: &ProcessBehavior, map: &BTreeMap<String, PAtom>) -> ProcessBehavior {
    ProcessBehavior(subst_pseq(&p.0, map))
}

fn subst_pseq(seq: &[ProcInstr], map: &BTreeMap<String, PAtom>) -> Vec<ProcInstr> {
    if map.is_empty() {
        return seq.to_vec();
    }
    let Some((head, rest)) = seq.split_first() else {
        return Vec::new();
    };
    let without = |binder: &str| -> BTreeMap<String, PAtom> {
        let mut m = map.clone();
        m.remove(binder);
        m
    };
    let (head1, rest_map): (ProcInstr, BTreeMap<String, PAtom>) = match head {
        ProcInstr::Send { to, key, expr } => (
            ProcInstr::Send { to: to.clone(), key: key.clone(), expr: subst_pexpr(expr, map) },
            map.clone(),
        ),
        ProcInstr::Recv { var, key } => (
            ProcInstr::Recv { var: var.clone(), key: key.clone() },
            without(var),
        ),
        ProcInstr::Set { var, expr } => (
            ProcInstr::Set { var: var.clone(), expr: subst_pexpr(expr, map) },
            without(var),
        ),
        ProcInstr::Choose { .. } => (head.clone(), map.clone()),
        ProcInstr::Branch { options } => (
            ProcInstr::Branch {
                options: options
                    .iter()
                    .map(|o| BranchOption {
                        key: o.key.clone(),
                        label: o.label.clone(),
                        body: substitute_proc_many(&o.body, map),
                    })
                    .collect(),
            },
            map.clone(),
        ),
        ProcInstr::Cond { guard, then_branch, else_branch } => (
            ProcInstr::Cond {
                guard: subst_pexpr(guard, map),
                then_branch: substitute_proc_many(then_branch, map),
                else_branch: substitute_proc_many(else_branch, map),
            },
            map.clone(),
        ),
        ProcInstr::Call { proc, procs, args, key } => (
            ProcInstr::Call {
                proc: proc.clone(),
                procs: procs.clone(),
                args: args
                    .iter()
                    .map(|a| match a {
                        PAtom::Var(x) => map.get(x).cloned().unwrap_or_else(|| a.clone()),
                        PAtom::Val(_) => a.clone(),
                    })
                    .collect(),
                key: key.clone(),
            },
            map.clone(),
        ),
        ProcInstr::Block(b) => (ProcInstr::Block(substitute_proc_many(b, map)), map.clone()),
    };
    let mut out = vec![head1];
    out.extend(subst_pseq(rest, &rest_map));
    out
}

/// Replace one variable by a value in a process behavior.
pub fn substitute_proc(p: &ProcessBehavior, var: &str, v: &Value) -> ProcessBehavior {
    let mut map = BTreeMap::new();
    map.insert(var.to_string(), PAtom::Val(v.clone()));
    substitute_proc_many(p, &map)
}

// ---------------------------------------------------------------------------
// Role renaming and token instantiation
// ---------------------------------------------------------------------------

fn rename(p: &ProcName, map: &BTreeMap<ProcName, ProcName>) -> ProcName {
    map.get(p).cloned().unwrap_or_else(|| p.clone())
}

fn rename_atom(a: &Atom, map: &BTreeMap<ProcName, ProcName>) -> Atom {
    match a {
        Atom::Val { value, at } => Atom::Val { value: value.clone(), at: rename(at, map) },
        Atom::Var(lv) => Atom::Var(LocatedVar { proc: rename(&lv.proc, map), name: lv.name.clone() }),
    }
}

fn rename_expr(e: &Expr, map: &BTreeMap<ProcName, ProcName>) -> Expr {
    match e {
        Expr::Atom(a) => Expr::Atom(rename_atom(a, map)),
        Expr::Apply { func, args } => Expr::Apply {
            func: func.clone(),
            args: args.iter().map(|a| rename_expr(a, map)).collect(),
        },
    }
}

/// Simultaneously rename process names throughout a choreography.
pub fn rename_roles(c: &Choreography, map: &BTreeMap<ProcName, ProcName>) -> Choreography {
    Choreography(
        c.0.iter()
            .map(|i| match i {
                ChorInstr::Block(b) => ChorInstr::Block(rename_roles(b, map)),
                ChorInstr::Keyed(k, a) => ChorInstr::Keyed(
                    k.clone(),
                    match a {
                        ChorAction::Comm { from, expr, to, var } => ChorAction::Comm {
                            from: rename(from, map),
                            expr: rename_expr(expr, map),
                            to: rename(to, map),
                            var: var.clone(),
                        },
                        ChorAction::CommInProgress { from, to, var } => ChorAction::CommInProgress {
                            from: rename(from, map),
                            to: rename(to, map),
                            var: var.clone(),
                        },
                        ChorAction::Select { from, to, label } => ChorAction::Select {
                            from: rename(from, map),
                            to: rename(to, map),
                            label: label.clone(),
                        },
                        ChorAction::SelectInProgress { from, to, label } => {
                            ChorAction::SelectInProgress {
                                from: rename(from, map),
                                to: rename(to, map),
                                label: label.clone(),
                            }
                        }
                        ChorAction::Compute { var, at, expr } => ChorAction::Compute {
                            var: var.clone(),
                            at: rename(at, map),
                            expr: rename_expr(expr, map),
                        },
                        ChorAction::Cond { at, guard, then_branch, else_branch } => {
                            ChorAction::Cond {
                                at: rename(at, map),
                                guard: rename_expr(guard, map),
                                then_branch: rename_roles(then_branch, map),
                                else_branch: rename_roles(else_branch, map),
                            }
                        }
                        ChorAction::Call { proc, roles, args } => ChorAction::Call {
                            proc: proc.clone(),
                            roles: roles.iter().map(|r| rename(r, map)).collect(),
                            args: args.iter().map(|a| rename_atom(a, map)).collect(),
                        },
                        ChorAction::CallInProgress { pending, proc, roles, args, body } => {
                            ChorAction::CallInProgress {
                                pending: pending.iter().map(|r| rename(r, map)).collect(),
                                proc: proc.clone(),
                                roles: roles.iter().map(|r| rename(r, map)).collect(),
                                args: args.iter().map(|a| rename_atom(a, map)).collect(),
                                body: rename_roles(body, map),
                            }
                        }
                    },
                ),
            })
            .collect(),
    )
}

/// Replace every token placeholder with a concrete token.
pub fn set_tokens(c: &Choreography, token: &Token) -> Choreography {
    let fix = |k: &KeyAnnot| -> KeyAnnot {
        match &k.token {
            TokenExpr::Placeholder => KeyAnnot::concrete(k.line, token.clone()),
            TokenExpr::Concrete(_) => k.clone(),
        }
    };
    Choreography(
        c.0.iter()
            .map(|i| match i {
                ChorInstr::Block(b) => ChorInstr::Block(set_tokens(b, token)),
                ChorInstr::Keyed(k, a) => ChorInstr::Keyed(
                    fix(k),
                    match a {
                        ChorAction::Cond { at, guard, then_branch, else_branch } => {
                            ChorAction::Cond {
                                at: at.clone(),
                                guard: guard.clone(),
                                then_branch: set_tokens(then_branch, token),
                                else_branch: set_tokens(else_branch, token),
                            }
                        }
                        ChorAction::CallInProgress { pending, proc, roles, args, body } => {
                            ChorAction::CallInProgress {
                                pending: pending.clone(),
                                proc: proc.clone(),
                                roles: roles.clone(),
                                args: args.clone(),
                                body: set_tokens(body, token),
                            }
                        }
                        other => other.clone(),
                    },
                ),
            })
            .collect(),
    )
}

/// Errors raised when a procedure call cannot be instantiated.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InstantiateError {
    #[error("procedure {proc} expects {expected} {what}, got {got}")]
    ArityMismatch { proc: String, what: &'static str, expected: usize, got: usize },
    #[error("argument {index} of {proc} is located at {got}, parameter requires {expected}")]
    LocationMismatch { proc: String, index: usize, expected: ProcName, got: ProcName },
}

/// Instantiate a procedure body for a call: rename formal roles to the
/// actual processes, substitute argument atoms for parameters, and replace
/// every token placeholder by the callee token. Line numbers are unchanged.
pub fn instantiate_procedure(
    decl: &ProcedureDecl,
    roles: &[ProcName],
    args: &[Atom],
    token: &Token,
) -> Result<Choreography, InstantiateError> {
    if roles.len() != decl.roles.len() {
        return Err(InstantiateError::ArityMismatch {
            proc: decl.name.clone(),
            what: "roles",
            expected: decl.roles.len(),
            got: roles.len(),
        });
    }
    if args.len() != decl.params.len() {
        return Err(InstantiateError::ArityMismatch {
            proc: decl.name.clone(),
            what: "arguments",
            expected: decl.params.len(),
            got: args.len(),
        });
    }
    let role_map: BTreeMap<ProcName, ProcName> =
        decl.roles.iter().cloned().zip(roles.iter().cloned()).collect();
    let mut subst_map = BTreeMap::new();
    for (i, (param, arg)) in decl.params.iter().zip(args.iter()).enumerate() {
        let expected = rename(&param.proc, &role_map);
        if arg.location() != &expected {
            return Err(InstantiateError::LocationMismatch {
                proc: decl.name.clone(),
                index: i,
                expected,
                got: arg.location().clone(),
            });
        }
        subst_map.insert(
            LocatedVar { proc: expected, name: param.name.clone() },
            arg.clone(),
        );
    }
    let body = rename_roles(&decl.body, &role_map);
    let body = substitute_many(&body, &subst_map);
    Ok(set_tokens(&body, token))
}

/// Process-level instantiation used by local procedure calls: rename the
/// formal peer roles, substitute arguments for parameters, fix tokens.
pub fn instantiate_proc_procedure(
    decl: &ProcProcedureDecl,
    procs: &[ProcName],
    args: &[PAtom],
    token: &Token,
) -> Result<ProcessBehavior, InstantiateError> {
    if procs.len() != decl.roles.len() {
        return Err(InstantiateError::ArityMismatch {
            proc: decl.name.clone(),
            what: "roles",
            expected: decl.roles.len(),
            got: procs.len(),
        });
    }
    if args.len() != decl.params.len() {
        return Err(InstantiateError::ArityMismatch {
            proc: decl.name.clone(),
            what: "arguments",
            expected: decl.params.len(),
            got: args.len(),
        });
    }
    let role_map: BTreeMap<ProcName, ProcName> =
        decl.roles.iter().cloned().zip(procs.iter().cloned()).collect();
    let subst_map: BTreeMap<String, PAtom> =
        decl.params.iter().cloned().zip(args.iter().cloned()).collect();
    let body = rename_proc_roles(&decl.body, &role_map);
    let body = substitute_proc_many(&body, &subst_map);
    Ok(set_proc_tokens(&body, token))
}

fn rename_proc_roles(p: &ProcessBehavior, map: &BTreeMap<ProcName, ProcName>) -> ProcessBehavior {
    ProcessBehavior(
        p.0.iter()
            .map(|i| match i {
                ProcInstr::Send { to, key, expr } => ProcInstr::Send {
                    to: rename(to, map),
                    key: key.clone(),
                    expr: expr.clone(),
                },
                ProcInstr::Choose { to, key, label } => ProcInstr::Choose {
                    to: rename(to, map),
                    key: key.clone(),
                    label: label.clone(),
                },
                ProcInstr::Branch { options } => ProcInstr::Branch {
                    options: options
                        .iter()
                        .map(|o| BranchOption {
                            key: o.key.clone(),
                            label: o.label.clone(),
                            body: rename_proc_roles(&o.body, map),
                        })
                        .collect(),
                },
                ProcInstr::Cond { guard, then_branch, else_branch } => ProcInstr::Cond {
                    guard: guard.clone(),
                    then_branch: rename_proc_roles(then_branch, map),
                    else_branch: rename_proc_roles(else_branch, map),
                },
                ProcInstr::Call { proc, procs, args, key } => ProcInstr::Call {
                    proc: proc.clone(),
                    procs: procs.iter().map(|r| rename(r, map)).collect(),
                    args: args.clone(),
                    key: key.clone(),
                },
                ProcInstr::Block(b) => ProcInstr::Block(rename_proc_roles(b, map)),
                other => other.clone(),
            })
            .collect(),
    )
}

fn set_proc_tokens(p: &ProcessBehavior, token: &Token) -> ProcessBehavior {
    let fix = |k: &KeyAnnot| -> KeyAnnot {
        match &k.token {
            TokenExpr::Placeholder => KeyAnnot::concrete(k.line, token.clone()),
            TokenExpr::Concrete(_) => k.clone(),
        }
    };
    ProcessBehavior(
        p.0.iter()
            .map(|i| match i {
                ProcInstr::Send { to, key, expr } => {
                    ProcInstr::Send { to: to.clone(), key: fix(key), expr: expr.clone() }
                }
                ProcInstr::Recv { var, key } => ProcInstr::Recv { var: var.clone(), key: fix(key) },
                ProcInstr::Choose { to, key, label } => {
                    ProcInstr::Choose { to: to.clone(), key: fix(key), label: label.clone() }
                }
                ProcInstr::Branch { options } => ProcInstr::Branch {
                    options: options
                        .iter()
                        .map(|o| BranchOption {
                            key: fix(&o.key),
                            label: o.label.clone(),
                            body: set_proc_tokens(&o.body, token),
                        })
                        .collect(),
                },
                ProcInstr::Cond { guard, then_branch, else_branch } => ProcInstr::Cond {
                    guard: guard.clone(),
                    then_branch: set_proc_tokens(then_branch, token),
                    else_branch: set_proc_tokens(else_branch, token),
                },
                ProcInstr::Call { proc, procs, args, key } => ProcInstr::Call {
                    proc: proc.clone(),
                    procs: procs.clone(),
                    args: args.clone(),
                    key: fix(key),
                },
                ProcInstr::Block(b) => ProcInstr::Block(set_proc_tokens(b, token)),
                ProcInstr::Set { .. } => i.clone(),
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> ProcName {
        ProcName::new(s)
    }

    fn comm(line: Line, tok: TokenExpr, from: &str, e: Expr, to: &str, x: &str) -> ChorInstr {
        ChorInstr::Keyed(
            KeyAnnot { line, token: tok },
            ChorAction::Comm { from: p(from), expr: e, to: p(to), var: x.into() },
        )
    }

    fn compute(line: Line, tok: TokenExpr, x: &str, at: &str, e: Expr) -> ChorInstr {
        ChorInstr::Keyed(
            KeyAnnot { line, token: tok },
            ChorAction::Compute { var: x.into(), at: p(at), expr: e },
        )
    }

    /// The two-buyer purchase procedure: the running example throughout the
    /// test suite. Body lines 1-3, placeholder tokens.
    fn buy_item_decl() -> ProcedureDecl {
        ProcedureDecl {
            name: "BuyItem".into(),
            roles: vec![p("s"), p("b")],
            params: vec![LocatedVar::new("b", "itemID")],
            body: Choreography(vec![
                comm(1, TokenExpr::Placeholder, "b", Expr::var("b", "itemID"), "s", "itemID"),
                compute(
                    2,
                    TokenExpr::Placeholder,
                    "item?",
                    "s",
                    Expr::Apply { func: "sell".into(), args: vec![Expr::var("s", "itemID")] },
                ),
                comm(3, TokenExpr::Placeholder, "s", Expr::var("s", "item?"), "b", "item?"),
            ]),
        }
    }

    fn buy_item_main() -> Choreography {
        Choreography(vec![
            ChorInstr::Keyed(
                KeyAnnot::concrete(4, Token::initial()),
                ChorAction::Call {
                    proc: "BuyItem".into(),
                    roles: vec![p("seller"), p("buyer1")],
                    args: vec![Atom::Val { value: Value::Int(123), at: p("buyer1") }],
                },
            ),
            ChorInstr::Keyed(
                KeyAnnot::concrete(5, Token::initial()),
                ChorAction::Call {
                    proc: "BuyItem".into(),
                    roles: vec![p("seller"), p("buyer2")],
                    args: vec![Atom::Val { value: Value::Int(543), at: p("buyer2") }],
                },
            ),
        ])
    }

    #[test]
    fn pn_of_nil_is_empty() {
        assert!(pn_chor(&Choreography::nil()).is_empty());
    }

    #[test]
    fn pn_of_communication_is_both_ends() {
        let decl = buy_item_decl();
        let got = pn_instr(&decl.body.0[0]);
        let want: BTreeSet<_> = [p("s"), p("b")].into_iter().collect();
        assert_eq!(got, want);
    }

    #[test]
    fn pn_of_comm_in_progress_is_receiver_only() {
        let i = ChorInstr::Keyed(
            KeyAnnot::concrete(1, Token::initial()),
            ChorAction::CommInProgress { from: p("p"), to: p("q"), var: "x".into() },
        );
        let want: BTreeSet<_> = [p("q")].into_iter().collect();
        assert_eq!(pn_instr(&i), want);
    }

    #[test]
    fn fv_of_nil_is_empty() {
        assert!(fv_chor(&Choreography::nil()).is_empty());
    }

    #[test]
    fn fv_of_buy_item_body_is_the_parameter() {
        // With the parameter binding removed, only b.itemID is free: line 1
        // binds s.itemID, line 2 binds s.item?, line 3 binds b.item?.
        let decl = buy_item_decl();
        let want: BTreeSet<_> = [LocatedVar::new("b", "itemID")].into_iter().collect();
        assert_eq!(fv_chor(&decl.body), want);
    }

    #[test]
    fn fv_use_before_bind() {
        let c = Choreography(vec![compute(
            1,
            TokenExpr::Concrete(Token::initial()),
            "x",
            "p",
            Expr::Apply { func: "f".into(), args: vec![Expr::var("p", "x")] },
        )]);
        let want: BTreeSet<_> = [LocatedVar::new("p", "x")].into_iter().collect();
        assert_eq!(fv_chor(&c), want);
    }

    #[test]
    fn fv_comm_in_progress_binds_receive_variable() {
        // After a send fires, the in-progress term still binds q.x in the
        // continuation; otherwise no running configuration would stay closed.
        let c = Choreography(vec![
            ChorInstr::Keyed(
                KeyAnnot::concrete(1, Token::initial()),
                ChorAction::CommInProgress { from: p("p"), to: p("q"), var: "x".into() },
            ),
            compute(
                2,
                TokenExpr::Concrete(Token::initial()),
                "y",
                "q",
                Expr::Apply { func: "f".into(), args: vec![Expr::var("q", "x")] },
            ),
        ]);
        assert!(fv_chor(&c).is_empty());
    }

    #[test]
    fn stats_of_nil_is_empty() {
        assert!(stats(&Choreography::nil()).is_empty());
    }

    #[test]
    fn stats_flattens_blocks() {
        // stats({C}; C') = stats(C), stats(C')
        let decl = buy_item_decl();
        let inner = Choreography(vec![decl.body.0[0].clone()]);
        let c = Choreography(vec![ChorInstr::Block(inner), decl.body.0[1].clone()]);
        let lines: Vec<Line> = stats(&c).iter().filter_map(|i| i.key().map(|k| k.line)).collect();
        assert_eq!(lines, vec![1, 2]);
    }

    #[test]
    fn stats_recurses_into_cond_branches_in_source_order() {
        // StreamIt-shaped body: comm(1); compute(2); if(3) { sel(4); call(5) } else { sel(6) }
        let sel = |line: Line, label: &str| {
            ChorInstr::Keyed(
                KeyAnnot::placeholder(line),
                ChorAction::Select { from: p("p"), to: p("c"), label: Label::new(label) },
            )
        };
        let call5 = ChorInstr::Keyed(
            KeyAnnot::placeholder(5),
            ChorAction::Call { proc: "StreamIt".into(), roles: vec![p("p"), p("c")], args: vec![] },
        );
        let body = Choreography(vec![
            comm(1, TokenExpr::Placeholder, "p", Expr::Apply { func: "produce".into(), args: vec![] }, "c", "x"),
            compute(2, TokenExpr::Placeholder, "z", "c",
                Expr::Apply { func: "consume".into(), args: vec![Expr::var("c", "x")] }),
            ChorInstr::Keyed(
                KeyAnnot::placeholder(3),
                ChorAction::Cond {
                    at: p("p"),
                    guard: Expr::Apply {
                        func: ">".into(),
                        args: vec![
                            Expr::Apply { func: "itemsLeft".into(), args: vec![] },
                            Expr::val(Value::Int(0), "p"),
                        ],
                    },
                    then_branch: Choreography(vec![sel(4, "More"), call5]),
                    else_branch: Choreography(vec![sel(6, "Done")]),
                },
            ),
        ]);
        let lines: Vec<Line> = stats(&body).iter().filter_map(|i| i.key().map(|k| k.line)).collect();
        assert_eq!(lines, vec![1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn keys_of_buy_item_main() {
        let keys = keys_chor(&buy_item_main());
        assert_eq!(
            keys,
            vec![
                (4, TokenExpr::Concrete(Token::initial())),
                (5, TokenExpr::Concrete(Token::initial())),
            ]
        );
    }

    #[test]
    fn keys_of_nil_is_empty() {
        assert!(keys_chor(&Choreography::nil()).is_empty());
    }

    #[test]
    fn keys_of_instantiated_body_carry_callee_token() {
        let decl = buy_item_decl();
        let body = instantiate_procedure(
            &decl,
            &[p("seller"), p("buyer1")],
            &[Atom::Val { value: Value::Int(123), at: p("buyer1") }],
            &Token(vec![4]),
        )
        .unwrap();
        let keys = keys_chor(&body);
        let t = TokenExpr::Concrete(Token(vec![4]));
        assert_eq!(keys, vec![(1, t.clone()), (2, t.clone()), (3, t)]);
    }

    #[test]
    fn keys_proc_ignores_assignments() {
        let pb = ProcessBehavior(vec![ProcInstr::Set { var: "x".into(), expr: PExpr::val(Value::Int(1)) }]);
        assert!(keys_proc(&pb).is_empty());
        assert!(keys_proc(&ProcessBehavior::nil()).is_empty());
    }

    #[test]
    fn keys_proc_branch_lists_option_keys_then_bodies() {
        let pb = ProcessBehavior(vec![ProcInstr::Branch {
            options: vec![
                BranchOption {
                    key: KeyAnnot::placeholder(4),
                    label: Label::new("More"),
                    body: ProcessBehavior(vec![ProcInstr::Call {
                        proc: "X__c".into(),
                        procs: vec![p("p")],
                        args: vec![],
                        key: KeyAnnot::placeholder(5),
                    }]),
                },
                BranchOption {
                    key: KeyAnnot::placeholder(6),
                    label: Label::new("Done"),
                    body: ProcessBehavior::nil(),
                },
            ],
        }]);
        let lines: Vec<Line> = keys_proc(&pb).into_iter().map(|(l, _)| l).collect();
        assert_eq!(lines, vec![4, 6, 5]);
    }

    #[test]
    fn concat_block_collapses_empty_bodies() {
        let cont = buy_item_main();
        assert_eq!(concat_block(Choreography::nil(), cont.clone()), cont);
        assert_eq!(concat_block(Choreography::nil(), Choreography::nil()), Choreography::nil());
    }

    #[test]
    fn concat_block_keeps_nonempty_bodies() {
        let decl = buy_item_decl();
        let body = Choreography(vec![decl.body.0[0].clone()]);
        let got = concat_block(body.clone(), Choreography::nil());
        assert_eq!(got, Choreography(vec![ChorInstr::Block(body)]));
    }

    #[test]
    fn substitute_direct_replacement() {
        let c = Choreography(vec![compute(
            1,
            TokenExpr::Concrete(Token::initial()),
            "y",
            "p",
            Expr::Apply { func: "f".into(), args: vec![Expr::var("p", "x")] },
        )]);
        let got = substitute(&c, &LocatedVar::new("p", "x"), &Value::Int(7));
        let want = Choreography(vec![compute(
            1,
            TokenExpr::Concrete(Token::initial()),
            "y",
            "p",
            Expr::Apply { func: "f".into(), args: vec![Expr::val(Value::Int(7), "p")] },
        )]);
        assert_eq!(got, want);
    }

    #[test]
    fn substitute_is_noop_when_not_free() {
        let decl = buy_item_decl();
        let c = decl.body.clone();
        let got = substitute(&c, &LocatedVar::new("z", "w"), &Value::Int(1));
        assert_eq!(got, c);
    }

    #[test]
    fn substitute_into_buy_item_suffix() {
        // Binding s.itemID := 123 in lines 2-3 puts the sale argument in
        // line 2 and leaves line 3 alone.
        let decl = buy_item_decl();
        let suffix = Choreography(decl.body.0[1..].to_vec());
        let got = substitute(&suffix, &LocatedVar::new("s", "itemID"), &Value::Int(123));
        match &got.0[0] {
            ChorInstr::Keyed(_, ChorAction::Compute { expr, .. }) => {
                assert_eq!(
                    expr,
                    &Expr::Apply {
                        func: "sell".into(),
                        args: vec![Expr::val(Value::Int(123), "s")]
                    }
                );
            }
            other => panic!("unexpected instruction {other:?}"),
        }
        assert_eq!(got.0[1], decl.body.0[2]);
    }

    #[test]
    fn substitute_stops_at_rebinders() {
        // x is rebound by line 1's receive; the use in line 2 refers to the
        // new binding and must stay a variable.
        let c = Choreography(vec![
            comm(1, TokenExpr::Concrete(Token::initial()), "p", Expr::val(Value::Int(1), "p"), "q", "x"),
            compute(2, TokenExpr::Concrete(Token::initial()), "y", "q",
                Expr::Apply { func: "f".into(), args: vec![Expr::var("q", "x")] }),
        ]);
        let got = substitute(&c, &LocatedVar::new("q", "x"), &Value::Int(9));
        assert_eq!(got, c);
    }

    #[test]
    fn instantiate_buy_item() {
        let decl = buy_item_decl();
        let body = instantiate_procedure(
            &decl,
            &[p("seller"), p("buyer1")],
            &[Atom::Val { value: Value::Int(123), at: p("buyer1") }],
            &Token(vec![4]),
        )
        .unwrap();
        let procs = pn_chor(&body);
        let want: BTreeSet<_> = [p("seller"), p("buyer1")].into_iter().collect();
        assert_eq!(procs, want);
        // The parameter was replaced by the argument in line 1's payload.
        match &body.0[0] {
            ChorInstr::Keyed(k, ChorAction::Comm { from, expr, to, .. }) => {
                assert_eq!(k.line, 1);
                assert_eq!(k.token, TokenExpr::Concrete(Token(vec![4])));
                assert_eq!(from, &p("buyer1"));
                assert_eq!(to, &p("seller"));
                assert_eq!(expr, &Expr::val(Value::Int(123), "buyer1"));
            }
            other => panic!("unexpected instruction {other:?}"),
        }
    }

    #[test]
    fn instantiate_wrong_arity() {
        let decl = buy_item_decl();
        let err = instantiate_procedure(&decl, &[p("seller")], &[], &Token(vec![4])).unwrap_err();
        assert!(matches!(err, InstantiateError::ArityMismatch { .. }));
    }

    #[test]
    fn instantiate_wrong_location() {
        let decl = buy_item_decl();
        let err = instantiate_procedure(
            &decl,
            &[p("seller"), p("buyer1")],
            &[Atom::Val { value: Value::Int(123), at: p("seller") }],
            &Token(vec![4]),
        )
        .unwrap_err();
        assert!(matches!(err, InstantiateError::LocationMismatch { .. }));
    }

    #[test]
    fn instantiate_parameterless() {
        let decl = ProcedureDecl {
            name: "Ping".into(),
            roles: vec![p("a"), p("b")],
            params: vec![],
            body: Choreography(vec![comm(
                1,
                TokenExpr::Placeholder,
                "a",
                Expr::val(Value::Int(1), "a"),
                "b",
                "x",
            )]),
        };
        let body =
            instantiate_procedure(&decl, &[p("p"), p("q")], &[], &Token(vec![9])).unwrap();
        match &body.0[0] {
            ChorInstr::Keyed(k, ChorAction::Comm { from, to, .. }) => {
                assert_eq!((from, to), (&p("p"), &p("q")));
                assert_eq!(k.token, TokenExpr::Concrete(Token(vec![9])));
            }
            other => panic!("unexpected instruction {other:?}"),
        }
    }

    #[test]
    fn instantiate_preserves_line_numbers() {
        let decl = buy_item_decl();
        let body = instantiate_procedure(
            &decl,
            &[p("seller"), p("buyer2")],
            &[Atom::Val { value: Value::Int(543), at: p("buyer2") }],
            &Token(vec![5]),
        )
        .unwrap();
        let decl_lines: Vec<Line> = keys_chor(&decl.body).into_iter().map(|(l, _)| l).collect();
        let inst_lines: Vec<Line> = keys_chor(&body).into_iter().map(|(l, _)| l).collect();
        assert_eq!(decl_lines, inst_lines);
    }

    #[test]
    fn substitute_idempotent_once_var_gone() {
        let decl = buy_item_decl();
        let var = LocatedVar::new("b", "itemID");
        let once = substitute(&decl.body, &var, &Value::Int(5));
        let twice = substitute(&once, &var, &Value::Int(5));
        assert_eq!(once, twice);
    }

    #[test]
    fn terminal_recognizes_nested_empty_blocks() {
        let c = Choreography(vec![ChorInstr::Block(Choreography(vec![ChorInstr::Block(
            Choreography::nil(),
        )]))]);
        assert!(is_terminal(&c));
        assert!(!is_terminal(&buy_item_main()));
    }
}
