//! The choreography-level transition system: enumerate enabled transitions,
//! apply one, and run under a pluggable scheduler.
//!
//! Out-of-order execution comes from three framings: delaying past an
//! instruction (forbidden only when it is a selection targeting the acting
//! process), descending into a block, and descending into the body of a
//! call in progress (forbidden for the roles still waiting to enter). Data
//! dependencies need no side conditions: an instruction whose expression
//! still has free variables is simply not enabled.

use crate::eval::{eval, BuiltinRegistry, EvalError, ProcState};
use crate::syntax::{
    concat_block, pn_chor, substitute, ChorAction, ChorInstr, Choreography, InstantiateError,
    LocatedVar, Label, ProcName, ProcedureDecl, Value, instantiate_procedure,
};
use crate::token::{next_token, IntegrityKey, Line, Token};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// An undelivered message: integrity key plus payload.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Message {
    pub line: Line,
    pub token: Token,
    pub payload: Value,
}

impl Message {
    pub fn key(&self) -> IntegrityKey {
        IntegrityKey::new(self.line, self.token.clone())
    }
}

/// Undelivered messages per receiving process. The vector keeps send order;
/// the choreography semantics treats it as a multiset.
pub type MessageMap = BTreeMap<ProcName, Vec<Message>>;

/// A choreography configuration: program, per-process stores, in-flight
/// messages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChorConfig {
    pub chor: Choreography,
    pub sigma: BTreeMap<ProcName, ProcState>,
    pub k: MessageMap,
}

impl ChorConfig {
    /// Initial configuration: empty message sets over the given stores.
    pub fn initial(chor: Choreography, sigma: BTreeMap<ProcName, ProcState>) -> Self {
        let k = sigma.keys().map(|p| (p.clone(), Vec::new())).collect();
        ChorConfig { chor, sigma, k }
    }

    pub fn is_terminal(&self) -> bool {
        crate::syntax::is_terminal(&self.chor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChorRule {
    Send,
    Recv,
    Select,
    OnSelect,
    Compute,
    If,
    First,
    Enter,
    Last,
}

impl ChorRule {
    pub fn name(&self) -> &'static str {
        match self {
            ChorRule::Send => "C-Send",
            ChorRule::Recv => "C-Recv",
            ChorRule::Select => "C-Select",
            ChorRule::OnSelect => "C-OnSelect",
            ChorRule::Compute => "C-Compute",
            ChorRule::If => "C-If",
            ChorRule::First => "C-First",
            ChorRule::Enter => "C-Enter",
            ChorRule::Last => "C-Last",
        }
    }
}

/// How a candidate's position descends into nested structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DescentKind {
    Block,
    CallBody,
}

/// One enabled transition: the rule, the acting process, and the position
/// of the target instruction (descent chain plus index at the innermost
/// sequence).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Candidate {
    pub rule: ChorRule,
    pub actor: ProcName,
    pub descents: Vec<(usize, DescentKind)>,
    pub index: usize,
    pub key: IntegrityKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("illegal transition: {0}")]
    IllegalTransition(String),
    #[error("two or more messages carry key {0}")]
    AmbiguousMessage(IntegrityKey),
    #[error("instruction at line {0} still carries a token placeholder")]
    PlaceholderToken(Line),
    #[error("conditional guard evaluated to {0}, expected a boolean")]
    GuardNotBool(Value),
    #[error("call to unknown procedure '{0}'")]
    UnknownProcedure(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Instantiate(#[from] InstantiateError),
}

/// Declarations indexed by name.
pub fn decl_map(decls: &[ProcedureDecl]) -> BTreeMap<&str, &ProcedureDecl> {
    decls.iter().map(|d| (d.name.as_str(), d)).collect()
}

fn matching_messages<'a>(k: &'a MessageMap, to: &ProcName, key: &IntegrityKey) -> Vec<&'a Message> {
    k.get(to)
        .map(|ms| {
            ms.iter()
                .filter(|m| m.line == key.line && m.token == key.token)
                .collect()
        })
        .unwrap_or_default()
}

fn has_select_message(k: &MessageMap, to: &ProcName, key: &IntegrityKey, label: &Label) -> bool {
    k.get(to)
        .map(|ms| {
            ms.iter().any(|m| {
                m.line == key.line && m.token == key.token && m.payload == Value::Label(label.clone())
            })
        })
        .unwrap_or(false)
}

/// All transitions enabled in a configuration, in document order.
pub fn enabled(cfg: &ChorConfig, decls: &BTreeMap<&str, &ProcedureDecl>) -> Vec<Candidate> {
    let mut out = Vec::new();
    collect(&cfg.chor.0, &mut Vec::new(), &BTreeSet::new(), cfg, decls, &mut out);
    out
}

fn collect(
    seq: &[ChorInstr],
    prefix: &mut Vec<(usize, DescentKind)>,
    blocked: &BTreeSet<ProcName>,
    cfg: &ChorConfig,
    decls: &BTreeMap<&str, &ProcedureDecl>,
    out: &mut Vec<Candidate>,
) {
    let mut blocked = blocked.clone();
    for (i, instr) in seq.iter().enumerate() {
        match instr {
            ChorInstr::Block(b) => {
                prefix.push((i, DescentKind::Block));
                collect(&b.0, prefix, &blocked, cfg, decls, out);
                prefix.pop();
            }
            ChorInstr::Keyed(annot, action) => {
                if let Some(key) = annot.integrity_key() {
                    let mut push = |rule: ChorRule, actor: &ProcName| {
                        if !blocked.contains(actor) {
                            out.push(Candidate {
                                rule,
                                actor: actor.clone(),
                                descents: prefix.clone(),
                                index: i,
                                key: key.clone(),
                            });
                        }
                    };
                    match action {
                        ChorAction::Comm { from, expr, .. } => {
                            if expr.is_closed() {
                                push(ChorRule::Send, from);
                            }
                        }
                        ChorAction::CommInProgress { to, .. } => {
                            if !matching_messages(&cfg.k, to, &key).is_empty() {
                                push(ChorRule::Recv, to);
                            }
                        }
                        ChorAction::Select { from, .. } => push(ChorRule::Select, from),
                        ChorAction::SelectInProgress { to, label, .. } => {
                            if has_select_message(&cfg.k, to, &key, label) {
                                push(ChorRule::OnSelect, to);
                            }
                        }
                        ChorAction::Compute { at, expr, .. } => {
                            if expr.is_closed() {
                                push(ChorRule::Compute, at);
                            }
                        }
                        ChorAction::Cond { at, guard, .. } => {
                            if guard.is_closed() {
                                push(ChorRule::If, at);
                            }
                        }
                        ChorAction::Call { proc, roles, .. } => {
                            if decls.contains_key(proc.as_str()) {
                                let mut seen = BTreeSet::new();
                                for r in roles {
                                    if seen.insert(r.clone()) {
                                        push(ChorRule::First, r);
                                    }
                                }
                            }
                        }
                        ChorAction::CallInProgress { pending, body, .. } => {
                            if pending.len() == 1 {
                                push(ChorRule::Last, &pending[0]);
                            } else {
                                for r in pending {
                                    push(ChorRule::Enter, r);
                                }
                            }
                            let inner_blocked: BTreeSet<ProcName> =
                                blocked.iter().chain(pending.iter()).cloned().collect();
                            prefix.push((i, DescentKind::CallBody));
                            collect(&body.0, prefix, &inner_blocked, cfg, decls, out);
                            prefix.pop();
                        }
                    }
                }
                // Delaying past a selection is forbidden for its target;
                // everything else is passable.
                match action {
                    ChorAction::Select { to, .. } | ChorAction::SelectInProgress { to, .. } => {
                        blocked.insert(to.clone());
                    }
                    _ => {}
                }
            }
        }
    }
}

/// Apply one enabled transition. Returns the successor configuration and
/// the message payload the step sent or consumed, if any.
pub fn apply(
    cfg: &ChorConfig,
    cand: &Candidate,
    decls: &BTreeMap<&str, &ProcedureDecl>,
    registry: &BuiltinRegistry,
) -> Result<(ChorConfig, Option<Value>), ExecError> {
    let mut sigma = cfg.sigma.clone();
    let mut k = cfg.k.clone();
    let mut message = None;
    let chor = rewrite_seq(
        &cfg.chor.0,
        &cand.descents,
        cand,
        &mut sigma,
        &mut k,
        &mut message,
        decls,
        registry,
    )?;
    Ok((ChorConfig { chor: Choreography(chor), sigma, k }, message))
}

#[allow(clippy::too_many_arguments)]
fn rewrite_seq(
    seq: &[ChorInstr],
    descents: &[(usize, DescentKind)],
    cand: &Candidate,
    sigma: &mut BTreeMap<ProcName, ProcState>,
    k: &mut MessageMap,
    message: &mut Option<Value>,
    decls: &BTreeMap<&str, &ProcedureDecl>,
    registry: &BuiltinRegistry,
) -> Result<Vec<ChorInstr>, ExecError> {
    let bad_path = || ExecError::IllegalTransition("candidate path does not match".into());
    if let Some(((i, kind), rest_desc)) = descents.split_first() {
        let container = seq.get(*i).ok_or_else(bad_path)?;
        let mut out = seq[..*i].to_vec();
        match (container, kind) {
            (ChorInstr::Block(b), DescentKind::Block) => {
                let inner =
                    rewrite_seq(&b.0, rest_desc, cand, sigma, k, message, decls, registry)?;
                let cont = Choreography(seq[*i + 1..].to_vec());
                out.extend(concat_block(Choreography(inner), cont).0);
            }
            (
                ChorInstr::Keyed(annot, ChorAction::CallInProgress { pending, proc, roles, args, body }),
                DescentKind::CallBody,
            ) => {
                let inner =
                    rewrite_seq(&body.0, rest_desc, cand, sigma, k, message, decls, registry)?;
                out.push(ChorInstr::Keyed(
                    annot.clone(),
                    ChorAction::CallInProgress {
                        pending: pending.clone(),
                        proc: proc.clone(),
                        roles: roles.clone(),
                        args: args.clone(),
                        body: Choreography(inner),
                    },
                ));
                out.extend_from_slice(&seq[*i + 1..]);
            }
            _ => return Err(bad_path()),
        }
        return Ok(out);
    }

    let target = seq.get(cand.index).ok_or_else(bad_path)?;
    let rest = &seq[cand.index + 1..];
    let mut out = seq[..cand.index].to_vec();
    let ChorInstr::Keyed(annot, action) = target else {
        return Err(bad_path());
    };
    let Some(key) = annot.integrity_key() else {
        return Err(ExecError::PlaceholderToken(annot.line));
    };
    if key != cand.key {
        return Err(bad_path());
    }

    match (cand.rule, action) {
        (ChorRule::Send, ChorAction::Comm { from, expr, to, var }) => {
            let state = sigma.get(from).cloned().unwrap_or_default();
            let (v, state2) = eval(registry, &state, expr)?;
            sigma.insert(from.clone(), state2);
            k.entry(to.clone()).or_default().push(Message {
                line: key.line,
                token: key.token.clone(),
                payload: v.clone(),
            });
            *message = Some(v);
            out.push(ChorInstr::Keyed(
                annot.clone(),
                ChorAction::CommInProgress { from: from.clone(), to: to.clone(), var: var.clone() },
            ));
            out.extend_from_slice(rest);
        }
        (ChorRule::Recv, ChorAction::CommInProgress { to, var, .. }) => {
            let msgs = matching_messages(k, to, &key);
            match msgs.len() {
                0 => return Err(ExecError::IllegalTransition("no matching message".into())),
                1 => {}
                _ => return Err(ExecError::AmbiguousMessage(key.clone())),
            }
            let queue = k.get_mut(to).expect("receiver has a message set");
            let pos = queue
                .iter()
                .position(|m| m.line == key.line && m.token == key.token)
                .expect("match found above");
            let v = queue.remove(pos).payload;
            *message = Some(v.clone());
            let rest_sub = substitute(
                &Choreography(rest.to_vec()),
                &LocatedVar { proc: to.clone(), name: var.clone() },
                &v,
            );
            out.extend(rest_sub.0);
        }
        (ChorRule::Select, ChorAction::Select { from, to, label }) => {
            k.entry(to.clone()).or_default().push(Message {
                line: key.line,
                token: key.token.clone(),
                payload: Value::Label(label.clone()),
            });
            *message = Some(Value::Label(label.clone()));
            out.push(ChorInstr::Keyed(
                annot.clone(),
                ChorAction::SelectInProgress {
                    from: from.clone(),
                    to: to.clone(),
                    label: label.clone(),
                },
            ));
            out.extend_from_slice(rest);
        }
        (ChorRule::OnSelect, ChorAction::SelectInProgress { to, label, .. }) => {
            let queue = k.get_mut(to).ok_or_else(|| {
                ExecError::IllegalTransition("no message set for receiver".into())
            })?;
            let pos = queue
                .iter()
                .position(|m| {
                    m.line == key.line
                        && m.token == key.token
                        && m.payload == Value::Label(label.clone())
                })
                .ok_or_else(|| ExecError::IllegalTransition("no matching selection".into()))?;
            let v = queue.remove(pos).payload;
            *message = Some(v);
            out.extend_from_slice(rest);
        }
        (ChorRule::Compute, ChorAction::Compute { var, at, expr }) => {
            let state = sigma.get(at).cloned().unwrap_or_default();
            let (v, state2) = eval(registry, &state, expr)?;
            sigma.insert(at.clone(), state2);
            let rest_sub = substitute(
                &Choreography(rest.to_vec()),
                &LocatedVar { proc: at.clone(), name: var.clone() },
                &v,
            );
            out.extend(rest_sub.0);
        }
        (ChorRule::If, ChorAction::Cond { at, guard, then_branch, else_branch }) => {
            // Guard effects persist: the recursive examples drive their
            // iteration count from the guard expression.
            let state = sigma.get(at).cloned().unwrap_or_default();
            let (v, state2) = eval(registry, &state, guard)?;
            sigma.insert(at.clone(), state2);
            let branch = match v {
                Value::Bool(true) => then_branch.clone(),
                Value::Bool(false) => else_branch.clone(),
                other => return Err(ExecError::GuardNotBool(other)),
            };
            out.extend(concat_block(branch, Choreography(rest.to_vec())).0);
        }
        (ChorRule::First, ChorAction::Call { proc, roles, args }) => {
            let decl = decls
                .get(proc.as_str())
                .ok_or_else(|| ExecError::UnknownProcedure(proc.clone()))?;
            let callee = next_token(key.line, &key.token);
            let body = instantiate_procedure(decl, roles, args, &callee)?;
            let pending: Vec<ProcName> =
                roles.iter().filter(|r| **r != cand.actor).cloned().collect();
            if pending.is_empty() {
                // Single-role call: the first process to enter is also the
                // last, so the body unfolds immediately.
                out.extend(concat_block(body, Choreography(rest.to_vec())).0);
            } else {
                out.push(ChorInstr::Keyed(
                    annot.clone(),
                    ChorAction::CallInProgress {
                        pending,
                        proc: proc.clone(),
                        roles: roles.clone(),
                        args: args.clone(),
                        body,
                    },
                ));
                out.extend_from_slice(rest);
            }
        }
        (ChorRule::Enter, ChorAction::CallInProgress { pending, proc, roles, args, body }) => {
            if !pending.contains(&cand.actor) || pending.len() < 2 {
                return Err(ExecError::IllegalTransition("actor cannot enter".into()));
            }
            let pending: Vec<ProcName> =
                pending.iter().filter(|r| **r != cand.actor).cloned().collect();
            out.push(ChorInstr::Keyed(
                annot.clone(),
                ChorAction::CallInProgress {
                    pending,
                    proc: proc.clone(),
                    roles: roles.clone(),
                    args: args.clone(),
                    body: body.clone(),
                },
            ));
            out.extend_from_slice(rest);
        }
        (ChorRule::Last, ChorAction::CallInProgress { pending, body, .. }) => {
            if pending.as_slice() != [cand.actor.clone()] {
                return Err(ExecError::IllegalTransition("actor is not the last to enter".into()));
            }
            out.extend(concat_block(body.clone(), Choreography(rest.to_vec())).0);
        }
        _ => return Err(bad_path()),
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

/// Scheduling policy for `run`: first candidate in document order, seeded
/// uniform choice, or an explicit choice list (interactive use).
#[derive(Debug, Clone)]
pub enum Scheduler {
    InOrder,
    Random(u64),
    Choices(Vec<usize>),
}

/// One recorded transition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceStep {
    pub step: usize,
    pub rule: String,
    pub actor: String,
    pub key: Option<(Line, Token)>,
    pub message: Option<Value>,
    pub state_hash: String,
}

pub type Trace = Vec<TraceStep>;

/// Run a configuration until terminal or the step bound is reached.
pub fn run(
    cfg: &ChorConfig,
    decls: &BTreeMap<&str, &ProcedureDecl>,
    registry: &BuiltinRegistry,
    scheduler: &Scheduler,
    bound: usize,
) -> Result<(Trace, ChorConfig), ExecError> {
    let mut cfg = cfg.clone();
    let mut trace = Vec::new();
    let mut rng = match scheduler {
        Scheduler::Random(seed) => Some(ChaCha8Rng::seed_from_u64(*seed)),
        _ => None,
    };
    for step in 0..bound {
        let cands = enabled(&cfg, decls);
        if cands.is_empty() {
            break;
        }
        let idx = match scheduler {
            Scheduler::InOrder => 0,
            Scheduler::Random(_) => rng.as_mut().unwrap().gen_range(0..cands.len()),
            Scheduler::Choices(list) => match list.get(step) {
                Some(i) => *i % cands.len(),
                None => break,
            },
        };
        let cand = &cands[idx];
        let (next, message) = apply(&cfg, cand, decls, registry)?;
        trace.push(TraceStep {
            step,
            rule: cand.rule.name().into(),
            actor: cand.actor.0.clone(),
            key: Some((cand.key.line, cand.key.token.clone())),
            message,
            state_hash: crate::canon::state_hash_chor(&next),
        });
        cfg = next;
    }
    Ok((trace, cfg))
}

/// Build the initial configuration of a program over scenario stores.
pub fn initial_config(
    program: &crate::syntax::Program,
    scenario: &crate::eval::ScenarioConfig,
) -> ChorConfig {
    let procs = pn_chor(&program.main);
    let sigma = crate::eval::initial_sigma(scenario, &procs);
    ChorConfig::initial(program.main.clone(), sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{BuiltinRegistry, ScenarioConfig};
    use crate::parser::parse_program;
    use crate::syntax::Program;

    const BUYITEM: &str = r#"
proc BuyItem(s, b; b.itemID) {
  b.itemID -> s.itemID;
  s.item? = sell(itemID);
  s.item? -> b.item?;
}
main {
  BuyItem(seller, buyer1; 123);
  BuyItem(seller, buyer2; 543);
}
"#;

    fn setup(src: &str, scenario: &str) -> (Program, ChorConfig, BuiltinRegistry) {
        let program = parse_program(src).unwrap();
        let cfg = initial_config(&program, &ScenarioConfig::named(scenario));
        (program, cfg, BuiltinRegistry::standard())
    }

    fn find<'a>(
        cands: &'a [Candidate],
        rule: ChorRule,
        line: Line,
        actor: &str,
    ) -> &'a Candidate {
        cands
            .iter()
            .find(|c| c.rule == rule && c.key.line == line && c.actor.0 == actor)
            .unwrap_or_else(|| panic!("no candidate {rule:?} line {line} by {actor}: {cands:?}"))
    }

    #[test]
    fn initial_buy_item_candidates() {
        // Both calls can be entered: line 4 by seller or buyer1, and line 5
        // by buyer2 or by the seller delaying past line 4.
        let (program, cfg, _) = setup(BUYITEM, "buyitem");
        let decls = decl_map(&program.decls);
        let cands = enabled(&cfg, &decls);
        let got: Vec<(Line, &str)> =
            cands.iter().map(|c| (c.key.line, c.actor.0.as_str())).collect();
        assert_eq!(got, vec![(4, "seller"), (4, "buyer1"), (5, "seller"), (5, "buyer2")]);
        assert!(cands.iter().all(|c| c.rule == ChorRule::First));
    }

    #[test]
    fn terminal_configuration_has_no_candidates() {
        let (program, cfg, registry) = setup("main { }", "default");
        let decls = decl_map(&program.decls);
        assert!(enabled(&cfg, &decls).is_empty());
        let (trace, _) = run(&cfg, &decls, &registry, &Scheduler::InOrder, 100).unwrap();
        assert!(trace.is_empty());
        let _ = registry;
    }

    /// The narrated out-of-order purchase: buyer2 enters the second call
    /// first, sends its order, and the seller joins that call (delaying
    /// past the first one, which stays pending) to receive it.
    #[test]
    fn buyer2_can_be_served_while_buyer1_sleeps() {
        let (program, cfg, registry) = setup(BUYITEM, "buyitem");
        let decls = decl_map(&program.decls);

        let cands = enabled(&cfg, &decls);
        let c = find(&cands, ChorRule::First, 5, "buyer2");
        let (cfg, _) = apply(&cfg, c, &decls, &registry).unwrap();

        let cands = enabled(&cfg, &decls);
        let c = find(&cands, ChorRule::Send, 1, "buyer2");
        let (cfg, sent) = apply(&cfg, c, &decls, &registry).unwrap();
        assert_eq!(sent, Some(Value::Int(543)));
        let key_msgs: Vec<_> = cfg.k[&ProcName::new("seller")]
            .iter()
            .map(|m| (m.line, m.token.clone(), m.payload.clone()))
            .collect();
        assert_eq!(key_msgs, vec![(1, Token(vec![5]), Value::Int(543))]);

        let cands = enabled(&cfg, &decls);
        let c = find(&cands, ChorRule::Last, 5, "seller");
        let (cfg, _) = apply(&cfg, c, &decls, &registry).unwrap();

        let cands = enabled(&cfg, &decls);
        let c = find(&cands, ChorRule::Recv, 1, "seller");
        let (cfg, got) = apply(&cfg, c, &decls, &registry).unwrap();
        assert_eq!(got, Some(Value::Int(543)));
        assert!(cfg.k[&ProcName::new("seller")].is_empty());
    }

    #[test]
    fn send_adds_message_and_leaves_comm_in_progress() {
        let (program, cfg, registry) = setup(BUYITEM, "buyitem");
        let decls = decl_map(&program.decls);
        // buyer1 enters its call first and can then send its order while
        // the seller is still pending.
        let cands = enabled(&cfg, &decls);
        let (cfg, _) = apply(&cfg, find(&cands, ChorRule::First, 4, "buyer1"), &decls, &registry).unwrap();
        let cands = enabled(&cfg, &decls);
        let (cfg, _) = apply(&cfg, find(&cands, ChorRule::Send, 1, "buyer1"), &decls, &registry).unwrap();
        assert_eq!(
            cfg.k[&ProcName::new("seller")],
            vec![Message { line: 1, token: Token(vec![4]), payload: Value::Int(123) }]
        );
        // The instruction is now a communication in progress inside the call body.
        let flat = crate::syntax::stats(&cfg.chor);
        assert!(flat.iter().any(|i| matches!(
            i,
            ChorInstr::Keyed(k, ChorAction::CommInProgress { .. }) if k.line == 1
        )));
    }

    #[test]
    fn recv_substitutes_payload_into_continuation() {
        let (program, cfg, registry) = setup(BUYITEM, "buyitem");
        let decls = decl_map(&program.decls);
        let mut cfg = cfg;
        for (rule, line, actor) in [
            (ChorRule::First, 4, "buyer1"),
            (ChorRule::Send, 1, "buyer1"),
            (ChorRule::Last, 4, "seller"),
            (ChorRule::Recv, 1, "seller"),
        ] {
            let cands = enabled(&cfg, &decls);
            let c = find(&cands, rule, line, actor);
            cfg = apply(&cfg, c, &decls, &registry).unwrap().0;
        }
        // Line 2 must now read sell(123@seller).
        let flat = crate::syntax::stats(&cfg.chor);
        let line2 = flat
            .iter()
            .find_map(|i| match i {
                ChorInstr::Keyed(k, ChorAction::Compute { expr, .. }) if k.line == 2 => Some(expr),
                _ => None,
            })
            .expect("line 2 present");
        let want = crate::syntax::Expr::Apply {
            func: "sell".into(),
            args: vec![crate::syntax::Expr::val(Value::Int(123), "seller")],
        };
        assert_eq!(line2, &want);
    }

    #[test]
    fn if_true_wraps_branch_in_a_block() {
        let (program, cfg, registry) = setup(
            "main { if p.(1 < 2) { p.x = 1; } else { p.y = 2; } p.z = 3; }",
            "default",
        );
        let decls = decl_map(&program.decls);
        let cands = enabled(&cfg, &decls);
        let (cfg, _) = apply(&cfg, &cands[0], &decls, &registry).unwrap();
        match cfg.chor.0.as_slice() {
            [ChorInstr::Block(b), ChorInstr::Keyed(k, _)] => {
                assert_eq!(k.line, 4);
                assert!(matches!(
                    b.0.as_slice(),
                    [ChorInstr::Keyed(k2, ChorAction::Compute { .. })] if k2.line == 2
                ));
            }
            other => panic!("unexpected shape {other:?}"),
        }
    }

    #[test]
    fn in_order_buy_item_run() {
        let (program, cfg, registry) = setup(BUYITEM, "buyitem");
        let decls = decl_map(&program.decls);
        let (trace, final_cfg) =
            run(&cfg, &decls, &registry, &Scheduler::InOrder, 1000).unwrap();
        assert!(final_cfg.is_terminal());
        // Two calls, each: first + last + send/recv/compute/send/recv.
        assert_eq!(trace.len(), 14);
        // The in-order schedule sells the single item to buyer1; buyer2
        // receives null.
        let recv3: Vec<_> = trace
            .iter()
            .filter(|s| s.rule == "C-Recv" && s.key.as_ref().map(|k| k.0) == Some(3))
            .map(|s| (s.key.clone().unwrap().1, s.message.clone().unwrap()))
            .collect();
        assert_eq!(
            recv3,
            vec![
                (Token(vec![4]), Value::Int(123)),
                (Token(vec![5]), Value::Null),
            ]
        );
    }

    #[test]
    fn equal_seeds_give_equal_traces() {
        let (program, cfg, registry) = setup(BUYITEM, "buyitem");
        let decls = decl_map(&program.decls);
        let (t1, _) = run(&cfg, &decls, &registry, &Scheduler::Random(1), 1000).unwrap();
        let (t2, _) = run(&cfg, &decls, &registry, &Scheduler::Random(1), 1000).unwrap();
        assert_eq!(t1, t2);
        assert!(!t1.is_empty());
    }

    #[test]
    fn message_counts_change_by_one_on_communication_rules_only() {
        let (program, cfg, registry) = setup(BUYITEM, "buyitem");
        let decls = decl_map(&program.decls);
        for seed in 0..20 {
            let mut cfg = cfg.clone();
            loop {
                let cands = enabled(&cfg, &decls);
                if cands.is_empty() {
                    break;
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed * 1000 + cfg.k.values().map(Vec::len).sum::<usize>() as u64);
                let cand = &cands[rng.gen_range(0..cands.len())];
                let before: usize = cfg.k.values().map(Vec::len).sum();
                let (next, _) = apply(&cfg, cand, &decls, &registry).unwrap();
                let after: usize = next.k.values().map(Vec::len).sum();
                let delta = after as i64 - before as i64;
                let want = match cand.rule {
                    ChorRule::Send | ChorRule::Select => 1,
                    ChorRule::Recv | ChorRule::OnSelect => -1,
                    _ => 0,
                };
                assert_eq!(delta, want, "rule {:?}", cand.rule);
                cfg = next;
            }
        }
    }

    #[test]
    fn keys_stay_duplicate_free_after_first() {
        let (program, cfg, registry) = setup(BUYITEM, "buyitem");
        let decls = decl_map(&program.decls);
        let mut cfg = cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        loop {
            let cands = enabled(&cfg, &decls);
            if cands.is_empty() {
                break;
            }
            let cand = &cands[rng.gen_range(0..cands.len())];
            cfg = apply(&cfg, cand, &decls, &registry).unwrap().0;
            let keys = crate::syntax::keys_chor(&cfg.chor);
            let distinct: std::collections::BTreeSet<_> = keys.iter().collect();
            assert_eq!(distinct.len(), keys.len());
        }
    }
}
