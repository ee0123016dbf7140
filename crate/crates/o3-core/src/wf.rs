//! Well-formedness of declarations, configurations, and networks.
//!
//! A configuration is well-formed when: every process it mentions has a
//! store and a message set; it is closed; all integrity keys are distinct,
//! concrete, and respect the ancestry order (a key prefixes another only
//! from a call in progress into its own body); every in-progress term is
//! matched by exactly one message and vice versa; and every instruction
//! passes its per-instruction rule. These conditions are what the
//! preservation, progress, and integrity checks rely on.

use crate::chor::{ChorConfig, MessageMap};
use crate::epp::{branch_geq_flat, project_role, DeclSigs};
use crate::syntax::{
    fv_chor, instantiate_procedure, keys_chor, keys_proc, pn_chor, Atom, ChorAction,
    ChorInstr, Choreography, Network, ProcName, ProcedureDecl, TokenExpr, Value,
};
use crate::token::{next_token, strict_prefix, IntegrityKey};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};

/// One failed check: the rule that failed, what it failed on, and why.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WfViolation {
    pub rule: String,
    pub subject: String,
    pub message: String,
}

/// Outcome of a well-formedness check. The verdict is positive exactly when
/// no violations were collected.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct WfReport {
    pub violations: Vec<WfViolation>,
}

impl WfReport {
    pub fn verdict(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, rule: &str, subject: impl Into<String>, message: impl Into<String>) {
        self.violations.push(WfViolation {
            rule: rule.into(),
            subject: subject.into(),
            message: message.into(),
        });
    }

    fn absorb(&mut self, other: WfReport) {
        self.violations.extend(other.violations);
    }
}

fn contains_runtime_terms(c: &Choreography) -> bool {
    c.0.iter().any(|i| match i {
        ChorInstr::Block(b) => contains_runtime_terms(b),
        ChorInstr::Keyed(_, a) => match a {
            ChorAction::CommInProgress { .. }
            | ChorAction::SelectInProgress { .. }
            | ChorAction::CallInProgress { .. } => true,
            ChorAction::Cond { then_branch, else_branch, .. } => {
                contains_runtime_terms(then_branch) || contains_runtime_terms(else_branch)
            }
            _ => false,
        },
    })
}

fn messages_with_key<'a>(
    k: &'a MessageMap,
    to: &ProcName,
    key: &IntegrityKey,
) -> Vec<&'a crate::chor::Message> {
    k.get(to)
        .map(|ms| {
            ms.iter()
                .filter(|m| m.line == key.line && m.token == key.token)
                .collect()
        })
        .unwrap_or_default()
}

/// Declarations by name, shared by the per-instruction rules.
pub struct DeclContext<'a> {
    pub by_name: BTreeMap<&'a str, &'a ProcedureDecl>,
    pub sigs: DeclSigs,
}

impl<'a> DeclContext<'a> {
    pub fn new(decls: &'a [ProcedureDecl]) -> Self {
        DeclContext {
            by_name: decls.iter().map(|d| (d.name.as_str(), d)).collect(),
            sigs: decls
                .iter()
                .map(|d| (d.name.clone(), d.roles.clone()))
                .collect(),
        }
    }
}

fn check_call_shape(
    report: &mut WfReport,
    subject: &str,
    proc: &str,
    roles: &[ProcName],
    args: &[Atom],
    ctx: &DeclContext,
) -> bool {
    let Some(decl) = ctx.by_name.get(proc) else {
        report.push("C-WF-Call", subject, format!("unknown procedure '{proc}'"));
        return false;
    };
    let mut ok = true;
    let distinct: BTreeSet<_> = roles.iter().collect();
    if distinct.len() != roles.len() {
        report.push("C-WF-Call", subject, "call roles are not distinct");
        ok = false;
    }
    if roles.len() != decl.roles.len() {
        report.push(
            "C-WF-Call",
            subject,
            format!("expected {} roles, got {}", decl.roles.len(), roles.len()),
        );
        return false;
    }
    if args.len() != decl.params.len() {
        report.push(
            "C-WF-Call",
            subject,
            format!("expected {} arguments, got {}", decl.params.len(), args.len()),
        );
        return false;
    }
    for (j, (arg, param)) in args.iter().zip(decl.params.iter()).enumerate() {
        match roles.iter().position(|r| r == arg.location()) {
            None => {
                report.push(
                    "C-WF-Call",
                    subject,
                    format!("argument {j} is located at {}, not a call role", arg.location()),
                );
                ok = false;
            }
            Some(i) => {
                if decl.roles[i] != param.proc {
                    report.push(
                        "C-WF-Call",
                        subject,
                        format!(
                            "argument {j} is located at role position {i} ({}), parameter \
                             expects {}",
                            decl.roles[i], param.proc
                        ),
                    );
                    ok = false;
                }
            }
        }
    }
    ok
}

/// The per-instruction judgment against a message map. `in_decl` relaxes
/// token concreteness (declaration bodies carry placeholders).
pub fn check_instr(
    instr: &ChorInstr,
    k: &MessageMap,
    ctx: &DeclContext,
    in_decl: bool,
) -> WfReport {
    let mut report = WfReport::default();
    let ChorInstr::Keyed(annot, action) = instr else {
        return report; // blocks are always fine
    };
    let subject = annot.to_string();
    let key = match (&annot.token, in_decl) {
        (TokenExpr::Concrete(t), _) => Some(IntegrityKey::new(annot.line, t.clone())),
        (TokenExpr::Placeholder, true) => None,
        (TokenExpr::Placeholder, false) => {
            report.push(
                "C-WF",
                &subject,
                format!("instruction at line {} carries a token placeholder", annot.line),
            );
            None
        }
    };
    match action {
        ChorAction::Comm { to, .. } => {
            if let Some(key) = &key {
                if !messages_with_key(k, to, key).is_empty() {
                    report.push(
                        "C-WF-Send",
                        &subject,
                        format!("a message with key {key} is already in flight to {to}"),
                    );
                }
            }
        }
        ChorAction::CommInProgress { to, .. } => {
            if let Some(key) = &key {
                let n = messages_with_key(k, to, key).len();
                if n != 1 {
                    report.push(
                        "C-WF-Recv",
                        &subject,
                        format!("expected exactly one message with key {key} at {to}, found {n}"),
                    );
                }
            } else {
                report.push("C-WF-Recv", &subject, "runtime term inside a declaration");
            }
        }
        ChorAction::Select { to, label, .. } => {
            if let Some(key) = &key {
                let clash = messages_with_key(k, to, key)
                    .iter()
                    .any(|m| m.payload == Value::Label(label.clone()));
                if clash {
                    report.push(
                        "C-WF-Select",
                        &subject,
                        format!("selection message ({key},{label}) already in flight to {to}"),
                    );
                }
            }
        }
        ChorAction::SelectInProgress { to, label, .. } => {
            if let Some(key) = &key {
                let present = messages_with_key(k, to, key)
                    .iter()
                    .any(|m| m.payload == Value::Label(label.clone()));
                if !present {
                    report.push(
                        "C-WF-OnSelect",
                        &subject,
                        format!("no selection message ({key},{label}) in flight to {to}"),
                    );
                }
            } else {
                report.push("C-WF-OnSelect", &subject, "runtime term inside a declaration");
            }
        }
        ChorAction::Compute { .. } => {}
        ChorAction::Cond { then_branch, else_branch, .. } => {
            if contains_runtime_terms(then_branch) || contains_runtime_terms(else_branch) {
                report.push("C-WF-If", &subject, "conditional branches contain runtime terms");
            }
        }
        ChorAction::Call { proc, roles, args } => {
            check_call_shape(&mut report, &subject, proc, roles, args, ctx);
        }
        ChorAction::CallInProgress { pending, proc, roles, args, body } => {
            check_call_shape(&mut report, &subject, proc, roles, args, ctx);
            if !pending.iter().all(|r| roles.contains(r)) {
                report.push(
                    "C-WF-Calling",
                    &subject,
                    "pending roles are not a subset of the call roles",
                );
            }
            // Every role that still has to enter must see, in the current
            // body, exactly the local behavior of the declared body.
            if let (Some(decl), Some(key)) = (ctx.by_name.get(proc.as_str()), &key) {
                let callee = next_token(key.line, &key.token);
                match instantiate_procedure(decl, roles, args, &callee) {
                    Err(e) => {
                        report.push("C-WF-Calling", &subject, format!("cannot instantiate: {e}"))
                    }
                    Ok(declared) => {
                        for r in pending {
                            let want = project_role(&declared, r, &ctx.sigs);
                            let have = project_role(body, r, &ctx.sigs);
                            match (want, have) {
                                (Ok(want), Ok(have)) => {
                                    if !branch_geq_flat(&want, &have) {
                                        report.push(
                                            "C-WF-Calling",
                                            &subject,
                                            format!(
                                                "pending role {r} no longer agrees with the \
                                                 declared body of {proc}"
                                            ),
                                        );
                                    }
                                }
                                (Err(e), _) | (_, Err(e)) => {
                                    report.push(
                                        "C-WF-Calling",
                                        &subject,
                                        format!("projection at pending role {r} failed: {e}"),
                                    );
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    report
}

/// The declaration judgment.
pub fn check_decl(decl: &ProcedureDecl, ctx: &DeclContext) -> WfReport {
    let mut report = WfReport::default();
    let subject = decl.name.clone();
    let roles: BTreeSet<_> = decl.roles.iter().collect();
    if roles.len() != decl.roles.len() {
        report.push("C-WF-Def", &subject, "roles are not distinct");
    }
    let params: BTreeSet<_> = decl.params.iter().collect();
    if params.len() != decl.params.len() {
        report.push("C-WF-Def", &subject, "parameters are not distinct");
    }
    for p in &decl.params {
        if !roles.contains(&p.proc) {
            report.push(
                "C-WF-Def",
                &subject,
                format!("parameter {p} is not located at a declared role"),
            );
        }
    }
    let body_procs = pn_chor(&decl.body);
    for p in &body_procs {
        if !roles.contains(p) {
            report.push(
                "C-WF-Def",
                &subject,
                format!("body mentions process {p}, which is not a role"),
            );
        }
    }
    if contains_runtime_terms(&decl.body) {
        report.push("C-WF-Def", &subject, "body contains runtime terms");
    }
    let keys = keys_chor(&decl.body);
    let distinct: BTreeSet<_> = keys.iter().collect();
    if distinct.len() != keys.len() {
        report.push("C-WF-Def", &subject, "instruction keys are not distinct");
    }
    for (line, tok) in &keys {
        if *tok != TokenExpr::Placeholder {
            report.push(
                "C-WF-Def",
                &subject,
                format!("line {line} carries a concrete token inside a declaration"),
            );
        }
    }
    let empty = MessageMap::new();
    for i in crate::syntax::stats(&decl.body) {
        report.absorb(check_instr(i, &empty, ctx, true));
    }
    report
}

/// The configuration judgment.
pub fn check_config(cfg: &ChorConfig, decls: &[ProcedureDecl]) -> WfReport {
    let ctx = DeclContext::new(decls);
    let mut report = WfReport::default();
    let subject = "configuration";

    let procs = pn_chor(&cfg.chor);
    for p in &procs {
        if !cfg.sigma.contains_key(p) {
            report.push("C-WF", subject, format!("process {p} has no store"));
        }
        if !cfg.k.contains_key(p) {
            report.push("C-WF", subject, format!("process {p} has no message set"));
        }
    }

    let free = fv_chor(&cfg.chor);
    if !free.is_empty() {
        let names: Vec<String> = free.iter().map(|v| v.to_string()).collect();
        report.push("C-WF", subject, format!("free variables: {}", names.join(", ")));
    }

    let flat = crate::syntax::stats(&cfg.chor);
    let mut keys: Vec<IntegrityKey> = Vec::new();
    for i in &flat {
        if let Some(annot) = i.key() {
            match &annot.token {
                TokenExpr::Concrete(t) => keys.push(IntegrityKey::new(annot.line, t.clone())),
                TokenExpr::Placeholder => report.push(
                    "C-WF",
                    subject,
                    format!("instruction at line {} carries a token placeholder", annot.line),
                ),
            }
        }
    }
    {
        let distinct: BTreeSet<_> = keys.iter().collect();
        if distinct.len() != keys.len() {
            report.push("C-WF-Keys", subject, "integrity keys are not distinct");
        }
    }

    // Ancestry: a key may prefix another only from a call in progress into
    // its own body.
    for i1 in &flat {
        let Some(k1) = i1.key().and_then(|a| a.integrity_key()) else { continue };
        for i2 in &flat {
            let Some(k2) = i2.key().and_then(|a| a.integrity_key()) else { continue };
            if !strict_prefix(&k1, &k2) {
                continue;
            }
            let inside = match i1 {
                ChorInstr::Keyed(_, ChorAction::CallInProgress { body, .. }) => {
                    crate::syntax::stats(body)
                        .iter()
                        .any(|j| j.key().and_then(|a| a.integrity_key()).as_ref() == Some(&k2))
                }
                _ => false,
            };
            if !inside {
                report.push(
                    "C-WF-Prefix",
                    subject,
                    format!(
                        "key {k1} prefixes {k2} but the former is not a call in progress \
                         containing the latter"
                    ),
                );
            }
        }
    }

    for d in decls {
        report.absorb(check_decl(d, &ctx));
    }
    for i in &flat {
        report.absorb(check_instr(i, &cfg.k, &ctx, false));
    }

    // Every in-flight message is matched by exactly one in-progress term.
    for (to, queue) in &cfg.k {
        for m in queue {
            let key = m.key();
            let same_key = queue
                .iter()
                .filter(|m2| m2.line == m.line && m2.token == m.token)
                .count();
            if same_key != 1 {
                report.push(
                    "C-WF",
                    subject,
                    format!("{same_key} in-flight messages share key {key} at {to}"),
                );
                continue;
            }
            let matched = flat.iter().any(|i| match i {
                ChorInstr::Keyed(annot, ChorAction::CommInProgress { to: t, .. }) => {
                    t == to
                        && annot.integrity_key().as_ref() == Some(&key)
                        && !matches!(m.payload, Value::Label(_))
                }
                ChorInstr::Keyed(annot, ChorAction::SelectInProgress { to: t, label, .. }) => {
                    t == to
                        && annot.integrity_key().as_ref() == Some(&key)
                        && m.payload == Value::Label(label.clone())
                }
                _ => false,
            });
            if !matched {
                report.push(
                    "C-WF-Send",
                    subject,
                    format!("message {key} at {to} has no matching in-progress term"),
                );
            }
        }
    }

    report
}

/// The network judgment: keys distinct within each process.
pub fn check_network(net: &Network) -> WfReport {
    let mut report = WfReport::default();
    for (p, behavior) in net {
        let keys = keys_proc(behavior);
        let distinct: BTreeSet<_> = keys.iter().collect();
        if distinct.len() != keys.len() {
            report.push("N-WF", p.0.clone(), format!("process {p} repeats an integrity key"));
        }
    }
    report
}

/// Lint: conditional guards that call state-changing builtins. Guard
/// effects persist in this implementation, so the warning marks programs
/// whose iteration count depends on that behavior.
pub fn effectful_guard_warnings(
    program: &crate::syntax::Program,
    registry: &crate::eval::BuiltinRegistry,
) -> Vec<String> {
    fn scan(
        c: &Choreography,
        registry: &crate::eval::BuiltinRegistry,
        out: &mut Vec<String>,
    ) {
        for i in &c.0 {
            match i {
                ChorInstr::Block(b) => scan(b, registry, out),
                ChorInstr::Keyed(annot, ChorAction::Cond { at, guard, then_branch, else_branch }) => {
                    if registry.is_effectful_expr(guard) {
                        out.push(format!(
                            "guard of the conditional at line {} ({at}) calls an effectful builtin",
                            annot.line
                        ));
                    }
                    scan(then_branch, registry, out);
                    scan(else_branch, registry, out);
                }
                ChorInstr::Keyed(_, ChorAction::CallInProgress { body, .. }) => {
                    scan(body, registry, out)
                }
                _ => {}
            }
        }
    }
    let mut out = Vec::new();
    for d in &program.decls {
        scan(&d.body, registry, &mut out);
    }
    scan(&program.main, registry, &mut out);
    out
}

/// Convenience: check a parsed program's declarations and initial shape.
pub fn check_program(program: &crate::syntax::Program) -> WfReport {
    let cfg = ChorConfig::initial(
        program.main.clone(),
        crate::eval::initial_sigma(
            &crate::eval::ScenarioConfig::named("default"),
            &pn_chor(&program.main),
        ),
    );
    check_config(&cfg, &program.decls)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chor::Message;
    use crate::eval::{initial_sigma, ScenarioConfig};
    use crate::parser::parse_program;
    use crate::syntax::{KeyAnnot, Label};
    use crate::token::Token;

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

    fn initial(program: &crate::syntax::Program) -> ChorConfig {
        ChorConfig::initial(
            program.main.clone(),
            initial_sigma(&ScenarioConfig::named("buyitem"), &pn_chor(&program.main)),
        )
    }

    #[test]
    fn buy_item_declaration_is_well_formed() {
        let program = parse_program(BUYITEM).unwrap();
        let ctx = DeclContext::new(&program.decls);
        let report = check_decl(&program.decls[0], &ctx);
        assert!(report.verdict(), "{:?}", report.violations);
    }

    #[test]
    fn buy_item_initial_configuration_is_well_formed() {
        let program = parse_program(BUYITEM).unwrap();
        let report = check_config(&initial(&program), &program.decls);
        assert!(report.verdict(), "{:?}", report.violations);
    }

    #[test]
    fn decl_mentioning_foreign_role_is_rejected() {
        let program = parse_program(BUYITEM).unwrap();
        let mut decl = program.decls[0].clone();
        // Rename one role binder but not the body occurrences.
        decl.roles[0] = ProcName::new("z");
        let ctx_decls = vec![decl.clone()];
        let ctx = DeclContext::new(&ctx_decls);
        let report = check_decl(&decl, &ctx);
        assert!(report.violations.iter().any(|v| v.rule == "C-WF-Def"));
    }

    #[test]
    fn decl_with_duplicate_lines_is_rejected() {
        let program = parse_program(BUYITEM).unwrap();
        let mut decl = program.decls[0].clone();
        if let ChorInstr::Keyed(k, _) = &mut decl.body.0[1] {
            k.line = 1;
        }
        let ctx_decls = vec![decl.clone()];
        let ctx = DeclContext::new(&ctx_decls);
        let report = check_decl(&decl, &ctx);
        assert!(report
            .violations
            .iter()
            .any(|v| v.rule == "C-WF-Def" && v.message.contains("distinct")));
    }

    #[test]
    fn compute_always_passes_its_rule() {
        let program = parse_program(BUYITEM).unwrap();
        let ctx = DeclContext::new(&program.decls);
        let instr = &program.decls[0].body.0[1];
        assert!(check_instr(instr, &MessageMap::new(), &ctx, true).verdict());
    }

    /// The four canonical unreachable configurations, each rejected by the
    /// rule that makes it unreachable.
    #[test]
    fn unreachable_configurations_are_rejected() {
        let p = ProcName::new("p");
        let q = ProcName::new("q");
        let sigma: std::collections::BTreeMap<_, _> = [
            (p.clone(), crate::eval::ProcState::default()),
            (q.clone(), crate::eval::ProcState::default()),
        ]
        .into_iter()
        .collect();

        // (1) a communication in progress with no matching message
        let cfg1 = ChorConfig::initial(
            Choreography(vec![ChorInstr::Keyed(
                KeyAnnot::concrete(1, Token::initial()),
                ChorAction::CommInProgress { from: p.clone(), to: q.clone(), var: "x".into() },
            )]),
            sigma.clone(),
        );
        let r1 = check_config(&cfg1, &[]);
        assert!(r1.violations.iter().any(|v| v.rule == "C-WF-Recv"), "{:?}", r1.violations);

        // (2) a message that, per the choreography, has not been sent yet
        let mut cfg2 = ChorConfig::initial(
            Choreography(vec![ChorInstr::Keyed(
                KeyAnnot::concrete(1, Token::initial()),
                ChorAction::Comm {
                    from: p.clone(),
                    expr: crate::syntax::Expr::val(Value::Int(1), "p"),
                    to: q.clone(),
                    var: "x".into(),
                },
            )]),
            sigma.clone(),
        );
        cfg2.k.get_mut(&q).unwrap().push(Message {
            line: 1,
            token: Token::initial(),
            payload: Value::Int(7),
        });
        let r2 = check_config(&cfg2, &[]);
        assert!(r2.violations.iter().any(|v| v.rule == "C-WF-Send"), "{:?}", r2.violations);

        // (3) two instructions sharing one integrity key
        let comm = |var: &str| {
            ChorInstr::Keyed(
                KeyAnnot::concrete(1, Token(vec![2])),
                ChorAction::Comm {
                    from: p.clone(),
                    expr: crate::syntax::Expr::val(Value::Int(1), "p"),
                    to: q.clone(),
                    var: var.into(),
                },
            )
        };
        let cfg3 = ChorConfig::initial(
            Choreography(vec![
                ChorInstr::Block(Choreography(vec![comm("x")])),
                ChorInstr::Block(Choreography(vec![comm("y")])),
            ]),
            sigma.clone(),
        );
        let r3 = check_config(&cfg3, &[]);
        assert!(r3.violations.iter().any(|v| v.rule == "C-WF-Keys"), "{:?}", r3.violations);

        // (4) a body key whose ancestor is not its enclosing call
        let decl = ProcedureDecl {
            name: "X".into(),
            roles: vec![p.clone(), q.clone()],
            params: vec![],
            body: Choreography(vec![ChorInstr::Keyed(
                KeyAnnot::placeholder(1),
                ChorAction::Comm {
                    from: p.clone(),
                    expr: crate::syntax::Expr::val(Value::Int(1), "p"),
                    to: q.clone(),
                    var: "x".into(),
                },
            )]),
        };
        let cfg4 = ChorConfig::initial(
            Choreography(vec![ChorInstr::Keyed(
                KeyAnnot::concrete(3, Token::initial()),
                ChorAction::CallInProgress {
                    pending: vec![p.clone()],
                    proc: "X".into(),
                    roles: vec![p.clone(), q.clone()],
                    args: vec![],
                    // Body keyed with the initial token instead of
                    // nextToken(3, []): ancestry is broken.
                    body: Choreography(vec![ChorInstr::Keyed(
                        KeyAnnot::concrete(1, Token::initial()),
                        ChorAction::Comm {
                            from: p.clone(),
                            expr: crate::syntax::Expr::val(Value::Int(1), "p"),
                            to: q.clone(),
                            var: "x".into(),
                        },
                    )]),
                },
            )]),
            sigma,
        );
        let r4 = check_config(&cfg4, &[decl]);
        assert!(
            !r4.verdict() && r4.violations.iter().any(|v| v.rule.starts_with("C-WF")),
            "{:?}",
            r4.violations
        );
    }

    #[test]
    fn projected_buy_item_network_is_well_formed() {
        let program = parse_program(BUYITEM).unwrap();
        let (_, net) = crate::epp::project_program(&program).unwrap();
        assert!(check_network(&net).verdict());
        assert!(check_network(&Network::new()).verdict());
    }

    #[test]
    fn duplicate_branch_keys_in_a_network_are_rejected() {
        let branch = |body: crate::syntax::ProcessBehavior| crate::syntax::ProcInstr::Branch {
            options: vec![crate::syntax::BranchOption {
                key: KeyAnnot::concrete(1, Token::initial()),
                label: Label::new("L"),
                body,
            }],
        };
        let mut net = Network::new();
        net.insert(
            ProcName::new("p"),
            crate::syntax::ProcessBehavior(vec![
                branch(crate::syntax::ProcessBehavior::nil()),
                branch(crate::syntax::ProcessBehavior::nil()),
            ]),
        );
        assert!(!check_network(&net).verdict());
    }

    #[test]
    fn effectful_guard_lint_flags_streamit_style_guards() {
        let program = parse_program(
            r#"
proc Stream(p, c) {
  p.produce() -> c.x;
  if p.(itemsLeft() > 0) { p -> c [More]; Stream(p, c); } else { p -> c [Done]; }
}
main { Stream(p1, c); }
"#,
        )
        .unwrap();
        let registry = crate::eval::BuiltinRegistry::standard();
        assert_eq!(effectful_guard_warnings(&program, &registry).len(), 1);
    }
}
