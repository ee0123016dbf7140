//! Expression evaluation against per-process state.
//!
//! Evaluation is deterministic given the state, so all nondeterminism in an
//! execution comes from scheduling. Builtins may mutate the owner's state
//! only; pure builtins return it unchanged. States are persistent values:
//! evaluation returns the updated state rather than mutating in place.

use crate::syntax::{Atom, Expr, PAtom, PExpr, ProcName, Value};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// The local state of one process: a keyed store plus a deterministic
/// counter stream (used by `produce`, `getText`, `getKey`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Default)]
pub struct ProcState {
    pub store: BTreeMap<String, Value>,
    pub counter: u64,
}

impl ProcState {
    pub fn with_counter(counter: u64) -> Self {
        ProcState { store: BTreeMap::new(), counter }
    }

    fn next_count(&mut self) -> u64 {
        let c = self.counter;
        self.counter += 1;
        c
    }

    fn int(&self, key: &str) -> i64 {
        match self.store.get(key) {
            Some(Value::Int(n)) => *n,
            _ => 0,
        }
    }

    fn append_log(&mut self, key: &str, entry: &str) {
        let log = match self.store.get(key) {
            Some(Value::Str(s)) => format!("{s}{entry};"),
            _ => format!("{entry};"),
        };
        self.store.insert(key.to_string(), Value::Str(log));
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("unknown builtin '{0}'")]
    UnknownBuiltin(String),
    #[error("builtin '{func}' expects {expected} arguments, got {got}")]
    Arity { func: String, expected: usize, got: usize },
    #[error("type error in '{func}': {msg}")]
    TypeError { func: String, msg: String },
    #[error("expression is not closed: free variable '{0}'")]
    OpenExpression(String),
    #[error("builtin '{0}' registered twice")]
    DuplicateBuiltin(String),
}

type BuiltinFn = fn(&str, &[Value], &mut ProcState) -> Result<Value, EvalError>;

/// A named builtin with an arity and a state-transformer semantics.
#[derive(Clone)]
pub struct Builtin {
    pub arity: usize,
    f: BuiltinFn,
}

/// The table of functions expressions may apply.
#[derive(Clone, Default)]
pub struct BuiltinRegistry {
    fns: BTreeMap<String, Builtin>,
    constants: BTreeMap<String, Value>,
}

fn type_err(func: &str, msg: impl Into<String>) -> EvalError {
    EvalError::TypeError { func: func.into(), msg: msg.into() }
}

fn int_arg(func: &str, v: &Value) -> Result<i64, EvalError> {
    match v {
        Value::Int(n) => Ok(*n),
        other => Err(type_err(func, format!("expected integer, got {other}"))),
    }
}

fn builtin_dispatch(func: &str, args: &[Value], sigma: &mut ProcState) -> Result<Value, EvalError> {
    match func {
        "+" => match (&args[0], &args[1]) {
            (Value::Int(a), Value::Int(b)) => Ok(Value::Int(a + b)),
            (Value::Str(a), Value::Str(b)) => Ok(Value::Str(format!("{a}{b}"))),
            _ => Err(type_err(func, "expected two integers or two strings")),
        },
        "-" => Ok(Value::Int(int_arg(func, &args[0])? - int_arg(func, &args[1])?)),
        "*" => Ok(Value::Int(int_arg(func, &args[0])? * int_arg(func, &args[1])?)),
        "<" => Ok(Value::Bool(int_arg(func, &args[0])? < int_arg(func, &args[1])?)),
        ">" => Ok(Value::Bool(int_arg(func, &args[0])? > int_arg(func, &args[1])?)),
        "==" => Ok(Value::Bool(args[0] == args[1])),
        "not" => match &args[0] {
            Value::Bool(b) => Ok(Value::Bool(!b)),
            other => Err(type_err(func, format!("expected boolean, got {other}"))),
        },
        "concat" => Ok(Value::Str(format!(
            "{}{}",
            args[0].render_plain(),
            args[1].render_plain()
        ))),
        "load" => Ok(sigma
            .store
            .get(&args[0].render_plain())
            .cloned()
            .unwrap_or(Value::Null)),
        "store" => {
            sigma.store.insert(args[0].render_plain(), args[1].clone());
            Ok(Value::Unit)
        }
        "produce" => Ok(Value::Int(sigma.next_count() as i64)),
        "consume" => {
            sigma.append_log("consumed", &args[0].render_plain());
            Ok(Value::Unit)
        }
        "sell" => {
            let stock = sigma.int("stock");
            if stock > 0 {
                sigma.store.insert("stock".into(), Value::Int(stock - 1));
                Ok(args[0].clone())
            } else {
                Ok(Value::Null)
            }
        }
        "itemsLeft" => {
            let n = sigma.int("remaining");
            sigma.store.insert("remaining".into(), Value::Int((n - 1).max(0)));
            Ok(Value::Int(n))
        }
        "getText" => Ok(Value::Str(format!("txt#{}", sigma.next_count()))),
        "getKey" => Ok(Value::Str(format!("key#{}", sigma.next_count()))),
        "display" => {
            sigma.append_log("displayed", &args[0].render_plain());
            Ok(Value::Unit)
        }
        "decrypt" => {
            sigma.append_log("decrypted", &args[0].render_plain());
            Ok(Value::Unit)
        }
        "transform" => Ok(Value::Str(format!("T({})", args[0].render_plain()))),
        "process" => Ok(Value::Str(format!("P({})", args[0].render_plain()))),
        "compute" => Ok(Value::Str(format!("C({})", args[0].render_plain()))),
        _ => Err(EvalError::UnknownBuiltin(func.into())),
    }
}

/// Builtins whose evaluation changes the owner's state.
pub const EFFECTFUL_BUILTINS: &[&str] = &[
    "store", "produce", "consume", "sell", "itemsLeft", "getText", "getKey", "display", "decrypt",
];

impl BuiltinRegistry {
    /// The standard registry: arithmetic and comparison, string concat, the
    /// generic store, and the scenario functions of the shipped corpus.
    pub fn standard() -> Self {
        let mut reg = BuiltinRegistry::default();
        let table: &[(&str, usize)] = &[
            ("+", 2),
            ("-", 2),
            ("*", 2),
            ("<", 2),
            (">", 2),
            ("==", 2),
            ("not", 1),
            ("concat", 2),
            ("load", 1),
            ("store", 2),
            ("produce", 0),
            ("consume", 1),
            ("sell", 1),
            ("itemsLeft", 0),
            ("getText", 0),
            ("getKey", 0),
            ("display", 1),
            ("decrypt", 1),
            ("transform", 1),
            ("process", 1),
            ("compute", 1),
        ];
        for (name, arity) in table {
            reg.fns.insert(name.to_string(), Builtin { arity: *arity, f: builtin_dispatch });
        }
        reg
    }

    /// Register a nullary constant function. Fails on any name collision.
    pub fn register_constant(&mut self, name: &str, value: Value) -> Result<(), EvalError> {
        if self.fns.contains_key(name) || self.constants.contains_key(name) {
            return Err(EvalError::DuplicateBuiltin(name.into()));
        }
        self.constants.insert(name.into(), value);
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.fns.contains_key(name) || self.constants.contains_key(name)
    }

    pub fn apply(
        &self,
        func: &str,
        args: &[Value],
        sigma: &mut ProcState,
    ) -> Result<Value, EvalError> {
        if let Some(v) = self.constants.get(func) {
            if !args.is_empty() {
                return Err(EvalError::Arity { func: func.into(), expected: 0, got: args.len() });
            }
            return Ok(v.clone());
        }
        let b = self
            .fns
            .get(func)
            .ok_or_else(|| EvalError::UnknownBuiltin(func.to_string()))?;
        if args.len() != b.arity {
            return Err(EvalError::Arity { func: func.into(), expected: b.arity, got: args.len() });
        }
        (b.f)(func, args, sigma)
    }

    /// True iff the expression applies a state-changing builtin somewhere.
    pub fn is_effectful_pexpr(&self, e: &PExpr) -> bool {
        EFFECTFUL_BUILTINS.iter().any(|f| e.mentions_builtin(f))
    }

    pub fn is_effectful_expr(&self, e: &Expr) -> bool {
        match e {
            Expr::Atom(_) => false,
            Expr::Apply { func, args } => {
                EFFECTFUL_BUILTINS.contains(&func.as_str())
                    || args.iter().any(|a| self.is_effectful_expr(a))
            }
        }
    }
}

/// True iff the choreography expression contains no variable atoms.
pub fn closed(e: &Expr) -> bool {
    e.is_closed()
}

/// Evaluate a closed choreography-level expression. Applications evaluate
/// their arguments innermost-leftmost; atoms evaluate to their value.
pub fn eval(
    registry: &BuiltinRegistry,
    sigma: &ProcState,
    e: &Expr,
) -> Result<(Value, ProcState), EvalError> {
    let mut state = sigma.clone();
    let v = eval_expr(registry, &mut state, e)?;
    Ok((v, state))
}

fn eval_expr(
    registry: &BuiltinRegistry,
    sigma: &mut ProcState,
    e: &Expr,
) -> Result<Value, EvalError> {
    match e {
        Expr::Atom(Atom::Val { value, .. }) => Ok(value.clone()),
        Expr::Atom(Atom::Var(lv)) => Err(EvalError::OpenExpression(lv.to_string())),
        Expr::Apply { func, args } => {
            let mut vals = Vec::with_capacity(args.len());
            for a in args {
                vals.push(eval_expr(registry, sigma, a)?);
            }
            registry.apply(func, &vals, sigma)
        }
    }
}

/// Evaluate a closed process-level expression.
pub fn eval_proc(
    registry: &BuiltinRegistry,
    sigma: &ProcState,
    e: &PExpr,
) -> Result<(Value, ProcState), EvalError> {
    let mut state = sigma.clone();
    let v = eval_pexpr(registry, &mut state, e)?;
    Ok((v, state))
}

fn eval_pexpr(
    registry: &BuiltinRegistry,
    sigma: &mut ProcState,
    e: &PExpr,
) -> Result<Value, EvalError> {
    match e {
        PExpr::Atom(PAtom::Val(v)) => Ok(v.clone()),
        PExpr::Atom(PAtom::Var(x)) => Err(EvalError::OpenExpression(x.clone())),
        PExpr::Apply { func, args } => {
            let mut vals = Vec::with_capacity(args.len());
            for a in args {
                vals.push(eval_pexpr(registry, sigma, a)?);
            }
            registry.apply(func, &vals, sigma)
        }
    }
}

// ---------------------------------------------------------------------------
// Scenarios
// ---------------------------------------------------------------------------

/// Initial-state presets selected by name, plus per-process store overrides.
#[derive(Debug, Clone, Default)]
pub struct ScenarioConfig {
    pub preset: String,
    /// Extra nullary constant builtins, `name = value`.
    pub constants: Vec<(String, Value)>,
    /// Store overrides applied last: `(process, key, value)`.
    pub overrides: Vec<(ProcName, String, Value)>,
}

impl ScenarioConfig {
    pub fn named(preset: &str) -> Self {
        ScenarioConfig { preset: preset.into(), ..Default::default() }
    }
}

/// Build the builtin registry for a scenario.
pub fn register_builtins(config: &ScenarioConfig) -> Result<BuiltinRegistry, EvalError> {
    let mut reg = BuiltinRegistry::standard();
    for (name, value) in &config.constants {
        reg.register_constant(name, value.clone())?;
    }
    Ok(reg)
}

/// Build the initial store map. Every process receives a distinct counter
/// seed (in name order), so produced values identify their producer. The
/// presets seed the keys their builtins read: `stock` for sales, `remaining`
/// for bounded streams.
pub fn initial_sigma(
    config: &ScenarioConfig,
    processes: &BTreeSet<ProcName>,
) -> BTreeMap<ProcName, ProcState> {
    let mut sigma = BTreeMap::new();
    for (i, p) in processes.iter().enumerate() {
        let mut st = ProcState::with_counter(1000 * (i as u64 + 1));
        match config.preset.as_str() {
            "buyitem" => {
                st.store.insert("stock".into(), Value::Int(1));
            }
            "streamit" => {
                st.store.insert("remaining".into(), Value::Int(1));
            }
            _ => {}
        }
        sigma.insert(p.clone(), st);
    }
    for (p, key, value) in &config.overrides {
        if let Some(st) = sigma.get_mut(p) {
            st.store.insert(key.clone(), value.clone());
        }
    }
    sigma
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reg() -> BuiltinRegistry {
        BuiltinRegistry::standard()
    }

    #[test]
    fn closed_examples() {
        assert!(closed(&Expr::val(Value::Int(7), "p")));
        assert!(!closed(&Expr::Apply {
            func: "f".into(),
            args: vec![Expr::var("p", "x")]
        }));
        assert!(closed(&Expr::Apply {
            func: "sell".into(),
            args: vec![Expr::val(Value::Int(123), "s")]
        }));
    }

    #[test]
    fn atoms_evaluate_to_their_value() {
        let sigma = ProcState::default();
        let (v, sigma2) = eval(&reg(), &sigma, &Expr::val(Value::Int(5), "p")).unwrap();
        assert_eq!(v, Value::Int(5));
        assert_eq!(sigma, sigma2);
    }

    #[test]
    fn sell_decrements_stock_then_returns_null() {
        let mut sigma = ProcState::default();
        sigma.store.insert("stock".into(), Value::Int(1));
        let e = Expr::Apply { func: "sell".into(), args: vec![Expr::val(Value::Int(123), "s")] };
        let (v1, sigma1) = eval(&reg(), &sigma, &e).unwrap();
        assert_eq!(v1, Value::Int(123));
        assert_eq!(sigma1.store.get("stock"), Some(&Value::Int(0)));
        let (v2, sigma2) = eval(&reg(), &sigma1, &e).unwrap();
        assert_eq!(v2, Value::Null);
        assert_eq!(sigma2.store.get("stock"), Some(&Value::Int(0)));
    }

    #[test]
    fn produce_follows_the_counter_stream() {
        let sigma = ProcState::with_counter(42);
        let e = Expr::Apply { func: "produce".into(), args: vec![] };
        let (v, sigma1) = eval(&reg(), &sigma, &e).unwrap();
        assert_eq!(v, Value::Int(42));
        assert_eq!(sigma1.counter, 43);
        let (v2, _) = eval(&reg(), &sigma1, &e).unwrap();
        assert_eq!(v2, Value::Int(43));
    }

    #[test]
    fn items_left_counts_down_and_saturates() {
        let mut sigma = ProcState::default();
        sigma.store.insert("remaining".into(), Value::Int(2));
        let e = Expr::Apply { func: "itemsLeft".into(), args: vec![] };
        let mut got = Vec::new();
        for _ in 0..3 {
            let (v, s) = eval(&reg(), &sigma, &e).unwrap();
            got.push(v);
            sigma = s;
        }
        assert_eq!(got, vec![Value::Int(2), Value::Int(1), Value::Int(0)]);
        assert_eq!(sigma.store.get("remaining"), Some(&Value::Int(0)));
    }

    #[test]
    fn load_of_absent_key_is_null() {
        let sigma = ProcState::default();
        let e = Expr::Apply {
            func: "load".into(),
            args: vec![Expr::val(Value::Str("missing".into()), "p")],
        };
        let (v, _) = eval(&reg(), &sigma, &e).unwrap();
        assert_eq!(v, Value::Null);
    }

    #[test]
    fn display_appends_to_the_display_log() {
        let sigma = ProcState::default();
        let e = Expr::Apply {
            func: "display".into(),
            args: vec![Expr::val(Value::Str("a".into()), "p")],
        };
        let (v, sigma1) = eval(&reg(), &sigma, &e).unwrap();
        assert_eq!(v, Value::Unit);
        assert_eq!(sigma1.store.get("displayed"), Some(&Value::Str("a;".into())));
    }

    #[test]
    fn evaluation_is_deterministic() {
        let mut sigma = ProcState::with_counter(7);
        sigma.store.insert("stock".into(), Value::Int(3));
        let e = Expr::Apply {
            func: "+".into(),
            args: vec![
                Expr::Apply { func: "produce".into(), args: vec![] },
                Expr::Apply {
                    func: "sell".into(),
                    args: vec![Expr::val(Value::Int(2), "p")],
                },
            ],
        };
        assert_eq!(eval(&reg(), &sigma, &e), eval(&reg(), &sigma, &e));
    }

    #[test]
    fn pure_builtins_leave_state_unchanged() {
        let mut sigma = ProcState::with_counter(3);
        sigma.store.insert("k".into(), Value::Int(1));
        for (f, args) in [
            ("+", vec![Value::Int(1), Value::Int(2)]),
            ("<", vec![Value::Int(1), Value::Int(2)]),
            ("==", vec![Value::Int(1), Value::Int(2)]),
        ] {
            let mut s = sigma.clone();
            reg().apply(f, &args, &mut s).unwrap();
            assert_eq!(s, sigma, "builtin {f} must be pure");
        }
    }

    #[test]
    fn open_expression_is_reported() {
        let sigma = ProcState::default();
        let err = eval(&reg(), &sigma, &Expr::var("p", "x")).unwrap_err();
        assert!(matches!(err, EvalError::OpenExpression(_)));
    }

    #[test]
    fn duplicate_builtin_is_rejected() {
        let mut cfg = ScenarioConfig::named("default");
        cfg.constants.push(("produce".into(), Value::Int(0)));
        assert!(matches!(register_builtins(&cfg), Err(EvalError::DuplicateBuiltin(_))));
    }

    #[test]
    fn scenario_counter_seeds_are_distinct() {
        let procs: BTreeSet<ProcName> =
            ["p1", "p2", "q"].into_iter().map(ProcName::new).collect();
        let sigma = initial_sigma(&ScenarioConfig::named("producers"), &procs);
        let counters: BTreeSet<u64> = sigma.values().map(|s| s.counter).collect();
        assert_eq!(counters.len(), 3);
    }
}
