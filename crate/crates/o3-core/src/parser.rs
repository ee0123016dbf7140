//! Parser for the `.chor` surface language.
//!
//! Grammar (informal):
//!
//! ```text
//! program  := decl* "main" "{" chor "}"
//! decl     := "proc" NAME "(" roles [";" params] ")" "{" chor "}"
//! chor     := item*
//! item     := "{" chor "}"
//!           | "if" proc "." expr "{" chor "}" "else" "{" chor "}"
//!           | NAME "(" roles [";" args] ")" ";"
//!           | proc "->" proc "[" LABEL "]" ";"
//!           | proc "." expr "->" proc "." var ";"
//!           | proc "." var "=" expr ";"
//! ```
//!
//! Processes and variables are lowercase identifiers (a trailing `?` is
//! allowed in variables), labels and procedure names are uppercase. Inside
//! an expression, bare identifiers are variables of the owning process and
//! literals are located there too. Call arguments are literals (located at
//! the role position they fill) or explicitly located variables `p.x`.
//!
//! Line numbers are logical: keyed instructions are numbered 1, 2, 3, ... in
//! source order, declarations first and then the main choreography, so
//! reformatting a file never changes its integrity keys. Declaration bodies
//! get placeholder tokens; the main choreography gets the initial token.

use crate::syntax::{
    keys_chor, Atom, ChorAction, ChorInstr, Choreography, Expr, KeyAnnot, Label, LocatedVar,
    ProcName, ProcedureDecl, Program, Value,
};
use crate::token::{Line, Token};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at {line}:{col}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
    pub expected: Vec<String>,
}

impl ParseError {
    fn new(pos: (usize, usize), message: impl Into<String>, expected: &[&str]) -> Self {
        ParseError {
            line: pos.0,
            col: pos.1,
            message: message.into(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Upper(String),
    Int(i64),
    Str(String),
    KwProc,
    KwMain,
    KwIf,
    KwElse,
    KwTrue,
    KwFalse,
    KwNull,
    Dot,
    Comma,
    Semi,
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Arrow,
    Eq,
    EqEq,
    Lt,
    Gt,
    Plus,
    Minus,
    Star,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier '{s}'"),
            Tok::Upper(s) => format!("name '{s}'"),
            Tok::Int(n) => format!("integer {n}"),
            Tok::Str(_) => "string literal".into(),
            Tok::Eof => "end of input".into(),
            other => format!("'{}'", other.lexeme()),
        }
    }

    fn lexeme(&self) -> &'static str {
        match self {
            Tok::KwProc => "proc",
            Tok::KwMain => "main",
            Tok::KwIf => "if",
            Tok::KwElse => "else",
            Tok::KwTrue => "true",
            Tok::KwFalse => "false",
            Tok::KwNull => "null",
            Tok::Dot => ".",
            Tok::Comma => ",",
            Tok::Semi => ";",
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::LBrace => "{",
            Tok::RBrace => "}",
            Tok::LBracket => "[",
            Tok::RBracket => "]",
            Tok::Arrow => "->",
            Tok::Eq => "=",
            Tok::EqEq => "==",
            Tok::Lt => "<",
            Tok::Gt => ">",
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::Star => "*",
            _ => "",
        }
    }
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer { src: src.as_bytes(), pos: 0, line: 1, col: 1 }
    }

    fn bump(&mut self) -> Option<u8> {
        let b = self.src.get(self.pos).copied()?;
        self.pos += 1;
        if b == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(b)
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn lex(mut self) -> Result<Vec<(Tok, (usize, usize))>, ParseError> {
        let mut out = Vec::new();
        loop {
            while let Some(b) = self.peek() {
                if b.is_ascii_whitespace() {
                    self.bump();
                } else if b == b'/' && self.src.get(self.pos + 1) == Some(&b'/') {
                    while let Some(b) = self.peek() {
                        if b == b'\n' {
                            break;
                        }
                        self.bump();
                    }
                } else {
                    break;
                }
            }
            let pos = (self.line, self.col);
            let Some(b) = self.peek() else {
                out.push((Tok::Eof, pos));
                return Ok(out);
            };
            let tok = match b {
                b'a'..=b'z' | b'_' => {
                    let mut s = String::new();
                    while let Some(c) = self.peek() {
                        if c.is_ascii_alphanumeric() || c == b'_' {
                            s.push(c as char);
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    if self.peek() == Some(b'?') {
                        s.push('?');
                        self.bump();
                    }
                    match s.as_str() {
                        "proc" => Tok::KwProc,
                        "main" => Tok::KwMain,
                        "if" => Tok::KwIf,
                        "else" => Tok::KwElse,
                        "true" => Tok::KwTrue,
                        "false" => Tok::KwFalse,
                        "null" => Tok::KwNull,
                        _ => Tok::Ident(s),
                    }
                }
                b'A'..=b'Z' => {
                    let mut s = String::new();
                    while let Some(c) = self.peek() {
                        if c.is_ascii_alphanumeric() || c == b'_' {
                            s.push(c as char);
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    Tok::Upper(s)
                }
                b'0'..=b'9' => {
                    let mut n: i64 = 0;
                    while let Some(c) = self.peek() {
                        if c.is_ascii_digit() {
                            n = n * 10 + (c - b'0') as i64;
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    Tok::Int(n)
                }
                b'"' => {
                    self.bump();
                    let mut s = String::new();
                    loop {
                        match self.bump() {
                            None => {
                                return Err(ParseError::new(pos, "unterminated string", &["\""]))
                            }
                            Some(b'"') => break,
                            Some(b'\\') => match self.bump() {
                                Some(b'n') => s.push('\n'),
                                Some(b'"') => s.push('"'),
                                Some(b'\\') => s.push('\\'),
                                _ => {
                                    return Err(ParseError::new(
                                        pos,
                                        "bad escape in string",
                                        &["n", "\"", "\\\\"],
                                    ))
                                }
                            },
                            Some(c) => s.push(c as char),
                        }
                    }
                    Tok::Str(s)
                }
                b'-' => {
                    self.bump();
                    if self.peek() == Some(b'>') {
                        self.bump();
                        Tok::Arrow
                    } else {
                        Tok::Minus
                    }
                }
                b'=' => {
                    self.bump();
                    if self.peek() == Some(b'=') {
                        self.bump();
                        Tok::EqEq
                    } else {
                        Tok::Eq
                    }
                }
                b'.' => {
                    self.bump();
                    Tok::Dot
                }
                b',' => {
                    self.bump();
                    Tok::Comma
                }
                b';' => {
                    self.bump();
                    Tok::Semi
                }
                b'(' => {
                    self.bump();
                    Tok::LParen
                }
                b')' => {
                    self.bump();
                    Tok::RParen
                }
                b'{' => {
                    self.bump();
                    Tok::LBrace
                }
                b'}' => {
                    self.bump();
                    Tok::RBrace
                }
                b'[' => {
                    self.bump();
                    Tok::LBracket
                }
                b']' => {
                    self.bump();
                    Tok::RBracket
                }
                b'<' => {
                    self.bump();
                    Tok::Lt
                }
                b'>' => {
                    self.bump();
                    Tok::Gt
                }
                b'+' => {
                    self.bump();
                    Tok::Plus
                }
                b'*' => {
                    self.bump();
                    Tok::Star
                }
                other => {
                    return Err(ParseError::new(
                        pos,
                        format!("unexpected character '{}'", other as char),
                        &[],
                    ))
                }
            };
            out.push((tok, pos));
        }
    }
}

/// A call argument before literal locations are resolved against the
/// procedure signature.
#[derive(Debug, Clone)]
enum RawArg {
    Lit(Value),
    Var(ProcName, String),
}

#[derive(Debug, Clone)]
struct RawCall {
    args: Vec<RawArg>,
    pos: (usize, usize),
}

struct Parser {
    toks: Vec<(Tok, (usize, usize))>,
    i: usize,
    next_line: Line,
    /// Call sites indexed by instruction line, resolved after all
    /// declarations are known.
    calls: BTreeMap<Line, RawCall>,
    labels: BTreeSet<Label>,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.i].0
    }

    fn peek2(&self) -> &Tok {
        &self.toks[(self.i + 1).min(self.toks.len() - 1)].0
    }

    fn pos(&self) -> (usize, usize) {
        self.toks[self.i].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.i].0.clone();
        if self.i + 1 < self.toks.len() {
            self.i += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok) -> Result<(), ParseError> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            Err(ParseError::new(
                self.pos(),
                format!("expected {} but found {}", want.describe(), self.peek().describe()),
                &[want.lexeme()],
            ))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            other => Err(ParseError::new(
                self.pos(),
                format!("expected {what} but found {}", other.describe()),
                &["identifier"],
            )),
        }
    }

    fn upper(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Upper(s) => {
                self.bump();
                Ok(s)
            }
            other => Err(ParseError::new(
                self.pos(),
                format!("expected {what} but found {}", other.describe()),
                &["name"],
            )),
        }
    }

    fn fresh_line(&mut self) -> Line {
        let l = self.next_line;
        self.next_line += 1;
        l
    }

    fn key(&mut self, in_decl: bool) -> KeyAnnot {
        let line = self.fresh_line();
        if in_decl {
            KeyAnnot::placeholder(line)
        } else {
            KeyAnnot::concrete(line, Token::initial())
        }
    }

    fn literal(&mut self) -> Option<Value> {
        let v = match self.peek().clone() {
            Tok::Int(n) => Value::Int(n),
            Tok::Str(s) => Value::Str(s),
            Tok::KwTrue => Value::Bool(true),
            Tok::KwFalse => Value::Bool(false),
            Tok::KwNull => Value::Null,
            Tok::Minus => {
                if let Tok::Int(n) = self.peek2().clone() {
                    self.bump();
                    self.bump();
                    return Some(Value::Int(-n));
                }
                return None;
            }
            _ => return None,
        };
        self.bump();
        Some(v)
    }

    /// Expression owned by `at`: bare identifiers become variables located
    /// there, literals become values located there.
    fn expr(&mut self, at: &ProcName) -> Result<Expr, ParseError> {
        let lhs = self.addsub(at)?;
        let op = match self.peek() {
            Tok::Lt => "<",
            Tok::Gt => ">",
            Tok::EqEq => "==",
            _ => return Ok(lhs),
        };
        self.bump();
        let rhs = self.addsub(at)?;
        Ok(Expr::Apply { func: op.into(), args: vec![lhs, rhs] })
    }

    fn addsub(&mut self, at: &ProcName) -> Result<Expr, ParseError> {
        let mut lhs = self.muldiv(at)?;
        loop {
            let op = match self.peek() {
                Tok::Plus => "+",
                Tok::Minus => "-",
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.muldiv(at)?;
            lhs = Expr::Apply { func: op.into(), args: vec![lhs, rhs] };
        }
    }

    fn muldiv(&mut self, at: &ProcName) -> Result<Expr, ParseError> {
        let mut lhs = self.primary(at)?;
        while *self.peek() == Tok::Star {
            self.bump();
            let rhs = self.primary(at)?;
            lhs = Expr::Apply { func: "*".into(), args: vec![lhs, rhs] };
        }
        Ok(lhs)
    }

    fn primary(&mut self, at: &ProcName) -> Result<Expr, ParseError> {
        if let Some(v) = self.literal() {
            return Ok(Expr::Atom(Atom::Val { value: v, at: at.clone() }));
        }
        match self.peek().clone() {
            Tok::LParen => {
                self.bump();
                let e = self.expr(at)?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.bump();
                if *self.peek() == Tok::LParen {
                    self.bump();
                    let mut args = Vec::new();
                    if *self.peek() != Tok::RParen {
                        loop {
                            args.push(self.expr(at)?);
                            if *self.peek() == Tok::Comma {
                                self.bump();
                            } else {
                                break;
                            }
                        }
                    }
                    self.expect(Tok::RParen)?;
                    Ok(Expr::Apply { func: name, args })
                } else {
                    Ok(Expr::Atom(Atom::Var(LocatedVar { proc: at.clone(), name })))
                }
            }
            other => Err(ParseError::new(
                self.pos(),
                format!("expected expression but found {}", other.describe()),
                &["literal", "identifier", "("],
            )),
        }
    }

    fn chor(&mut self, in_decl: bool) -> Result<Choreography, ParseError> {
        let mut items = Vec::new();
        loop {
            match self.peek().clone() {
                Tok::RBrace | Tok::Eof => return Ok(Choreography(items)),
                Tok::LBrace => {
                    self.bump();
                    let inner = self.chor(in_decl)?;
                    self.expect(Tok::RBrace)?;
                    items.push(ChorInstr::Block(inner));
                }
                Tok::KwIf => {
                    self.bump();
                    let at = ProcName::new(self.ident("guard process")?);
                    self.expect(Tok::Dot)?;
                    let key = self.key(in_decl);
                    let guard = self.expr(&at)?;
                    self.expect(Tok::LBrace)?;
                    let then_branch = self.chor(in_decl)?;
                    self.expect(Tok::RBrace)?;
                    self.expect(Tok::KwElse)?;
                    self.expect(Tok::LBrace)?;
                    let else_branch = self.chor(in_decl)?;
                    self.expect(Tok::RBrace)?;
                    items.push(ChorInstr::Keyed(
                        key,
                        ChorAction::Cond { at, guard, then_branch, else_branch },
                    ));
                }
                Tok::Upper(_) => {
                    let pos = self.pos();
                    let name = self.upper("procedure name")?;
                    self.expect(Tok::LParen)?;
                    let mut roles = Vec::new();
                    if matches!(self.peek(), Tok::Ident(_)) {
                        loop {
                            roles.push(ProcName::new(self.ident("role")?));
                            if *self.peek() == Tok::Comma {
                                self.bump();
                            } else {
                                break;
                            }
                        }
                    }
                    let mut args = Vec::new();
                    if *self.peek() == Tok::Semi {
                        self.bump();
                        loop {
                            if let Some(v) = self.literal() {
                                args.push(RawArg::Lit(v));
                            } else {
                                let p = ProcName::new(self.ident("argument")?);
                                self.expect(Tok::Dot)?;
                                let x = self.ident("argument variable")?;
                                args.push(RawArg::Var(p, x));
                            }
                            if *self.peek() == Tok::Comma {
                                self.bump();
                            } else {
                                break;
                            }
                        }
                    }
                    self.expect(Tok::RParen)?;
                    self.expect(Tok::Semi)?;
                    let key = self.key(in_decl);
                    self.calls.insert(key.line, RawCall { args, pos });
                    // Arguments are installed during call resolution.
                    items.push(ChorInstr::Keyed(
                        key,
                        ChorAction::Call { proc: name, roles, args: Vec::new() },
                    ));
                }
                Tok::Ident(_) => {
                    let pos = self.pos();
                    let subject = ProcName::new(self.ident("process")?);
                    match self.peek().clone() {
                        Tok::Arrow => {
                            // selection: p -> q [L];
                            self.bump();
                            let to = ProcName::new(self.ident("target process")?);
                            self.expect(Tok::LBracket)?;
                            let label = Label::new(self.upper("label")?);
                            self.expect(Tok::RBracket)?;
                            self.expect(Tok::Semi)?;
                            if to == subject {
                                return Err(ParseError::new(
                                    pos,
                                    format!("process '{subject}' cannot select to itself"),
                                    &[],
                                ));
                            }
                            self.labels.insert(label.clone());
                            let key = self.key(in_decl);
                            items.push(ChorInstr::Keyed(
                                key,
                                ChorAction::Select { from: subject, to, label },
                            ));
                        }
                        Tok::Dot => {
                            self.bump();
                            // compute needs two-token lookahead: `x =`
                            if matches!(self.peek(), Tok::Ident(_)) && *self.peek2() == Tok::Eq {
                                let var = self.ident("variable")?;
                                self.bump(); // '='
                                let key = self.key(in_decl);
                                let expr = self.expr(&subject)?;
                                self.expect(Tok::Semi)?;
                                items.push(ChorInstr::Keyed(
                                    key,
                                    ChorAction::Compute { var, at: subject, expr },
                                ));
                            } else {
                                let key = self.key(in_decl);
                                let expr = self.expr(&subject)?;
                                self.expect(Tok::Arrow)?;
                                let to = ProcName::new(self.ident("receiver")?);
                                self.expect(Tok::Dot)?;
                                let var = self.ident("receive variable")?;
                                self.expect(Tok::Semi)?;
                                if to == subject {
                                    return Err(ParseError::new(
                                        pos,
                                        format!("process '{subject}' cannot send to itself"),
                                        &[],
                                    ));
                                }
                                items.push(ChorInstr::Keyed(
                                    key,
                                    ChorAction::Comm { from: subject, expr, to, var },
                                ));
                            }
                        }
                        other => {
                            return Err(ParseError::new(
                                self.pos(),
                                format!("expected '.' or '->' but found {}", other.describe()),
                                &[".", "->"],
                            ))
                        }
                    }
                }
                other => {
                    return Err(ParseError::new(
                        self.pos(),
                        format!("expected an instruction but found {}", other.describe()),
                        &["instruction"],
                    ))
                }
            }
        }
    }
}

/// Binders (bare variable names) of a declaration body, including nested
/// blocks and both branches of conditionals.
fn body_binders(c: &Choreography, out: &mut BTreeSet<String>) {
    for i in &c.0 {
        match i {
            ChorInstr::Block(b) => body_binders(b, out),
            ChorInstr::Keyed(_, a) => match a {
                ChorAction::Comm { var, .. } | ChorAction::CommInProgress { var, .. } => {
                    out.insert(var.clone());
                }
                ChorAction::Compute { var, .. } => {
                    out.insert(var.clone());
                }
                ChorAction::Cond { then_branch, else_branch, .. } => {
                    body_binders(then_branch, out);
                    body_binders(else_branch, out);
                }
                ChorAction::CallInProgress { body, .. } => body_binders(body, out),
                _ => {}
            },
        }
    }
}

fn resolve_calls(
    c: &mut Choreography,
    decls: &BTreeMap<String, (Vec<ProcName>, Vec<LocatedVar>)>,
    calls: &BTreeMap<Line, RawCall>,
) -> Result<(), ParseError> {
    for i in &mut c.0 {
        match i {
            ChorInstr::Block(b) => resolve_calls(b, decls, calls)?,
            ChorInstr::Keyed(k, a) => match a {
                ChorAction::Cond { then_branch, else_branch, .. } => {
                    resolve_calls(then_branch, decls, calls)?;
                    resolve_calls(else_branch, decls, calls)?;
                }
                ChorAction::Call { proc, roles, args } => {
                    let raw = calls.get(&k.line).expect("call site recorded during parse");
                    let Some((formal_roles, params)) = decls.get(proc) else {
                        return Err(ParseError::new(
                            raw.pos,
                            format!("unknown procedure '{proc}'"),
                            &[],
                        ));
                    };
                    if roles.len() != formal_roles.len() {
                        return Err(ParseError::new(
                            raw.pos,
                            format!(
                                "procedure '{proc}' takes {} roles, call passes {}",
                                formal_roles.len(),
                                roles.len()
                            ),
                            &[],
                        ));
                    }
                    if raw.args.len() != params.len() {
                        return Err(ParseError::new(
                            raw.pos,
                            format!(
                                "procedure '{proc}' takes {} arguments, call passes {}",
                                params.len(),
                                raw.args.len()
                            ),
                            &[],
                        ));
                    }
                    let mut located = Vec::with_capacity(raw.args.len());
                    for (param, arg) in params.iter().zip(raw.args.iter()) {
                        match arg {
                            RawArg::Var(p, x) => {
                                located.push(Atom::Var(LocatedVar {
                                    proc: p.clone(),
                                    name: x.clone(),
                                }));
                            }
                            RawArg::Lit(v) => {
                                // A literal sits at the actual process bound
                                // to the parameter's formal role.
                                let j = formal_roles
                                    .iter()
                                    .position(|r| *r == param.proc)
                                    .ok_or_else(|| {
                                        ParseError::new(
                                            raw.pos,
                                            format!(
                                                "parameter {param} of '{proc}' is not located \
                                                 at any declared role"
                                            ),
                                            &[],
                                        )
                                    })?;
                                located.push(Atom::Val { value: v.clone(), at: roles[j].clone() });
                            }
                        }
                    }
                    *args = located;
                }
                _ => {}
            },
        }
    }
    Ok(())
}

/// Direct callees of a choreography.
fn callees(c: &Choreography, out: &mut BTreeSet<String>) {
    for i in &c.0 {
        match i {
            ChorInstr::Block(b) => callees(b, out),
            ChorInstr::Keyed(_, a) => match a {
                ChorAction::Call { proc, .. } | ChorAction::CallInProgress { proc, .. } => {
                    out.insert(proc.clone());
                }
                ChorAction::Cond { then_branch, else_branch, .. } => {
                    callees(then_branch, out);
                    callees(else_branch, out);
                }
                _ => {}
            },
        }
    }
}

/// Binder names reachable from each procedure, transitively through calls.
fn transitive_binders(decls: &[ProcedureDecl]) -> BTreeMap<String, BTreeSet<String>> {
    let mut own: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut calls: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for d in decls {
        let mut b = BTreeSet::new();
        body_binders(&d.body, &mut b);
        own.insert(d.name.clone(), b);
        let mut cs = BTreeSet::new();
        callees(&d.body, &mut cs);
        calls.insert(d.name.clone(), cs);
    }
    let mut star = own.clone();
    loop {
        let mut changed = false;
        for d in decls {
            let reachable: BTreeSet<String> = calls[&d.name]
                .iter()
                .filter_map(|c| star.get(c))
                .flatten()
                .cloned()
                .collect();
            let entry = star.get_mut(&d.name).unwrap();
            let before = entry.len();
            entry.extend(reachable);
            changed |= entry.len() != before;
        }
        if !changed {
            return star;
        }
    }
}

/// Check each call site: a variable argument must not share its bare name
/// with any binder reachable inside the callee.
fn check_capture(
    c: &Choreography,
    star: &BTreeMap<String, BTreeSet<String>>,
) -> Result<(), ParseError> {
    for i in &c.0 {
        match i {
            ChorInstr::Block(b) => check_capture(b, star)?,
            ChorInstr::Keyed(k, a) => match a {
                ChorAction::Call { proc, args, .. }
                | ChorAction::CallInProgress { proc, args, .. } => {
                    if let Some(binders) = star.get(proc) {
                        for arg in args {
                            if let Atom::Var(lv) = arg {
                                if binders.contains(&lv.name) {
                                    return Err(ParseError::new(
                                        (1, 1),
                                        format!(
                                            "argument '{lv}' of the call at line {} collides                                              with a binder inside '{proc}'; rename one of them",
                                            k.line
                                        ),
                                        &[],
                                    ));
                                }
                            }
                        }
                    }
                }
                ChorAction::Cond { then_branch, else_branch, .. } => {
                    check_capture(then_branch, star)?;
                    check_capture(else_branch, star)?;
                }
                _ => {}
            },
        }
    }
    Ok(())
}

/// Parse a whole program and assign integrity keys.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let toks = Lexer::new(text).lex()?;
    let mut p = Parser { toks, i: 0, next_line: 1, calls: BTreeMap::new(), labels: BTreeSet::new() };

    let mut decls: Vec<ProcedureDecl> = Vec::new();
    while *p.peek() == Tok::KwProc {
        let pos = p.pos();
        p.bump();
        let name = p.upper("procedure name")?;
        if decls.iter().any(|d| d.name == name) {
            return Err(ParseError::new(pos, format!("duplicate procedure name '{name}'"), &[]));
        }
        p.expect(Tok::LParen)?;
        let mut roles = Vec::new();
        loop {
            roles.push(ProcName::new(p.ident("role")?));
            if *p.peek() == Tok::Comma {
                p.bump();
            } else {
                break;
            }
        }
        let mut params = Vec::new();
        if *p.peek() == Tok::Semi {
            p.bump();
            loop {
                let proc = ProcName::new(p.ident("parameter role")?);
                p.expect(Tok::Dot)?;
                let name = p.ident("parameter variable")?;
                params.push(LocatedVar { proc, name });
                if *p.peek() == Tok::Comma {
                    p.bump();
                } else {
                    break;
                }
            }
        }
        p.expect(Tok::RParen)?;
        p.expect(Tok::LBrace)?;
        let body = p.chor(true)?;
        p.expect(Tok::RBrace)?;
        decls.push(ProcedureDecl { name, roles, params, body });
    }

    p.expect(Tok::KwMain)?;
    p.expect(Tok::LBrace)?;
    let mut main = p.chor(false)?;
    p.expect(Tok::RBrace)?;
    if *p.peek() != Tok::Eof {
        return Err(ParseError::new(
            p.pos(),
            format!("trailing input: {}", p.peek().describe()),
            &["end of input"],
        ));
    }

    // Resolve call argument locations against the declaration signatures.
    let sigs: BTreeMap<String, (Vec<ProcName>, Vec<LocatedVar>)> = decls
        .iter()
        .map(|d| (d.name.clone(), (d.roles.clone(), d.params.clone())))
        .collect();
    let calls = p.calls.clone();
    for d in &mut decls {
        resolve_calls(&mut d.body, &sigs, &calls)?;
    }
    resolve_calls(&mut main, &sigs, &calls)?;

    // A label may not double as a variable name. The lexer already keeps the
    // namespaces apart (labels are uppercase), so this guards AST builders
    // more than source text.
    let mut binders = BTreeSet::new();
    for d in &decls {
        body_binders(&d.body, &mut binders);
    }
    let mut main_binders = binders.clone();
    body_binders(&main, &mut main_binders);
    for l in &p.labels {
        if main_binders.contains(&l.0) {
            return Err(ParseError::new(
                (1, 1),
                format!("'{l}' is used both as a label and as a variable"),
                &[],
            ));
        }
    }

    // Substitution in this model is capture-avoiding only through rebinding
    // stops, so reject programs where a variable argument shares its bare
    // name with a binder reachable inside the callee.
    let star = transitive_binders(&decls);
    check_capture(&main, &star)?;
    for d in &decls {
        check_capture(&d.body, &star)?;
    }

    let program = Program { decls, main, labels: p.labels };

    // Logical lines are unique by construction; keep the invariant checked.
    let mut seen = BTreeSet::new();
    for d in &program.decls {
        for (l, _) in keys_chor(&d.body) {
            assert!(seen.insert(l), "duplicate logical line {l}");
        }
    }
    for (l, _) in keys_chor(&program.main) {
        assert!(seen.insert(l), "duplicate logical line {l}");
    }

    Ok(program)
}
