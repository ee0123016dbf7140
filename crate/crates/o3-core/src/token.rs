//! Session tokens and integrity keys.
//!
//! A token is the call stack of a procedure invocation, stored as a list of
//! call-site line numbers with the most recent call first. `next_token`
//! derives the callee's token by prepending the call line, which makes it
//! deterministic and injective: two processes that enter the same call agree
//! on the token without synchronizing, and concurrent invocations never
//! collide.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Line number of an instruction. Lines are unique across a whole program.
pub type Line = u32;

/// A session token: call-site line numbers, most recent first.
///
/// The initial token is the empty list.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
pub struct Token(pub Vec<Line>);

impl Token {
    /// The initial token used by every instruction of a main choreography.
    pub fn initial() -> Self {
        Token(Vec::new())
    }

    pub fn is_initial(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, l) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{l}")?;
        }
        write!(f, "]")
    }
}

/// An integrity key: the line number of an instruction paired with the token
/// of the procedure invocation it belongs to.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IntegrityKey {
    pub line: Line,
    pub token: Token,
}

impl IntegrityKey {
    pub fn new(line: Line, token: Token) -> Self {
        IntegrityKey { line, token }
    }

    /// Flatten to the underlying call stack, oldest call first, ending with
    /// this key's own line. Ancestry between keys is prefix order on this
    /// form: a caller's key is a prefix of every key inside the callee.
    pub fn flatten_oldest_first(&self) -> Vec<Line> {
        let mut v: Vec<Line> = self.token.0.iter().rev().copied().collect();
        v.push(self.line);
        v
    }
}

impl fmt::Display for IntegrityKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.line, self.token)
    }
}

/// Derive the callee token from a call site: prepend the call line.
///
/// Pure and total; deterministic by construction, injective because the
/// output determines both inputs (head and tail).
pub fn next_token(line: Line, token: &Token) -> Token {
    let mut v = Vec::with_capacity(token.0.len() + 1);
    v.push(line);
    v.extend_from_slice(&token.0);
    Token(v)
}

/// Prefix-or-equal on keys: `k1`'s flattened call stack is an initial
/// segment of `k2`'s.
pub fn is_prefix(k1: &IntegrityKey, k2: &IntegrityKey) -> bool {
    let a = k1.flatten_oldest_first();
    let b = k2.flatten_oldest_first();
    a.len() <= b.len() && a[..] == b[..a.len()]
}

/// Proper prefix: the ancestry order used by well-formedness.
pub fn strict_prefix(k1: &IntegrityKey, k2: &IntegrityKey) -> bool {
    k1 != k2 && is_prefix(k1, k2)
}

/// Neither key is a prefix of the other (and they differ).
pub fn disjoint(k1: &IntegrityKey, k2: &IntegrityKey) -> bool {
    !is_prefix(k1, k2) && !is_prefix(k2, k1) && k1 != k2
}
