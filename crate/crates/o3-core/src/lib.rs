//! Fully out-of-order choreographies: a toolkit.
//!
//! This crate implements a small choreographic language in which processes
//! may execute their instructions in any order compatible with data and
//! control dependencies, and messages may be delivered out of order. Every
//! instruction carries an integrity key (a static line number plus a
//! dynamic session token) that ties each message to the unique receive that
//! may consume it, which is what makes the reordering safe.
//!
//! The pieces:
//!
//! - [`syntax`]: ASTs for choreographies and local processes, with the
//!   syntactic functions the metatheory uses (free variables, process
//!   names, instruction flattening, substitution, instantiation).
//! - [`token`]: session tokens and the key ancestry order.
//! - [`parser`] / [`render`]: the `.chor` surface language.
//! - [`eval`]: expression evaluation over per-process stores.
//! - [`wf`]: well-formedness of declarations, configurations, networks.
//! - [`chor`] / [`net`]: the two labelled transition systems.
//! - [`epp`]: endpoint projection, merging, and the branching order.
//! - [`verify`]: bounded exploration that checks preservation, progress,
//!   communication integrity, and the projection correspondence, plus the
//!   integrity-violation demonstrator and a latency simulator.
//! - [`generator`]: seeded random programs for the property suites.

pub mod canon;
pub mod chor;
pub mod epp;
pub mod eval;
pub mod generator;
pub mod net;
pub mod parser;
pub mod render;
pub mod syntax;
pub mod token;
pub mod verify;
pub mod wf;
