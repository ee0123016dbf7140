//! Canonical serialization and state hashing.
//!
//! Configurations are hashed over a canonical JSON form: the program term
//! with empty blocks garbage-collected, the store map in name order, and
//! message multisets sorted. Two configurations that differ only by dead
//! block syntax or message enumeration order hash identically.

use crate::chor::{ChorConfig, Message};
use crate::eval::ProcState;
use crate::net::NetConfig;
use crate::syntax::{gc_chor, gc_proc, ProcName};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash any serializable value over its canonical JSON bytes.
pub fn hash_canonical<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("canonical serialization cannot fail");
    hex(&Sha256::digest(&bytes))
}

fn sorted_messages(k: &BTreeMap<ProcName, Vec<Message>>) -> BTreeMap<&ProcName, Vec<&Message>> {
    k.iter()
        .map(|(p, ms)| {
            let mut ms: Vec<&Message> = ms.iter().collect();
            ms.sort();
            (p, ms)
        })
        .collect()
}

/// Canonical hash of a choreography configuration.
pub fn state_hash_chor(cfg: &ChorConfig) -> String {
    let canon = (gc_chor(&cfg.chor), &cfg.sigma, sorted_messages(&cfg.k));
    hash_canonical(&canon)
}

/// Canonical hash of a network configuration.
pub fn state_hash_net(cfg: &NetConfig) -> String {
    let net: BTreeMap<&ProcName, _> = cfg.net.iter().map(|(p, b)| (p, gc_proc(b))).collect();
    let canon = (net, &cfg.sigma, sorted_messages(&cfg.k));
    hash_canonical(&canon)
}

/// Canonical hash of a bare store map, handy for determinism assertions.
pub fn hash_sigma(sigma: &BTreeMap<ProcName, ProcState>) -> String {
    hash_canonical(sigma)
}
