//! Gas-like cost accounting for on-chain verification work.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Primitive {
    HashCall,
    /// Per 32-byte word hashed.
    HashWord,
    SignatureVerify,
    /// Per rank-1 constraint evaluated.
    ConstraintCheck,
    CalldataByte,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostWeights {
    pub hash_call: u64,
    pub hash_word: u64,
    pub signature_verify: u64,
    pub constraint_check: u64,
    pub calldata_byte: u64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights { hash_call: 60, hash_word: 12, signature_verify: 5000, constraint_check: 2, calldata_byte: 16 }
    }
}

impl CostWeights {
    pub fn weight(&self, op: Primitive) -> u64 {
        match op {
            Primitive::HashCall => self.hash_call,
            Primitive::HashWord => self.hash_word,
            Primitive::SignatureVerify => self.signature_verify,
            Primitive::ConstraintCheck => self.constraint_check,
            Primitive::CalldataByte => self.calldata_byte,
        }
    }
}

/// Sink for verification work. Verifiers are generic over it so the same
/// code path serves metered on-chain calls and plain off-chain checks.
pub trait Meter {
    fn charge(&mut self, op: Primitive, count: u64);

    fn hash(&mut self, len: usize) {
        self.charge(Primitive::HashCall, 1);
        self.charge(Primitive::HashWord, len.div_ceil(32) as u64);
    }
}

/// Discards all charges.
pub struct NoMeter;

impl Meter for NoMeter {
    fn charge(&mut self, _: Primitive, _: u64) {}
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostMeter {
    pub weights: CostWeights,
    /// Aggregated trace: how many times each primitive was charged.
    pub counts: BTreeMap<Primitive, u64>,
    pub total: u64,
}

impl CostMeter {
    pub fn new(weights: CostWeights) -> Self {
        CostMeter { weights, counts: BTreeMap::new(), total: 0 }
    }

    /// Σ count × weight over the trace.
    pub fn recompute_total(&self) -> u64 {
        self.counts.iter().map(|(op, n)| n * self.weights.weight(*op)).sum()
    }

    pub fn absorb(&mut self, other: &CostMeter) {
        for (op, n) in &other.counts {
            self.charge(*op, *n);
        }
    }
}

impl Meter for CostMeter {
    fn charge(&mut self, op: Primitive, count: u64) {
        if count == 0 {
            return;
        }
        *self.counts.entry(op).or_default() += count;
        self.total += count * self.weights.weight(op);
    }
}
