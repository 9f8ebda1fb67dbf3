//! Rank-1 constraint systems with a small set of hash/signature gadgets.
//!
//! A constraint `(A·w) × (B·w) = (C·w)` is checked over the assignment
//! vector `w`, where `w[0]` is fixed to one. Gadgets are non-arithmetic
//! checks (SHA-256 and signature verification) evaluated natively by the
//! verifier over field-packed slots.

use ark_ff::{Field, Zero};
use serde::{Deserialize, Serialize};

use super::field::{fe_hex, fe_to_chunk, fe_to_i64, fe_to_u64, write_fe, Fe};
use crate::codec::Writer;
use crate::crypto::{self, hash, Digest};
use crate::error::CsError;
use crate::meter::{Meter, Primitive};

/// Field elements hold 16-byte halves of digests, keys and signatures.
pub const HALF_BYTES: usize = 16;
/// Meta-data bytes are packed 31 to a field element.
pub const META_CHUNK_BYTES: usize = 31;
pub const META_CHUNKS: usize = 3;
/// Longest canonical meta-data encoding that fits in the meta chunks.
pub const META_MAX_BYTES: usize = META_CHUNK_BYTES * META_CHUNKS;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    pub var: u32,
    #[serde(with = "fe_hex")]
    pub coeff: Fe,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinearCombination(pub Vec<Term>);

impl LinearCombination {
    pub fn var(var: u32) -> Self {
        LinearCombination(vec![Term { var, coeff: Fe::ONE }])
    }

    pub fn constant(c: Fe) -> Self {
        LinearCombination(vec![Term { var: 0, coeff: c }])
    }

    pub fn add(mut self, var: u32, coeff: Fe) -> Self {
        self.0.push(Term { var, coeff });
        self
    }

    pub fn eval(&self, w: &[Fe]) -> Fe {
        self.0.iter().fold(Fe::zero(), |acc, t| {
            let x = w[t.var as usize];
            if t.coeff == Fe::ONE {
                acc + x
            } else {
                acc + t.coeff * x
            }
        })
    }

    fn encode_into(&self, w: &mut Writer) {
        w.u32(self.0.len() as u32);
        for t in &self.0 {
            w.u32(t.var);
            write_fe(w, &t.coeff);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraint {
    pub a: LinearCombination,
    pub b: LinearCombination,
    pub c: LinearCombination,
}

impl Constraint {
    pub fn is_satisfied(&self, w: &[Fe]) -> bool {
        self.a.eval(w) * self.b.eval(w) == self.c.eval(w)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Gadget {
    /// SHA-256 of the canonical batch encoding rebuilt from the meta-data
    /// chunks and the value slots must equal the two digest halves.
    BatchDigest { meta_len: u32, meta_chunks: Vec<u32>, values: Vec<u32>, digest: [u32; 2] },
    /// SHA-256 of the 32-byte sensor key must equal the two digest halves.
    KeyDigest { key: [u32; 2], digest: [u32; 2] },
    /// The signature slots must hold a valid signature by the key slots over
    /// the digest slots.
    SignatureCheck { key: [u32; 2], message: [u32; 2], signature: [u32; 4] },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GadgetKind {
    BatchDigest,
    KeyDigest,
    SignatureCheck,
}

impl Gadget {
    pub fn kind(&self) -> GadgetKind {
        match self {
            Gadget::BatchDigest { .. } => GadgetKind::BatchDigest,
            Gadget::KeyDigest { .. } => GadgetKind::KeyDigest,
            Gadget::SignatureCheck { .. } => GadgetKind::SignatureCheck,
        }
    }

    fn slots(&self) -> Vec<u32> {
        match self {
            Gadget::BatchDigest { meta_len, meta_chunks, values, digest } => {
                let mut v = vec![*meta_len];
                v.extend(meta_chunks);
                v.extend(values);
                v.extend(digest);
                v
            }
            Gadget::KeyDigest { key, digest } => key.iter().chain(digest).copied().collect(),
            Gadget::SignatureCheck { key, message, signature } => {
                key.iter().chain(message).chain(signature).copied().collect()
            }
        }
    }

    /// Evaluates the gadget, charging the hashing/signature work to `meter`.
    pub fn holds(&self, w: &[Fe], meter: &mut impl Meter) -> bool {
        match self {
            Gadget::BatchDigest { meta_len, meta_chunks, values, digest } => {
                let Some(bytes) = batch_bytes(w, *meta_len, meta_chunks, values) else {
                    return false;
                };
                meter.hash(bytes.len());
                Some(hash(&bytes)) == unpack_digest(w, *digest)
            }
            Gadget::KeyDigest { key, digest } => {
                let Some(key) = unpack_halves(w, key) else {
                    return false;
                };
                meter.hash(key.len());
                Some(hash(&key)) == unpack_digest(w, *digest)
            }
            Gadget::SignatureCheck { key, message, signature } => {
                let (Some(key), Some(msg), Some(sig)) =
                    (unpack_halves(w, key), unpack_halves(w, message), unpack_halves(w, signature))
                else {
                    return false;
                };
                meter.charge(Primitive::SignatureVerify, 1);
                crypto::verify(&key, &msg, &sig)
            }
        }
    }

    fn encode_into(&self, w: &mut Writer) {
        let tag = match self.kind() {
            GadgetKind::BatchDigest => 1,
            GadgetKind::KeyDigest => 2,
            GadgetKind::SignatureCheck => 3,
        };
        w.u8(tag);
        // Slot lists are fixed per kind except the batch digest, whose
        // variable parts are length-prefixed.
        if let Gadget::BatchDigest { meta_chunks, values, .. } = self {
            w.u32(meta_chunks.len() as u32).u32(values.len() as u32);
        }
        for s in self.slots() {
            w.u32(s);
        }
    }
}

pub fn unpack_halves(w: &[Fe], slots: &[u32]) -> Option<Vec<u8>> {
    let mut out = Vec::with_capacity(slots.len() * HALF_BYTES);
    for &s in slots {
        out.extend(fe_to_chunk(&w[s as usize], HALF_BYTES)?);
    }
    Some(out)
}

fn unpack_digest(w: &[Fe], slots: [u32; 2]) -> Option<Digest> {
    Digest::from_slice(&unpack_halves(w, &slots)?).ok()
}

/// Rebuilds the canonical batch encoding from witness slots.
fn batch_bytes(w: &[Fe], meta_len: u32, meta_chunks: &[u32], values: &[u32]) -> Option<Vec<u8>> {
    let len = usize::try_from(fe_to_u64(&w[meta_len as usize])?).ok()?;
    let mut meta = Vec::with_capacity(meta_chunks.len() * META_CHUNK_BYTES);
    for &c in meta_chunks {
        meta.extend(fe_to_chunk(&w[c as usize], META_CHUNK_BYTES)?);
    }
    if len > meta.len() || meta[len..].iter().any(|&b| b != 0) {
        return None;
    }
    meta.truncate(len);
    let mut out = Writer::new();
    out.raw(&meta).u32((values.len() / 4) as u32);
    for &v in values {
        out.i64(fe_to_i64(&w[v as usize])?);
    }
    Some(out.finish())
}

/// Which inputs are exposed as public arguments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PublicLayout {
    pub threshold: bool,
    pub sensor_key_digest: bool,
}

impl Default for PublicLayout {
    fn default() -> Self {
        PublicLayout { threshold: true, sensor_key_digest: true }
    }
}

/// Slot map of a compiled threshold program.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsLayout {
    pub batch_size: u32,
    pub value_bits: u32,
    pub threshold_shift: i64,
    pub public: PublicLayout,
    pub digest: [u32; 2],
    pub threshold: u32,
    pub count: u32,
    pub key_digest: [u32; 2],
    pub key: [u32; 2],
    pub signature: [u32; 4],
    pub meta_len: u32,
    pub meta_chunks: Vec<u32>,
    /// `4 × batch_size` value slots starting here.
    pub values: u32,
    /// `value_bits` range bits per value.
    pub range_bits: u32,
    /// `value_bits + 1` comparison bits per value; the top one is the flag.
    pub cmp_bits: u32,
    /// `value_bits` bits for the threshold range check.
    pub threshold_bits: u32,
    pub sum: u32,
}

impl CsLayout {
    pub fn value_count(&self) -> usize {
        self.batch_size as usize * 4
    }

    pub fn value_slot(&self, i: usize) -> usize {
        self.values as usize + i
    }

    pub fn range_bit(&self, value: usize, bit: usize) -> usize {
        self.range_bits as usize + value * self.value_bits as usize + bit
    }

    pub fn cmp_bit(&self, value: usize, bit: usize) -> usize {
        self.cmp_bits as usize + value * (self.value_bits as usize + 1) + bit
    }

    pub fn flag_slot(&self, value: usize) -> usize {
        self.cmp_bit(value, self.value_bits as usize)
    }

    pub fn threshold_bit(&self, bit: usize) -> usize {
        self.threshold_bits as usize + bit
    }

    fn encode_into(&self, w: &mut Writer) {
        w.u32(self.batch_size)
            .u32(self.value_bits)
            .i64(self.threshold_shift)
            .u8(self.public.threshold as u8)
            .u8(self.public.sensor_key_digest as u8);
        let scalars = [self.threshold, self.count, self.meta_len, self.values, self.range_bits]
            .into_iter()
            .chain([self.cmp_bits, self.threshold_bits, self.sum])
            .chain(self.digest)
            .chain(self.key_digest)
            .chain(self.key)
            .chain(self.signature);
        for s in scalars {
            w.u32(s);
        }
        w.u32(self.meta_chunks.len() as u32);
        for &c in &self.meta_chunks {
            w.u32(c);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Violation {
    /// Assignment has the wrong length or `w[0] != 1`.
    Shape,
    Constraint(usize),
    Gadget { index: usize, kind: GadgetKind },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSystem {
    pub num_variables: u32,
    pub constraints: Vec<Constraint>,
    pub gadgets: Vec<Gadget>,
    /// Slots exposed on-chain, in order.
    pub public_slots: Vec<u32>,
    /// Slots holding plain sensor data.
    pub private_slots: Vec<u32>,
    pub layout: CsLayout,
}

impl ConstraintSystem {
    pub fn validate(&self) -> Result<(), CsError> {
        let n = self.num_variables;
        let bad = |what: String| Err(CsError::Malformed(what));
        for (i, c) in self.constraints.iter().enumerate() {
            if [&c.a, &c.b, &c.c].iter().flat_map(|lc| &lc.0).any(|t| t.var >= n) {
                return bad(format!("constraint {i} references a missing slot"));
            }
        }
        for (i, g) in self.gadgets.iter().enumerate() {
            if g.slots().iter().any(|&s| s >= n) {
                return bad(format!("gadget {i} references a missing slot"));
            }
        }
        if self.public_slots.iter().chain(&self.private_slots).any(|&s| s >= n || s == 0) {
            return bad("public/private slot out of range".into());
        }
        if self.public_slots.iter().any(|s| self.private_slots.contains(s)) {
            return bad("public and private slots overlap".into());
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.str("tpp/r1cs/v1").u32(self.num_variables).u32(self.constraints.len() as u32);
        for c in &self.constraints {
            c.a.encode_into(&mut w);
            c.b.encode_into(&mut w);
            c.c.encode_into(&mut w);
        }
        w.u32(self.gadgets.len() as u32);
        for g in &self.gadgets {
            g.encode_into(&mut w);
        }
        for slots in [&self.public_slots, &self.private_slots] {
            w.u32(slots.len() as u32);
            for &s in slots.iter() {
                w.u32(s);
            }
        }
        self.layout.encode_into(&mut w);
        w.finish()
    }

    pub fn digest(&self) -> Digest {
        hash(&self.encode())
    }

    /// Checks every constraint, then every gadget, stopping at the first
    /// failure. Work done is charged to `meter`.
    pub fn check(&self, w: &[Fe], meter: &mut impl Meter) -> Result<(), Violation> {
        if w.len() != self.num_variables as usize || w[0] != Fe::ONE {
            return Err(Violation::Shape);
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if !c.is_satisfied(w) {
                meter.charge(Primitive::ConstraintCheck, i as u64 + 1);
                return Err(Violation::Constraint(i));
            }
        }
        meter.charge(Primitive::ConstraintCheck, self.constraints.len() as u64);
        for (index, g) in self.gadgets.iter().enumerate() {
            if !g.holds(w, meter) {
                return Err(Violation::Gadget { index, kind: g.kind() });
            }
        }
        Ok(())
    }

    pub fn public_values(&self, w: &[Fe]) -> Vec<Fe> {
        self.public_slots.iter().map(|&s| w[s as usize]).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("constraint system serializes")
    }
}
