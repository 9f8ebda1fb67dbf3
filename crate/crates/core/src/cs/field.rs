//! Field-element helpers over the BLS12-381 scalar field (a 255-bit prime).

use ark_ff::{BigInteger, Field, PrimeField};

use crate::codec::{Reader, Writer};
use crate::error::DecodeError;

pub type Fe = ark_bls12_381::Fr;

pub const FE_BYTES: usize = 32;

pub fn fe_from_i64(v: i64) -> Fe {
    Fe::from(v)
}

pub fn fe_from_u64(v: u64) -> Fe {
    Fe::from(v)
}

pub fn pow2(bits: u32) -> Fe {
    Fe::from(2u64).pow([u64::from(bits)])
}

/// Canonical 32-byte big-endian representation.
pub fn fe_to_bytes(fe: &Fe) -> [u8; FE_BYTES] {
    let v = fe.into_bigint().to_bytes_be();
    let mut out = [0u8; FE_BYTES];
    out[FE_BYTES - v.len()..].copy_from_slice(&v);
    out
}

/// Strict inverse of [`fe_to_bytes`]: values ≥ the modulus are rejected.
pub fn fe_from_bytes(bytes: &[u8]) -> Option<Fe> {
    if bytes.len() != FE_BYTES {
        return None;
    }
    let fe = Fe::from_be_bytes_mod_order(bytes);
    (fe_to_bytes(&fe) == bytes).then_some(fe)
}

/// Interprets `fe` as a signed 64-bit integer (values near the modulus are
/// negatives). `None` when the element is not in `[-2^63, 2^63)`.
pub fn fe_to_i64(fe: &Fe) -> Option<i64> {
    let b = fe_to_bytes(fe);
    if b[..FE_BYTES - 8].iter().all(|&x| x == 0) {
        let v = u64::from_be_bytes(b[FE_BYTES - 8..].try_into().unwrap());
        return i64::try_from(v).ok();
    }
    let neg = fe_to_bytes(&-*fe);
    if neg[..FE_BYTES - 8].iter().all(|&x| x == 0) {
        let v = u64::from_be_bytes(neg[FE_BYTES - 8..].try_into().unwrap());
        if v <= 1 << 63 {
            return Some((v as i64).wrapping_neg());
        }
    }
    None
}

pub fn fe_to_u64(fe: &Fe) -> Option<u64> {
    let b = fe_to_bytes(fe);
    b[..FE_BYTES - 8]
        .iter()
        .all(|&x| x == 0)
        .then(|| u64::from_be_bytes(b[FE_BYTES - 8..].try_into().unwrap()))
}

/// Packs up to 31 bytes as a big-endian integer.
pub fn fe_from_chunk(bytes: &[u8]) -> Fe {
    assert!(bytes.len() < FE_BYTES, "chunk must fit below the modulus");
    Fe::from_be_bytes_mod_order(bytes)
}

/// Unpacks exactly `width` big-endian bytes; `None` if the element does not
/// fit in `width` bytes.
pub fn fe_to_chunk(fe: &Fe, width: usize) -> Option<Vec<u8>> {
    let b = fe_to_bytes(fe);
    let split = FE_BYTES - width;
    b[..split].iter().all(|&x| x == 0).then(|| b[split..].to_vec())
}

pub fn write_fe(w: &mut Writer, fe: &Fe) {
    w.raw(&fe_to_bytes(fe));
}

pub fn read_fe(r: &mut Reader<'_>, what: &'static str) -> Result<Fe, DecodeError> {
    let raw = r.raw(FE_BYTES, what)?;
    fe_from_bytes(raw).ok_or_else(|| DecodeError::Invalid { what, detail: "non-canonical field element".into() })
}

pub fn write_fe_vec(w: &mut Writer, v: &[Fe]) {
    w.u32(v.len() as u32);
    for fe in v {
        write_fe(w, fe);
    }
}

pub fn read_fe_vec(r: &mut Reader<'_>, what: &'static str) -> Result<Vec<Fe>, DecodeError> {
    let n = r.count(FE_BYTES, what)?;
    (0..n).map(|_| read_fe(r, what)).collect()
}

/// Serde adapter: field element as 64 lowercase hex chars.
pub mod fe_hex {
    use super::*;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(fe: &Fe, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(fe_to_bytes(fe)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Fe, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
        fe_from_bytes(&bytes).ok_or_else(|| serde::de::Error::custom("non-canonical field element"))
    }
}

pub mod fe_vec_hex {
    use super::*;
    use serde::ser::SerializeSeq;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[Fe], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for fe in v {
            seq.serialize_element(&hex::encode(fe_to_bytes(fe)))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Fe>, D::Error> {
        let v = Vec::<String>::deserialize(d)?;
        v.iter()
            .map(|s| {
                let bytes = hex::decode(s).map_err(serde::de::Error::custom)?;
                fe_from_bytes(&bytes).ok_or_else(|| serde::de::Error::custom("non-canonical field element"))
            })
            .collect()
    }
}
