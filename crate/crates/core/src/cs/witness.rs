//! Witness generation: runs the program over concrete inputs and fills in
//! every slot of the constraint system.

use ark_ff::Field;
use serde::{Deserialize, Serialize};

use super::field::{fe_from_chunk, fe_from_i64, fe_from_u64, fe_vec_hex, Fe};
use super::r1cs::{ConstraintSystem, HALF_BYTES, META_CHUNK_BYTES, META_MAX_BYTES};
use crate::crypto::{hash, PUBLIC_KEY_LEN, SIGNATURE_LEN};
use crate::error::CsError;
use crate::meter::NoMeter;
use crate::sensor::SignedBatch;
use crate::types::{AuxiliaryData, MeasurementBatch};

/// Fixed bytes of the canonical meta encoding besides the sensor id.
const META_OVERHEAD: usize = 4 + 8 + 8;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    #[serde(with = "fe_vec_hex")]
    pub assignment: Vec<Fe>,
}

fn halves(bytes: &[u8]) -> impl Iterator<Item = Fe> + '_ {
    bytes.chunks(HALF_BYTES).map(fe_from_chunk)
}

fn bits_of(x: u64, n: u32) -> impl Iterator<Item = Fe> {
    (0..n).map(move |i| if (x >> i) & 1 == 1 { Fe::ONE } else { Fe::from(0u64) })
}

/// Fills every slot from the given inputs without checking authenticity or
/// satisfaction. Range violations are still reported because they make the
/// bit decompositions undefined.
pub fn assign_witness(
    cs: &ConstraintSystem,
    batch: &MeasurementBatch,
    signature: &[u8],
    aux: &AuxiliaryData,
    sensor_public_key: &[u8],
) -> Result<Vec<Fe>, CsError> {
    let l = &cs.layout;
    if batch.len() != l.batch_size as usize {
        return Err(CsError::SizeMismatch { expected: l.batch_size as usize, got: batch.len() });
    }
    if sensor_public_key.len() != PUBLIC_KEY_LEN {
        return Err(CsError::Malformed(format!("sensor key must be {PUBLIC_KEY_LEN} bytes")));
    }
    if signature.len() != SIGNATURE_LEN {
        return Err(CsError::Malformed(format!("signature must be {SIGNATURE_LEN} bytes")));
    }
    let k = l.value_bits;
    let half = 1i128 << (k - 1);
    let in_range = |v: i64| (-half..half).contains(&i128::from(v));
    if !in_range(aux.threshold) {
        return Err(CsError::ThresholdOutOfRange { value: aux.threshold, bits: k });
    }
    let meta = batch.meta.encode();
    if meta.len() > META_MAX_BYTES {
        return Err(CsError::SensorIdTooLong {
            len: batch.meta.sensor_id.len(),
            max: META_MAX_BYTES - META_OVERHEAD,
        });
    }

    let mut w = vec![Fe::from(0u64); cs.num_variables as usize];
    w[0] = Fe::ONE;
    for (slot, fe) in l.digest.iter().zip(halves(batch.digest().as_bytes())) {
        w[*slot as usize] = fe;
    }
    w[l.threshold as usize] = fe_from_i64(aux.threshold);
    for (slot, fe) in l.key.iter().zip(halves(sensor_public_key)) {
        w[*slot as usize] = fe;
    }
    for (slot, fe) in l.key_digest.iter().zip(halves(hash(sensor_public_key).as_bytes())) {
        w[*slot as usize] = fe;
    }
    for (slot, fe) in l.signature.iter().zip(halves(signature)) {
        w[*slot as usize] = fe;
    }
    w[l.meta_len as usize] = fe_from_u64(meta.len() as u64);
    let mut padded = meta;
    padded.resize(META_MAX_BYTES, 0);
    for (slot, chunk) in l.meta_chunks.iter().zip(padded.chunks(META_CHUNK_BYTES)) {
        w[*slot as usize] = fe_from_chunk(chunk);
    }

    let t_bits = (i128::from(aux.threshold) + half) as u64;
    for (i, b) in bits_of(t_bits, k).enumerate() {
        w[l.threshold_bit(i)] = b;
    }

    let effective = i128::from(aux.threshold) + i128::from(l.threshold_shift);
    let mut count = 0u64;
    for (j, v) in batch.values().enumerate() {
        if !in_range(v) {
            return Err(CsError::ValueOutOfRange { index: j, value: v, bits: k });
        }
        w[l.value_slot(j)] = fe_from_i64(v);
        for (i, b) in bits_of((i128::from(v) + half) as u64, k).enumerate() {
            w[l.range_bit(j, i)] = b;
        }
        let x = i128::from(v) - effective - 1 + (1i128 << k);
        if !(0..1i128 << (k + 1)).contains(&x) {
            let value = i64::try_from(effective).unwrap_or(i64::MAX);
            return Err(CsError::ThresholdOutOfRange { value, bits: k });
        }
        for (i, b) in bits_of(x as u64, k + 1).enumerate() {
            w[l.cmp_bit(j, i)] = b;
        }
        count += (x >> k) as u64;
    }
    w[l.sum as usize] = fe_from_u64(count);
    w[l.count as usize] = fe_from_u64(count);
    Ok(w)
}

/// Authenticates the signed batch, builds the witness and checks that it
/// satisfies every constraint.
pub fn compute_witness(
    cs: &ConstraintSystem,
    signed: &SignedBatch,
    aux: &AuxiliaryData,
    sensor_public_key: &[u8],
) -> Result<Witness, CsError> {
    if signed.batch.len() != cs.layout.batch_size as usize {
        return Err(CsError::SizeMismatch { expected: cs.layout.batch_size as usize, got: signed.batch.len() });
    }
    signed.verify(sensor_public_key)?;
    let assignment = assign_witness(cs, &signed.batch, &signed.signature, aux, sensor_public_key)?;
    cs.check(&assignment, &mut NoMeter).map_err(|v| CsError::Unsatisfied(format!("{v:?}")))?;
    Ok(Witness { assignment })
}

impl Witness {
    pub fn count(&self, cs: &ConstraintSystem) -> Fe {
        self.assignment[cs.layout.count as usize]
    }
}
