//! Setup, proof generation and verification.
//!
//! Proofs open the full witness and the verifier re-checks every
//! constraint. This keeps the integrity property (a proof only verifies
//! for the deployed program on the claimed public inputs) while giving up
//! succinctness and zero-knowledge.

use serde::{Deserialize, Serialize};

use super::field::{fe_from_chunk, fe_from_i64, fe_from_u64, fe_vec_hex, read_fe_vec, write_fe_vec, Fe};
use super::r1cs::{ConstraintSystem, CsLayout, GadgetKind, Violation, HALF_BYTES};
use super::witness::Witness;
use crate::codec::{Reader, Writer};
use crate::crypto::{hash, hash_parts, Digest};
use crate::error::{CsError, DecodeError};
use crate::meter::{Meter, NoMeter};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsProvingKey {
    pub constraint_system: ConstraintSystem,
    pub setup_id: Digest,
}

/// Verification material. Carries the constraint system itself because
/// verification re-evaluates it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsVerificationKey {
    pub cs_digest: Digest,
    pub public_slots: Vec<u32>,
    pub setup_id: Digest,
    pub constraint_system: ConstraintSystem,
}

impl CsVerificationKey {
    /// `cs_digest` and `public_slots` agree with the embedded system.
    pub fn is_consistent(&self) -> bool {
        self.constraint_system.digest() == self.cs_digest
            && self.constraint_system.public_slots == self.public_slots
            && self.constraint_system.validate().is_ok()
    }

    /// Digest of the whole key, published in deployment manifests.
    pub fn digest(&self) -> Digest {
        let mut w = Writer::new();
        w.digest(&self.cs_digest).digest(&self.setup_id).u32(self.public_slots.len() as u32);
        for s in &self.public_slots {
            w.u32(*s);
        }
        hash(&w.finish())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsKeyPair {
    pub proving_key: CsProvingKey,
    pub verification_key: CsVerificationKey,
}

/// One-time key generation. `setup_id = H(crs_seed ‖ cs_digest)`; the seed
/// itself is not retained anywhere in the returned keys.
pub fn setup(cs: &ConstraintSystem, crs_seed: [u8; 32]) -> CsKeyPair {
    let cs_digest = cs.digest();
    let setup_id = hash_parts(&[&crs_seed, cs_digest.as_bytes()]);
    CsKeyPair {
        proving_key: CsProvingKey { constraint_system: cs.clone(), setup_id },
        verification_key: CsVerificationKey {
            cs_digest,
            public_slots: cs.public_slots.clone(),
            setup_id,
            constraint_system: cs.clone(),
        },
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsProof {
    pub cs_digest: Digest,
    pub setup_id: Digest,
    #[serde(with = "fe_vec_hex")]
    pub public_values: Vec<Fe>,
    pub witness_commitment: Digest,
    #[serde(with = "fe_vec_hex")]
    pub opened_witness: Vec<Fe>,
}

pub fn witness_commitment(assignment: &[Fe]) -> Digest {
    hash(&encode_assignment(assignment))
}

fn encode_assignment(assignment: &[Fe]) -> Vec<u8> {
    let mut w = Writer::new();
    write_fe_vec(&mut w, assignment);
    w.finish()
}

impl CsProof {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.digest(&self.cs_digest).digest(&self.setup_id);
        write_fe_vec(&mut w, &self.public_values);
        w.digest(&self.witness_commitment);
        write_fe_vec(&mut w, &self.opened_witness);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let proof = CsProof {
            cs_digest: r.digest("cs_digest")?,
            setup_id: r.digest("setup_id")?,
            public_values: read_fe_vec(&mut r, "public_values")?,
            witness_commitment: r.digest("witness_commitment")?,
            opened_witness: read_fe_vec(&mut r, "opened_witness")?,
        };
        r.finish()?;
        Ok(proof)
    }
}

pub fn generate_proof(witness: &Witness, proving_key: &CsProvingKey) -> Result<CsProof, CsError> {
    let cs = &proving_key.constraint_system;
    cs.check(&witness.assignment, &mut NoMeter).map_err(|v| CsError::Unsatisfied(format!("{v:?}")))?;
    Ok(CsProof {
        cs_digest: cs.digest(),
        setup_id: proving_key.setup_id,
        public_values: cs.public_values(&witness.assignment),
        witness_commitment: witness_commitment(&witness.assignment),
        opened_witness: witness.assignment.clone(),
    })
}

/// Public arguments of the threshold program as submitted on-chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsPublicInputs {
    pub batch_digest: Digest,
    pub threshold: i64,
    pub violation_count: u64,
    pub sensor_key_digest: Digest,
}

impl CsPublicInputs {
    pub const ENCODED_LEN: usize = 32 + 8 + 8 + 32;

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.digest(&self.batch_digest)
            .i64(self.threshold)
            .u64(self.violation_count)
            .digest(&self.sensor_key_digest);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let v = CsPublicInputs {
            batch_digest: r.digest("batch_digest")?,
            threshold: r.i64("threshold")?,
            violation_count: r.u64("violation_count")?,
            sensor_key_digest: r.digest("sensor_key_digest")?,
        };
        r.finish()?;
        Ok(v)
    }

    /// Field values for the public slots of `layout`, in slot order.
    pub fn field_values(&self, layout: &CsLayout) -> Vec<Fe> {
        let halves = |d: &Digest| -> [Fe; 2] {
            [fe_from_chunk(&d.0[..HALF_BYTES]), fe_from_chunk(&d.0[HALF_BYTES..])]
        };
        let mut out = halves(&self.batch_digest).to_vec();
        if layout.public.threshold {
            out.push(fe_from_i64(self.threshold));
        }
        out.push(fe_from_u64(self.violation_count));
        if layout.public.sensor_key_digest {
            out.extend(halves(&self.sensor_key_digest));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CsRejection {
    /// The proof was produced for a different constraint system.
    ProgramMismatch,
    SetupMismatch,
    CommitmentMismatch,
    MalformedWitness,
    ConstraintViolation,
    /// The in-circuit sensor signature check failed.
    SensorSignature,
    PublicInputMismatch,
    MalformedPublicArgs,
}

impl CsRejection {
    pub fn code(self) -> &'static str {
        match self {
            CsRejection::ProgramMismatch => "program-mismatch",
            CsRejection::SetupMismatch => "setup-mismatch",
            CsRejection::CommitmentMismatch => "commitment-mismatch",
            CsRejection::MalformedWitness => "malformed-witness",
            CsRejection::ConstraintViolation => "constraint-violation",
            CsRejection::SensorSignature => "sensor-signature",
            CsRejection::PublicInputMismatch => "public-input-mismatch",
            CsRejection::MalformedPublicArgs => "malformed-public-args",
        }
    }
}

pub fn verify_cs(proof: &CsProof, vk: &CsVerificationKey, claimed_public_args: &[u8]) -> Result<(), CsRejection> {
    verify_cs_metered(proof, vk, claimed_public_args, &mut NoMeter)
}

/// Checks, in order: program binding, setup binding, witness commitment,
/// every constraint and gadget, and finally the claimed public arguments.
pub fn verify_cs_metered(
    proof: &CsProof,
    vk: &CsVerificationKey,
    claimed_public_args: &[u8],
    meter: &mut impl Meter,
) -> Result<(), CsRejection> {
    if proof.cs_digest != vk.cs_digest {
        return Err(CsRejection::ProgramMismatch);
    }
    if proof.setup_id != vk.setup_id {
        return Err(CsRejection::SetupMismatch);
    }
    let encoded = encode_assignment(&proof.opened_witness);
    meter.hash(encoded.len());
    if hash(&encoded) != proof.witness_commitment {
        return Err(CsRejection::CommitmentMismatch);
    }
    let cs = &vk.constraint_system;
    match cs.check(&proof.opened_witness, meter) {
        Ok(()) => {}
        Err(Violation::Shape) => return Err(CsRejection::MalformedWitness),
        Err(Violation::Gadget { kind: GadgetKind::SignatureCheck, .. }) => return Err(CsRejection::SensorSignature),
        Err(_) => return Err(CsRejection::ConstraintViolation),
    }
    if cs.public_values(&proof.opened_witness) != proof.public_values {
        return Err(CsRejection::PublicInputMismatch);
    }
    let claimed = CsPublicInputs::decode(claimed_public_args).map_err(|_| CsRejection::MalformedPublicArgs)?;
    if claimed.field_values(&cs.layout) != proof.public_values {
        return Err(CsRejection::PublicInputMismatch);
    }
    Ok(())
}
