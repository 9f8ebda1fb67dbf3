//! Attack strategies against a deployed workflow and the stage at which
//! each one is caught.
//!
//! The adversary controls the gateway host: it may run a different
//! program, alter inputs or auxiliary data, edit evidence in transit and
//! resubmit old packages. It never holds the sensor key, the enclave
//! evidence key or the PKI root key.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::RejectReason;
use crate::crypto::{generate_keypair, hash, KeyRole};
use crate::cs::field::{fe_from_chunk, fe_from_u64};
use crate::cs::proof::witness_commitment;
use crate::cs::r1cs::HALF_BYTES;
use crate::cs::{assign_witness, compile, compute_witness, generate_proof, setup, CsProof, CsPublicInputs, PublicLayout};
use crate::error::{TeeError, WorkflowError};
use crate::gateway::PreprocessProgram;
use crate::sensor::{sign_batch, SignedBatch};
use crate::tee::{instantiate_enclave, verify_attestation, TeeEvidence, TeePublicArgs};
use crate::types::{AuxiliaryData, BackendId, EvidencePackage, Output};
use crate::workflow::{fixture_seed, tee_package, Deployment, Gateway, WorkflowConfig};

pub const SCENARIO_BATCH_SIZE: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TamperKind {
    Program,
    Input,
    Auxiliary,
    Evidence,
    Replay,
}

impl TamperKind {
    pub const ALL: [TamperKind; 5] =
        [TamperKind::Program, TamperKind::Input, TamperKind::Auxiliary, TamperKind::Evidence, TamperKind::Replay];

    pub fn name(self) -> &'static str {
        match self {
            TamperKind::Program => "program",
            TamperKind::Input => "input",
            TamperKind::Auxiliary => "auxiliary",
            TamperKind::Evidence => "evidence",
            TamperKind::Replay => "replay",
        }
    }
}

impl fmt::Display for TamperKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TamperKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TamperKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown strategy `{s}` (expected program, input, auxiliary, evidence or replay)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputVariant {
    /// Alter values, recompute the digest, keep the sensor signature.
    KeepSignature,
    /// Alter values but present the original digest and signature.
    KeepDigest,
    /// Alter values and re-sign with a key the adversary controls.
    Resign,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ByteTarget {
    PublicArgs,
    EvidenceBody,
    ProgramId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayVariant {
    /// Submit the same package twice in a row.
    Duplicate,
    /// Resubmit an older package after a newer one was accepted.
    Stale,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Mutation {
    /// Run a program whose filter threshold is shifted by `delta`. With
    /// `relabel` the resulting proof claims the deployed program's identity.
    ProgramShift { delta: i64, relabel: bool },
    InputValue { index: usize, delta: i64, variant: InputVariant },
    /// Run with `threshold + delta`. With `claim_original` the package still
    /// claims the deployed threshold.
    ThresholdDelta { delta: i64, claim_original: bool },
    ByteFlip { target: ByteTarget, index: usize, mask: u8 },
    /// Evidence for `count + count_delta` under a key the adversary holds.
    KeySubstitution { count_delta: u64 },
    /// Pair one batch's public arguments with another batch's evidence.
    Splice,
    Replay { variant: ReplayVariant },
}

impl Mutation {
    pub fn kind(&self) -> TamperKind {
        match self {
            Mutation::ProgramShift { .. } => TamperKind::Program,
            Mutation::InputValue { .. } => TamperKind::Input,
            Mutation::ThresholdDelta { .. } => TamperKind::Auxiliary,
            Mutation::ByteFlip { .. } | Mutation::KeySubstitution { .. } | Mutation::Splice => TamperKind::Evidence,
            Mutation::Replay { .. } => TamperKind::Replay,
        }
    }

    fn is_identity(&self) -> bool {
        match *self {
            Mutation::ProgramShift { delta, .. }
            | Mutation::InputValue { delta, .. }
            | Mutation::ThresholdDelta { delta, .. } => delta == 0,
            Mutation::ByteFlip { mask, .. } => mask == 0,
            Mutation::KeySubstitution { count_delta } => count_delta == 0,
            Mutation::Splice | Mutation::Replay { .. } => false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TamperStrategy {
    pub kind: TamperKind,
    pub mutation: Mutation,
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("mutation leaves the artifact unchanged")]
    NoOpMutation,
    #[error("mutation {mutation:?} does not belong to strategy `{kind}`")]
    KindMismatch { kind: TamperKind, mutation: Mutation },
    #[error("tampered artifact is byte-identical to the honest one")]
    Unchanged,
    #[error("honest control run was rejected: {0}")]
    HonestRejected(String),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
}

impl TamperStrategy {
    pub fn new(kind: TamperKind, mutation: Mutation) -> Result<Self, HarnessError> {
        if mutation.kind() != kind {
            return Err(HarnessError::KindMismatch { kind, mutation });
        }
        if mutation.is_identity() {
            return Err(HarnessError::NoOpMutation);
        }
        Ok(TamperStrategy { kind, mutation })
    }

    /// Draws a random non-identity mutation of the given kind.
    pub fn from_seed(kind: TamperKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((kind as u64) << 56));
        let delta = |rng: &mut ChaCha8Rng| {
            let d = rng.gen_range(1..=20i64);
            if rng.gen() {
                d
            } else {
                -d
            }
        };
        let mutation = match kind {
            TamperKind::Program => Mutation::ProgramShift { delta: delta(&mut rng), relabel: rng.gen() },
            TamperKind::Input => Mutation::InputValue {
                index: rng.gen_range(0..SCENARIO_BATCH_SIZE * 4),
                delta: delta(&mut rng),
                variant: [InputVariant::KeepSignature, InputVariant::KeepDigest, InputVariant::Resign][rng.gen_range(0..3)],
            },
            TamperKind::Auxiliary => Mutation::ThresholdDelta { delta: delta(&mut rng), claim_original: rng.gen() },
            TamperKind::Evidence => match rng.gen_range(0..4) {
                0 | 1 => Mutation::ByteFlip {
                    target: [ByteTarget::PublicArgs, ByteTarget::EvidenceBody, ByteTarget::ProgramId][rng.gen_range(0..3)],
                    index: rng.gen_range(0..4096),
                    mask: 1 << rng.gen_range(0..8),
                },
                2 => Mutation::KeySubstitution { count_delta: rng.gen_range(1..=8) },
                _ => Mutation::Splice,
            },
            TamperKind::Replay => Mutation::Replay {
                variant: if rng.gen() { ReplayVariant::Duplicate } else { ReplayVariant::Stale },
            },
        };
        TamperStrategy::new(kind, mutation).expect("generated mutations are never the identity")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectionStage {
    SensorSignature,
    AttestationReference,
    ConstraintCheck,
    PublicInputMatch,
    EvidenceSignature,
    ReplayGuard,
}

impl DetectionStage {
    pub fn name(self) -> &'static str {
        match self {
            DetectionStage::SensorSignature => "sensor-signature",
            DetectionStage::AttestationReference => "attestation-reference",
            DetectionStage::ConstraintCheck => "constraint-check",
            DetectionStage::PublicInputMatch => "public-input-match",
            DetectionStage::EvidenceSignature => "evidence-signature",
            DetectionStage::ReplayGuard => "replay-guard",
        }
    }

    /// Where a contract rejection happened, by backend.
    pub fn from_rejection(reason: RejectReason, backend: BackendId) -> Self {
        match reason {
            RejectReason::Replay => DetectionStage::ReplayGuard,
            RejectReason::SensorSignature => DetectionStage::SensorSignature,
            RejectReason::PublicInputMismatch => DetectionStage::PublicInputMatch,
            RejectReason::EvidenceInvalid => DetectionStage::EvidenceSignature,
            RejectReason::ProgramMismatch
            | RejectReason::ConstraintViolation
            | RejectReason::Malformed
            | RejectReason::BackendMismatch => match backend {
                BackendId::ConstraintSystem => DetectionStage::ConstraintCheck,
                BackendId::Enclave => DetectionStage::EvidenceSignature,
            },
        }
    }
}

impl fmt::Display for DetectionStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub detected: bool,
    pub stage: Option<DetectionStage>,
    /// Rejection code or error text behind the detection.
    pub detail: String,
}

impl AttackOutcome {
    fn caught(stage: DetectionStage, detail: impl Into<String>) -> Self {
        AttackOutcome { detected: true, stage: Some(stage), detail: detail.into() }
    }

    fn missed(detail: impl Into<String>) -> Self {
        AttackOutcome { detected: false, stage: None, detail: detail.into() }
    }
}

/// One JSON line of an attack report.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackReport {
    pub strategy: TamperKind,
    pub backend: BackendId,
    pub seed: u64,
    pub detected: bool,
    pub stage: Option<DetectionStage>,
    pub mutation: Mutation,
    pub detail: String,
}

impl AttackReport {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Sets up a fresh deployment from `seed`, checks that an honest package is
/// accepted, then applies `strategy` and reports where it was caught.
pub fn run_attack(strategy: &TamperStrategy, backend: BackendId, seed: u64) -> Result<AttackOutcome, HarnessError> {
    let mut d = Deployment::setup(WorkflowConfig::new(backend, SCENARIO_BATCH_SIZE), seed)?;
    let s1 = d.emit(seed)?;
    let s2 = d.emit(seed.wrapping_add(1))?;
    let (_, p1) = d.process(&s1)?;

    let control = d.chain.clone().submit(&d.config.workflow_id, &p1).map_err(WorkflowError::from)?;
    if !control.accepted {
        return Err(HarnessError::HonestRejected(format!("{:?}", control.reason)));
    }

    match strategy.mutation {
        Mutation::ProgramShift { delta, relabel } => program_attack(&mut d, &s1, &p1, delta, relabel),
        Mutation::InputValue { index, delta, variant } => input_attack(&mut d, &s1, &p1, index, delta, variant, seed),
        Mutation::ThresholdDelta { delta, claim_original } => aux_attack(&mut d, &s1, &p1, delta, claim_original),
        Mutation::ByteFlip { target, index, mask } => {
            let mut p = p1.clone();
            let field: &mut [u8] = match target {
                ByteTarget::PublicArgs => &mut p.public_args,
                ByteTarget::EvidenceBody => &mut p.evidence_body,
                ByteTarget::ProgramId => &mut p.program_id.0,
            };
            let i = index % field.len();
            field[i] ^= mask;
            submit_tampered(&mut d, &p1, &p)
        }
        Mutation::KeySubstitution { count_delta } => key_substitution(&mut d, &s1, &p1, count_delta, seed),
        Mutation::Splice => {
            let (_, p2) = d.process(&s2)?;
            let mut p = p1.clone();
            p.evidence_body = p2.evidence_body.clone();
            if backend == BackendId::Enclave {
                // Keep p1's digests and counter, graft p2's signature.
                let mut ev = TeeEvidence::decode(&p1.evidence_body).expect("honest evidence decodes");
                ev.signature = TeeEvidence::decode(&p2.evidence_body).expect("honest evidence decodes").signature;
                p.evidence_body = ev.encode();
            }
            submit_tampered(&mut d, &p1, &p)
        }
        Mutation::Replay { variant } => {
            let before = d.chain.tx_log.len();
            expect_accepted(&mut d, &p1)?;
            if variant == ReplayVariant::Stale {
                let (_, p2) = d.process(&s2)?;
                expect_accepted(&mut d, &p2)?;
            }
            let r = d.submit(&p1)?;
            if d.chain.tx_log.len() <= before {
                return Err(HarnessError::Unchanged);
            }
            Ok(outcome_from_receipt(r.reason, backend))
        }
    }
}

fn expect_accepted(d: &mut Deployment, p: &EvidencePackage) -> Result<(), HarnessError> {
    let r = d.submit(p)?;
    if r.accepted {
        Ok(())
    } else {
        Err(HarnessError::HonestRejected(format!("{:?}", r.reason)))
    }
}

fn outcome_from_receipt(reason: Option<RejectReason>, backend: BackendId) -> AttackOutcome {
    match reason {
        Some(r) => AttackOutcome::caught(DetectionStage::from_rejection(r, backend), r.code()),
        None => AttackOutcome::missed("accepted on-chain"),
    }
}

fn submit_tampered(d: &mut Deployment, honest: &EvidencePackage, tampered: &EvidencePackage) -> Result<AttackOutcome, HarnessError> {
    if tampered.encode() == honest.encode() {
        return Err(HarnessError::Unchanged);
    }
    let r = d.submit(tampered)?;
    Ok(outcome_from_receipt(r.reason, d.config.backend))
}

fn cs_package(proof: &CsProof, public: &CsPublicInputs, program_id: crate::crypto::Digest) -> EvidencePackage {
    EvidencePackage {
        backend: BackendId::ConstraintSystem,
        public_args: public.encode(),
        evidence_body: proof.encode(),
        program_id,
    }
}

fn honest_public(d: &Deployment, signed: &SignedBatch, violation_count: u64) -> CsPublicInputs {
    CsPublicInputs {
        batch_digest: signed.batch_digest,
        threshold: d.aux.threshold,
        violation_count,
        sensor_key_digest: hash(d.sensor.public_key()),
    }
}

/// Runs an enclave with a different configuration on the same certified
/// device, then checks both the attestation and the on-chain submission.
fn rogue_enclave(
    d: &mut Deployment,
    signed: &SignedBatch,
    honest: &EvidencePackage,
    program: PreprocessProgram,
    aux: AuxiliaryData,
) -> Result<AttackOutcome, HarnessError> {
    let infra = d.tee.as_ref().expect("enclave deployment");
    let mut rogue = instantiate_enclave(&infra.pki, &infra.device, program, aux, d.sensor.public_key(), infra.launch_nonce)
        .map_err(WorkflowError::from)?;
    if rogue.measurement() == infra.reference_measurement {
        return Err(HarnessError::Unchanged);
    }
    let attestation = verify_attestation(&rogue.attest(), infra.pki.root_public_key(), &infra.reference_measurement);
    let (output, evidence) = rogue.execute(signed).map_err(WorkflowError::from)?;
    let mut package = tee_package(&rogue, &output, evidence);
    package.program_id = honest.program_id;
    let chain = d.submit(&package)?;
    match (attestation, chain.reason) {
        (Err(f), Some(r)) => Ok(AttackOutcome::caught(DetectionStage::AttestationReference, format!("{}; {}", f.code(), r))),
        (Ok(()), _) => Ok(AttackOutcome::missed("rogue enclave passed attestation")),
        (Err(_), None) => Ok(AttackOutcome::missed("rogue evidence accepted on-chain")),
    }
}

fn program_attack(
    d: &mut Deployment,
    signed: &SignedBatch,
    honest: &EvidencePackage,
    delta: i64,
    relabel: bool,
) -> Result<AttackOutcome, HarnessError> {
    let rogue_program = PreprocessProgram::with_threshold_shift(delta);
    match d.config.backend {
        BackendId::ConstraintSystem => {
            let cs = compile(&rogue_program, d.config.batch_size, PublicLayout::default()).map_err(WorkflowError::from)?;
            let keys = setup(&cs, fixture_seed("rogue-crs", delta as u64));
            let w = compute_witness(&cs, signed, &d.aux, d.sensor.public_key()).map_err(WorkflowError::from)?;
            let mut proof = generate_proof(&w, &keys.proving_key).map_err(WorkflowError::from)?;
            if relabel {
                let vk = &d.cs_keys.as_ref().expect("cs deployment").verification_key;
                proof.cs_digest = vk.cs_digest;
                proof.setup_id = vk.setup_id;
            }
            let count = rogue_program.execute(&signed.batch, &d.aux).violation_count;
            let p = cs_package(&proof, &honest_public(d, signed, count), d.program.program_id());
            submit_tampered(d, honest, &p)
        }
        BackendId::Enclave => {
            let aux = d.aux.clone();
            rogue_enclave(d, signed, honest, rogue_program, aux)
        }
    }
}

fn tamper_batch(signed: &SignedBatch, index: usize, delta: i64) -> SignedBatch {
    let mut t = signed.clone();
    let i = index % (t.batch.len() * 4);
    t.batch.measurements[i / 4].values[i % 4] += delta;
    t
}

fn input_attack(
    d: &mut Deployment,
    signed: &SignedBatch,
    honest: &EvidencePackage,
    index: usize,
    delta: i64,
    variant: InputVariant,
    seed: u64,
) -> Result<AttackOutcome, HarnessError> {
    let mut forged = tamper_batch(signed, index, delta);
    let attacker_key = generate_keypair(KeyRole::Sensor, Some(&fixture_seed("attacker-sensor", seed))).map_err(WorkflowError::from)?;
    match variant {
        InputVariant::KeepSignature => forged.batch_digest = forged.batch.digest(),
        InputVariant::KeepDigest => {}
        InputVariant::Resign => forged = sign_batch(forged.batch, &attacker_key).map_err(WorkflowError::from)?,
    }
    if forged.batch.encode() == signed.batch.encode() {
        return Err(HarnessError::Unchanged);
    }
    match &mut d.gateway {
        Gateway::Tee(g) => match g.process(&forged) {
            Err(WorkflowError::Tee(TeeError::Input(e))) => Ok(AttackOutcome::caught(DetectionStage::SensorSignature, e.to_string())),
            Err(e) => Err(e.into()),
            Ok((_, p)) => submit_tampered(d, honest, &p),
        },
        Gateway::Cs(g) => {
            let cs = &g.proving_key.constraint_system;
            let (key, key_digest) = match variant {
                InputVariant::Resign => (attacker_key.public_key.clone(), hash(&attacker_key.public_key)),
                _ => (d.sensor.public_key().to_vec(), hash(d.sensor.public_key())),
            };
            let mut w = assign_witness(cs, &forged.batch, &forged.signature, &d.aux, &key).map_err(WorkflowError::from)?;
            // Present the digest the package claims, not the one of the altered values.
            for (slot, half) in cs.layout.digest.iter().zip(forged.batch_digest.0.chunks(HALF_BYTES)) {
                w[*slot as usize] = fe_from_chunk(half);
            }
            let proof = CsProof {
                cs_digest: cs.digest(),
                setup_id: g.proving_key.setup_id,
                public_values: cs.public_values(&w),
                witness_commitment: witness_commitment(&w),
                opened_witness: w,
            };
            let count = d.program.execute(&forged.batch, &d.aux).violation_count;
            let public = CsPublicInputs {
                batch_digest: forged.batch_digest,
                threshold: d.aux.threshold,
                violation_count: count,
                sensor_key_digest: key_digest,
            };
            let p = cs_package(&proof, &public, d.program.program_id());
            submit_tampered(d, honest, &p)
        }
    }
}

fn aux_attack(
    d: &mut Deployment,
    signed: &SignedBatch,
    honest: &EvidencePackage,
    delta: i64,
    claim_original: bool,
) -> Result<AttackOutcome, HarnessError> {
    let rogue_aux = AuxiliaryData { threshold: d.aux.threshold + delta, ..d.aux.clone() };
    match d.config.backend {
        BackendId::ConstraintSystem => {
            let pk = d.cs_keys.as_ref().expect("cs deployment").proving_key.clone();
            let w = compute_witness(&pk.constraint_system, signed, &rogue_aux, d.sensor.public_key()).map_err(WorkflowError::from)?;
            let proof = generate_proof(&w, &pk).map_err(WorkflowError::from)?;
            let count = d.program.execute(&signed.batch, &rogue_aux).violation_count;
            let mut public = honest_public(d, signed, count);
            if !claim_original {
                public.threshold = rogue_aux.threshold;
            }
            let p = cs_package(&proof, &public, d.program.program_id());
            submit_tampered(d, honest, &p)
        }
        BackendId::Enclave => {
            let program = d.program.clone();
            rogue_enclave(d, signed, honest, program, rogue_aux)
        }
    }
}

fn key_substitution(
    d: &mut Deployment,
    signed: &SignedBatch,
    honest: &EvidencePackage,
    count_delta: u64,
    seed: u64,
) -> Result<AttackOutcome, HarnessError> {
    let true_count = d.program.execute(&signed.batch, &d.aux).violation_count;
    let forged_count = true_count + count_delta;
    match d.config.backend {
        BackendId::ConstraintSystem => {
            let pk = d.cs_keys.as_ref().expect("cs deployment").proving_key.clone();
            let rogue_keys = setup(&pk.constraint_system, fixture_seed("rogue-crs", seed));
            let mut w = compute_witness(&pk.constraint_system, signed, &d.aux, d.sensor.public_key())
                .map_err(WorkflowError::from)?
                .assignment;
            let l = &pk.constraint_system.layout;
            w[l.count as usize] = fe_from_u64(forged_count);
            w[l.sum as usize] = fe_from_u64(forged_count);
            let proof = CsProof {
                cs_digest: pk.constraint_system.digest(),
                setup_id: rogue_keys.proving_key.setup_id,
                public_values: pk.constraint_system.public_values(&w),
                witness_commitment: witness_commitment(&w),
                opened_witness: w,
            };
            let p = cs_package(&proof, &honest_public(d, signed, forged_count), d.program.program_id());
            submit_tampered(d, honest, &p)
        }
        BackendId::Enclave => {
            let key = generate_keypair(KeyRole::Evidence, Some(&fixture_seed("rogue-evidence", seed))).map_err(WorkflowError::from)?;
            let honest_ev = TeeEvidence::decode(&honest.evidence_body).expect("honest evidence decodes");
            let output_digest = Output { violation_count: forged_count, scaled_values: Vec::new() }.public_digest();
            let counter = honest_ev.counter;
            let msg = TeeEvidence::signed_message(&output_digest, &signed.batch_digest, counter, &d.program.program_id());
            let ev = TeeEvidence { output_digest, batch_digest: signed.batch_digest, counter, signature: key.sign(&msg) };
            let public = TeePublicArgs { batch_digest: signed.batch_digest, violation_count: forged_count };
            let p = EvidencePackage {
                backend: BackendId::Enclave,
                public_args: public.encode(),
                evidence_body: ev.encode(),
                program_id: d.program.program_id(),
            };
            submit_tampered(d, honest, &p)
        }
    }
}
