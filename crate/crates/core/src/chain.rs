//! Single-node ledger with per-workflow verification contracts.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::crypto::{hash, hex_bytes, Digest};
use crate::cs::{verify_cs_metered, CsProof, CsPublicInputs, CsRejection, CsVerificationKey};
use crate::error::ChainError;
use crate::meter::{CostMeter, CostWeights, Meter, Primitive};
use crate::tee::{TeeEvidence, TeePublicArgs};
use crate::types::{BackendId, EvidencePackage, Output};

/// Verification material fixed at deployment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum ContractMaterial {
    ConstraintSystem {
        verification_key: Box<CsVerificationKey>,
        program_id: Digest,
        expected_threshold: i64,
        sensor_key_digest: Digest,
    },
    Enclave {
        #[serde(with = "hex_bytes")]
        evidence_public_key: Vec<u8>,
        reference_measurement: Digest,
        program_id: Digest,
    },
}

impl ContractMaterial {
    pub fn backend(&self) -> BackendId {
        match self {
            ContractMaterial::ConstraintSystem { .. } => BackendId::ConstraintSystem,
            ContractMaterial::Enclave { .. } => BackendId::Enclave,
        }
    }

    pub fn program_id(&self) -> Digest {
        match self {
            ContractMaterial::ConstraintSystem { program_id, .. } | ContractMaterial::Enclave { program_id, .. } => {
                *program_id
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    Replay,
    EvidenceInvalid,
    ProgramMismatch,
    PublicInputMismatch,
    ConstraintViolation,
    SensorSignature,
    Malformed,
    BackendMismatch,
}

impl RejectReason {
    pub fn code(self) -> &'static str {
        match self {
            RejectReason::Replay => "replay",
            RejectReason::EvidenceInvalid => "evidence-invalid",
            RejectReason::ProgramMismatch => "program-mismatch",
            RejectReason::PublicInputMismatch => "public-input-mismatch",
            RejectReason::ConstraintViolation => "constraint-violation",
            RejectReason::SensorSignature => "sensor-signature",
            RejectReason::Malformed => "malformed",
            RejectReason::BackendMismatch => "backend-mismatch",
        }
    }
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}

impl From<CsRejection> for RejectReason {
    fn from(r: CsRejection) -> Self {
        match r {
            CsRejection::ProgramMismatch => RejectReason::ProgramMismatch,
            CsRejection::SetupMismatch | CsRejection::CommitmentMismatch | CsRejection::ConstraintViolation => {
                RejectReason::ConstraintViolation
            }
            CsRejection::MalformedWitness | CsRejection::MalformedPublicArgs => RejectReason::Malformed,
            CsRejection::SensorSignature => RejectReason::SensorSignature,
            CsRejection::PublicInputMismatch => RejectReason::PublicInputMismatch,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReceipt {
    pub accepted: bool,
    pub reason: Option<RejectReason>,
    pub cost_units: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptedOutput {
    pub height: u64,
    pub violation_count: u64,
    pub batch_digest: Digest,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayState {
    /// Batch digests already accepted (constraint-system contracts).
    pub seen_batches: BTreeSet<Digest>,
    /// Highest accepted enclave counter.
    pub last_counter: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contract {
    pub address: Digest,
    pub material: ContractMaterial,
    pub accepted: Vec<AcceptedOutput>,
    pub replay: ReplayState,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxRecord {
    pub height: u64,
    pub workflow_id: String,
    pub package_digest: Digest,
    pub accepted: bool,
    pub reason: Option<RejectReason>,
    pub cost_units: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub weights: CostWeights,
    pub total_units: u64,
    pub per_workflow: BTreeMap<String, u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainState {
    pub height: u64,
    pub contracts: BTreeMap<String, Contract>,
    pub tx_log: Vec<TxRecord>,
    pub costs: CostLedger,
}

impl Default for ChainState {
    fn default() -> Self {
        ChainState::new(CostWeights::default())
    }
}

/// What a successful verification contributes to the contract store.
struct Verified {
    violation_count: u64,
    batch_digest: Digest,
    counter: Option<u64>,
}

impl ChainState {
    pub fn new(weights: CostWeights) -> Self {
        ChainState {
            height: 0,
            contracts: BTreeMap::new(),
            tx_log: Vec::new(),
            costs: CostLedger { weights, total_units: 0, per_workflow: BTreeMap::new() },
        }
    }

    pub fn deploy_contract(&mut self, workflow_id: &str, material: ContractMaterial) -> Result<Digest, ChainError> {
        if self.contracts.contains_key(workflow_id) {
            return Err(ChainError::DuplicateWorkflow(workflow_id.to_string()));
        }
        if let ContractMaterial::ConstraintSystem { verification_key, .. } = &material {
            if !verification_key.is_consistent() {
                return Err(ChainError::InvalidMaterial("verification key does not match its constraint system".into()));
            }
        }
        let address = hash(format!("tpp/contract/{workflow_id}").as_bytes());
        self.height += 1;
        self.contracts.insert(
            workflow_id.to_string(),
            Contract { address, material, accepted: Vec::new(), replay: ReplayState::default() },
        );
        Ok(address)
    }

    pub fn contract(&self, workflow_id: &str) -> Result<&Contract, ChainError> {
        self.contracts.get(workflow_id).ok_or_else(|| ChainError::UnknownWorkflow(workflow_id.to_string()))
    }

    /// Verifies and, on success, records the package. Cost is metered and
    /// logged whether or not the package is accepted.
    pub fn submit(&mut self, workflow_id: &str, package: &EvidencePackage) -> Result<VerificationReceipt, ChainError> {
        let contract = self.contract(workflow_id)?;
        let mut meter = CostMeter::new(self.costs.weights);
        meter.charge(Primitive::CalldataByte, package.encode().len() as u64);
        let outcome = verify_package(contract, package, &mut meter)
            .and_then(|v| check_replay(&contract.replay, &v).map(|()| v));

        self.height += 1;
        let contract = self.contracts.get_mut(workflow_id).expect("looked up above");
        let reason = match outcome {
            Ok(v) => {
                match v.counter {
                    Some(c) => contract.replay.last_counter = Some(c),
                    None => {
                        contract.replay.seen_batches.insert(v.batch_digest);
                    }
                }
                contract.accepted.push(AcceptedOutput {
                    height: self.height,
                    violation_count: v.violation_count,
                    batch_digest: v.batch_digest,
                });
                None
            }
            Err(r) => Some(r),
        };
        let receipt = VerificationReceipt { accepted: reason.is_none(), reason, cost_units: meter.total };
        self.costs.total_units += meter.total;
        *self.costs.per_workflow.entry(workflow_id.to_string()).or_default() += meter.total;
        self.tx_log.push(TxRecord {
            height: self.height,
            workflow_id: workflow_id.to_string(),
            package_digest: package.digest(),
            accepted: receipt.accepted,
            reason,
            cost_units: meter.total,
        });
        Ok(receipt)
    }

    /// Accepted violation counts in submission order.
    pub fn read_outputs(&self, workflow_id: &str) -> Result<Vec<u64>, ChainError> {
        Ok(self.contract(workflow_id)?.accepted.iter().map(|a| a.violation_count).collect())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("chain state serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self, ChainError> {
        serde_json::from_str(s).map_err(|e| ChainError::Export(e.to_string()))
    }
}

fn check_replay(state: &ReplayState, v: &Verified) -> Result<(), RejectReason> {
    let fresh = match v.counter {
        Some(c) => state.last_counter.is_none_or(|last| c > last),
        None => !state.seen_batches.contains(&v.batch_digest),
    };
    if fresh {
        Ok(())
    } else {
        Err(RejectReason::Replay)
    }
}

fn verify_package(contract: &Contract, package: &EvidencePackage, meter: &mut CostMeter) -> Result<Verified, RejectReason> {
    if package.backend != contract.material.backend() {
        return Err(RejectReason::BackendMismatch);
    }
    if package.program_id != contract.material.program_id() {
        return Err(RejectReason::ProgramMismatch);
    }
    match &contract.material {
        ContractMaterial::ConstraintSystem { verification_key, expected_threshold, sensor_key_digest, .. } => {
            let public = CsPublicInputs::decode(&package.public_args).map_err(|_| RejectReason::Malformed)?;
            let proof = CsProof::decode(&package.evidence_body).map_err(|_| RejectReason::Malformed)?;
            if public.threshold != *expected_threshold || public.sensor_key_digest != *sensor_key_digest {
                return Err(RejectReason::PublicInputMismatch);
            }
            verify_cs_metered(&proof, verification_key, &package.public_args, meter)?;
            Ok(Verified { violation_count: public.violation_count, batch_digest: public.batch_digest, counter: None })
        }
        ContractMaterial::Enclave { evidence_public_key, program_id, .. } => {
            let public = TeePublicArgs::decode(&package.public_args).map_err(|_| RejectReason::Malformed)?;
            let evidence = TeeEvidence::decode(&package.evidence_body).map_err(|_| RejectReason::Malformed)?;
            let output_encoding = Output::public_encoding(public.violation_count);
            meter.hash(output_encoding.len());
            if evidence.batch_digest != public.batch_digest || evidence.output_digest != hash(&output_encoding) {
                return Err(RejectReason::PublicInputMismatch);
            }
            meter.charge(Primitive::SignatureVerify, 1);
            if !evidence.verify(evidence_public_key, program_id) {
                return Err(RejectReason::EvidenceInvalid);
            }
            Ok(Verified {
                violation_count: public.violation_count,
                batch_digest: public.batch_digest,
                counter: Some(evidence.counter),
            })
        }
    }
}
