//! Gateway-side evidence production and an in-memory end-to-end deployment
//! (sensor → gateway → chain) for either backend.

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::chain::{ChainState, ContractMaterial, VerificationReceipt};
use crate::crypto::{generate_keypair, hash, Digest, KeyPair, KeyRole};
use crate::cs::{
    compile, compute_witness, generate_proof, setup, CsKeyPair, CsProvingKey, CsPublicInputs, PublicLayout,
};
use crate::error::{CsError, WorkflowError};
use crate::gateway::{verify_input, PreprocessProgram, ReplayGuard};
use crate::sensor::{generate_measurements, Sensor, SignedBatch};
use crate::tee::{
    instantiate_enclave, measure, verify_attestation, AttestationReport, Device, EnclaveInstance, Pki,
    TeePublicArgs,
};
use crate::types::{AuxiliaryData, BackendId, EvidencePackage, Output};

pub const DEFAULT_THRESHOLD: i64 = 50;
pub const DEFAULT_SCALE_DIVISOR: u64 = 10;
pub const DEFAULT_RULE_ID: &str = "threshold-violation";
pub const DEFAULT_VALUES: RangeInclusive<i64> = 0..=100;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowConfig {
    pub workflow_id: String,
    pub backend: BackendId,
    pub threshold: i64,
    pub scale_divisor: u64,
    pub rule_id: String,
    pub batch_size: usize,
    pub sensor_id: String,
}

impl WorkflowConfig {
    pub fn new(backend: BackendId, batch_size: usize) -> Self {
        WorkflowConfig {
            workflow_id: format!("wf-{}", backend.short_name()),
            backend,
            threshold: DEFAULT_THRESHOLD,
            scale_divisor: DEFAULT_SCALE_DIVISOR,
            rule_id: DEFAULT_RULE_ID.to_string(),
            batch_size,
            sensor_id: "sensor-1".to_string(),
        }
    }

    pub fn aux(&self) -> Result<AuxiliaryData, WorkflowError> {
        Ok(AuxiliaryData::new(self.threshold, self.scale_divisor, self.rule_id.clone())?)
    }
}

/// Deterministic 32-byte seed for fixture key material.
pub fn fixture_seed(label: &str, seed: u64) -> [u8; 32] {
    hash(format!("tpp/fixture/{label}/{seed}").as_bytes()).0
}

/// Constraint-system gateway: authenticates input, builds the witness and
/// the proof.
#[derive(Debug)]
pub struct CsGateway {
    pub program: PreprocessProgram,
    pub aux: AuxiliaryData,
    pub proving_key: CsProvingKey,
    pub sensor_public_key: Vec<u8>,
    pub guard: ReplayGuard,
}

impl CsGateway {
    /// Signature and sequence checks. Run in submission order.
    pub fn admit(&self, signed: &SignedBatch) -> Result<(), WorkflowError> {
        verify_input(signed, &self.sensor_public_key, &self.guard)?;
        Ok(())
    }

    /// Evidence generation for an admitted batch. Safe to run concurrently.
    pub fn prove(&self, signed: &SignedBatch) -> Result<(Output, EvidencePackage), WorkflowError> {
        let cs = &self.proving_key.constraint_system;
        let witness = compute_witness(cs, signed, &self.aux, &self.sensor_public_key)?;
        let output = self.program.execute(&signed.batch, &self.aux);
        let proof = generate_proof(&witness, &self.proving_key)?;
        let public = CsPublicInputs {
            batch_digest: signed.batch_digest,
            threshold: self.aux.threshold,
            violation_count: output.violation_count,
            sensor_key_digest: hash(&self.sensor_public_key),
        };
        if public.field_values(&cs.layout) != proof.public_values {
            return Err(CsError::Unsatisfied("program output disagrees with the witness".into()).into());
        }
        let package = EvidencePackage {
            backend: BackendId::ConstraintSystem,
            public_args: public.encode(),
            evidence_body: proof.encode(),
            program_id: self.program.program_id(),
        };
        Ok((output, package))
    }
}

/// Enclave gateway: the host passes batches into the sealed enclave.
#[derive(Debug)]
pub struct TeeGateway {
    pub enclave: EnclaveInstance,
}

impl TeeGateway {
    pub fn process(&mut self, signed: &SignedBatch) -> Result<(Output, EvidencePackage), WorkflowError> {
        let (output, evidence) = self.enclave.execute(signed)?;
        Ok((output.clone(), tee_package(&self.enclave, &output, evidence)))
    }
}

pub fn tee_package(enclave: &EnclaveInstance, output: &Output, evidence: crate::tee::TeeEvidence) -> EvidencePackage {
    let public = TeePublicArgs { batch_digest: evidence.batch_digest, violation_count: output.violation_count };
    EvidencePackage {
        backend: BackendId::Enclave,
        public_args: public.encode(),
        evidence_body: evidence.encode(),
        program_id: enclave.program().program_id(),
    }
}

#[derive(Debug)]
pub enum Gateway {
    Cs(CsGateway),
    Tee(TeeGateway),
}

impl Gateway {
    pub fn process(&mut self, signed: &SignedBatch) -> Result<(Output, EvidencePackage), WorkflowError> {
        match self {
            Gateway::Cs(g) => {
                g.admit(signed)?;
                g.prove(signed)
            }
            Gateway::Tee(g) => g.process(signed),
        }
    }
}

/// Enclave infrastructure kept around after setup.
#[derive(Debug)]
pub struct TeeInfra {
    pub pki: Pki,
    pub device: Device,
    pub launch_nonce: [u8; 32],
    pub reference_measurement: Digest,
    pub attestation: AttestationReport,
}

/// A fully set-up workflow: sensor, gateway and a chain with the contract
/// deployed.
#[derive(Debug)]
pub struct Deployment {
    pub config: WorkflowConfig,
    pub program: PreprocessProgram,
    pub aux: AuxiliaryData,
    pub sensor: Sensor,
    pub gateway: Gateway,
    pub chain: ChainState,
    pub cs_keys: Option<CsKeyPair>,
    pub tee: Option<TeeInfra>,
}

pub fn cs_material(
    keys: &CsKeyPair,
    program: &PreprocessProgram,
    aux: &AuxiliaryData,
    sensor_public_key: &[u8],
) -> ContractMaterial {
    ContractMaterial::ConstraintSystem {
        verification_key: Box::new(keys.verification_key.clone()),
        program_id: program.program_id(),
        expected_threshold: aux.threshold,
        sensor_key_digest: hash(sensor_public_key),
    }
}

impl Deployment {
    /// One-time setup: keys, compiled program or attested enclave, and the
    /// deployed contract. All key material derives from `seed`.
    pub fn setup(config: WorkflowConfig, seed: u64) -> Result<Self, WorkflowError> {
        let program = PreprocessProgram::threshold_violation();
        let aux = config.aux()?;
        let sensor_key = generate_keypair(KeyRole::Sensor, Some(&fixture_seed("sensor", seed)))?;
        let sensor = Sensor::new(config.sensor_id.clone(), sensor_key)?;
        let mut chain = ChainState::default();

        let (gateway, cs_keys, tee) = match config.backend {
            BackendId::ConstraintSystem => {
                let cs = compile(&program, config.batch_size, PublicLayout::default())?;
                let keys = setup(&cs, fixture_seed("crs", seed));
                chain.deploy_contract(&config.workflow_id, cs_material(&keys, &program, &aux, sensor.public_key()))?;
                let gateway = Gateway::Cs(CsGateway {
                    program: program.clone(),
                    aux: aux.clone(),
                    proving_key: keys.proving_key.clone(),
                    sensor_public_key: sensor.public_key().to_vec(),
                    guard: ReplayGuard::new(),
                });
                (gateway, Some(keys), None)
            }
            BackendId::Enclave => {
                let mut pki = Pki::generate(Some(&fixture_seed("pki", seed)))?;
                let device = Device::manufacture("device-1", Some(&fixture_seed("device", seed)))?;
                pki.issue(&device.id, device.public_key())?;
                let launch_nonce = fixture_seed("nonce", seed);
                let enclave =
                    instantiate_enclave(&pki, &device, program.clone(), aux.clone(), sensor.public_key(), launch_nonce)?;
                let reference_measurement = measure(&program.program_id(), &aux, sensor.public_key());
                let attestation = enclave.attest();
                verify_attestation(&attestation, pki.root_public_key(), &reference_measurement)
                    .map_err(|f| WorkflowError::Attestation(f.code().to_string()))?;
                chain.deploy_contract(
                    &config.workflow_id,
                    ContractMaterial::Enclave {
                        evidence_public_key: attestation.evidence_public_key.clone(),
                        reference_measurement,
                        program_id: program.program_id(),
                    },
                )?;
                let infra = TeeInfra { pki, device, launch_nonce, reference_measurement, attestation };
                (Gateway::Tee(TeeGateway { enclave }), None, Some(infra))
            }
        };
        Ok(Deployment { config, program, aux, sensor, gateway, chain, cs_keys, tee })
    }

    pub fn sensor_key(&self) -> &KeyPair {
        self.sensor.key()
    }

    /// Emits a signed batch of `config.batch_size` random measurements.
    pub fn emit(&mut self, values_seed: u64) -> Result<SignedBatch, WorkflowError> {
        let measurements = generate_measurements(self.config.batch_size, DEFAULT_VALUES, values_seed)?;
        let timestamp = 1_700_000_000 + self.sensor.next_sequence() as i64;
        Ok(self.sensor.emit(measurements, timestamp)?)
    }

    pub fn process(&mut self, signed: &SignedBatch) -> Result<(Output, EvidencePackage), WorkflowError> {
        self.gateway.process(signed)
    }

    pub fn submit(&mut self, package: &EvidencePackage) -> Result<VerificationReceipt, WorkflowError> {
        Ok(self.chain.submit(&self.config.workflow_id, package)?)
    }

    /// Process then submit.
    pub fn run_batch(&mut self, signed: &SignedBatch) -> Result<VerificationReceipt, WorkflowError> {
        let (_, package) = self.process(signed)?;
        self.submit(&package)
    }

    pub fn outputs(&self) -> Vec<u64> {
        self.chain.read_outputs(&self.config.workflow_id).expect("contract deployed at setup")
    }
}
