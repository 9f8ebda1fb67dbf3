//! Enclave-simulation evidence backend.
//!
//! Models the attested-enclave workflow: a local PKI certifies device
//! identity keys, an enclave is instantiated with a sealed program,
//! auxiliary data and sensor key, attests its measurement, and signs every
//! output with an evidence key that never leaves the instance.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::crypto::{generate_keypair, hash, hex_bytes, verify, Digest, KeyPair, KeyRole};
use crate::error::{CryptoError, DecodeError, TeeError};
use crate::gateway::{verify_input, PreprocessProgram, ReplayGuard};
use crate::sensor::SignedBatch;
use crate::types::{AuxiliaryData, Output};

const CERT_DOMAIN: &str = "tpp/device-cert/v1";
const MEASUREMENT_DOMAIN: &str = "tpp/enclave-measurement/v1";
const ATTESTATION_DOMAIN: &str = "tpp/attestation/v1";
const EVIDENCE_KEY_DOMAIN: &str = "tpp/evidence-key/v1";
const EVIDENCE_DOMAIN: &str = "tpp/tee-evidence/v1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub device_id: String,
    #[serde(with = "hex_bytes")]
    pub device_public_key: Vec<u8>,
    #[serde(with = "hex_bytes")]
    pub root_signature: Vec<u8>,
}

impl Certificate {
    fn signed_message(device_id: &str, device_public_key: &[u8]) -> Vec<u8> {
        let mut w = Writer::new();
        w.str(CERT_DOMAIN).str(device_id).bytes(device_public_key);
        w.finish()
    }

    pub fn verify(&self, root_public_key: &[u8]) -> bool {
        verify(
            root_public_key,
            &Self::signed_message(&self.device_id, &self.device_public_key),
            &self.root_signature,
        )
    }
}

/// Local stand-in for the vendor attestation infrastructure.
#[derive(Clone, Debug)]
pub struct Pki {
    root: KeyPair,
    issued: BTreeMap<String, Certificate>,
}

impl Pki {
    pub fn new(root: KeyPair) -> Result<Self, CryptoError> {
        root.expect_role(KeyRole::PkiRoot)?;
        Ok(Pki { root, issued: BTreeMap::new() })
    }

    pub fn generate(seed: Option<&[u8]>) -> Result<Self, CryptoError> {
        Pki::new(generate_keypair(KeyRole::PkiRoot, seed)?)
    }

    pub fn root_public_key(&self) -> &[u8] {
        &self.root.public_key
    }

    pub fn root_key(&self) -> &KeyPair {
        &self.root
    }

    pub fn issue(&mut self, device_id: &str, device_public_key: &[u8]) -> Result<Certificate, TeeError> {
        if self.issued.contains_key(device_id) {
            return Err(TeeError::DuplicateDevice(device_id.to_string()));
        }
        let cert = Certificate {
            device_id: device_id.to_string(),
            device_public_key: device_public_key.to_vec(),
            root_signature: self.root.sign(&Certificate::signed_message(device_id, device_public_key)),
        };
        self.issued.insert(device_id.to_string(), cert.clone());
        Ok(cert)
    }

    pub fn certificate(&self, device_id: &str) -> Option<&Certificate> {
        self.issued.get(device_id)
    }

    pub fn certificates(&self) -> impl Iterator<Item = &Certificate> {
        self.issued.values()
    }

    /// Rebuilds a PKI from its root key and previously issued certificates.
    pub fn restore(root: KeyPair, certificates: Vec<Certificate>) -> Result<Self, TeeError> {
        let mut pki = Pki::new(root).map_err(|e| TeeError::Config(e.to_string()))?;
        for cert in certificates {
            if !cert.verify(pki.root_public_key()) {
                return Err(TeeError::Config(format!("certificate for `{}` does not verify", cert.device_id)));
            }
            if pki.issued.insert(cert.device_id.clone(), cert.clone()).is_some() {
                return Err(TeeError::DuplicateDevice(cert.device_id));
            }
        }
        Ok(pki)
    }
}

/// A TEE-capable machine holding an identity key embedded at manufacture.
#[derive(Clone, Debug)]
pub struct Device {
    pub id: String,
    identity: KeyPair,
}

impl Device {
    pub fn manufacture(id: impl Into<String>, seed: Option<&[u8]>) -> Result<Self, CryptoError> {
        Device::from_identity(id, generate_keypair(KeyRole::DeviceIdentity, seed)?)
    }

    pub fn from_identity(id: impl Into<String>, identity: KeyPair) -> Result<Self, CryptoError> {
        identity.expect_role(KeyRole::DeviceIdentity)?;
        Ok(Device { id: id.into(), identity })
    }

    pub fn public_key(&self) -> &[u8] {
        &self.identity.public_key
    }

    pub fn identity(&self) -> &KeyPair {
        &self.identity
    }
}

/// `H(program_id ‖ aux ‖ sensor_public_key)` under a fixed domain tag.
pub fn measure(program_id: &Digest, aux: &AuxiliaryData, sensor_public_key: &[u8]) -> Digest {
    let mut w = Writer::new();
    w.str(MEASUREMENT_DOMAIN).digest(program_id).bytes(&aux.encode()).bytes(sensor_public_key);
    hash(&w.finish())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttestationReport {
    pub measurement: Digest,
    #[serde(with = "hex_bytes")]
    pub evidence_public_key: Vec<u8>,
    #[serde(with = "hex_bytes")]
    pub device_signature: Vec<u8>,
    pub device_cert: Certificate,
}

impl AttestationReport {
    fn signed_message(measurement: &Digest, evidence_public_key: &[u8]) -> Vec<u8> {
        let mut w = Writer::new();
        w.str(ATTESTATION_DOMAIN).digest(measurement).bytes(evidence_public_key);
        w.finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttestationFailure {
    CertificateChain,
    DeviceSignature,
    MeasurementMismatch,
}

impl AttestationFailure {
    pub fn code(self) -> &'static str {
        match self {
            AttestationFailure::CertificateChain => "certificate-chain",
            AttestationFailure::DeviceSignature => "device-signature",
            AttestationFailure::MeasurementMismatch => "measurement-mismatch",
        }
    }
}

/// Accepts iff the certificate chains to `pki_root_public`, the device
/// signature verifies under the certified key and the measurement equals
/// `reference_measurement`.
pub fn verify_attestation(
    report: &AttestationReport,
    pki_root_public: &[u8],
    reference_measurement: &Digest,
) -> Result<(), AttestationFailure> {
    if !report.device_cert.verify(pki_root_public) {
        return Err(AttestationFailure::CertificateChain);
    }
    let msg = AttestationReport::signed_message(&report.measurement, &report.evidence_public_key);
    if !verify(&report.device_cert.device_public_key, &msg, &report.device_signature) {
        return Err(AttestationFailure::DeviceSignature);
    }
    if report.measurement != *reference_measurement {
        return Err(AttestationFailure::MeasurementMismatch);
    }
    Ok(())
}

/// Public arguments of an enclave package: the input digest and the count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeePublicArgs {
    pub batch_digest: Digest,
    pub violation_count: u64,
}

impl TeePublicArgs {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.digest(&self.batch_digest).u64(self.violation_count);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let v = TeePublicArgs { batch_digest: r.digest("batch_digest")?, violation_count: r.u64("violation_count")? };
        r.finish()?;
        Ok(v)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeeEvidence {
    pub output_digest: Digest,
    pub batch_digest: Digest,
    pub counter: u64,
    #[serde(with = "hex_bytes")]
    pub signature: Vec<u8>,
}

impl TeeEvidence {
    /// `output_digest ‖ batch_digest ‖ counter ‖ program_id`.
    pub fn signed_message(output_digest: &Digest, batch_digest: &Digest, counter: u64, program_id: &Digest) -> Vec<u8> {
        let mut w = Writer::new();
        w.str(EVIDENCE_DOMAIN).digest(output_digest).digest(batch_digest).u64(counter).digest(program_id);
        w.finish()
    }

    pub fn verify(&self, evidence_public_key: &[u8], program_id: &Digest) -> bool {
        let msg = Self::signed_message(&self.output_digest, &self.batch_digest, self.counter, program_id);
        verify(evidence_public_key, &msg, &self.signature)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.digest(&self.output_digest).digest(&self.batch_digest).u64(self.counter).bytes(&self.signature);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let v = TeeEvidence {
            output_digest: r.digest("output_digest")?,
            batch_digest: r.digest("batch_digest")?,
            counter: r.u64("counter")?,
            signature: r.bytes("signature")?.to_vec(),
        };
        r.finish()?;
        Ok(v)
    }
}

/// Mutable enclave state that survives a reload: the monotonic counter and
/// the per-sensor sequence numbers seen so far.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnclaveState {
    pub counter: u64,
    pub last_sequences: BTreeMap<String, u64>,
}

/// A sealed enclave. Configuration is fixed at instantiation and the
/// evidence private key has no accessor.
pub struct EnclaveInstance {
    device_id: String,
    device_identity: KeyPair,
    device_cert: Certificate,
    program: PreprocessProgram,
    aux: AuxiliaryData,
    sensor_public_key: Vec<u8>,
    launch_nonce: [u8; 32],
    measurement: Digest,
    evidence_keys: KeyPair,
    counter: u64,
    guard: ReplayGuard,
    sealed: bool,
}

impl std::fmt::Debug for EnclaveInstance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EnclaveInstance")
            .field("device_id", &self.device_id)
            .field("measurement", &self.measurement)
            .field("counter", &self.counter)
            .finish_non_exhaustive()
    }
}

/// The evidence key is derived from the device secret, the measurement and
/// a launch nonce, so relaunching the same configuration with the same nonce
/// recovers the same key while any change to the sealed state yields a new
/// one.
fn derive_evidence_key(device: &KeyPair, measurement: &Digest, nonce: &[u8; 32]) -> KeyPair {
    let mut w = Writer::new();
    w.str(EVIDENCE_KEY_DOMAIN).bytes(device.private_key()).digest(measurement).raw(nonce);
    let seed = hash(&w.finish());
    generate_keypair(KeyRole::Evidence, Some(seed.as_bytes())).expect("32-byte seed")
}

pub fn instantiate_enclave(
    pki: &Pki,
    device: &Device,
    program: PreprocessProgram,
    aux: AuxiliaryData,
    sensor_public_key: &[u8],
    launch_nonce: [u8; 32],
) -> Result<EnclaveInstance, TeeError> {
    let cert = pki
        .certificate(&device.id)
        .filter(|c| c.device_public_key == device.public_key())
        .ok_or_else(|| TeeError::UnknownDevice(device.id.clone()))?;
    let measurement = measure(&program.program_id(), &aux, sensor_public_key);
    let evidence_keys = derive_evidence_key(&device.identity, &measurement, &launch_nonce);
    Ok(EnclaveInstance {
        device_id: device.id.clone(),
        device_identity: device.identity.clone(),
        device_cert: cert.clone(),
        program,
        aux,
        sensor_public_key: sensor_public_key.to_vec(),
        launch_nonce,
        measurement,
        evidence_keys,
        counter: 0,
        guard: ReplayGuard::new(),
        sealed: true,
    })
}

impl EnclaveInstance {
    pub fn device_id(&self) -> &str {
        &self.device_id
    }

    pub fn program(&self) -> &PreprocessProgram {
        &self.program
    }

    pub fn aux(&self) -> &AuxiliaryData {
        &self.aux
    }

    pub fn sensor_public_key(&self) -> &[u8] {
        &self.sensor_public_key
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn measurement(&self) -> Digest {
        self.measurement
    }

    /// Recomputes the measurement from the current configuration.
    pub fn remeasure(&self) -> Digest {
        measure(&self.program.program_id(), &self.aux, &self.sensor_public_key)
    }

    pub fn evidence_public_key(&self) -> &[u8] {
        &self.evidence_keys.public_key
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn set_program(&mut self, program: PreprocessProgram) -> Result<(), TeeError> {
        self.ensure_unsealed()?;
        self.program = program;
        Ok(())
    }

    pub fn set_aux(&mut self, aux: AuxiliaryData) -> Result<(), TeeError> {
        self.ensure_unsealed()?;
        self.aux = aux;
        Ok(())
    }

    pub fn set_sensor_public_key(&mut self, key: &[u8]) -> Result<(), TeeError> {
        self.ensure_unsealed()?;
        self.sensor_public_key = key.to_vec();
        Ok(())
    }

    fn ensure_unsealed(&self) -> Result<(), TeeError> {
        if self.sealed {
            Err(TeeError::Sealed)
        } else {
            Ok(())
        }
    }

    pub fn attest(&self) -> AttestationReport {
        let msg = AttestationReport::signed_message(&self.measurement, &self.evidence_keys.public_key);
        AttestationReport {
            measurement: self.measurement,
            evidence_public_key: self.evidence_keys.public_key.clone(),
            device_signature: self.device_identity.sign(&msg),
            device_cert: self.device_cert.clone(),
        }
    }

    pub fn state(&self) -> EnclaveState {
        EnclaveState { counter: self.counter, last_sequences: self.guard.snapshot() }
    }

    /// Restores persisted state after a relaunch. The counter never moves
    /// backwards.
    pub fn restore_state(&mut self, state: EnclaveState) -> Result<(), TeeError> {
        if state.counter < self.counter {
            return Err(TeeError::CounterRollback { current: self.counter, requested: state.counter });
        }
        self.counter = state.counter;
        self.guard = ReplayGuard::from_snapshot(state.last_sequences);
        Ok(())
    }

    /// Authenticates the batch, runs the sealed program and signs the
    /// result. Rejected input produces no evidence and leaves the counter
    /// unchanged.
    pub fn execute(&mut self, signed: &SignedBatch) -> Result<(Output, TeeEvidence), TeeError> {
        let batch = verify_input(signed, &self.sensor_public_key, &self.guard)?;
        let output = self.program.execute(&batch, &self.aux);
        // Keys are bound to the measured state: a configuration that drifted
        // from the sealed one signs with a different key.
        let current = self.remeasure();
        let key = if current == self.measurement {
            self.evidence_keys.clone()
        } else {
            derive_evidence_key(&self.device_identity, &current, &self.launch_nonce)
        };
        self.counter += 1;
        let output_digest = output.public_digest();
        let batch_digest = signed.batch_digest;
        let msg = TeeEvidence::signed_message(&output_digest, &batch_digest, self.counter, &self.program.program_id());
        let evidence = TeeEvidence { output_digest, batch_digest, counter: self.counter, signature: key.sign(&msg) };
        Ok((output, evidence))
    }

    /// Unsound hook: overwrites the sealed aux, as a compromised host with
    /// memory access could.
    #[cfg(test)]
    pub(crate) fn bypass_seal_set_aux(&mut self, aux: AuxiliaryData) {
        self.aux = aux;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::{generate_batch, sign_batch};
    use crate::types::MetaData;

    struct Fixture {
        pki: Pki,
        device: Device,
        sensor: KeyPair,
    }

    fn fixture() -> Fixture {
        let mut pki = Pki::generate(Some(&[1; 32])).unwrap();
        let device = Device::manufacture("dev-a", Some(&[2; 32])).unwrap();
        pki.issue(&device.id, device.public_key()).unwrap();
        Fixture { pki, device, sensor: generate_keypair(KeyRole::Sensor, Some(&[3; 32])).unwrap() }
    }

    fn aux(t: i64) -> AuxiliaryData {
        AuxiliaryData::new(t, 10, "rule").unwrap()
    }

    fn enclave(f: &Fixture, t: i64) -> EnclaveInstance {
        instantiate_enclave(&f.pki, &f.device, PreprocessProgram::threshold_violation(), aux(t), &f.sensor.public_key, [9; 32])
            .unwrap()
    }

    fn batch(f: &Fixture, seq: u64) -> SignedBatch {
        let meta = MetaData { sensor_id: "s1".into(), timestamp: 5, sequence_no: seq };
        sign_batch(generate_batch(meta, 4, 0..=100, seq).unwrap(), &f.sensor).unwrap()
    }

    #[test]
    fn certificates_chain_to_their_root_only() {
        let f = fixture();
        let cert = f.pki.certificate("dev-a").unwrap();
        assert!(cert.verify(f.pki.root_public_key()));
        let other = Pki::generate(Some(&[4; 32])).unwrap();
        assert!(!cert.verify(other.root_public_key()));
    }

    #[test]
    fn duplicate_issue_and_unknown_device() {
        let mut f = fixture();
        assert_eq!(f.pki.issue("dev-a", f.device.public_key()), Err(TeeError::DuplicateDevice("dev-a".into())));
        let stranger = Device::manufacture("dev-b", Some(&[5; 32])).unwrap();
        let r = instantiate_enclave(&f.pki, &stranger, PreprocessProgram::threshold_violation(), aux(50), &[0; 32], [0; 32]);
        assert!(matches!(r, Err(TeeError::UnknownDevice(_))));
    }

    #[test]
    fn device_with_same_id_but_other_key_is_unknown() {
        let f = fixture();
        let impostor = Device::manufacture("dev-a", Some(&[6; 32])).unwrap();
        let r = instantiate_enclave(&f.pki, &impostor, PreprocessProgram::threshold_violation(), aux(50), &[0; 32], [0; 32]);
        assert!(matches!(r, Err(TeeError::UnknownDevice(_))));
    }

    #[test]
    fn measurement_matches_construction_and_remeasure() {
        let f = fixture();
        let e = enclave(&f, 50);
        let expected = measure(&PreprocessProgram::threshold_violation().program_id(), &aux(50), &f.sensor.public_key);
        assert_eq!(e.measurement(), expected);
        assert_eq!(e.remeasure(), expected);
    }

    #[test]
    fn same_config_on_two_devices() {
        let mut f = fixture();
        let dev_b = Device::manufacture("dev-b", Some(&[7; 32])).unwrap();
        f.pki.issue(&dev_b.id, dev_b.public_key()).unwrap();
        let a = enclave(&f, 50);
        let b = instantiate_enclave(&f.pki, &dev_b, PreprocessProgram::threshold_violation(), aux(50), &f.sensor.public_key, [9; 32])
            .unwrap();
        assert_eq!(a.measurement(), b.measurement());
        assert_ne!(a.evidence_public_key(), b.evidence_public_key());
    }

    #[test]
    fn relaunch_with_same_nonce_recovers_key() {
        let f = fixture();
        assert_eq!(enclave(&f, 50).evidence_public_key(), enclave(&f, 50).evidence_public_key());
        let other = instantiate_enclave(&f.pki, &f.device, PreprocessProgram::threshold_violation(), aux(50), &f.sensor.public_key, [8; 32])
            .unwrap();
        assert_ne!(enclave(&f, 50).evidence_public_key(), other.evidence_public_key());
    }

    #[test]
    fn sealed_configuration_is_immutable() {
        let f = fixture();
        let mut e = enclave(&f, 50);
        assert!(e.is_sealed());
        assert_eq!(e.set_aux(aux(49)), Err(TeeError::Sealed));
        assert_eq!(e.set_program(PreprocessProgram::with_threshold_shift(1)), Err(TeeError::Sealed));
        assert_eq!(e.set_sensor_public_key(&[0; 32]), Err(TeeError::Sealed));
        assert_eq!(e.aux(), &aux(50));
    }

    #[test]
    fn attestation_accepts_honest_and_rejects_others() {
        let f = fixture();
        let e = enclave(&f, 50);
        let reference = e.measurement();
        let report = e.attest();
        assert_eq!(verify_attestation(&report, f.pki.root_public_key(), &reference), Ok(()));

        let e49 = enclave(&f, 49);
        assert_eq!(
            verify_attestation(&e49.attest(), f.pki.root_public_key(), &reference),
            Err(AttestationFailure::MeasurementMismatch)
        );

        let rogue = Pki::generate(Some(&[11; 32])).unwrap();
        assert_eq!(
            verify_attestation(&report, rogue.root_public_key(), &reference),
            Err(AttestationFailure::CertificateChain)
        );

        // A report signed by a key the PKI never certified.
        let mut forged = report.clone();
        let fake = generate_keypair(KeyRole::DeviceIdentity, Some(&[12; 32])).unwrap();
        forged.device_signature = fake.sign(&AttestationReport::signed_message(&forged.measurement, &forged.evidence_public_key));
        assert_eq!(
            verify_attestation(&forged, f.pki.root_public_key(), &reference),
            Err(AttestationFailure::DeviceSignature)
        );
    }

    #[test]
    fn execute_signs_and_counts() {
        let f = fixture();
        let mut e = enclave(&f, 50);
        let pid = e.program().program_id();
        let s1 = batch(&f, 1);
        let (out, ev) = e.execute(&s1).unwrap();
        assert_eq!(out, PreprocessProgram::threshold_violation().execute(&s1.batch, &aux(50)));
        assert_eq!(ev.counter, 1);
        assert_eq!(ev.batch_digest, s1.batch_digest);
        assert!(ev.verify(&e.attest().evidence_public_key, &pid));
        let (_, ev2) = e.execute(&batch(&f, 2)).unwrap();
        assert_eq!(ev2.counter, 2);
        assert_eq!(TeeEvidence::decode(&ev2.encode()).unwrap(), ev2);
    }

    #[test]
    fn tampered_or_replayed_input_yields_no_evidence() {
        let f = fixture();
        let mut e = enclave(&f, 50);
        let mut bad = batch(&f, 1);
        bad.batch.measurements[0].values[0] += 1;
        assert!(matches!(e.execute(&bad), Err(TeeError::Input(_))));
        assert_eq!(e.counter(), 0);
        e.execute(&batch(&f, 1)).unwrap();
        assert!(matches!(e.execute(&batch(&f, 1)), Err(TeeError::Input(_))));
        assert_eq!(e.counter(), 1);
    }

    #[test]
    fn tampered_output_fails_signature() {
        let f = fixture();
        let mut e = enclave(&f, 50);
        let (out, mut ev) = e.execute(&batch(&f, 1)).unwrap();
        let forged = Output { violation_count: out.violation_count + 1, ..out };
        ev.output_digest = forged.public_digest();
        assert!(!ev.verify(e.evidence_public_key(), &e.program().program_id()));
    }

    #[test]
    fn seal_bypass_changes_signing_key() {
        let f = fixture();
        let mut e = enclave(&f, 50);
        let attested = e.attest().evidence_public_key;
        e.bypass_seal_set_aux(aux(60));
        let (_, ev) = e.execute(&batch(&f, 1)).unwrap();
        assert!(!ev.verify(&attested, &e.program().program_id()));
    }

    #[test]
    fn state_restore_is_monotonic() {
        let f = fixture();
        let mut e = enclave(&f, 50);
        e.execute(&batch(&f, 1)).unwrap();
        let saved = e.state();
        let mut reloaded = enclave(&f, 50);
        reloaded.restore_state(saved.clone()).unwrap();
        assert_eq!(reloaded.counter(), 1);
        assert!(reloaded.execute(&batch(&f, 1)).is_err());
        reloaded.execute(&batch(&f, 2)).unwrap();
        assert_eq!(
            reloaded.restore_state(saved),
            Err(TeeError::CounterRollback { current: 2, requested: 1 })
        );
    }
}
