mod common;

use common::{rng, sensor_key};
use proptest::prelude::*;
use rand::{Rng, RngCore};
use tpp_core::chain::RejectReason;
use tpp_core::tee::{
    instantiate_enclave, measure, verify_attestation, AttestationFailure, Device, Pki, TeeEvidence, TeePublicArgs,
};
use tpp_core::workflow::{Deployment, WorkflowConfig};
use tpp_core::{
    generate_keypair, hash, AuxiliaryData, BackendId, Digest, EvidencePackage, KeyRole, Output, PreprocessProgram,
};

fn aux(t: i64, d: u64, rule: &str) -> AuxiliaryData {
    AuxiliaryData::new(t, d, rule).unwrap()
}

fn tee_deployment(seed: u64) -> Deployment {
    Deployment::setup(WorkflowConfig::new(BackendId::Enclave, 2), seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn any_byte_change_moves_the_measurement(
        pos in 0usize..32,
        mask in 1u8..=255,
        t in -1000i64..1000,
        d in 1u64..100,
        target in 0usize..5,
    ) {
        let pid = PreprocessProgram::threshold_violation().program_id();
        let sensor = sensor_key(1).public_key;
        let a = aux(t, d, "rule");
        let reference = measure(&pid, &a, &sensor);
        let changed = match target {
            0 => {
                let mut p = pid;
                p.0[pos] ^= mask;
                measure(&p, &a, &sensor)
            }
            1 => {
                let mut s = sensor.clone();
                s[pos] ^= mask;
                measure(&pid, &a, &s)
            }
            2 => measure(&pid, &aux(t ^ i64::from(mask), d, "rule"), &sensor),
            3 => measure(&pid, &aux(t, d + u64::from(mask), "rule"), &sensor),
            _ => measure(&pid, &aux(t, d, &format!("rule{}", mask as char)), &sensor),
        };
        prop_assert_ne!(changed, reference);
    }
}

#[test]
fn attestation_rejects_every_perturbed_configuration() {
    let mut pki = Pki::generate(Some(&[1; 32])).unwrap();
    let device = Device::manufacture("dev", Some(&[2; 32])).unwrap();
    pki.issue(&device.id, device.public_key()).unwrap();
    let program = PreprocessProgram::threshold_violation();
    let sensor = sensor_key(3);
    let honest_aux = aux(50, 10, "threshold-violation");
    let reference = measure(&program.program_id(), &honest_aux, &sensor.public_key);

    let honest = instantiate_enclave(&pki, &device, program.clone(), honest_aux.clone(), &sensor.public_key, [0; 32])
        .unwrap();
    assert_eq!(verify_attestation(&honest.attest(), pki.root_public_key(), &reference), Ok(()));

    let mut r = rng(21);
    for trial in 0..150 {
        let (p, a, s) = match trial % 3 {
            0 => {
                let shift = [r.gen_range(-50..0), r.gen_range(1..50)][r.gen_range(0..2)];
                (PreprocessProgram::with_threshold_shift(shift), honest_aux.clone(), sensor.public_key.clone())
            }
            1 => {
                let t = 50 + [r.gen_range(-50..0), r.gen_range(1..50)][r.gen_range(0..2)];
                let d = if r.gen_bool(0.5) { 10 } else { r.gen_range(11..100) };
                (program.clone(), aux(t, d, "threshold-violation"), sensor.public_key.clone())
            }
            _ => {
                let mut seed = [0u8; 32];
                r.fill_bytes(&mut seed);
                let other = generate_keypair(KeyRole::Sensor, Some(&seed)).unwrap();
                (program.clone(), honest_aux.clone(), other.public_key)
            }
        };
        let e = instantiate_enclave(&pki, &device, p, a, &s, [0; 32]).unwrap();
        assert_ne!(e.measurement(), reference, "trial {trial}");
        assert_eq!(
            verify_attestation(&e.attest(), pki.root_public_key(), &reference),
            Err(AttestationFailure::MeasurementMismatch),
            "trial {trial}"
        );
    }
}

#[test]
fn trust_rests_on_the_configured_root() {
    let mut pki = Pki::generate(Some(&[1; 32])).unwrap();
    let device = Device::manufacture("dev", Some(&[2; 32])).unwrap();
    pki.issue(&device.id, device.public_key()).unwrap();
    let a = aux(50, 10, "r");
    let sensor = sensor_key(3);
    let e = instantiate_enclave(&pki, &device, PreprocessProgram::threshold_violation(), a, &sensor.public_key, [0; 32])
        .unwrap();
    let report = e.attest();
    let reference = e.measurement();
    assert_eq!(verify_attestation(&report, pki.root_public_key(), &reference), Ok(()));

    let other_root = Pki::generate(Some(&[7; 32])).unwrap();
    assert_eq!(
        verify_attestation(&report, other_root.root_public_key(), &reference),
        Err(AttestationFailure::CertificateChain)
    );

    // A device certified by a rogue root passes only under that root.
    let mut rogue = Pki::generate(Some(&[8; 32])).unwrap();
    let rogue_device = Device::manufacture("dev", Some(&[9; 32])).unwrap();
    rogue.issue(&rogue_device.id, rogue_device.public_key()).unwrap();
    let forged = instantiate_enclave(
        &rogue,
        &rogue_device,
        PreprocessProgram::threshold_violation(),
        aux(50, 10, "r"),
        &sensor.public_key,
        [0; 32],
    )
    .unwrap()
    .attest();
    assert_eq!(verify_attestation(&forged, rogue.root_public_key(), &reference), Ok(()));
    assert_eq!(
        verify_attestation(&forged, pki.root_public_key(), &reference),
        Err(AttestationFailure::CertificateChain)
    );

    // Genuine certificate, report signed by some other key.
    let mut spliced = report.clone();
    spliced.device_signature = forged.device_signature.clone();
    spliced.evidence_public_key = forged.evidence_public_key.clone();
    assert_eq!(
        verify_attestation(&spliced, pki.root_public_key(), &reference),
        Err(AttestationFailure::DeviceSignature)
    );
}

#[test]
fn same_configuration_on_two_devices() {
    let mut pki = Pki::generate(Some(&[1; 32])).unwrap();
    let a = Device::manufacture("a", Some(&[2; 32])).unwrap();
    let b = Device::manufacture("b", Some(&[3; 32])).unwrap();
    pki.issue(&a.id, a.public_key()).unwrap();
    pki.issue(&b.id, b.public_key()).unwrap();
    let sensor = sensor_key(4);
    let p = PreprocessProgram::threshold_violation();
    let ea = instantiate_enclave(&pki, &a, p.clone(), aux(50, 10, "r"), &sensor.public_key, [0; 32]).unwrap();
    let eb = instantiate_enclave(&pki, &b, p, aux(50, 10, "r"), &sensor.public_key, [0; 32]).unwrap();
    assert_eq!(ea.measurement(), eb.measurement());
    assert_ne!(ea.evidence_public_key(), eb.evidence_public_key());
}

/// Forgery attempts by an adversary without the evidence key, submitted to
/// the contract after one honest package has been accepted.
#[test]
fn contract_rejects_a_thousand_forgeries() {
    let mut d = tee_deployment(31);
    let wf = d.config.workflow_id.clone();
    let s = d.emit(0).unwrap();
    let (output, honest) = d.process(&s).unwrap();
    assert!(d.submit(&honest).unwrap().accepted);
    let evidence = TeeEvidence::decode(&honest.evidence_body).unwrap();
    let public = TeePublicArgs::decode(&honest.public_args).unwrap();
    let program_id = honest.program_id;

    let mut r = rng(32);
    let mut reasons = std::collections::BTreeMap::new();
    for trial in 0..1200u64 {
        let mut ev = evidence.clone();
        let mut pa = public;
        // Every forgery carries a fresh counter so replay protection is not
        // what stops it.
        ev.counter = evidence.counter + 1 + trial;
        match trial % 4 {
            // Claimed count changed, output digest kept in step.
            0 => {
                pa.violation_count = output.violation_count + 1 + r.gen_range(0..10);
                ev.output_digest = hash(&Output::public_encoding(pa.violation_count));
            }
            // Key substitution.
            1 => {
                let mut seed = [0u8; 32];
                r.fill_bytes(&mut seed);
                let k = generate_keypair(KeyRole::Evidence, Some(&seed)).unwrap();
                pa.violation_count = r.gen_range(0..9);
                ev.output_digest = hash(&Output::public_encoding(pa.violation_count));
                ev.signature =
                    k.sign(&TeeEvidence::signed_message(&ev.output_digest, &ev.batch_digest, ev.counter, &program_id));
            }
            // Signature spliced from the honest evidence onto another batch.
            2 => {
                let mut bd = [0u8; 32];
                r.fill_bytes(&mut bd);
                pa.batch_digest = Digest(bd);
                ev.batch_digest = pa.batch_digest;
            }
            // Random signature bytes.
            _ => {
                let mut sig = vec![0u8; 64];
                r.fill_bytes(&mut sig);
                ev.signature = sig;
            }
        }
        let pkg = EvidencePackage { public_args: pa.encode(), evidence_body: ev.encode(), ..honest.clone() };
        let receipt = d.chain.submit(&wf, &pkg).unwrap();
        assert!(!receipt.accepted, "trial {trial}");
        assert!(receipt.cost_units > 0);
        *reasons.entry(receipt.reason.unwrap()).or_insert(0) += 1;
    }
    assert_eq!(reasons.keys().copied().collect::<Vec<_>>(), [RejectReason::EvidenceInvalid]);
    assert_eq!(d.outputs(), vec![output.violation_count]);
}

#[test]
fn accepted_counters_strictly_increase() {
    let mut d = tee_deployment(33);
    let wf = d.config.workflow_id.clone();
    let mut packages = Vec::new();
    for i in 0..20 {
        let s = d.emit(i).unwrap();
        packages.push(d.process(&s).unwrap().1);
    }
    // Submit out of order: later counters first, so earlier ones become stale.
    let order = [0, 1, 3, 2, 4, 5, 9, 6, 7, 8, 10, 11, 12, 15, 13, 14, 16, 17, 19, 18];
    let mut last = 0;
    let mut accepted = 0;
    for &i in &order {
        let r = d.chain.submit(&wf, &packages[i]).unwrap();
        let counter = TeeEvidence::decode(&packages[i].evidence_body).unwrap().counter;
        if counter > last {
            assert!(r.accepted);
            last = counter;
            accepted += 1;
        } else {
            assert_eq!(r.reason, Some(RejectReason::Replay));
        }
    }
    assert_eq!(d.chain.contract(&wf).unwrap().replay.last_counter, Some(last));
    assert_eq!(d.outputs().len(), accepted);
    assert_eq!(accepted, 13);
    for p in &packages {
        assert_eq!(d.chain.submit(&wf, p).unwrap().reason, Some(RejectReason::Replay));
    }
}

#[test]
fn host_tampering_with_output_is_caught_on_chain() {
    let mut d = tee_deployment(34);
    let wf = d.config.workflow_id.clone();
    let s = d.emit(0).unwrap();
    let (output, pkg) = d.process(&s).unwrap();
    let mut public = TeePublicArgs::decode(&pkg.public_args).unwrap();
    public.violation_count = output.violation_count + 1;
    let tampered = EvidencePackage { public_args: public.encode(), ..pkg.clone() };
    let r = d.chain.submit(&wf, &tampered).unwrap();
    assert_eq!(r.reason, Some(RejectReason::PublicInputMismatch));
    assert!(d.chain.submit(&wf, &pkg).unwrap().accepted);
}

#[test]
fn tampered_input_produces_no_evidence() {
    let mut d = tee_deployment(35);
    let mut s = d.emit(0).unwrap();
    s.batch.measurements[0].values[0] += 1;
    let before = match &d.gateway {
        tpp_core::workflow::Gateway::Tee(g) => g.enclave.counter(),
        _ => unreachable!(),
    };
    assert!(d.process(&s).is_err());
    match &d.gateway {
        tpp_core::workflow::Gateway::Tee(g) => assert_eq!(g.enclave.counter(), before),
        _ => unreachable!(),
    }
}
