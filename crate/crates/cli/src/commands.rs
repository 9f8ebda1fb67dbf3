//! Subcommand implementations. Each returns an [`Outcome`] or a
//! [`CliError`] carrying the process exit code.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tpp_core::adversary::{run_attack, AttackReport, TamperKind, TamperStrategy};
use tpp_core::chain::{ChainState, ContractMaterial};
use tpp_core::cs::{compile, setup, ConstraintSystem, CsProvingKey, CsVerificationKey, PublicLayout};
use tpp_core::experiment::{run_bench, write_csv, BenchMode, BenchPlan};
use tpp_core::sensor::{generate_batch, load_batch, load_signed, sig_path, sign_batch, write_batch, write_signed};
use tpp_core::tee::{
    instantiate_enclave, measure, verify_attestation, Certificate, Device, EnclaveInstance,
    EnclaveState, Pki,
};
use tpp_core::workflow::{cs_material, fixture_seed, tee_package, CsGateway, DEFAULT_VALUES};
use tpp_core::{
    generate_keypair, BackendId, Digest, EvidencePackage, KeyPair, KeyRole, MetaData, Output, PreprocessProgram,
    ReplayGuard, SignedBatch, WorkflowError,
};

use crate::manifest::{Located, Manifest};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    /// Some batch or attack failed verification.
    #[error("{0}")]
    Verification(String),
    #[error("{0:#}")]
    Io(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Verification(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let s = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&s).with_context(|| format!("parsing {}", path.display()))
}

fn save_key(path: &Path, key: &KeyPair) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    key.save(path).with_context(|| format!("writing {}", path.display()))
}

fn load_key(path: &Path, role: KeyRole) -> anyhow::Result<KeyPair> {
    let key = KeyPair::load(path)?;
    key.expect_role(role)?;
    Ok(key)
}

fn keygen(role: KeyRole, label: &str, seed: Option<u64>) -> anyhow::Result<KeyPair> {
    let s = seed.map(|s| fixture_seed(label, s));
    Ok(generate_keypair(role, s.as_ref().map(|s| &s[..]))?)
}

const CS_FILES: [&str; 5] = ["cs.json", "proving_key.json", "verification_key.json", "gateway_state.json", "chain.json"];
const TEE_FILES: [&str; 5] = ["pki.json", "device.json", "enclave.json", "attestation.json", "chain.json"];

#[derive(Debug, Serialize, Deserialize)]
struct PkiFile {
    #[serde(with = "tpp_core::crypto::hex_bytes")]
    root_public_key: Vec<u8>,
    certificates: Vec<Certificate>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DeviceFile {
    device_id: String,
    certificate: Certificate,
}

#[derive(Debug, Serialize, Deserialize)]
struct EnclaveFile {
    device_id: String,
    launch_nonce: Digest,
    measurement: Digest,
    state: EnclaveState,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct GatewayState {
    last_sequences: std::collections::BTreeMap<String, u64>,
}

/// One-time setup: keys, compiled program or attested enclave, deployed
/// contract. Refuses to touch an existing deployment.
pub fn cmd_setup(manifest_path: &Path) -> CliResult<Manifest> {
    let loc = Located::load(manifest_path)?;
    let m = &loc.manifest;
    let mut targets: Vec<PathBuf> = match m.backend {
        BackendId::ConstraintSystem => CS_FILES.iter().map(|f| loc.artifact(f)).collect(),
        BackendId::Enclave => TEE_FILES.iter().map(|f| loc.artifact(f)).collect(),
    };
    targets.push(loc.resolve(&m.keys.sensor));
    targets.extend(m.keys.pki_root.iter().chain(&m.keys.device).map(|p| loc.resolve(p)));
    if let Some(existing) = targets.iter().find(|p| p.exists()) {
        return Err(CliError::Io(anyhow!("refusing to overwrite existing artifact {}", existing.display())));
    }
    if m.reference_measurement.is_some() || m.verification_key_digest.is_some() {
        return Err(CliError::Io(anyhow!("manifest already records a completed setup")));
    }

    let config = m.config();
    let program = PreprocessProgram::threshold_violation();
    let aux = config.aux().map_err(|e| anyhow!(e))?;
    let sensor = keygen(KeyRole::Sensor, "sensor", m.seed)?;
    let mut chain = ChainState::default();
    let mut updated = m.clone();

    match m.backend {
        BackendId::ConstraintSystem => {
            let cs = compile(&program, m.batch_size, PublicLayout::default()).map_err(|e| anyhow!(e))?;
            let crs_seed = match m.seed {
                Some(s) => fixture_seed("crs", s),
                None => keygen(KeyRole::Sensor, "crs", None)?.private_key().try_into().expect("32-byte key"),
            };
            let keys = setup(&cs, crs_seed);
            chain
                .deploy_contract(&m.workflow_id, cs_material(&keys, &program, &aux, &sensor.public_key))
                .map_err(|e| anyhow!(e))?;
            write_json(&loc.artifact("cs.json"), &cs)?;
            write_json(&loc.artifact("proving_key.json"), &keys.proving_key)?;
            write_json(&loc.artifact("verification_key.json"), &keys.verification_key)?;
            write_json(&loc.artifact("gateway_state.json"), &GatewayState::default())?;
            updated.verification_key_digest = Some(keys.verification_key.digest());
        }
        BackendId::Enclave => {
            let mut pki = Pki::new(keygen(KeyRole::PkiRoot, "pki", m.seed)?).map_err(|e| anyhow!(e))?;
            let device = Device::from_identity("device-1", keygen(KeyRole::DeviceIdentity, "device", m.seed)?)
                .map_err(|e| anyhow!(e))?;
            let cert = pki.issue(&device.id, device.public_key()).map_err(|e| anyhow!(e))?;
            let launch_nonce = match m.seed {
                Some(s) => fixture_seed("nonce", s),
                None => keygen(KeyRole::Sensor, "nonce", None)?.private_key().try_into().expect("32-byte key"),
            };
            let enclave = instantiate_enclave(&pki, &device, program.clone(), aux.clone(), &sensor.public_key, launch_nonce)
                .map_err(|e| anyhow!(e))?;
            let reference = measure(&program.program_id(), &aux, &sensor.public_key);
            let report = enclave.attest();
            verify_attestation(&report, pki.root_public_key(), &reference)
                .map_err(|f| CliError::Verification(format!("attestation rejected: {}", f.code())))?;
            chain
                .deploy_contract(
                    &m.workflow_id,
                    ContractMaterial::Enclave {
                        evidence_public_key: report.evidence_public_key.clone(),
                        reference_measurement: reference,
                        program_id: program.program_id(),
                    },
                )
                .map_err(|e| anyhow!(e))?;
            save_key(&loc.resolve(m.keys.pki_root.as_ref().expect("validated")), pki.root_key())?;
            save_key(&loc.resolve(m.keys.device.as_ref().expect("validated")), device.identity())?;
            let pki_file = PkiFile {
                root_public_key: pki.root_public_key().to_vec(),
                certificates: pki.certificates().cloned().collect(),
            };
            write_json(&loc.artifact("pki.json"), &pki_file)?;
            write_json(&loc.artifact("device.json"), &DeviceFile { device_id: device.id.clone(), certificate: cert })?;
            write_json(
                &loc.artifact("enclave.json"),
                &EnclaveFile { device_id: device.id.clone(), launch_nonce: Digest(launch_nonce), measurement: reference, state: enclave.state() },
            )?;
            write_json(&loc.artifact("attestation.json"), &report)?;
            updated.reference_measurement = Some(reference);
        }
    }
    save_key(&loc.resolve(&m.keys.sensor), &sensor)?;
    fs::write(loc.artifact("chain.json"), chain.to_json()).context("writing chain.json")?;
    updated.save(manifest_path)?;
    Ok(updated)
}

/// One line of `run` output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReceipt {
    pub batch: String,
    pub accepted: bool,
    /// `input`, `gateway` or `chain`: where the batch stopped.
    pub stage: String,
    pub reason: Option<String>,
    pub cost_units: Option<u64>,
    pub violation_count: Option<u64>,
}

impl RunReceipt {
    fn failed(batch: &Path, stage: &str, reason: impl ToString) -> Self {
        RunReceipt {
            batch: batch.display().to_string(),
            accepted: false,
            stage: stage.to_string(),
            reason: Some(reason.to_string()),
            cost_units: None,
            violation_count: None,
        }
    }
}

/// Loads a batch with its `.sig`, or signs it with the sensor key when no
/// signature file exists (fixture mode).
fn load_input(path: &Path, sensor: &KeyPair) -> anyhow::Result<SignedBatch> {
    if sig_path(path).exists() {
        Ok(load_signed(path)?)
    } else {
        Ok(sign_batch(load_batch(path)?, sensor)?)
    }
}

enum RunGateway {
    Cs(Box<CsGateway>),
    Tee(Box<EnclaveInstance>),
}

fn open_gateway(loc: &Located, sensor: &KeyPair, chain: &ChainState) -> anyhow::Result<RunGateway> {
    let m = &loc.manifest;
    let contract = chain.contract(&m.workflow_id).map_err(|e| anyhow!(e))?;
    let program = PreprocessProgram::threshold_violation();
    let aux = m.config().aux().map_err(|e| anyhow!(e))?;
    match m.backend {
        BackendId::ConstraintSystem => {
            let expected = m.verification_key_digest.ok_or_else(|| anyhow!("setup has not been run for this manifest"))?;
            let vk: CsVerificationKey = read_json(&loc.artifact("verification_key.json"))?;
            let proving_key: CsProvingKey = read_json(&loc.artifact("proving_key.json"))?;
            let _: ConstraintSystem = read_json(&loc.artifact("cs.json"))?;
            let deployed = match &contract.material {
                ContractMaterial::ConstraintSystem { verification_key, .. } => verification_key.digest(),
                ContractMaterial::Enclave { .. } => return Err(anyhow!("chain holds an enclave contract")),
            };
            if vk.digest() != expected || deployed != expected || proving_key.constraint_system.digest() != vk.cs_digest {
                return Err(anyhow!("artifacts do not match the manifest's verification key digest"));
            }
            let state: GatewayState = read_json(&loc.artifact("gateway_state.json"))?;
            Ok(RunGateway::Cs(Box::new(CsGateway {
                program,
                aux,
                proving_key,
                sensor_public_key: sensor.public_key.clone(),
                guard: ReplayGuard::from_snapshot(state.last_sequences),
            })))
        }
        BackendId::Enclave => {
            let reference = m.reference_measurement.ok_or_else(|| anyhow!("setup has not been run for this manifest"))?;
            let root = load_key(&loc.resolve(m.keys.pki_root.as_ref().expect("validated")), KeyRole::PkiRoot)?;
            let pki_file: PkiFile = read_json(&loc.artifact("pki.json"))?;
            if pki_file.root_public_key != root.public_key {
                return Err(anyhow!("pki.json does not match the PKI root key"));
            }
            let pki = Pki::restore(root, pki_file.certificates).map_err(|e| anyhow!(e))?;
            let enclave_file: EnclaveFile = read_json(&loc.artifact("enclave.json"))?;
            let identity = load_key(&loc.resolve(m.keys.device.as_ref().expect("validated")), KeyRole::DeviceIdentity)?;
            let device = Device::from_identity(enclave_file.device_id.clone(), identity).map_err(|e| anyhow!(e))?;
            let mut enclave =
                instantiate_enclave(&pki, &device, program, aux, &sensor.public_key, enclave_file.launch_nonce.0)
                    .map_err(|e| anyhow!(e))?;
            if enclave.measurement() != reference || enclave_file.measurement != reference {
                return Err(anyhow!("enclave measurement does not match the manifest reference"));
            }
            enclave.restore_state(enclave_file.state).map_err(|e| anyhow!(e))?;
            Ok(RunGateway::Tee(Box::new(enclave)))
        }
    }
}

fn persist_gateway(loc: &Located, gateway: &RunGateway) -> anyhow::Result<()> {
    match gateway {
        RunGateway::Cs(g) => write_json(&loc.artifact("gateway_state.json"), &GatewayState { last_sequences: g.guard.snapshot() }),
        RunGateway::Tee(e) => {
            let mut file: EnclaveFile = read_json(&loc.artifact("enclave.json"))?;
            file.state = e.state();
            write_json(&loc.artifact("enclave.json"), &file)
        }
    }
}

/// Recurring operation: pre-process, produce evidence and submit each batch.
/// A failing batch is reported and the run continues with the next one.
pub fn cmd_run(manifest_path: &Path, batches: &[PathBuf], parallel: bool, out: &mut impl Write) -> CliResult<Vec<RunReceipt>> {
    let loc = Located::load(manifest_path)?;
    let m = &loc.manifest;
    let sensor = load_key(&loc.resolve(&m.keys.sensor), KeyRole::Sensor)?;
    let chain_path = loc.artifact("chain.json");
    let mut chain = ChainState::from_json(&fs::read_to_string(&chain_path).context("reading chain.json")?)
        .map_err(|e| anyhow!(e))?;
    let mut gateway = open_gateway(&loc, &sensor, &chain)?;

    let inputs: Vec<(PathBuf, anyhow::Result<SignedBatch>)> =
        batches.iter().map(|p| (p.clone(), load_input(p, &sensor))).collect();

    // Evidence per batch, in input order.
    let produced: Vec<Result<(Output, EvidencePackage), RunReceipt>> = match &mut gateway {
        RunGateway::Cs(g) => {
            let admitted: Vec<Result<&SignedBatch, RunReceipt>> = inputs
                .iter()
                .map(|(p, input)| match input {
                    Err(e) => Err(RunReceipt::failed(p, "input", format!("{e:#}"))),
                    Ok(s) => g.admit(s).map(|()| s).map_err(|e| RunReceipt::failed(p, "gateway", e)),
                })
                .collect();
            let prove = |(i, a): (usize, &Result<&SignedBatch, RunReceipt>)| match a {
                Ok(s) => g.prove(s).map_err(|e| RunReceipt::failed(&inputs[i].0, "gateway", e)),
                Err(r) => Err(r.clone()),
            };
            if parallel {
                admitted.par_iter().enumerate().map(prove).collect()
            } else {
                admitted.iter().enumerate().map(prove).collect()
            }
        }
        // The enclave serializes executions; `parallel` has no effect here.
        RunGateway::Tee(enclave) => inputs
            .iter()
            .map(|(p, input)| match input {
                Err(e) => Err(RunReceipt::failed(p, "input", format!("{e:#}"))),
                Ok(s) => enclave
                    .execute(s)
                    .map(|(o, ev)| {
                        let pkg = tee_package(enclave, &o, ev);
                        (o, pkg)
                    })
                    .map_err(|e| RunReceipt::failed(p, "gateway", WorkflowError::from(e))),
            })
            .collect(),
    };

    let mut receipts = Vec::with_capacity(produced.len());
    for ((path, _), item) in inputs.iter().zip(produced) {
        let receipt = match item {
            Err(r) => r,
            Ok((output, package)) => {
                let r = chain.submit(&m.workflow_id, &package).map_err(|e| anyhow!(e))?;
                RunReceipt {
                    batch: path.display().to_string(),
                    accepted: r.accepted,
                    stage: "chain".to_string(),
                    reason: r.reason.map(|x| x.code().to_string()),
                    cost_units: Some(r.cost_units),
                    violation_count: Some(output.violation_count),
                }
            }
        };
        writeln!(out, "{}", serde_json::to_string(&receipt).expect("receipt serializes")).context("writing receipt")?;
        receipts.push(receipt);
    }

    fs::write(&chain_path, chain.to_json()).context("writing chain.json")?;
    persist_gateway(&loc, &gateway)?;

    let failed_input = receipts.iter().filter(|r| r.stage == "input").count();
    let rejected = receipts.iter().filter(|r| !r.accepted).count();
    if failed_input > 0 {
        Err(CliError::Io(anyhow!("{failed_input} of {} batch file(s) could not be read", receipts.len())))
    } else if rejected > 0 {
        Err(CliError::Verification(format!("{rejected} of {} batch(es) rejected", receipts.len())))
    } else {
        Ok(receipts)
    }
}

/// Writes `count` batch fixtures `batch-NNNN.batch` (+ `.meta.json`, and
/// `.sig` when `sign` is set) sized per the manifest.
pub fn cmd_generate(
    manifest_path: &Path,
    out_dir: &Path,
    count: usize,
    first_sequence: u64,
    seed: u64,
    sign: bool,
) -> CliResult<Vec<PathBuf>> {
    let loc = Located::load(manifest_path)?;
    let m = &loc.manifest;
    let key = if sign { Some(load_key(&loc.resolve(&m.keys.sensor), KeyRole::Sensor)?) } else { None };
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut paths = Vec::with_capacity(count);
    for i in 0..count as u64 {
        let seq = first_sequence + i;
        let meta = MetaData { sensor_id: m.sensor_id.clone(), timestamp: 1_700_000_000 + seq as i64, sequence_no: seq };
        let batch = generate_batch(meta, m.batch_size, DEFAULT_VALUES, seed.wrapping_add(i)).map_err(|e| anyhow!(e))?;
        let path = out_dir.join(format!("batch-{seq:04}.batch"));
        match &key {
            Some(k) => write_signed(&path, &sign_batch(batch, k).map_err(|e| anyhow!(e))?),
            None => write_batch(&path, &batch),
        }
        .map_err(|e| anyhow!(e))?;
        paths.push(path);
    }
    Ok(paths)
}

/// Runs `trials` attacks with seeds `seed, seed+1, ...` and writes one JSON
/// line per attack.
pub fn cmd_attack(kind: TamperKind, backend: BackendId, seed: u64, trials: u64, out: &mut impl Write) -> CliResult<Vec<AttackReport>> {
    let mut reports = Vec::new();
    for s in seed..seed + trials {
        let strategy = TamperStrategy::from_seed(kind, s);
        let outcome = run_attack(&strategy, backend, s).map_err(|e| anyhow!(e))?;
        let report = AttackReport {
            strategy: kind,
            backend,
            seed: s,
            detected: outcome.detected,
            stage: outcome.stage,
            mutation: strategy.mutation,
            detail: outcome.detail,
        };
        writeln!(out, "{}", report.to_json_line()).context("writing report")?;
        reports.push(report);
    }
    let missed = reports.iter().filter(|r| !r.detected).count();
    if missed > 0 {
        return Err(CliError::Verification(format!("{missed} attack(s) went undetected")));
    }
    Ok(reports)
}

pub fn cmd_bench(
    backend: BackendId,
    mode: BenchMode,
    params: &[usize],
    repetitions: usize,
    seed: u64,
    out: &mut impl Write,
) -> CliResult<()> {
    if params.is_empty() || params.contains(&0) || repetitions == 0 {
        return Err(CliError::Usage("bench parameters and repetitions must be at least 1".into()));
    }
    let plan = BenchPlan { seed, ..BenchPlan::new(backend, mode, repetitions) };
    let rows = run_bench(&plan, params).map_err(|e| anyhow!(e))?;
    write_csv(&rows, out).context("writing CSV")?;
    Ok(())
}

/// Re-serializes the stored chain state. The output is byte-identical to
/// the stored file.
pub fn cmd_export_chain(manifest_path: &Path) -> CliResult<String> {
    let loc = Located::load(manifest_path)?;
    let path = loc.artifact("chain.json");
    let s = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let chain = ChainState::from_json(&s).map_err(|e| anyhow!(e))?;
    Ok(chain.to_json())
}

/// First sequence number the gateway will accept from the manifest's sensor.
pub fn next_sequence(manifest_path: &Path) -> CliResult<u64> {
    let loc = Located::load(manifest_path)?;
    let m = &loc.manifest;
    let last = match m.backend {
        BackendId::ConstraintSystem => {
            read_json::<GatewayState>(&loc.artifact("gateway_state.json"))?.last_sequences.get(&m.sensor_id).copied()
        }
        BackendId::Enclave => {
            read_json::<EnclaveFile>(&loc.artifact("enclave.json"))?.state.last_sequences.get(&m.sensor_id).copied()
        }
    };
    Ok(last.map_or(0, |l| l + 1))
}
