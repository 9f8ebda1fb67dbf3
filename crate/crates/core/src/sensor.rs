//! Sensor node simulation: batch files, synthetic batches and batch signing.
//!
//! File layout for a batch `x`:
//! - `x.batch`: one measurement per line, four space-separated integers;
//!   `#` comment lines and blank lines are ignored.
//! - `x.meta.json`: `{sensor_id, timestamp, sequence_no}`.
//! - `x.sig`: lowercase hex signature over the batch digest.

use std::fs;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::{self, hex_bytes, Digest, KeyPair, KeyRole};
use crate::error::{BatchError, GatewayError};
use crate::types::{Measurement, MeasurementBatch, MetaData, MEASUREMENT_ARITY};

/// A batch together with the sensor's signature over its digest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedBatch {
    pub batch: MeasurementBatch,
    pub batch_digest: Digest,
    #[serde(with = "hex_bytes")]
    pub signature: Vec<u8>,
}

impl SignedBatch {
    /// Checks the digest against the batch contents, then the signature.
    pub fn verify(&self, sensor_public_key: &[u8]) -> Result<(), GatewayError> {
        if self.batch.digest() != self.batch_digest {
            return Err(GatewayError::DigestMismatch);
        }
        if !crypto::verify(sensor_public_key, self.batch_digest.as_bytes(), &self.signature) {
            return Err(GatewayError::BadSignature);
        }
        Ok(())
    }
}

pub fn sign_batch(batch: MeasurementBatch, sensor_key: &KeyPair) -> Result<SignedBatch, BatchError> {
    sensor_key.expect_role(KeyRole::Sensor)?;
    if batch.is_empty() {
        return Err(BatchError::Empty);
    }
    let batch_digest = batch.digest();
    let signature = sensor_key.sign(batch_digest.as_bytes());
    Ok(SignedBatch { batch, batch_digest, signature })
}

pub fn parse_measurements(text: &str) -> Result<Vec<Measurement>, BatchError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != MEASUREMENT_ARITY {
            return Err(BatchError::Arity { line: i + 1, found: tokens.len() });
        }
        let mut values = [0i64; MEASUREMENT_ARITY];
        for (slot, tok) in values.iter_mut().zip(&tokens) {
            *slot = tok
                .parse()
                .map_err(|_| BatchError::Token { line: i + 1, token: (*tok).to_string() })?;
        }
        out.push(Measurement { values });
    }
    if out.is_empty() {
        return Err(BatchError::Empty);
    }
    Ok(out)
}

pub fn format_measurements(measurements: &[Measurement]) -> String {
    let mut s = String::new();
    for m in measurements {
        let [a, b, c, d] = m.values;
        s.push_str(&format!("{a} {b} {c} {d}\n"));
    }
    s
}

pub fn meta_path(batch_path: &Path) -> PathBuf {
    batch_path.with_extension("meta.json")
}

pub fn sig_path(batch_path: &Path) -> PathBuf {
    batch_path.with_extension("sig")
}

fn read(path: &Path) -> Result<String, BatchError> {
    fs::read_to_string(path).map_err(|source| BatchError::Io { path: path.to_owned(), source })
}

fn write(path: &Path, contents: &str) -> Result<(), BatchError> {
    fs::write(path, contents).map_err(|source| BatchError::Io { path: path.to_owned(), source })
}

pub fn read_measurements(path: &Path) -> Result<Vec<Measurement>, BatchError> {
    parse_measurements(&read(path)?)
}

pub fn read_meta(path: &Path) -> Result<MetaData, BatchError> {
    serde_json::from_str(&read(path)?).map_err(|e| BatchError::Json { path: path.to_owned(), detail: e.to_string() })
}

pub fn meta_to_json(meta: &MetaData) -> String {
    let mut s = serde_json::to_string_pretty(meta).expect("meta serializes");
    s.push('\n');
    s
}

/// Loads `x.batch` and its `x.meta.json` sidecar.
pub fn load_batch(path: &Path) -> Result<MeasurementBatch, BatchError> {
    let measurements = read_measurements(path)?;
    let meta = read_meta(&meta_path(path))?;
    Ok(MeasurementBatch { meta, measurements })
}

pub fn write_batch(path: &Path, batch: &MeasurementBatch) -> Result<(), BatchError> {
    write(path, &format_measurements(&batch.measurements))?;
    write(&meta_path(path), &meta_to_json(&batch.meta))
}

pub fn write_signed(path: &Path, signed: &SignedBatch) -> Result<(), BatchError> {
    write_batch(path, &signed.batch)?;
    write(&sig_path(path), &format!("{}\n", hex::encode(&signed.signature)))
}

/// Loads a batch and its `.sig` file. The digest is recomputed from the
/// batch contents; the signature is not checked here.
pub fn load_signed(path: &Path) -> Result<SignedBatch, BatchError> {
    let batch = load_batch(path)?;
    let signature = crypto::decode_hex(read(&sig_path(path))?.trim())?;
    let batch_digest = batch.digest();
    Ok(SignedBatch { batch, batch_digest, signature })
}

/// Deterministic synthetic measurements with every value in `range`.
pub fn generate_measurements(
    size: usize,
    range: RangeInclusive<i64>,
    rng_seed: u64,
) -> Result<Vec<Measurement>, BatchError> {
    if size == 0 {
        return Err(BatchError::ZeroSize);
    }
    if range.is_empty() {
        return Err(BatchError::Range { lo: *range.start(), hi: *range.end() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    Ok((0..size)
        .map(|_| Measurement { values: std::array::from_fn(|_| rng.gen_range(range.clone())) })
        .collect())
}

pub fn generate_batch(
    meta: MetaData,
    size: usize,
    range: RangeInclusive<i64>,
    rng_seed: u64,
) -> Result<MeasurementBatch, BatchError> {
    Ok(MeasurementBatch { meta, measurements: generate_measurements(size, range, rng_seed)? })
}

/// A simulated sensor device. Owns its key and sequence counter; used from
/// one task at a time.
#[derive(Debug, Clone)]
pub struct Sensor {
    id: String,
    key: KeyPair,
    next_sequence: u64,
}

impl Sensor {
    pub fn new(id: impl Into<String>, key: KeyPair) -> Result<Self, BatchError> {
        key.expect_role(KeyRole::Sensor)?;
        Ok(Sensor { id: id.into(), key, next_sequence: 1 })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn public_key(&self) -> &[u8] {
        &self.key.public_key
    }

    pub fn key(&self) -> &KeyPair {
        &self.key
    }

    pub fn next_sequence(&self) -> u64 {
        self.next_sequence
    }

    pub fn set_next_sequence(&mut self, seq: u64) {
        self.next_sequence = seq;
    }

    /// Attaches fresh meta-data and signs. The sequence number only advances
    /// when signing succeeds.
    pub fn emit(&mut self, measurements: Vec<Measurement>, timestamp: i64) -> Result<SignedBatch, BatchError> {
        let meta = MetaData { sensor_id: self.id.clone(), timestamp, sequence_no: self.next_sequence };
        let signed = sign_batch(MeasurementBatch { meta, measurements }, &self.key)?;
        self.next_sequence += 1;
        Ok(signed)
    }
}
