use std::path::PathBuf;

use thiserror::Error;

use crate::crypto::KeyRole;

#[derive(Debug, Error)]
pub enum CryptoError {
    #[error("{what} must be {expected} bytes, got {got}")]
    Length { what: &'static str, expected: usize, got: usize },
    #[error("invalid hex: {0}")]
    Hex(String),
    #[error("key role mismatch: expected {expected}, got {got}")]
    WrongRole { expected: KeyRole, got: KeyRole },
    #[error("public key does not match private key")]
    KeyMismatch,
    #[error("key file: {0}")]
    KeyFile(String),
}

/// Errors from the canonical binary codec.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("unexpected end of input reading {0}")]
    Truncated(&'static str),
    #[error("{0} trailing bytes after value")]
    Trailing(usize),
    #[error("invalid {what}: {detail}")]
    Invalid { what: &'static str, detail: String },
}

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("line {line}: expected 4 values, found {found}")]
    Arity { line: usize, found: usize },
    #[error("line {line}: `{token}` is not a 64-bit integer")]
    Token { line: usize, token: String },
    #[error("batch contains no measurements")]
    Empty,
    #[error("batch size must be at least 1")]
    ZeroSize,
    #[error("invalid value range [{lo}, {hi}]")]
    Range { lo: i64, hi: i64 },
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {detail}")]
    Json { path: PathBuf, detail: String },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error("batch digest does not match the signed batch contents")]
    DigestMismatch,
    #[error("sensor signature does not verify")]
    BadSignature,
    #[error("stale sequence number {got} for sensor `{sensor_id}` (last accepted {last})")]
    StaleSequence { sensor_id: String, last: u64, got: u64 },
    #[error("invalid program: {0}")]
    InvalidProgram(String),
    #[error("scale divisor must be at least 1")]
    ZeroDivisor,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CsError {
    #[error("batch size must be at least 1")]
    ZeroBatchSize,
    #[error("constraint system is specialised for {expected} measurements, batch has {got}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("value {value} at position {index} is outside the {bits}-bit signed range")]
    ValueOutOfRange { index: usize, value: i64, bits: u32 },
    #[error("threshold {value} is outside the {bits}-bit signed range")]
    ThresholdOutOfRange { value: i64, bits: u32 },
    #[error("value width must be between 2 and 32 bits, got {0}")]
    ValueBits(u32),
    #[error("sensor id is {len} bytes, constraint system allows at most {max}")]
    SensorIdTooLong { len: usize, max: usize },
    #[error("unsupported program shape: {0}")]
    UnsupportedProgram(String),
    #[error("witness does not satisfy constraint {0}; this is a witness generator bug")]
    Unsatisfied(String),
    #[error("malformed constraint system: {0}")]
    Malformed(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TeeError {
    #[error("device `{0}` already holds a certificate")]
    DuplicateDevice(String),
    #[error("device `{0}` is not certified by this PKI")]
    UnknownDevice(String),
    #[error("enclave is sealed; its configuration cannot change")]
    Sealed,
    #[error("monotonic counter cannot move backwards ({current} -> {requested})")]
    CounterRollback { current: u64, requested: u64 },
    #[error("enclave configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Input(#[from] GatewayError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChainError {
    #[error("workflow `{0}` is already deployed")]
    DuplicateWorkflow(String),
    #[error("unknown workflow `{0}`")]
    UnknownWorkflow(String),
    #[error("invalid contract material: {0}")]
    InvalidMaterial(String),
    #[error("chain export: {0}")]
    Export(String),
}

/// Failures while setting up or running a workflow end to end.
#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Batch(#[from] BatchError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Cs(#[from] CsError),
    #[error(transparent)]
    Tee(#[from] TeeError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("attestation rejected: {0}")]
    Attestation(String),
}
