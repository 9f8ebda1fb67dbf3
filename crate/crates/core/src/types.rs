//! Domain types shared across the sensor, gateway, evidence backends and chain.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::crypto::{hash, hex_bytes, Digest};
use crate::error::{DecodeError, GatewayError};

pub const MEASUREMENT_ARITY: usize = 4;

/// One sensor reading: exactly four opaque signed integers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Measurement {
    pub values: [i64; MEASUREMENT_ARITY],
}

impl Measurement {
    pub fn new(values: [i64; MEASUREMENT_ARITY]) -> Self {
        Measurement { values }
    }
}

impl From<[i64; MEASUREMENT_ARITY]> for Measurement {
    fn from(values: [i64; MEASUREMENT_ARITY]) -> Self {
        Measurement { values }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MetaData {
    pub sensor_id: String,
    pub timestamp: i64,
    pub sequence_no: u64,
}

impl MetaData {
    pub fn encode_into(&self, w: &mut Writer) {
        w.str(&self.sensor_id).i64(self.timestamp).u64(self.sequence_no);
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode_into(&mut w);
        w.finish()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MeasurementBatch {
    pub meta: MetaData,
    pub measurements: Vec<Measurement>,
}

impl MeasurementBatch {
    pub fn new(meta: MetaData, measurements: Vec<Measurement>) -> Self {
        MeasurementBatch { meta, measurements }
    }

    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    /// Row-major flattening of every measurement value.
    pub fn values(&self) -> impl Iterator<Item = i64> + '_ {
        self.measurements.iter().flat_map(|m| m.values)
    }

    /// Canonical bytes: meta first (length-prefixed id, timestamp, sequence
    /// number), then the measurement count and the values row-major, all
    /// big-endian.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.meta.encode_into(&mut w);
        w.u32(self.measurements.len() as u32);
        for v in self.values() {
            w.i64(v);
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let meta = MetaData {
            sensor_id: r.str("sensor_id")?,
            timestamp: r.i64("timestamp")?,
            sequence_no: r.u64("sequence_no")?,
        };
        let n = r.count(8 * MEASUREMENT_ARITY, "measurements")?;
        let mut measurements = Vec::with_capacity(n);
        for _ in 0..n {
            let mut values = [0i64; MEASUREMENT_ARITY];
            for v in &mut values {
                *v = r.i64("value")?;
            }
            measurements.push(Measurement { values });
        }
        r.finish()?;
        Ok(MeasurementBatch { meta, measurements })
    }

    pub fn digest(&self) -> Digest {
        hash(&self.encode())
    }
}

/// Gateway-side parameters of the pre-processing program.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AuxiliaryData {
    pub threshold: i64,
    pub scale_divisor: u64,
    pub rule_id: String,
}

impl AuxiliaryData {
    pub fn new(threshold: i64, scale_divisor: u64, rule_id: impl Into<String>) -> Result<Self, GatewayError> {
        if scale_divisor == 0 {
            return Err(GatewayError::ZeroDivisor);
        }
        Ok(AuxiliaryData { threshold, scale_divisor, rule_id: rule_id.into() })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.i64(self.threshold).u64(self.scale_divisor).str(&self.rule_id);
        w.finish()
    }
}

/// Result of the pre-processing program. Only `violation_count` is published
/// on-chain; `scaled_values` stay with the gateway.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Output {
    pub violation_count: u64,
    pub scaled_values: Vec<i64>,
}

impl Output {
    /// The on-chain part of the output.
    pub fn public_encoding(violation_count: u64) -> Vec<u8> {
        violation_count.to_be_bytes().to_vec()
    }

    pub fn public_digest(&self) -> Digest {
        hash(&Output::public_encoding(self.violation_count))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendId {
    #[serde(alias = "cs")]
    ConstraintSystem,
    #[serde(alias = "tee")]
    Enclave,
}

impl BackendId {
    pub const ALL: [BackendId; 2] = [BackendId::ConstraintSystem, BackendId::Enclave];

    pub fn short_name(self) -> &'static str {
        match self {
            BackendId::ConstraintSystem => "cs",
            BackendId::Enclave => "tee",
        }
    }

    fn tag(self) -> u8 {
        match self {
            BackendId::ConstraintSystem => 1,
            BackendId::Enclave => 2,
        }
    }
}

impl fmt::Display for BackendId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for BackendId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cs" | "constraint_system" => Ok(BackendId::ConstraintSystem),
            "tee" | "enclave" => Ok(BackendId::Enclave),
            other => Err(format!("unknown backend `{other}` (expected cs or tee)")),
        }
    }
}

/// The unit submitted on-chain: public arguments plus backend evidence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidencePackage {
    pub backend: BackendId,
    #[serde(with = "hex_bytes")]
    pub public_args: Vec<u8>,
    #[serde(with = "hex_bytes")]
    pub evidence_body: Vec<u8>,
    pub program_id: Digest,
}

impl EvidencePackage {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(self.backend.tag())
            .digest(&self.program_id)
            .bytes(&self.public_args)
            .bytes(&self.evidence_body);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let backend = match r.u8("backend")? {
            1 => BackendId::ConstraintSystem,
            2 => BackendId::Enclave,
            t => return Err(DecodeError::Invalid { what: "backend", detail: format!("tag {t}") }),
        };
        let program_id = r.digest("program_id")?;
        let public_args = r.bytes("public_args")?.to_vec();
        let evidence_body = r.bytes("evidence_body")?.to_vec();
        r.finish()?;
        Ok(EvidencePackage { backend, public_args, evidence_body, program_id })
    }

    pub fn digest(&self) -> Digest {
        hash(&self.encode())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(seq: u64, rows: &[[i64; 4]]) -> MeasurementBatch {
        MeasurementBatch::new(
            MetaData { sensor_id: "meter-1".into(), timestamp: 1_600_000_000, sequence_no: seq },
            rows.iter().copied().map(Measurement::from).collect(),
        )
    }

    #[test]
    fn canonical_encoding_layout() {
        let b = batch(3, &[[1, -1, 0, 2]]);
        let enc = b.encode();
        // 4 + 7 id bytes, 8 timestamp, 8 seq, 4 count, 32 values
        assert_eq!(enc.len(), 4 + 7 + 8 + 8 + 4 + 32);
        assert_eq!(&enc[..4], &[0, 0, 0, 7]);
        assert_eq!(&enc[4..11], b"meter-1");
        assert_eq!(&enc[19..27], &3u64.to_be_bytes());
        assert_eq!(&enc[27..31], &1u32.to_be_bytes());
        assert_eq!(&enc[39..47], &(-1i64).to_be_bytes());
        assert_eq!(MeasurementBatch::decode(&enc).unwrap(), b);
    }

    #[test]
    fn encoding_separates_meta_from_values() {
        // Same bytes cannot be produced by shifting data between fields.
        let a = batch(1, &[[1, 2, 3, 4]]);
        let mut b = a.clone();
        b.meta.sensor_id = "meter-".into();
        assert_ne!(a.encode(), b.encode());
    }

    #[test]
    fn zero_divisor_rejected() {
        assert_eq!(AuxiliaryData::new(1, 0, "r"), Err(GatewayError::ZeroDivisor));
    }

    #[test]
    fn backend_names() {
        assert_eq!("cs".parse::<BackendId>().unwrap(), BackendId::ConstraintSystem);
        assert_eq!("enclave".parse::<BackendId>().unwrap(), BackendId::Enclave);
        assert!("sgx".parse::<BackendId>().is_err());
        let json: BackendId = serde_json::from_str("\"tee\"").unwrap();
        assert_eq!(json, BackendId::Enclave);
    }

    #[test]
    fn package_decode_rejects_bad_tag() {
        let p = EvidencePackage {
            backend: BackendId::Enclave,
            public_args: vec![1, 2],
            evidence_body: vec![3],
            program_id: Digest([9; 32]),
        };
        let mut enc = p.encode();
        assert_eq!(EvidencePackage::decode(&enc).unwrap(), p);
        enc[0] = 7;
        assert!(EvidencePackage::decode(&enc).is_err());
    }
}
