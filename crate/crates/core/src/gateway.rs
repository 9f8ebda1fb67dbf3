//! The pre-processing program that runs on the gateway: verify the sensor
//! signature, then filter, reduce and map the flattened measurement values.

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::codec::Writer;
use crate::crypto::{hash, Digest};
use crate::error::GatewayError;
use crate::sensor::SignedBatch;
use crate::types::{AuxiliaryData, MeasurementBatch, MetaData, Output};

/// Names and types of the auxiliary parameters the program reads. Part of
/// the program identity.
pub const PARAMETER_SCHEMA: &str = "threshold:i64;scale_divisor:u64;rule_id:str";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Stage {
    /// Keep values strictly greater than `aux.threshold + threshold_shift`.
    /// The honest program uses a shift of zero.
    Filter { threshold_shift: i64 },
    /// Count the values currently in the pipeline.
    ReduceCount,
    /// Floor-divide every value by `aux.scale_divisor`.
    MapScale,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessProgram {
    stages: Vec<Stage>,
    program_id: Digest,
}

impl PreprocessProgram {
    pub fn new(stages: Vec<Stage>) -> Result<Self, GatewayError> {
        let reduces = stages.iter().filter(|s| matches!(s, Stage::ReduceCount)).count();
        if reduces != 1 {
            return Err(GatewayError::InvalidProgram(format!(
                "expected exactly one reduce stage, found {reduces}"
            )));
        }
        let program_id = Self::compute_id(&stages);
        Ok(PreprocessProgram { stages, program_id })
    }

    /// filter(threshold) → reduce(count) → map(scale).
    pub fn threshold_violation() -> Self {
        Self::with_threshold_shift(0)
    }

    pub fn with_threshold_shift(threshold_shift: i64) -> Self {
        Self::new(vec![Stage::Filter { threshold_shift }, Stage::ReduceCount, Stage::MapScale])
            .expect("static program is valid")
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn program_id(&self) -> Digest {
        self.program_id
    }

    fn compute_id(stages: &[Stage]) -> Digest {
        let mut w = Writer::new();
        w.str("tpp/preprocess-program/v1").str(PARAMETER_SCHEMA).u32(stages.len() as u32);
        for s in stages {
            match s {
                Stage::Filter { threshold_shift } => w.u8(1).i64(*threshold_shift),
                Stage::ReduceCount => w.u8(2),
                Stage::MapScale => w.u8(3),
            };
        }
        hash(&w.finish())
    }

    /// Runs the stages over an already verified batch.
    pub fn execute(&self, batch: &MeasurementBatch, aux: &AuxiliaryData) -> Output {
        let mut values: Vec<i64> = batch.values().collect();
        let mut count = None;
        for stage in &self.stages {
            match *stage {
                Stage::Filter { threshold_shift } => {
                    let t = i128::from(aux.threshold) + i128::from(threshold_shift);
                    values.retain(|&v| i128::from(v) > t);
                }
                Stage::ReduceCount => count = Some(reduce_count(&values)),
                Stage::MapScale => values = scale(&values, aux.scale_divisor),
            }
        }
        Output { violation_count: count.expect("validated: one reduce stage"), scaled_values: values }
    }
}

/// Values of `batch` strictly greater than `aux.threshold`, in order.
pub fn filter_violations(batch: &MeasurementBatch, aux: &AuxiliaryData) -> Vec<i64> {
    batch.values().filter(|&v| v > aux.threshold).collect()
}

pub fn reduce_count(violations: &[i64]) -> u64 {
    violations.len() as u64
}

/// Floor division (toward negative infinity) by `aux.scale_divisor`.
pub fn map_scale(violations: &[i64], aux: &AuxiliaryData) -> Vec<i64> {
    scale(violations, aux.scale_divisor)
}

fn scale(values: &[i64], divisor: u64) -> Vec<i64> {
    let d = i128::from(divisor.max(1));
    values
        .iter()
        .map(|&v| i64::try_from(i128::from(v).div_euclid(d)).expect("quotient magnitude never exceeds dividend"))
        .collect()
}

/// Per-sensor replay protection: sequence numbers must strictly increase.
#[derive(Debug, Default)]
pub struct ReplayGuard {
    last_seen: Mutex<BTreeMap<String, u64>>,
}

impl ReplayGuard {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_snapshot(last_seen: BTreeMap<String, u64>) -> Self {
        ReplayGuard { last_seen: Mutex::new(last_seen) }
    }

    pub fn snapshot(&self) -> BTreeMap<String, u64> {
        self.last_seen.lock().expect("replay guard poisoned").clone()
    }

    /// Records `meta.sequence_no` if it is fresh.
    pub fn observe(&self, meta: &MetaData) -> Result<(), GatewayError> {
        let mut map = self.last_seen.lock().expect("replay guard poisoned");
        match map.get(&meta.sensor_id) {
            Some(&last) if meta.sequence_no <= last => Err(GatewayError::StaleSequence {
                sensor_id: meta.sensor_id.clone(),
                last,
                got: meta.sequence_no,
            }),
            _ => {
                map.insert(meta.sensor_id.clone(), meta.sequence_no);
                Ok(())
            }
        }
    }
}

/// Verifies digest and signature, then the sequence number. The guard is
/// only updated for authentic batches.
pub fn verify_input(
    signed: &SignedBatch,
    sensor_public_key: &[u8],
    guard: &ReplayGuard,
) -> Result<MeasurementBatch, GatewayError> {
    signed.verify(sensor_public_key)?;
    guard.observe(&signed.batch.meta)?;
    Ok(signed.batch.clone())
}

/// `P(D, A) → O`: authenticates the input and executes the program.
///
/// Pure apart from signature checking; replay state is handled by
/// [`verify_input`] at the call sites that own a [`ReplayGuard`].
pub fn run_program(
    program: &PreprocessProgram,
    signed: &SignedBatch,
    aux: &AuxiliaryData,
    sensor_public_key: &[u8],
) -> Result<Output, GatewayError> {
    signed.verify(sensor_public_key)?;
    Ok(program.execute(&signed.batch, aux))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{generate_keypair, KeyPair, KeyRole};
    use crate::sensor::sign_batch;
    use crate::types::Measurement;

    fn key() -> KeyPair {
        generate_keypair(KeyRole::Sensor, Some(&[21; 32])).unwrap()
    }

    fn signed(seq: u64, rows: &[[i64; 4]]) -> SignedBatch {
        let meta = MetaData { sensor_id: "s".into(), timestamp: 0, sequence_no: seq };
        sign_batch(MeasurementBatch::new(meta, rows.iter().copied().map(Measurement::from).collect()), &key()).unwrap()
    }

    fn aux(threshold: i64, div: u64) -> AuxiliaryData {
        AuxiliaryData::new(threshold, div, "r").unwrap()
    }

    #[test]
    fn filter_is_strict() {
        let b = signed(1, &[[3, 7, 50, 51]]).batch;
        assert_eq!(filter_violations(&b, &aux(50, 1)), vec![51]);
        assert!(filter_violations(&b, &aux(i64::MAX, 1)).is_empty());
        assert_eq!(filter_violations(&b, &aux(i64::MIN, 1)), vec![3, 7, 50, 51]);
    }

    #[test]
    fn count_and_scale() {
        assert_eq!(reduce_count(&[]), 0);
        assert_eq!(reduce_count(&[51]), 1);
        assert_eq!(map_scale(&[100], &aux(0, 10)), vec![10]);
        assert_eq!(map_scale(&[51], &aux(0, 1)), vec![51]);
        assert_eq!(map_scale(&[-7], &aux(0, 2)), vec![-4]);
        assert_eq!(map_scale(&[-1, i64::MIN], &aux(0, u64::MAX)), vec![-1, -1]);
    }

    #[test]
    fn sixteen_measurements_all_violating() {
        let rows = vec![[100, 101, 102, 103]; 16];
        let out = run_program(&PreprocessProgram::threshold_violation(), &signed(1, &rows), &aux(0, 1), &key().public_key)
            .unwrap();
        assert_eq!(out.violation_count, 64);
    }

    #[test]
    fn run_program_examples() {
        let p = PreprocessProgram::threshold_violation();
        let pk = key().public_key;
        let out = run_program(&p, &signed(1, &[[1, 2, 3, 4]]), &aux(2, 1), &pk).unwrap();
        assert_eq!(out, Output { violation_count: 2, scaled_values: vec![3, 4] });
        let out = run_program(&p, &signed(1, &[[0, 0, 0, 0]]), &aux(0, 1), &pk).unwrap();
        assert_eq!(out.violation_count, 0);
        let out = run_program(&p, &signed(1, &[[5, 6, 7, 8], [9, 9, 9, 9]]), &aux(-1, 3), &pk).unwrap();
        assert_eq!(out.violation_count, 8);
    }

    #[test]
    fn tampered_input_is_rejected() {
        let mut s = signed(1, &[[1, 2, 3, 4]]);
        s.batch.measurements[0].values[0] = 9;
        let err = run_program(&PreprocessProgram::threshold_violation(), &s, &aux(0, 1), &key().public_key);
        assert_eq!(err, Err(GatewayError::DigestMismatch));
    }

    #[test]
    fn verify_input_blocks_replays() {
        let guard = ReplayGuard::new();
        let pk = key().public_key;
        let first = signed(5, &[[1, 1, 1, 1]]);
        assert!(verify_input(&first, &pk, &guard).is_ok());
        assert!(matches!(verify_input(&first, &pk, &guard), Err(GatewayError::StaleSequence { last: 5, got: 5, .. })));
        assert!(verify_input(&signed(4, &[[1, 1, 1, 1]]), &pk, &guard).is_err());
        assert!(verify_input(&signed(6, &[[1, 1, 1, 1]]), &pk, &guard).is_ok());
    }

    #[test]
    fn forged_batch_does_not_advance_guard() {
        let guard = ReplayGuard::new();
        let mut forged = signed(10, &[[1, 1, 1, 1]]);
        forged.signature[0] ^= 1;
        assert!(verify_input(&forged, &key().public_key, &guard).is_err());
        assert!(guard.snapshot().is_empty());
    }

    #[test]
    fn program_id_tracks_stage_list() {
        let honest = PreprocessProgram::threshold_violation();
        assert_eq!(honest.program_id(), PreprocessProgram::threshold_violation().program_id());
        assert_ne!(honest.program_id(), PreprocessProgram::with_threshold_shift(1).program_id());
        let reordered = PreprocessProgram::new(vec![Stage::Filter { threshold_shift: 0 }, Stage::MapScale, Stage::ReduceCount]).unwrap();
        assert_ne!(honest.program_id(), reordered.program_id());
        assert!(PreprocessProgram::new(vec![Stage::MapScale]).is_err());
    }

    #[test]
    fn map_before_filter_changes_semantics() {
        let p = PreprocessProgram::new(vec![Stage::MapScale, Stage::Filter { threshold_shift: 0 }, Stage::ReduceCount]).unwrap();
        let out = p.execute(&signed(1, &[[10, 20, 30, 40]]).batch, &aux(1, 10));
        assert_eq!(out, Output { violation_count: 3, scaled_values: vec![2, 3, 4] });
    }
}
