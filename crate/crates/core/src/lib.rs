//! Trustworthy pre-processing of sensor data for on-chain verification.
//!
//! A gateway runs a fixed pre-processing program over signed sensor
//! batches and produces evidence that a verification contract can check.
//! Two evidence backends are provided: a constraint-system backend
//! (`cs`) and a simulated trusted execution environment (`tee`).

pub mod adversary;
pub mod chain;
pub mod codec;
pub mod crypto;
pub mod cs;
pub mod error;
pub mod experiment;
pub mod gateway;
pub mod meter;
pub mod sensor;
pub mod tee;
pub mod types;
pub mod workflow;

pub use crypto::{generate_keypair, hash, sign, verify, Digest, KeyPair, KeyRole};
pub use error::*;
pub use gateway::{run_program, verify_input, PreprocessProgram, ReplayGuard, Stage};
pub use meter::{CostMeter, CostWeights, Meter, NoMeter, Primitive};
pub use sensor::{sign_batch, Sensor, SignedBatch};
pub use types::*;
