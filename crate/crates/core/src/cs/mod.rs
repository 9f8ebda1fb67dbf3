//! Constraint-system evidence backend.
//!
//! Mirrors the compile → setup → compute-witness → generate-proof →
//! verify workflow of zkSNARK toolchains, with every artifact serialisable
//! as JSON.

pub mod compile;
pub mod field;
pub mod proof;
pub mod r1cs;
pub mod witness;

pub use compile::{compile, compile_with, CompileOptions, DEFAULT_VALUE_BITS};
pub use field::Fe;
pub use proof::{
    generate_proof, setup, verify_cs, verify_cs_metered, CsKeyPair, CsProof, CsProvingKey, CsPublicInputs,
    CsRejection, CsVerificationKey,
};
pub use r1cs::{ConstraintSystem, CsLayout, PublicLayout};
pub use witness::{assign_witness, compute_witness, Witness};
