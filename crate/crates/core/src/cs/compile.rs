//! Compiles the threshold-violation program into a size-specialised
//! constraint system.
//!
//! Comparison `v > t` uses binary decomposition: with `k`-bit signed values,
//! `x = v - t - 1 + 2^k` lies in `[0, 2^(k+1))` and its top bit is set
//! exactly when `v > t`. Values and the threshold are range-checked by a
//! separate `k`-bit decomposition of `v + 2^(k-1)`.

use ark_ff::Field;

use super::field::{fe_from_i64, pow2, Fe};
use super::r1cs::{
    Constraint, ConstraintSystem, CsLayout, Gadget, LinearCombination, PublicLayout, META_CHUNKS,
};
use crate::error::CsError;
use crate::gateway::{PreprocessProgram, Stage};

pub const DEFAULT_VALUE_BITS: u32 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CompileOptions {
    pub value_bits: u32,
    pub public: PublicLayout,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions { value_bits: DEFAULT_VALUE_BITS, public: PublicLayout::default() }
    }
}

pub fn compile(
    program: &PreprocessProgram,
    batch_size: usize,
    public_layout: PublicLayout,
) -> Result<ConstraintSystem, CsError> {
    compile_with(program, batch_size, CompileOptions { public: public_layout, ..CompileOptions::default() })
}

/// Returns the threshold shift of a supported program.
fn program_shift(program: &PreprocessProgram) -> Result<i64, CsError> {
    match program.stages() {
        [Stage::Filter { threshold_shift }, Stage::ReduceCount, rest @ ..]
            if rest.iter().all(|s| matches!(s, Stage::MapScale)) =>
        {
            Ok(*threshold_shift)
        }
        other => Err(CsError::UnsupportedProgram(format!("{other:?}"))),
    }
}

struct Alloc(u32);

impl Alloc {
    fn take(&mut self, n: u32) -> u32 {
        let s = self.0;
        self.0 += n;
        s
    }

    fn pair(&mut self) -> [u32; 2] {
        let s = self.take(2);
        [s, s + 1]
    }
}

fn boolean(var: u32) -> Constraint {
    Constraint { a: LinearCombination::var(var), b: LinearCombination::var(var), c: LinearCombination::var(var) }
}

/// `(Σ 2^i·bits_i + extra) · 1 = constant · 1`
fn decomposition(first_bit: u32, bits: u32, extra: LinearCombination, constant: Fe) -> Constraint {
    let mut a = extra;
    for i in 0..bits {
        a = a.add(first_bit + i, pow2(i));
    }
    Constraint { a, b: LinearCombination::var(0), c: LinearCombination::constant(constant) }
}

pub fn compile_with(
    program: &PreprocessProgram,
    batch_size: usize,
    options: CompileOptions,
) -> Result<ConstraintSystem, CsError> {
    if batch_size == 0 {
        return Err(CsError::ZeroBatchSize);
    }
    let k = options.value_bits;
    if !(2..=32).contains(&k) {
        return Err(CsError::ValueBits(k));
    }
    let shift = program_shift(program)?;
    let n_values = u32::try_from(batch_size * 4).map_err(|_| CsError::Malformed("batch too large".into()))?;

    let mut alloc = Alloc(1);
    let digest = alloc.pair();
    let threshold = alloc.take(1);
    let count = alloc.take(1);
    let key_digest = alloc.pair();
    let key = alloc.pair();
    let sig = alloc.take(4);
    let signature = [sig, sig + 1, sig + 2, sig + 3];
    let meta_len = alloc.take(1);
    let meta_first = alloc.take(META_CHUNKS as u32);
    let meta_chunks: Vec<u32> = (meta_first..meta_first + META_CHUNKS as u32).collect();
    let values = alloc.take(n_values);
    let range_bits = alloc.take(n_values * k);
    let cmp_bits = alloc.take(n_values * (k + 1));
    let threshold_bits = alloc.take(k);
    let sum = alloc.take(1);

    let layout = CsLayout {
        batch_size: batch_size as u32,
        value_bits: k,
        threshold_shift: shift,
        public: options.public,
        digest,
        threshold,
        count,
        key_digest,
        key,
        signature,
        meta_len,
        meta_chunks: meta_chunks.clone(),
        values,
        range_bits,
        cmp_bits,
        threshold_bits,
        sum,
    };

    let half = pow2(k - 1);
    let mut constraints = Vec::new();

    for i in 0..k {
        constraints.push(boolean(threshold_bits + i));
    }
    constraints.push(decomposition(threshold_bits, k, LinearCombination::default().add(threshold, -Fe::ONE), half));

    // x - v + t = 2^k - 1 - shift
    let cmp_constant = pow2(k) - Fe::ONE - fe_from_i64(shift);
    for j in 0..n_values {
        let v = values + j;
        let r0 = range_bits + j * k;
        for i in 0..k {
            constraints.push(boolean(r0 + i));
        }
        constraints.push(decomposition(r0, k, LinearCombination::default().add(v, -Fe::ONE), half));

        let c0 = cmp_bits + j * (k + 1);
        for i in 0..=k {
            constraints.push(boolean(c0 + i));
        }
        constraints.push(decomposition(
            c0,
            k + 1,
            LinearCombination::default().add(v, -Fe::ONE).add(threshold, Fe::ONE),
            cmp_constant,
        ));
    }

    let mut flags = LinearCombination::default();
    for j in 0..n_values {
        flags = flags.add(layout.flag_slot(j as usize) as u32, Fe::ONE);
    }
    constraints.push(Constraint { a: flags, b: LinearCombination::var(0), c: LinearCombination::var(sum) });
    constraints.push(Constraint {
        a: LinearCombination::var(sum),
        b: LinearCombination::var(0),
        c: LinearCombination::var(count),
    });

    let gadgets = vec![
        Gadget::BatchDigest { meta_len, meta_chunks: meta_chunks.clone(), values: (values..values + n_values).collect(), digest },
        Gadget::KeyDigest { key, digest: key_digest },
        Gadget::SignatureCheck { key, message: digest, signature },
    ];

    let mut public_slots = vec![digest[0], digest[1]];
    if options.public.threshold {
        public_slots.push(threshold);
    }
    public_slots.push(count);
    if options.public.sensor_key_digest {
        public_slots.extend(key_digest);
    }

    let mut private_slots = vec![meta_len];
    private_slots.extend(&meta_chunks);
    private_slots.extend(values..values + n_values);

    let cs = ConstraintSystem {
        num_variables: alloc.0,
        constraints,
        gadgets,
        public_slots,
        private_slots,
        layout,
    };
    cs.validate()?;
    Ok(cs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compile_is_deterministic() {
        let p = PreprocessProgram::threshold_violation();
        let a = compile(&p, 4, PublicLayout::default()).unwrap();
        let b = compile(&p, 4, PublicLayout::default()).unwrap();
        assert_eq!(a.digest(), b.digest());
    }

    #[test]
    fn size_specialisation_changes_digest() {
        let p = PreprocessProgram::threshold_violation();
        let a = compile(&p, 4, PublicLayout::default()).unwrap();
        let b = compile(&p, 8, PublicLayout::default()).unwrap();
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn program_and_layout_change_digest() {
        let honest = compile(&PreprocessProgram::threshold_violation(), 1, PublicLayout::default()).unwrap();
        let shifted = compile(&PreprocessProgram::with_threshold_shift(1), 1, PublicLayout::default()).unwrap();
        let hidden = compile(
            &PreprocessProgram::threshold_violation(),
            1,
            PublicLayout { threshold: false, sensor_key_digest: true },
        )
        .unwrap();
        assert_ne!(honest.digest(), shifted.digest());
        assert_ne!(honest.digest(), hidden.digest());
        assert_eq!(hidden.public_slots.len(), honest.public_slots.len() - 1);
    }

    #[test]
    fn constraint_count_grows_linearly() {
        let p = PreprocessProgram::threshold_violation();
        let per_value = 2 * DEFAULT_VALUE_BITS as usize + 3;
        for n in [1, 4, 8] {
            let cs = compile(&p, n, PublicLayout::default()).unwrap();
            assert_eq!(cs.constraints.len(), 4 * n * per_value + DEFAULT_VALUE_BITS as usize + 1 + 2);
        }
    }

    #[test]
    fn public_and_private_slots_are_disjoint() {
        let cs = compile(&PreprocessProgram::threshold_violation(), 2, PublicLayout::default()).unwrap();
        assert_eq!(cs.public_slots.len(), 6);
        assert_eq!(cs.private_slots.len(), 1 + META_CHUNKS + 8);
        assert!(cs.public_slots.iter().all(|s| !cs.private_slots.contains(s)));
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = PreprocessProgram::threshold_violation();
        assert_eq!(compile(&p, 0, PublicLayout::default()), Err(CsError::ZeroBatchSize));
        let opts = CompileOptions { value_bits: 1, ..Default::default() };
        assert_eq!(compile_with(&p, 1, opts), Err(CsError::ValueBits(1)));
        let odd = PreprocessProgram::new(vec![Stage::MapScale, Stage::Filter { threshold_shift: 0 }, Stage::ReduceCount]).unwrap();
        assert!(matches!(compile(&odd, 1, PublicLayout::default()), Err(CsError::UnsupportedProgram(_))));
    }
}
