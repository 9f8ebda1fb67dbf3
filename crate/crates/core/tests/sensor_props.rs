mod common;

use common::{sensor_key, signed};
use proptest::prelude::*;
use tempfile::TempDir;
use tpp_core::sensor::{generate_batch, load_batch, load_signed, write_batch, write_signed};
use tpp_core::{GatewayError, MetaData};

fn arb_rows() -> impl Strategy<Value = Vec<[i64; 4]>> {
    proptest::collection::vec(any::<[i64; 4]>(), 1..40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn text_format_round_trips(rows in arb_rows(), seq in any::<u64>(), ts in any::<i64>(), id in "[a-z0-9-]{1,16}") {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("b.batch");
        let mut b = common::batch(&rows, seq);
        b.meta.timestamp = ts;
        b.meta.sensor_id = id;
        write_batch(&path, &b).unwrap();
        let first = std::fs::read(&path).unwrap();
        let back = load_batch(&path).unwrap();
        prop_assert_eq!(&back, &b);
        write_batch(&path, &back).unwrap();
        prop_assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn generated_batches_round_trip(size in 1usize..64, seed in any::<u64>(), lo in -1000i64..0, span in 0i64..1000) {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("g.batch");
        let meta = MetaData { sensor_id: "s".into(), timestamp: 0, sequence_no: 1 };
        let b = generate_batch(meta, size, lo..=lo + span, seed).unwrap();
        prop_assert_eq!(b.len(), size);
        prop_assert!(b.values().all(|v| (lo..=lo + span).contains(&v)));
        write_batch(&path, &b).unwrap();
        prop_assert_eq!(load_batch(&path).unwrap(), b);
    }

    #[test]
    fn any_single_field_mutation_breaks_the_signature(
        rows in arb_rows(),
        target in 0usize..3,
        pos in any::<prop::sample::Index>(),
        delta in prop_oneof![1i64..1000, -1000i64..0],
    ) {
        let key = sensor_key(4);
        let mut s = signed(&rows, 10, &key);
        match target {
            0 => {
                let n = s.batch.len() * 4;
                let i = pos.index(n);
                let v = &mut s.batch.measurements[i / 4].values[i % 4];
                *v = v.wrapping_add(delta);
            }
            1 => s.batch.meta.timestamp = s.batch.meta.timestamp.wrapping_add(delta),
            _ => s.batch.meta.sequence_no = s.batch.meta.sequence_no.wrapping_add(delta as u64),
        }
        prop_assert_eq!(s.verify(&key.public_key), Err(GatewayError::DigestMismatch));
        // Refreshing the digest does not help without the key.
        s.batch_digest = s.batch.digest();
        prop_assert_eq!(s.verify(&key.public_key), Err(GatewayError::BadSignature));
    }
}

#[test]
fn signed_files_round_trip_byte_identically() {
    let dir = TempDir::new().unwrap();
    let key = sensor_key(9);
    let mut r = common::rng(1);
    for i in 0..20 {
        let rows = common::random_rows(&mut r, 1 + i % 7, -100, 100);
        let s = signed(&rows, i as u64, &key);
        let path = dir.path().join(format!("{i}.batch"));
        write_signed(&path, &s).unwrap();
        let files: Vec<Vec<u8>> = ["batch", "meta.json", "sig"]
            .iter()
            .map(|ext| std::fs::read(path.with_extension(ext)).unwrap())
            .collect();
        let back = load_signed(&path).unwrap();
        assert_eq!(back, s);
        back.verify(&key.public_key).unwrap();
        write_signed(&path, &back).unwrap();
        for (ext, before) in ["batch", "meta.json", "sig"].iter().zip(files) {
            assert_eq!(std::fs::read(path.with_extension(ext)).unwrap(), before, "{ext}");
        }
    }
}
