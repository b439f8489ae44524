use std::collections::HashMap;

use proptest::prelude::*;

use ppcf::bits::BitVector;
use ppcf::cuckoo::{CuckooConfig, CuckooTable};
use ppcf::encoding::segment;
use ppcf::hashing::BucketHasher;

fn bits(len: usize) -> impl Strategy<Value = BitVector> {
    prop::collection::vec(any::<bool>(), len).prop_map(|b| BitVector::from_bools(&b))
}

fn table_and_keys() -> impl Strategy<Value = (CuckooConfig, Vec<u16>)> {
    (0u32..6, 1usize..4, 0usize..20, 4u32..17, any::<u64>()).prop_flat_map(
        |(log_b, size, kicks, fp, seed)| {
            let cfg = CuckooConfig {
                buckets: 1 << log_b,
                bucket_size: size,
                fingerprint_bits: fp,
                max_kicks: kicks,
                seed,
            };
            // A small key universe forces repeats; its size relative to the
            // table forces kicks and growth.
            (Just(cfg), prop::collection::vec(0u16..400, 0..300))
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn segments_concatenate_back((l, m, bf) in (1usize..200).prop_flat_map(|l| (Just(l), 1..=l.min(12), bits(l)))) {
        let set = segment(&bf, m).unwrap();
        prop_assert_eq!(set.len(), m);
        let lens: Vec<usize> = set.segments().iter().map(BitVector::len).collect();
        prop_assert!(lens.iter().max().unwrap() - lens.iter().min().unwrap() <= 1);
        prop_assert_eq!(lens.iter().sum::<usize>(), l);
        prop_assert_eq!(set.concat(), bf);
    }

    #[test]
    fn partner_is_an_involution(log_b in 0u32..20, fp_bits in 1u32..33, seed: u64, bucket: usize, fp: u32) {
        let h = BucketHasher::new(1 << log_b, fp_bits, seed);
        let b = bucket % h.buckets();
        let fp = fp & ((1u64 << fp_bits) - 1) as u32;
        let p = h.partner(b, fp);
        prop_assert!(p < h.buckets());
        prop_assert_eq!(h.partner(p, fp), b);
    }

    #[test]
    fn stored_entries_stay_reachable_and_counted((cfg, keys) in table_and_keys()) {
        let mut table = CuckooTable::new(&cfg).unwrap();
        // Multiset oracle keyed by what the table can distinguish: the
        // candidate pair and the fingerprint.
        let mut oracle: HashMap<(usize, usize, u32), u64> = HashMap::new();
        for k in &keys {
            let key = k.to_le_bytes();
            table.insert(&key);
            let c = table.candidate_buckets(&key);
            let pair = (c.primary.min(c.alternate), c.primary.max(c.alternate), c.fingerprint);
            *oracle.entry(pair).or_default() += 1;
        }

        for k in &keys {
            let key = k.to_le_bytes();
            let c = table.candidate_buckets(&key);
            prop_assert_eq!(table.partner(c.primary, c.fingerprint), c.alternate);
            let pair = (c.primary.min(c.alternate), c.primary.max(c.alternate), c.fingerprint);
            prop_assert_eq!(table.count_fp(&key), oracle[&pair]);
        }

        let mut seen: HashMap<(usize, usize, u32), u64> = HashMap::new();
        for (bucket, fp, count) in table.entries() {
            let other = table.partner(bucket, fp);
            let pair = (bucket.min(other), bucket.max(other), fp);
            prop_assert!(oracle.contains_key(&pair), "entry in bucket {} is unreachable", bucket);
            prop_assert!(seen.insert(pair, count).is_none(), "fingerprint stored twice for one pair");
        }
        prop_assert_eq!(seen, oracle);
        prop_assert_eq!(table.stats().total_count, keys.len() as u64);
        prop_assert!(table.bucket_size() >= cfg.bucket_size);
        prop_assert_eq!(
            table.bucket_size(),
            cfg.bucket_size * (1 + table.growth_events() as usize)
        );
    }
}

#[test]
fn random_sequences_exercise_growth() {
    // Not a property: checks the generator above actually reaches the
    // grow path, so the suite is not vacuous.
    let cfg = CuckooConfig {
        buckets: 2,
        bucket_size: 1,
        max_kicks: 3,
        ..Default::default()
    };
    let mut t = CuckooTable::new(&cfg).unwrap();
    for k in 0u16..100 {
        t.insert(&k.to_le_bytes());
    }
    assert!(t.growth_events() > 0);
    for k in 0u16..100 {
        assert!(t.count_fp(&k.to_le_bytes()) >= 1);
    }
}
