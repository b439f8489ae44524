//! Seeded hashing shared by the Bloom encoder, the cuckoo tables and the
//! privacy mechanism's bucket space.

use xxhash_rust::xxh3::{xxh3_128_with_seed, xxh3_64_with_seed};

const FINGERPRINT_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
pub fn hash64(seed: u64, data: &[u8]) -> u64 {
    xxh3_64_with_seed(data, seed)
}

/// Two independent 64-bit hashes of `data`, as (low, high) halves of xxh3-128.
#[inline]
pub fn hash_pair(seed: u64, data: &[u8]) -> (u64, u64) {
    let h = xxh3_128_with_seed(data, seed);
    (h as u64, (h >> 64) as u64)
}

/// Where a key lives: its primary bucket, the XOR partner bucket and its
/// fingerprint (never zero).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Candidates {
    pub primary: usize,
    pub alternate: usize,
    pub fingerprint: u32,
}

/// Maps keys onto `buckets` cells with cuckoo-style partner buckets.
///
/// For a power-of-two bucket count the partner is `i1 ^ (h(f) mod B)`, which
/// is an involution. For other counts the XOR is taken in the enclosing
/// power-of-two space and a partner that falls outside `[0, B)` collapses
/// onto the primary bucket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BucketHasher {
    buckets: usize,
    xor_mask: u64,
    fingerprint_bits: u32,
    seed: u64,
}

impl BucketHasher {
    pub fn new(buckets: usize, fingerprint_bits: u32, seed: u64) -> Self {
        assert!(buckets >= 1, "bucket count must be positive");
        assert!(
            (1..=32).contains(&fingerprint_bits),
            "fingerprint width must be within 1..=32 bits"
        );
        BucketHasher {
            buckets,
            xor_mask: buckets.next_power_of_two() as u64 - 1,
            fingerprint_bits,
            seed,
        }
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    pub fn fingerprint_bits(&self) -> u32 {
        self.fingerprint_bits
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn candidates(&self, key: &[u8]) -> Candidates {
        let (lo, hi) = hash_pair(self.seed, key);
        let fp_mask = if self.fingerprint_bits == 32 {
            u32::MAX as u64
        } else {
            (1u64 << self.fingerprint_bits) - 1
        };
        let mut fingerprint = (lo & fp_mask) as u32;
        if fingerprint == 0 {
            fingerprint = 1;
        }
        let primary = (hi % self.buckets as u64) as usize;
        let alternate = self.partner(primary, fingerprint);
        Candidates {
            primary,
            alternate,
            fingerprint,
        }
    }

    /// The other candidate bucket of a fingerprint stored at `bucket`.
    #[inline]
    pub fn partner(&self, bucket: usize, fingerprint: u32) -> usize {
        let alt = bucket as u64 ^ (self.fingerprint_hash(fingerprint) & self.xor_mask);
        if alt < self.buckets as u64 {
            alt as usize
        } else {
            bucket
        }
    }

    #[inline]
    pub fn fingerprint_hash(&self, fingerprint: u32) -> u64 {
        hash64(self.seed ^ FINGERPRINT_SALT, &fingerprint.to_le_bytes())
    }
}
