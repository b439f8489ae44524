use rand::Rng as _;

use crate::bits::BitVector;
use crate::cuckoo::Reader;
use crate::error::{invalid, Error, Result};
use crate::hashing::{BucketHasher, Candidates};
use crate::rng;

pub const DEFAULT_T_CAP: usize = 64;
const DICT_MAGIC: &[u8; 8] = b"PPCFDICT";
const DICT_VERSION: u8 = 1;
const MECHANISM_FP_BITS: u32 = 16;
/// Draw budget per bucket for the targeted fallback.
const FALLBACK_DRAWS: u64 = 10_000_000;
const EXHAUSTIVE_MAX_L: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DictionaryMode {
    /// Up to `t_cap` uniformly sampled patterns per bucket.
    Sampled,
    /// Every one of the `2^l` patterns, under both candidate buckets
    /// (`l <= 16`); `t_cap` is ignored.
    Exhaustive,
}

/// Artificial Bloom filters for every mechanism bucket.
///
/// Every stored filter hashes to its bucket as a primary or partner
/// candidate, so an artificial report for bucket `v` looks like a real
/// filter whose bucket is `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketDictionary {
    l: usize,
    t_cap: usize,
    seed: u64,
    hasher: BucketHasher,
    buckets: Vec<Vec<BitVector>>,
}

fn filter_key(bf: &BitVector) -> Vec<u8> {
    let mut key = Vec::with_capacity(4 + bf.byte_len());
    key.extend_from_slice(&(bf.len() as u32).to_le_bytes());
    key.extend_from_slice(&bf.to_bytes());
    key
}

fn random_pattern(l: usize, rng: &mut rng::Rng) -> BitVector {
    let mut bf = BitVector::zeros(l);
    let mut i = 0;
    while i < l {
        let word: u64 = rng.random();
        for b in 0..64.min(l - i) {
            if (word >> b) & 1 == 1 {
                bf.set(i + b);
            }
        }
        i += 64;
    }
    bf
}

impl BucketDictionary {
    pub fn build(
        l: usize,
        buckets: usize,
        t_cap: usize,
        seed: u64,
        mode: DictionaryMode,
    ) -> Result<Self> {
        if t_cap == 0 {
            return Err(invalid("t_cap must be at least 1"));
        }
        if l == 0 || buckets == 0 {
            return Err(invalid("l and B must be positive"));
        }
        let hasher = BucketHasher::new(
            buckets,
            MECHANISM_FP_BITS,
            rng::derive_seed(seed, "dict-hash", 0),
        );
        let mut dict = BucketDictionary {
            l,
            t_cap,
            seed,
            hasher,
            buckets: vec![Vec::new(); buckets],
        };
        match mode {
            DictionaryMode::Exhaustive => dict.fill_exhaustive()?,
            DictionaryMode::Sampled => dict.fill_sampled()?,
        }
        Ok(dict)
    }

    fn fill_exhaustive(&mut self) -> Result<()> {
        if self.l > EXHAUSTIVE_MAX_L {
            return Err(invalid(format!(
                "exhaustive dictionaries need l <= {EXHAUSTIVE_MAX_L}, got {}",
                self.l
            )));
        }
        for pattern in 0..(1u64 << self.l) {
            let bf = BitVector::from_u64(pattern, self.l);
            let c = self.candidates(&bf);
            self.buckets[c.primary].push(bf.clone());
            if c.alternate != c.primary {
                self.buckets[c.alternate].push(bf);
            }
        }
        if let Some(empty) = self.buckets.iter().position(|b| b.is_empty()) {
            return Err(Error::DictionaryBuildFailure(format!(
                "bucket {empty} received no pattern out of 2^{}",
                self.l
            )));
        }
        Ok(())
    }

    fn fill_sampled(&mut self) -> Result<()> {
        let b = self.buckets.len();
        let mut rng = rng::derive(self.seed, "dict-sample", 0);
        let target = b * self.t_cap;
        let budget = (target as u64).saturating_mul(8).max(100_000);
        let mut stored = 0usize;
        let mut draws = 0u64;
        while stored < target && draws < budget {
            draws += 1;
            let bf = random_pattern(self.l, &mut rng);
            let c = self.candidates(&bf);
            for (i, bucket) in [c.primary, c.alternate].into_iter().enumerate() {
                if i == 1 && bucket == c.primary {
                    break;
                }
                if self.buckets[bucket].len() < self.t_cap {
                    self.buckets[bucket].push(bf.clone());
                    stored += 1;
                }
            }
        }
        for v in 0..b {
            let mut tries = 0u64;
            while self.buckets[v].is_empty() {
                if tries == FALLBACK_DRAWS {
                    return Err(Error::DictionaryBuildFailure(format!(
                        "no {}-bit pattern maps to bucket {v} after {FALLBACK_DRAWS} draws",
                        self.l
                    )));
                }
                tries += 1;
                let bf = random_pattern(self.l, &mut rng);
                let c = self.candidates(&bf);
                if c.primary == v || c.alternate == v {
                    self.buckets[v].push(bf);
                }
            }
        }
        Ok(())
    }

    pub fn candidates(&self, bf: &BitVector) -> Candidates {
        self.hasher.candidates(&filter_key(bf))
    }

    /// The mechanism bucket of a real filter (its primary candidate).
    pub fn bucket_of(&self, bf: &BitVector) -> usize {
        self.candidates(bf).primary
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn bucket_count(&self) -> usize {
        self.buckets.len()
    }

    pub fn t_cap(&self) -> usize {
        self.t_cap
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn bucket(&self, idx: usize) -> &[BitVector] {
        &self.buckets[idx]
    }

    pub fn len(&self) -> usize {
        self.buckets.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Whether `bf` may be stored under bucket `idx`.
    pub fn belongs(&self, bf: &BitVector, idx: usize) -> bool {
        let c = self.candidates(bf);
        c.primary == idx || c.alternate == idx
    }

    /// Binary form: header (magic, version, l, B, t_cap, seed) then, per
    /// bucket, a filter count and the packed filters.
    pub fn to_bytes(&self) -> Vec<u8> {
        let per = self.l.div_ceil(8);
        let mut out = Vec::with_capacity(40 + self.buckets.len() * 4 + self.len() * per);
        out.extend_from_slice(DICT_MAGIC);
        out.push(DICT_VERSION);
        out.extend_from_slice(&(self.l as u32).to_be_bytes());
        out.extend_from_slice(&(self.buckets.len() as u64).to_be_bytes());
        out.extend_from_slice(&(self.t_cap as u32).to_be_bytes());
        out.extend_from_slice(&self.seed.to_be_bytes());
        for bucket in &self.buckets {
            out.extend_from_slice(&(bucket.len() as u32).to_be_bytes());
            for bf in bucket {
                out.extend_from_slice(&bf.to_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(8)? != DICT_MAGIC {
            return Err(Error::CorruptDictionary("bad magic".into()));
        }
        let version = r.u8()?;
        if version != DICT_VERSION {
            return Err(Error::CorruptDictionary(format!(
                "unsupported version {version}"
            )));
        }
        let l = r.u32()? as usize;
        let b = r.u64()? as usize;
        let t_cap = r.u32()? as usize;
        let seed = r.u64()?;
        if l == 0 || b == 0 {
            return Err(Error::CorruptDictionary("zero l or B".into()));
        }
        let hasher =
            BucketHasher::new(b, MECHANISM_FP_BITS, rng::derive_seed(seed, "dict-hash", 0));
        let per = l.div_ceil(8);
        let mut buckets = Vec::with_capacity(b);
        for _ in 0..b {
            let n = r.u32()? as usize;
            let mut bucket = Vec::with_capacity(n);
            for _ in 0..n {
                let bf = BitVector::from_bytes(r.take(per)?, l)?;
                bucket.push(bf);
            }
            buckets.push(bucket);
        }
        if !r.is_empty() {
            return Err(Error::CorruptDictionary("trailing bytes".into()));
        }
        let dict = BucketDictionary {
            l,
            t_cap,
            seed,
            hasher,
            buckets,
        };
        for (idx, bucket) in dict.buckets.iter().enumerate() {
            if let Some(bad) = bucket.iter().find(|bf| !dict.belongs(bf, idx)) {
                return Err(Error::CorruptDictionary(format!(
                    "filter {bad} does not map to bucket {idx}"
                )));
            }
        }
        Ok(dict)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
