//! Adaptive counting cuckoo filter.
//!
//! Buckets hold `(fingerprint, counter)` entries. A repeated fingerprint
//! bumps its counter instead of taking a new slot. When both candidate
//! buckets are full the filter relocates random victims up to `max_kicks`
//! times; if that fails, every bucket grows by the default bucket size and
//! the carried entry is stored, so insertion never fails.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::bits::BitVector;
use crate::error::{invalid, Error, Result};
use crate::hashing::{BucketHasher, Candidates};
use crate::rng::{self, Rng};

pub const DEFAULT_FINGERPRINT_BITS: u32 = 16;
pub const DEFAULT_BUCKET_SIZE: usize = 4;
pub const DEFAULT_MAX_KICKS: usize = 500;

const SNAPSHOT_MAGIC: &[u8; 8] = b"PPCFCUCK";
const SNAPSHOT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CuckooConfig {
    /// Requested bucket count; rounded up to a power of two.
    pub buckets: usize,
    pub bucket_size: usize,
    pub fingerprint_bits: u32,
    pub max_kicks: usize,
    pub seed: u64,
}

impl Default for CuckooConfig {
    fn default() -> Self {
        CuckooConfig {
            buckets: 10_000,
            bucket_size: DEFAULT_BUCKET_SIZE,
            fingerprint_bits: DEFAULT_FINGERPRINT_BITS,
            max_kicks: DEFAULT_MAX_KICKS,
            seed: 0x00c0_ffee,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Entry {
    fingerprint: u32,
    count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InsertOutcome {
    /// Bucket that now holds the inserted fingerprint.
    pub placed_at: usize,
    /// Whether bucket capacity grew during this insertion.
    pub grew: bool,
    /// Whether an existing counter was incremented rather than a slot taken.
    pub incremented: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableStats {
    pub buckets: usize,
    pub bucket_size: usize,
    /// Occupied entry slots (distinct stored fingerprints).
    pub load: usize,
    /// Sum of all counters.
    pub total_count: u64,
    pub growth_events: u64,
    /// Buckets holding at least one entry.
    pub occupied_buckets: usize,
}

/// Key bytes for segment `j`: the position prefix keeps identical bit
/// patterns at different positions in separate fingerprint spaces.
pub fn segment_key(position: usize, segment: &BitVector) -> Vec<u8> {
    let mut key = Vec::with_capacity(6 + segment.byte_len());
    key.extend_from_slice(&(position as u32).to_le_bytes());
    key.extend_from_slice(&(segment.len() as u16).to_le_bytes());
    key.extend_from_slice(&segment.to_bytes());
    key
}

#[derive(Debug)]
pub struct CuckooTable {
    hasher: BucketHasher,
    buckets: Vec<Vec<Entry>>,
    bucket_size: usize,
    default_bucket_size: usize,
    max_kicks: usize,
    seed: u64,
    load: usize,
    total_count: u64,
    growth_events: u64,
    rng: Rng,
    probes: AtomicU64,
}

impl CuckooTable {
    pub fn new(cfg: &CuckooConfig) -> Result<Self> {
        if cfg.buckets == 0 || cfg.bucket_size == 0 {
            return Err(invalid(
                "cuckoo table needs at least one bucket of size >= 1",
            ));
        }
        if !(1..=32).contains(&cfg.fingerprint_bits) {
            return Err(invalid(format!(
                "fingerprint width must be 1..=32 bits, got {}",
                cfg.fingerprint_bits
            )));
        }
        let buckets = cfg.buckets.next_power_of_two();
        Ok(CuckooTable {
            hasher: BucketHasher::new(buckets, cfg.fingerprint_bits, cfg.seed),
            buckets: vec![Vec::new(); buckets],
            bucket_size: cfg.bucket_size,
            default_bucket_size: cfg.bucket_size,
            max_kicks: cfg.max_kicks,
            seed: cfg.seed,
            load: 0,
            total_count: 0,
            growth_events: 0,
            rng: rng::derive(cfg.seed, "cuckoo-kicks", 0),
            probes: AtomicU64::new(0),
        })
    }

    pub fn bucket_count(&self) -> usize {
        self.buckets.len()
    }

    pub fn bucket_size(&self) -> usize {
        self.bucket_size
    }

    pub fn default_bucket_size(&self) -> usize {
        self.default_bucket_size
    }

    pub fn fingerprint_bits(&self) -> u32 {
        self.hasher.fingerprint_bits()
    }

    pub fn load(&self) -> usize {
        self.load
    }

    pub fn growth_events(&self) -> u64 {
        self.growth_events
    }

    /// Total bucket probes performed by lookups so far.
    pub fn probes(&self) -> u64 {
        self.probes.load(Ordering::Relaxed)
    }

    pub fn candidate_buckets(&self, key: &[u8]) -> Candidates {
        self.hasher.candidates(key)
    }

    pub fn partner(&self, bucket: usize, fingerprint: u32) -> usize {
        self.hasher.partner(bucket, fingerprint)
    }

    fn position(&self, bucket: usize, fingerprint: u32) -> Option<usize> {
        self.buckets[bucket]
            .iter()
            .position(|e| e.fingerprint == fingerprint)
    }

    pub fn insert(&mut self, key: &[u8]) -> InsertOutcome {
        let c = self.hasher.candidates(key);
        self.total_count += 1;

        for bucket in [c.primary, c.alternate] {
            if let Some(pos) = self.position(bucket, c.fingerprint) {
                self.buckets[bucket][pos].count += 1;
                return InsertOutcome {
                    placed_at: bucket,
                    grew: false,
                    incremented: true,
                };
            }
        }

        let entry = Entry {
            fingerprint: c.fingerprint,
            count: 1,
        };
        for bucket in [c.primary, c.alternate] {
            if self.buckets[bucket].len() < self.bucket_size {
                self.buckets[bucket].push(entry);
                self.load += 1;
                return InsertOutcome {
                    placed_at: bucket,
                    grew: false,
                    incremented: false,
                };
            }
        }

        let placed_at = if self.rng.random_bool(0.5) {
            c.primary
        } else {
            c.alternate
        };
        let mut bucket = placed_at;
        let mut carried = entry;
        self.load += 1;
        for _ in 0..self.max_kicks {
            let victim = self.rng.random_range(0..self.buckets[bucket].len());
            std::mem::swap(&mut carried, &mut self.buckets[bucket][victim]);
            bucket = self.hasher.partner(bucket, carried.fingerprint);
            if let Some(pos) = self.position(bucket, carried.fingerprint) {
                // Same fingerprint and a shared candidate bucket means the same
                // candidate pair: merge the counters.
                self.buckets[bucket][pos].count += carried.count;
                self.load -= 1;
                return InsertOutcome {
                    placed_at,
                    grew: false,
                    incremented: false,
                };
            }
            if self.buckets[bucket].len() < self.bucket_size {
                self.buckets[bucket].push(carried);
                return InsertOutcome {
                    placed_at,
                    grew: false,
                    incremented: false,
                };
            }
        }

        self.bucket_size += self.default_bucket_size;
        self.growth_events += 1;
        self.buckets[bucket].push(carried);
        InsertOutcome {
            placed_at,
            grew: true,
            incremented: false,
        }
    }

    /// Counter for `key`'s fingerprint in its two candidate buckets (summed if
    /// present in both). Always counts two probes.
    pub fn count_fp(&self, key: &[u8]) -> u64 {
        let c = self.hasher.candidates(key);
        self.probes.fetch_add(2, Ordering::Relaxed);
        let lookup = |bucket: usize| {
            self.buckets[bucket]
                .iter()
                .find(|e| e.fingerprint == c.fingerprint)
                .map_or(0, |e| e.count)
        };
        let mut total = lookup(c.primary);
        if c.alternate != c.primary {
            total += lookup(c.alternate);
        }
        total
    }

    pub fn insert_segment(&mut self, position: usize, segment: &BitVector) -> InsertOutcome {
        self.insert(&segment_key(position, segment))
    }

    pub fn count_segment(&self, position: usize, segment: &BitVector) -> u64 {
        self.count_fp(&segment_key(position, segment))
    }

    /// `(bucket, fingerprint, counter)` for every stored entry.
    pub fn entries(&self) -> impl Iterator<Item = (usize, u32, u64)> + '_ {
        self.buckets
            .iter()
            .enumerate()
            .flat_map(|(i, b)| b.iter().map(move |e| (i, e.fingerprint, e.count)))
    }

    pub fn stats(&self) -> TableStats {
        TableStats {
            buckets: self.buckets.len(),
            bucket_size: self.bucket_size,
            load: self.load,
            total_count: self.total_count,
            growth_events: self.growth_events,
            occupied_buckets: self.buckets.iter().filter(|b| !b.is_empty()).count(),
        }
    }

    /// Binary snapshot: header then each bucket's entry list, big-endian.
    pub fn to_snapshot(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.load * 12 + self.buckets.len() * 4);
        out.extend_from_slice(SNAPSHOT_MAGIC);
        out.extend_from_slice(&SNAPSHOT_VERSION.to_be_bytes());
        out.extend_from_slice(&(self.buckets.len() as u64).to_be_bytes());
        out.extend_from_slice(&(self.bucket_size as u32).to_be_bytes());
        out.extend_from_slice(&(self.default_bucket_size as u32).to_be_bytes());
        out.push(self.hasher.fingerprint_bits() as u8);
        out.extend_from_slice(&(self.max_kicks as u32).to_be_bytes());
        out.extend_from_slice(&self.seed.to_be_bytes());
        out.extend_from_slice(&self.growth_events.to_be_bytes());
        out.extend_from_slice(&self.total_count.to_be_bytes());
        for bucket in &self.buckets {
            out.extend_from_slice(&(bucket.len() as u32).to_be_bytes());
            for e in bucket {
                out.extend_from_slice(&e.fingerprint.to_be_bytes());
                out.extend_from_slice(&e.count.to_be_bytes());
            }
        }
        out
    }

    pub fn from_snapshot(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(8)? != SNAPSHOT_MAGIC {
            return Err(Error::Format("not a cuckoo table snapshot".into()));
        }
        let version = r.u16()?;
        if version != SNAPSHOT_VERSION {
            return Err(Error::Format(format!(
                "unsupported snapshot version {version}"
            )));
        }
        let buckets = r.u64()? as usize;
        let bucket_size = r.u32()? as usize;
        let default_bucket_size = r.u32()? as usize;
        let fingerprint_bits = r.u8()? as u32;
        let max_kicks = r.u32()? as usize;
        let seed = r.u64()?;
        let growth_events = r.u64()?;
        let total_count = r.u64()?;
        if !buckets.is_power_of_two() {
            return Err(Error::Format(format!(
                "bucket count {buckets} is not a power of two"
            )));
        }
        let mut table = CuckooTable::new(&CuckooConfig {
            buckets,
            bucket_size: default_bucket_size,
            fingerprint_bits,
            max_kicks,
            seed,
        })
        .map_err(|e| Error::Format(e.to_string()))?;
        table.bucket_size = bucket_size;
        table.growth_events = growth_events;
        table.total_count = total_count;
        for bucket in table.buckets.iter_mut() {
            let n = r.u32()? as usize;
            if n > bucket_size {
                return Err(Error::Format("bucket exceeds recorded capacity".into()));
            }
            for _ in 0..n {
                let fingerprint = r.u32()?;
                let count = r.u64()?;
                if fingerprint == 0 || count == 0 {
                    return Err(Error::Format("empty entry in snapshot".into()));
                }
                bucket.push(Entry { fingerprint, count });
            }
            table.load += n;
        }
        if !r.is_empty() {
            return Err(Error::Format("trailing bytes after snapshot".into()));
        }
        Ok(table)
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Format("unexpected end of input".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }
}

/// The false-positive expression `2/O * 1/2^F` for `O` occupied buckets.
pub fn fpr_cuckoo(occupied_buckets: u64, fingerprint_bits: u32) -> Result<f64> {
    if occupied_buckets == 0 {
        return Err(invalid("occupied bucket count must be positive"));
    }
    Ok(2.0 / occupied_buckets as f64 * (-(fingerprint_bits as f64)).exp2())
}

/// Space per item in bits for a target fpr at load factor `alpha`:
/// `(log2(1/fpr) + 2) / alpha`.
pub fn bits_per_item(target_fpr: f64, alpha: f64) -> Result<f64> {
    if !(target_fpr > 0.0 && target_fpr < 1.0) {
        return Err(invalid(format!(
            "target fpr must be in (0, 1), got {target_fpr}"
        )));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid(format!(
            "load factor must be in (0, 1], got {alpha}"
        )));
    }
    Ok(((1.0 / target_fpr).log2() + 2.0) / alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn small(buckets: usize, bucket_size: usize) -> CuckooTable {
        CuckooTable::new(&CuckooConfig {
            buckets,
            bucket_size,
            fingerprint_bits: 16,
            max_kicks: 50,
            seed: 17,
        })
        .unwrap()
    }

    fn key(i: u32) -> Vec<u8> {
        i.to_le_bytes().to_vec()
    }

    #[test]
    fn bucket_count_rounds_up_to_power_of_two() {
        assert_eq!(small(10_000, 4).bucket_count(), 16_384);
        assert_eq!(small(16, 4).bucket_count(), 16);
    }

    #[test]
    fn golden_candidates() {
        // Pinned from the seeded hash at first implementation.
        let table = CuckooTable::new(&CuckooConfig {
            buckets: 16,
            bucket_size: 4,
            fingerprint_bits: 8,
            max_kicks: 500,
            seed: 0,
        })
        .unwrap();
        let seg = BitVector::from_u64(0x0F, 8);
        let c = table.candidate_buckets(&seg.to_bytes());
        assert_eq!((c.primary, c.alternate, c.fingerprint), GOLDEN);
    }

    const GOLDEN: (usize, usize, u32) = (1, 7, 83);

    #[test]
    fn first_insert_lands_in_primary() {
        let mut t = small(64, 4);
        let c = t.candidate_buckets(&key(1));
        let out = t.insert(&key(1));
        assert_eq!(out.placed_at, c.primary);
        assert!(!out.grew && !out.incremented);
    }

    #[test]
    fn counters_track_multiplicity() {
        let mut t = small(64, 4);
        assert_eq!(t.count_fp(&key(9)), 0);
        for _ in 0..3 {
            t.insert(&key(1));
        }
        for _ in 0..2 {
            t.insert(&key(2));
        }
        assert_eq!(t.count_fp(&key(1)), 3);
        assert_eq!(t.count_fp(&key(2)), 2);
        assert_eq!(t.load(), 2);
    }

    #[test]
    fn overfull_table_grows_and_keeps_everything() {
        let mut t = small(4, 1);
        let mut grew = 0;
        for i in 0..9 {
            if t.insert(&key(i)).grew {
                grew += 1;
            }
        }
        assert!(grew >= 1);
        assert_eq!(t.growth_events(), grew);
        assert_eq!(t.bucket_size(), 1 + grew as usize);
        let mut by_fp: HashMap<(usize, u32), u64> = HashMap::new();
        for i in 0..9 {
            let c = t.candidate_buckets(&key(i));
            *by_fp
                .entry((c.primary.min(c.alternate), c.fingerprint))
                .or_default() += 1;
            assert!(t.count_fp(&key(i)) >= 1);
        }
        for (bucket, fp, _) in t.entries() {
            let home = bucket.min(t.partner(bucket, fp));
            assert!(
                by_fp.contains_key(&(home, fp)),
                "entry {fp} in bucket {bucket} has no source"
            );
        }
    }

    #[test]
    fn lookups_probe_two_buckets() {
        let mut t = small(64, 2);
        for i in 0..500 {
            t.insert(&key(i));
        }
        let before = t.probes();
        for i in 0..100 {
            t.count_fp(&key(i));
        }
        assert_eq!(t.probes() - before, 200);
    }

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let mut t = small(32, 2);
        for i in 0..300 {
            t.insert(&key(i % 170));
        }
        let bytes = t.to_snapshot();
        let back = CuckooTable::from_snapshot(&bytes).unwrap();
        assert_eq!(back.to_snapshot(), bytes);
        for i in 0..170 {
            assert_eq!(back.count_fp(&key(i)), t.count_fp(&key(i)));
        }
        assert!(CuckooTable::from_snapshot(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn fpr_formula_examples() {
        assert_eq!(fpr_cuckoo(2, 1).unwrap(), 0.5);
        assert!((fpr_cuckoo(1000, 8).unwrap() - 7.8125e-6).abs() < 1e-15);
        assert!(fpr_cuckoo(1000, 60).unwrap() < 1e-18);
        assert!(matches!(fpr_cuckoo(0, 8), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn bits_per_item_examples() {
        assert!((bits_per_item(0.25, 1.0).unwrap() - 4.0).abs() < 1e-12);
        assert!((bits_per_item(0.002, 0.95).unwrap() - 11.5398).abs() < 0.01);
        let full = bits_per_item(0.01, 0.8).unwrap();
        assert!((bits_per_item(0.01, 0.4).unwrap() - 2.0 * full).abs() < 1e-12);
        assert!(bits_per_item(0.0, 0.5).is_err());
        assert!(bits_per_item(0.1, 0.0).is_err());
    }
}
