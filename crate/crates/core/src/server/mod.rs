//! Sharded counting cuckoo filters and fuzzy count queries.

mod protocol;

pub use protocol::{handle_line, ingest_request, serve, serve_connection};

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::bits::BitVector;
use crate::client::WireReport;
use crate::cuckoo::{CuckooConfig, CuckooTable, TableStats};
use crate::encoding::{self, EncoderConfig, Value};
use crate::error::{invalid, Error, Result};
use crate::ldp::MechanismParams;
use crate::rng;

/// Turns the per-segment counts of a query into a count estimate.
pub trait CountEstimator: Send + Sync {
    fn estimate(&self, segment_counts: &[u64], s_t: f64, sim_max: f64) -> u64;
}

/// Minimum over the nonzero segment counts, or 0 below the threshold.
#[derive(Debug, Clone, Copy, Default)]
pub struct MinNonZero;

impl CountEstimator for MinNonZero {
    fn estimate(&self, segment_counts: &[u64], s_t: f64, sim_max: f64) -> u64 {
        if sim_max + SIM_TOLERANCE < s_t {
            return 0;
        }
        segment_counts
            .iter()
            .copied()
            .filter(|&c| c > 0)
            .min()
            .unwrap_or(0)
    }
}

/// Absorbs rounding in `(m - zeros) / m` against thresholds like 0.8.
const SIM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResult {
    pub estimate: u64,
    pub sim_max: f64,
    pub segment_counts: Vec<u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IngestSummary {
    pub segments_inserted: usize,
    pub growth_events: u64,
}

impl std::ops::AddAssign for IngestSummary {
    fn add_assign(&mut self, rhs: Self) {
        self.segments_inserted += rhs.segments_inserted;
        self.growth_events += rhs.growth_events;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ServerStats {
    pub shards: Vec<TableStats>,
    pub reports: u64,
    pub queries: u64,
    pub probes: u64,
    pub ingest_ns: u64,
    pub query_ns: u64,
}

impl ServerStats {
    pub fn total_load(&self) -> usize {
        self.shards.iter().map(|s| s.load).sum()
    }

    pub fn growth_events(&self) -> u64 {
        self.shards.iter().map(|s| s.growth_events).sum()
    }

    /// `key=value` lines, one fact per line.
    pub fn to_lines(&self) -> Vec<String> {
        let mut out = vec![
            format!("shards={}", self.shards.len()),
            format!("reports={}", self.reports),
            format!("queries={}", self.queries),
            format!("probes={}", self.probes),
            format!("load={}", self.total_load()),
            format!("growth_events={}", self.growth_events()),
            format!("ingest_ns={}", self.ingest_ns),
            format!("query_ns={}", self.query_ns),
        ];
        for (i, s) in self.shards.iter().enumerate() {
            out.push(format!("shard.{i}.buckets={}", s.buckets));
            out.push(format!("shard.{i}.bucket_size={}", s.bucket_size));
            out.push(format!("shard.{i}.load={}", s.load));
            out.push(format!("shard.{i}.total_count={}", s.total_count));
            out.push(format!("shard.{i}.growth_events={}", s.growth_events));
            out.push(format!("shard.{i}.occupied_buckets={}", s.occupied_buckets));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    pub shards: usize,
    pub table: CuckooConfig,
    pub encoder: EncoderConfig,
    pub mech: MechanismParams,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            shards: 1,
            table: CuckooConfig::default(),
            encoder: EncoderConfig::default(),
            mech: MechanismParams::default(),
        }
    }
}

pub struct ServerState {
    shards: Vec<RwLock<CuckooTable>>,
    encoder: EncoderConfig,
    mech: MechanismParams,
    segment_lengths: Vec<usize>,
    estimator: Box<dyn CountEstimator>,
    reports: AtomicU64,
    queries: AtomicU64,
    ingest_ns: AtomicU64,
    query_ns: AtomicU64,
}

impl std::fmt::Debug for ServerState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ServerState")
            .field("shards", &self.shards.len())
            .field("mech", &self.mech)
            .finish_non_exhaustive()
    }
}

fn elapsed_ns(start: Instant) -> u64 {
    start.elapsed().as_nanos().min(u64::MAX as u128) as u64
}

impl ServerState {
    pub fn new(cfg: &ServerConfig) -> Result<Self> {
        Self::with_estimator(cfg, Box::new(MinNonZero))
    }

    pub fn with_estimator(cfg: &ServerConfig, estimator: Box<dyn CountEstimator>) -> Result<Self> {
        if cfg.shards == 0 {
            return Err(invalid("need at least one shard"));
        }
        cfg.encoder.validate()?;
        cfg.mech.validate()?;
        if cfg.encoder.l != cfg.mech.l {
            return Err(invalid(format!(
                "encoder l = {} but mechanism l = {}",
                cfg.encoder.l, cfg.mech.l
            )));
        }
        if cfg.mech.m > 256 {
            return Err(invalid("segment positions must fit in one byte (m <= 256)"));
        }
        let shards = (0..cfg.shards)
            .map(|i| {
                let table = CuckooConfig {
                    seed: rng::derive_seed(cfg.table.seed, "shard", i as u64),
                    ..cfg.table.clone()
                };
                CuckooTable::new(&table).map(RwLock::new)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ServerState {
            shards,
            encoder: cfg.encoder.clone(),
            mech: cfg.mech.clone(),
            segment_lengths: encoding::segment_lengths(cfg.mech.l, cfg.mech.m)?,
            estimator,
            reports: AtomicU64::new(0),
            queries: AtomicU64::new(0),
            ingest_ns: AtomicU64::new(0),
            query_ns: AtomicU64::new(0),
        })
    }

    pub fn shard_count(&self) -> usize {
        self.shards.len()
    }

    pub fn shard_of(&self, position: usize) -> usize {
        position % self.shards.len()
    }

    pub fn encoder(&self) -> &EncoderConfig {
        &self.encoder
    }

    pub fn mechanism(&self) -> &MechanismParams {
        &self.mech
    }

    fn validate(&self, report: &WireReport) -> Result<()> {
        if report.version != crate::client::WIRE_VERSION {
            return Err(Error::MalformedReport(format!(
                "unsupported version {}",
                report.version
            )));
        }
        for rec in &report.records {
            let j = rec.position as usize;
            let expected = self.segment_lengths.get(j).ok_or_else(|| {
                Error::MalformedReport(format!("segment index {j} outside 0..{}", self.mech.m))
            })?;
            if rec.bits.len() != *expected {
                return Err(Error::MalformedReport(format!(
                    "segment {j} has {} bits, expected {expected}",
                    rec.bits.len()
                )));
            }
        }
        Ok(())
    }

    /// Inserts every segment of `report`, or nothing if any record is invalid.
    pub fn ingest(&self, report: &WireReport) -> Result<IngestSummary> {
        self.ingest_batch(std::slice::from_ref(report))
    }

    /// Validates all reports, then inserts with one writer per shard.
    pub fn ingest_batch(&self, reports: &[WireReport]) -> Result<IngestSummary> {
        for r in reports {
            self.validate(r)?;
        }
        let start = Instant::now();
        let p = self.shards.len();
        let per_shard = |shard: usize| {
            let mut table = self.shards[shard].write().expect("shard lock poisoned");
            let mut summary = IngestSummary::default();
            for rec in reports.iter().flat_map(|r| &r.records) {
                let j = rec.position as usize;
                if j % p == shard {
                    let out = table.insert_segment(j, &rec.bits);
                    summary.segments_inserted += 1;
                    summary.growth_events += u64::from(out.grew);
                }
            }
            summary
        };
        let mut total = IngestSummary::default();
        if p == 1 {
            total = per_shard(0);
        } else {
            for s in (0..p).into_par_iter().map(per_shard).collect::<Vec<_>>() {
                total += s;
            }
        }
        self.reports
            .fetch_add(reports.len() as u64, Ordering::Relaxed);
        self.ingest_ns
            .fetch_add(elapsed_ns(start), Ordering::Relaxed);
        Ok(total)
    }

    pub fn segment_counts(&self, segments: &[BitVector]) -> Vec<u64> {
        segments
            .iter()
            .enumerate()
            .map(|(j, seg)| {
                let table = self.shards[self.shard_of(j)]
                    .read()
                    .expect("shard lock poisoned");
                table.count_segment(j, seg)
            })
            .collect()
    }

    /// Fuzzy count of `value`: segments matched at `sim_max >= s_t` count.
    pub fn query_count(&self, value: &Value, s_t: f64, m: usize) -> Result<QueryResult> {
        if m != self.mech.m {
            return Err(invalid(format!(
                "query uses m = {m} but the server ingests m = {}",
                self.mech.m
            )));
        }
        if !(0.0..=1.0).contains(&s_t) {
            return Err(invalid(format!("s_t must lie in [0, 1], got {s_t}")));
        }
        let start = Instant::now();
        let bf = encoding::encode(value, &self.encoder)?;
        let segments = encoding::segment(&bf, m)?.into_segments();
        let counts = self.segment_counts(&segments);
        let zeros = counts.iter().filter(|&&c| c == 0).count();
        let sim_max = (m - zeros) as f64 / m as f64;
        let estimate = self.estimator.estimate(&counts, s_t, sim_max);
        self.queries.fetch_add(1, Ordering::Relaxed);
        self.query_ns
            .fetch_add(elapsed_ns(start), Ordering::Relaxed);
        Ok(QueryResult {
            estimate,
            sim_max,
            segment_counts: counts,
        })
    }

    /// Bucket probes made by lookups so far, over all shards.
    pub fn probes(&self) -> u64 {
        self.shards
            .iter()
            .map(|s| s.read().expect("shard lock poisoned").probes())
            .sum()
    }

    pub fn stats(&self) -> ServerStats {
        ServerStats {
            shards: self
                .shards
                .iter()
                .map(|s| s.read().expect("shard lock poisoned").stats())
                .collect(),
            reports: self.reports.load(Ordering::Relaxed),
            queries: self.queries.load(Ordering::Relaxed),
            probes: self.probes(),
            ingest_ns: self.ingest_ns.load(Ordering::Relaxed),
            query_ns: self.query_ns.load(Ordering::Relaxed),
        }
    }

    /// Snapshot of one shard's table.
    pub fn shard_snapshot(&self, shard: usize) -> Result<Vec<u8>> {
        let table = self
            .shards
            .get(shard)
            .ok_or_else(|| invalid(format!("no shard {shard}")))?;
        Ok(table.read().expect("shard lock poisoned").to_snapshot())
    }
}
