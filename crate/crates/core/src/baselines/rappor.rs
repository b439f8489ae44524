use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{positions, Aggregation};
use crate::bits::BitVector;
use crate::encoding::Value;
use crate::error::{invalid, Error, Result};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RapporConfig {
    pub k: usize,
    pub l: usize,
    pub cohorts: usize,
    pub f: f64,
    pub p: f64,
    pub q: f64,
    pub aggregation: Aggregation,
    pub seed: u64,
}

impl Default for RapporConfig {
    fn default() -> Self {
        RapporConfig {
            k: 2,
            l: 1000,
            cohorts: 32,
            f: 0.5,
            p: 0.5,
            q: 0.75,
            aggregation: Aggregation::Mean,
            seed: 0x7a99_0001,
        }
    }
}

impl RapporConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("f", self.f), ("p", self.p), ("q", self.q)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!(
                    "RAPPOR {name} must lie in [0, 1], got {v}"
                )));
            }
        }
        if self.k == 0 || self.l == 0 || self.cohorts == 0 {
            return Err(invalid("RAPPOR needs k, l and cohorts >= 1"));
        }
        if self.l > u16::MAX as usize {
            return Err(invalid("RAPPOR filters are limited to 65535 bits"));
        }
        if (self.q_star() - self.p_star()).abs() < 1e-12 {
            return Err(invalid("RAPPOR noise leaves no signal (q* == p*)"));
        }
        Ok(())
    }

    /// P(reported 1 | true bit 1).
    pub fn q_star(&self) -> f64 {
        self.f / 2.0 * (self.p + self.q) + (1.0 - self.f) * self.q
    }

    /// P(reported 1 | true bit 0).
    pub fn p_star(&self) -> f64 {
        self.f / 2.0 * (self.p + self.q) + (1.0 - self.f) * self.p
    }
}

/// Bit positions of `value` in `cohort`'s Bloom filter.
pub fn rappor_bits(value: &Value, cohort: usize, cfg: &RapporConfig) -> Vec<usize> {
    let seed = derive_seed(cfg.seed, "rappor-cohort", cohort as u64);
    positions(value, seed, cfg.k, cfg.l)
}

/// Permanent randomized response with `f`, then instantaneous with `(p, q)`.
pub fn rappor_report<R: Rng + ?Sized>(
    value: &Value,
    cohort: usize,
    cfg: &RapporConfig,
    rng: &mut R,
) -> Result<BitVector> {
    if cohort >= cfg.cohorts {
        return Err(invalid(format!(
            "cohort {cohort} outside 0..{}",
            cfg.cohorts
        )));
    }
    let mut truth = BitVector::zeros(cfg.l);
    for i in rappor_bits(value, cohort, cfg) {
        truth.set(i);
    }
    let mut out = BitVector::zeros(cfg.l);
    for i in 0..cfg.l {
        let u: f64 = rng.random();
        let permanent = if u < cfg.f / 2.0 {
            true
        } else if u < cfg.f {
            false
        } else {
            truth.get(i)
        };
        let prob = if permanent { cfg.q } else { cfg.p };
        if rng.random_bool(prob) {
            out.set(i);
        }
    }
    Ok(out)
}

/// Per-cohort bit counters and report totals.
#[derive(Debug, Clone, PartialEq)]
pub struct RapporAggregate {
    cfg: RapporConfig,
    counts: Vec<Vec<u64>>,
    reports: Vec<u64>,
}

impl RapporAggregate {
    pub fn new(cfg: &RapporConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(RapporAggregate {
            cfg: cfg.clone(),
            counts: vec![vec![0; cfg.l]; cfg.cohorts],
            reports: vec![0; cfg.cohorts],
        })
    }

    pub fn config(&self) -> &RapporConfig {
        &self.cfg
    }

    pub fn add(&mut self, cohort: usize, report: &BitVector) -> Result<()> {
        if cohort >= self.cfg.cohorts || report.len() != self.cfg.l {
            return Err(Error::MalformedReport(format!(
                "RAPPOR report for cohort {cohort} with {} bits",
                report.len()
            )));
        }
        for i in report.ones() {
            self.counts[cohort][i] += 1;
        }
        self.reports[cohort] += 1;
        Ok(())
    }

    pub fn total_reports(&self) -> u64 {
        self.reports.iter().sum()
    }

    pub fn estimate(&self, value: &Value) -> f64 {
        let all: Vec<usize> = (0..self.cfg.cohorts).collect();
        rappor_estimate(self, value, &all).expect("all cohorts are known")
    }
}

/// De-biased count of `value`, summed over `cohorts` and clamped at 0.
///
/// Each counter is corrected with the two randomized-response marginals;
/// the `k` corrected counters of one cohort are combined by the configured
/// [`Aggregation`].
pub fn rappor_estimate(agg: &RapporAggregate, value: &Value, cohorts: &[usize]) -> Result<f64> {
    let cfg = &agg.cfg;
    let (qs, ps) = (cfg.q_star(), cfg.p_star());
    let mut total = 0.0;
    for &c in cohorts {
        if c >= cfg.cohorts {
            return Err(invalid(format!("unknown cohort {c}")));
        }
        let n = agg.reports[c] as f64;
        let bits = rappor_bits(value, c, cfg);
        total += cfg.aggregation.combine(
            bits.iter()
                .map(|&i| (agg.counts[c][i] as f64 - ps * n) / (qs - ps)),
        );
    }
    Ok(total.max(0.0))
}
