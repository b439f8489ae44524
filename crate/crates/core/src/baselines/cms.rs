use rand::seq::index;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use super::{positions, Aggregation};
use crate::encoding::Value;
use crate::error::{invalid, Error, Result};
use crate::rng::derive_seed;

/// Hash count quoted for the paper's sketch; far too deep to be practical.
pub const PAPER_SKETCH_DEPTH: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SketchConfig {
    pub epsilon: f64,
    pub width: usize,
    pub depth: usize,
    pub aggregation: Aggregation,
    pub seed: u64,
}

impl Default for SketchConfig {
    fn default() -> Self {
        SketchConfig {
            epsilon: 8.0,
            width: 1024,
            depth: 16,
            aggregation: Aggregation::Mean,
            seed: 0xc0c0_0001,
        }
    }
}

impl SketchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.width > u32::MAX as usize {
            return Err(invalid(format!(
                "sketch width must be >= 2, got {}",
                self.width
            )));
        }
        if self.depth == 0 {
            return Err(invalid("sketch needs at least one row"));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(invalid(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Per-bit flip probability `1 / (e^{eps/2} + 1)`.
    pub fn flip_probability(&self) -> f64 {
        1.0 / ((self.epsilon / 2.0).exp() + 1.0)
    }

    fn column(&self, value: &Value, row: usize) -> usize {
        positions(
            value,
            derive_seed(self.seed, "cms-row", row as u64),
            1,
            self.width,
        )[0]
    }
}

/// A privatized one-hot vector per row, stored as the indices of its ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CmsReport {
    pub rows: Vec<Vec<u32>>,
}

impl CmsReport {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.rows.len() as u32).to_be_bytes());
        for row in &self.rows {
            out.extend_from_slice(&(row.len() as u32).to_be_bytes());
            for &i in row {
                out.extend_from_slice(&i.to_be_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = crate::cuckoo::Reader::new(bytes);
        let bad = |e: Error| Error::MalformedReport(format!("sketch report: {e}"));
        let depth = r.u32().map_err(bad)? as usize;
        let mut rows = Vec::with_capacity(depth.min(bytes.len() / 4));
        for _ in 0..depth {
            let n = r.u32().map_err(bad)? as usize;
            let mut row = Vec::with_capacity(n.min(bytes.len() / 4));
            for _ in 0..n {
                row.push(r.u32().map_err(bad)?);
            }
            rows.push(row);
        }
        if !r.is_empty() {
            return Err(Error::MalformedReport(
                "sketch report: trailing bytes".into(),
            ));
        }
        Ok(CmsReport { rows })
    }
}

/// Client side: one-hot per row, every bit flipped independently.
pub fn cms_update<R: Rng + ?Sized>(
    value: &Value,
    cfg: &SketchConfig,
    rng: &mut R,
) -> Result<CmsReport> {
    cfg.validate()?;
    let pf = cfg.flip_probability();
    let w = cfg.width;
    let binom = Binomial::new((w - 1) as u64, pf).map_err(|e| invalid(e.to_string()))?;
    let rows = (0..cfg.depth)
        .map(|row| {
            let hot = cfg.column(value, row);
            let flipped_on = binom.sample(rng) as usize;
            let mut ones: Vec<u32> = index::sample(rng, w - 1, flipped_on)
                .into_iter()
                .map(|i| if i >= hot { i + 1 } else { i } as u32)
                .collect();
            if !rng.random_bool(pf) {
                ones.push(hot as u32);
            }
            ones.sort_unstable();
            ones
        })
        .collect();
    Ok(CmsReport { rows })
}

/// Server side counters. Raw counters only ever grow.
#[derive(Debug, Clone, PartialEq)]
pub struct Sketch {
    cfg: SketchConfig,
    counters: Vec<Vec<u64>>,
    reports: u64,
}

impl Sketch {
    pub fn new(cfg: &SketchConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Sketch {
            cfg: cfg.clone(),
            counters: vec![vec![0; cfg.width]; cfg.depth],
            reports: 0,
        })
    }

    pub fn config(&self) -> &SketchConfig {
        &self.cfg
    }

    pub fn reports(&self) -> u64 {
        self.reports
    }

    pub fn counter(&self, row: usize, col: usize) -> u64 {
        self.counters[row][col]
    }

    pub fn add(&mut self, report: &CmsReport) -> Result<()> {
        if report.rows.len() != self.cfg.depth
            || report
                .rows
                .iter()
                .flatten()
                .any(|&i| i as usize >= self.cfg.width)
        {
            return Err(Error::MalformedReport(
                "sketch report does not fit the sketch".into(),
            ));
        }
        for (row, ones) in report.rows.iter().enumerate() {
            for &i in ones {
                self.counters[row][i as usize] += 1;
            }
        }
        self.reports += 1;
        Ok(())
    }
}

/// De-biased count of `value`, combined over rows and clamped at 0.
pub fn cms_estimate(sketch: &Sketch, value: &Value) -> f64 {
    let cfg = &sketch.cfg;
    let pf = cfg.flip_probability();
    let n = sketch.reports as f64;
    let est = cfg.aggregation.combine((0..cfg.depth).map(|row| {
        let c = sketch.counters[row][cfg.column(value, row)] as f64;
        (c - pf * n) / (1.0 - 2.0 * pf)
    }));
    est.max(0.0)
}

/// `[1 - (1 - 1/W)^n]^D`.
pub fn fpr_cms(width: u64, depth: u32, n: u64) -> Result<f64> {
    if width < 1 {
        return Err(invalid("width must be positive"));
    }
    let miss = (n as f64 * (-1.0 / width as f64).ln_1p()).exp();
    Ok((1.0 - miss).powi(depth as i32))
}
