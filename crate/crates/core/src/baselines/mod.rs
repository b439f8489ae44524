//! Comparison mechanisms: a cohort-based RAPPOR aggregator and a privatized
//! count-min sketch.

mod cms;
mod rappor;

pub use cms::{
    cms_estimate, cms_update, fpr_cms, CmsReport, Sketch, SketchConfig, PAPER_SKETCH_DEPTH,
};
pub use rappor::{rappor_bits, rappor_estimate, rappor_report, RapporAggregate, RapporConfig};

use serde::{Deserialize, Serialize};

use crate::encoding::Value;
use crate::hashing::hash_pair;

/// How de-biased per-position counts combine into one estimate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Average: unbiased when positions are collision-free.
    #[default]
    Mean,
    /// Minimum: the classic sketch read-out.
    Min,
}

impl Aggregation {
    pub(crate) fn combine(self, values: impl IntoIterator<Item = f64>) -> f64 {
        let mut n = 0usize;
        let mut acc = match self {
            Aggregation::Mean => 0.0,
            Aggregation::Min => f64::INFINITY,
        };
        for v in values {
            n += 1;
            acc = match self {
                Aggregation::Mean => acc + v,
                Aggregation::Min => acc.min(v),
            };
        }
        match (self, n) {
            (_, 0) => 0.0,
            (Aggregation::Mean, n) => acc / n as f64,
            (Aggregation::Min, _) => acc,
        }
    }
}

/// `k` positions in `[0, width)` by double hashing the canonical key.
pub(crate) fn positions(value: &Value, seed: u64, k: usize, width: usize) -> Vec<usize> {
    let (g1, g2) = hash_pair(seed, value.canonical_key().as_bytes());
    (0..k as u64)
        .map(|i| (g1.wrapping_add(i.wrapping_mul(g2)) % width as u64) as usize)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregation_modes() {
        assert_eq!(Aggregation::Mean.combine([1.0, 3.0]), 2.0);
        assert_eq!(Aggregation::Min.combine([1.0, 3.0]), 1.0);
        assert_eq!(Aggregation::Min.combine([]), 0.0);
    }
}
