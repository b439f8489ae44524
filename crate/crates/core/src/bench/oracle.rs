use std::collections::BTreeMap;

use serde::Serialize;

use super::corpus::Corpus;
use crate::encoding::{normalize, qgrams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OracleCount {
    pub exact: u64,
    pub fuzzy: u64,
}

/// Ground truth by brute force over the distinct values of a corpus.
#[derive(Debug, Clone)]
pub struct Oracle {
    q: usize,
    values: Vec<(String, Vec<String>, u64)>,
    index: BTreeMap<String, usize>,
}

fn gram_set(value: &str, q: usize) -> Vec<String> {
    let mut g = qgrams(value, q);
    g.sort_unstable();
    g.dedup();
    g
}

/// Dice over two sorted, deduplicated gram lists.
fn sorted_dice(a: &[String], b: &[String]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let (mut i, mut j, mut common) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    2.0 * common as f64 / (a.len() + b.len()) as f64
}

impl Oracle {
    pub fn new(corpus: &Corpus, q: usize) -> Self {
        let counts = corpus.counts();
        let mut index = BTreeMap::new();
        let values = counts
            .into_iter()
            .enumerate()
            .map(|(i, (v, c))| {
                index.insert(v.clone(), i);
                let grams = gram_set(&v, q);
                (v, grams, c)
            })
            .collect();
        Oracle { q, values, index }
    }

    pub fn exact(&self, query: &str) -> u64 {
        self.index
            .get(&normalize(query))
            .map_or(0, |&i| self.values[i].2)
    }

    /// Total multiplicity of values within Dice `s_t` of `query`.
    pub fn fuzzy(&self, query: &str, s_t: f64) -> u64 {
        let g = gram_set(query, self.q);
        self.values
            .iter()
            .filter(|(_, grams, _)| sorted_dice(&g, grams) >= s_t)
            .map(|(_, _, c)| c)
            .sum()
    }

    pub fn count(&self, query: &str, s_t: f64) -> OracleCount {
        OracleCount {
            exact: self.exact(query),
            fuzzy: self.fuzzy(query, s_t),
        }
    }
}

pub fn oracle_counts(corpus: &Corpus, query: &str, s_t: f64, q: usize) -> OracleCount {
    Oracle::new(corpus, q).count(query, s_t)
}
