use std::collections::{HashMap, HashSet};

use rand::{Rng, RngCore};

use crate::encoding::{qgrams, Value};
use crate::error::Result;
use crate::method::CountingMethod;

/// An estimate at or above this counts as "present".
pub const PRESENT: f64 = 0.5;

fn random_word<R: Rng + ?Sized>(rng: &mut R) -> String {
    let len = rng.random_range(6..=12);
    (0..len)
        .map(|_| rng.random_range(b'a'..=b'z') as char)
        .collect()
}

/// Distinct random words plus a bigram index for similarity screening.
pub struct WordPool {
    words: Vec<String>,
    seen: HashSet<String>,
    grams: HashMap<String, Vec<u32>>,
    gram_counts: Vec<u32>,
}

impl WordPool {
    pub fn new() -> Self {
        WordPool {
            words: Vec::new(),
            seen: HashSet::new(),
            grams: HashMap::new(),
            gram_counts: Vec::new(),
        }
    }

    fn set(word: &str) -> Vec<String> {
        let mut g = qgrams(word, 2);
        g.sort_unstable();
        g.dedup();
        g
    }

    pub fn push<R: Rng + ?Sized>(&mut self, rng: &mut R) -> &str {
        loop {
            let w = random_word(rng);
            if self.seen.insert(w.clone()) {
                let id = self.words.len() as u32;
                let set = Self::set(&w);
                self.gram_counts.push(set.len() as u32);
                for g in set {
                    self.grams.entry(g).or_default().push(id);
                }
                self.words.push(w);
                return self.words.last().unwrap();
            }
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Highest bigram Dice between `word` and any pooled word.
    pub fn max_similarity(&self, word: &str) -> f64 {
        let set = Self::set(word);
        let mut shared: HashMap<u32, u32> = HashMap::new();
        for g in &set {
            if let Some(ids) = self.grams.get(g) {
                for &id in ids {
                    *shared.entry(id).or_insert(0) += 1;
                }
            }
        }
        shared
            .into_iter()
            .map(|(id, n)| {
                2.0 * n as f64 / (set.len() + self.gram_counts[id as usize] as usize) as f64
            })
            .fold(0.0, f64::max)
    }

    /// A fresh word absent from the pool with similarity below `s_t` to
    /// every pooled word.
    pub fn probe<R: Rng + ?Sized>(&self, s_t: f64, rng: &mut R) -> String {
        loop {
            let w = random_word(rng);
            if !self.seen.contains(&w) && self.max_similarity(&w) < s_t {
                return w;
            }
        }
    }
}

impl Default for WordPool {
    fn default() -> Self {
        Self::new()
    }
}

/// Inserts random words through `method` and measures the fraction of
/// absent, dissimilar probes it reports as present, at every checkpoint in
/// `checkpoints` (ascending insert counts).
pub fn fpr_curve(
    method: &mut dyn CountingMethod,
    checkpoints: &[usize],
    n_probe: usize,
    s_t: f64,
    rng: &mut dyn RngCore,
) -> Result<Vec<(usize, f64)>> {
    let mut pool = WordPool::new();
    let mut out = Vec::with_capacity(checkpoints.len());
    for &target in checkpoints {
        while pool.len() < target {
            let client = pool.len() as u64;
            let word = pool.push(rng).to_string();
            if let Some(report) = method.report(client, &Value::Text(word), rng)? {
                method.ingest(&report)?;
            }
        }
        let mut hits = 0;
        for _ in 0..n_probe {
            let probe = pool.probe(s_t, rng);
            if method.estimate(&Value::Text(probe))? >= PRESENT {
                hits += 1;
            }
        }
        let fpr = if n_probe == 0 {
            0.0
        } else {
            hits as f64 / n_probe as f64
        };
        out.push((pool.len(), fpr));
    }
    Ok(out)
}

/// False positive rate after `n_insert` random insertions.
pub fn measure_fpr(
    method: &mut dyn CountingMethod,
    n_insert: usize,
    n_probe: usize,
    s_t: f64,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    Ok(fpr_curve(method, &[n_insert], n_probe, s_t, rng)?[0].1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::qgram_dice;
    use crate::rng;

    #[test]
    fn probes_are_absent_and_dissimilar() {
        let mut rng = rng::seeded(1);
        let mut pool = WordPool::new();
        for _ in 0..500 {
            pool.push(&mut rng);
        }
        for _ in 0..50 {
            let p = pool.probe(0.5, &mut rng);
            for w in &pool.words {
                assert_ne!(&p, w);
                assert!(qgram_dice(&p, w, 2) < 0.5);
            }
        }
    }

    #[test]
    fn similarity_index_matches_brute_force() {
        let mut rng = rng::seeded(2);
        let mut pool = WordPool::new();
        for _ in 0..300 {
            pool.push(&mut rng);
        }
        for _ in 0..30 {
            let w = random_word(&mut rng);
            let brute = pool
                .words
                .iter()
                .map(|x| qgram_dice(&w, x, 2))
                .fold(0.0, f64::max);
            assert!((pool.max_similarity(&w) - brute).abs() < 1e-12);
        }
    }
}
