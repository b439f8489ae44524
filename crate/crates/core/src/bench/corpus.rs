use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::encoding::normalize;
use crate::error::{Error, Result};

const BUNDLED: &str = include_str!("../../data/words.tsv");

/// One observation of a value by a simulated client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub value: String,
    pub client: u64,
}

/// A multiset of normalized text values, each assigned to one client.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub records: Vec<Record>,
}

/// `word<TAB>count` lines, or one word per line (count 1). `#` starts a
/// comment line.
pub fn parse_word_counts(text: &str) -> Result<Vec<(String, u64)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (word, count) = match line.rsplit_once(['\t', ',']) {
            Some((w, c)) if c.trim().parse::<u64>().is_ok() => {
                (w, c.trim().parse::<u64>().unwrap())
            }
            _ => (line, 1),
        };
        let word = normalize(word);
        if word.is_empty() {
            return Err(Error::InvalidInput(format!("line {}: empty value", n + 1)));
        }
        out.push((word, count));
    }
    Ok(out)
}

/// The 2,000-word sample shipped with the crate.
pub fn bundled_word_counts() -> Vec<(String, u64)> {
    parse_word_counts(BUNDLED).expect("bundled corpus parses")
}

pub fn load_word_counts(path: &Path) -> Result<Vec<(String, u64)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read dataset {}: {e}", path.display())))?;
    parse_word_counts(&text)
}

impl Corpus {
    /// Expands counts into records and assigns each to one of `clients`
    /// clients uniformly at random. Record order is shuffled.
    pub fn from_counts<R: Rng + ?Sized>(
        counts: &[(String, u64)],
        clients: u64,
        rng: &mut R,
    ) -> Result<Self> {
        if clients == 0 {
            return Err(Error::InvalidInput("need at least one client".into()));
        }
        let mut records = Vec::new();
        for (value, count) in counts {
            for _ in 0..*count {
                records.push(Record {
                    value: value.clone(),
                    client: rng.random_range(0..clients),
                });
            }
        }
        records.shuffle(rng);
        Ok(Corpus { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Multiplicity of each distinct value.
    pub fn counts(&self) -> BTreeMap<String, u64> {
        let mut m = BTreeMap::new();
        for r in &self.records {
            *m.entry(r.value.clone()).or_insert(0) += 1;
        }
        m
    }

    pub fn distinct(&self) -> usize {
        self.counts().len()
    }

    /// Drops repeated (client, value) pairs: a client reports an item once.
    pub fn dedup_per_client(&self) -> Corpus {
        let mut seen = HashSet::new();
        Corpus {
            records: self
                .records
                .iter()
                .filter(|r| seen.insert((r.client, r.value.clone())))
                .cloned()
                .collect(),
        }
    }
}

/// Keeps the `n` most frequent values (ties by value); `n = 0` keeps all.
pub fn top_values(mut counts: Vec<(String, u64)>, n: usize) -> Vec<(String, u64)> {
    counts.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    if n > 0 {
        counts.truncate(n);
    }
    counts
}
