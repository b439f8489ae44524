use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{Corpus, Record};
use crate::encoding::qgram_dice;
use crate::error::{invalid, Result};

/// Proposals tried for the first edit before giving up on a value.
const FIRST_EDIT_ATTEMPTS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditOp {
    Insert,
    Delete,
    Swap,
}

impl EditOp {
    /// Insert 0.3, delete 0.3, swap 0.4.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> EditOp {
        let u: f64 = rng.random();
        if u < 0.3 {
            EditOp::Insert
        } else if u < 0.6 {
            EditOp::Delete
        } else {
            EditOp::Swap
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corruption {
    pub value: String,
    pub edits: Vec<EditOp>,
    /// No edit could be applied within the threshold.
    pub unchanged: bool,
}

/// Applies `op` at a random position; `None` if it cannot change `chars`.
fn apply<R: Rng + ?Sized>(chars: &[char], op: EditOp, rng: &mut R) -> Option<Vec<char>> {
    let mut out = chars.to_vec();
    match op {
        EditOp::Insert => {
            let c = rng.random_range(b'a'..=b'z') as char;
            out.insert(rng.random_range(0..=chars.len()), c);
        }
        EditOp::Delete => {
            if chars.len() < 2 {
                return None;
            }
            out.remove(rng.random_range(0..chars.len()));
        }
        EditOp::Swap => {
            if chars.len() < 2 {
                return None;
            }
            let i = rng.random_range(0..chars.len() - 1);
            out.swap(i, i + 1);
        }
    }
    (out != chars).then_some(out)
}

/// Random character edits (mix 0.3/0.3/0.4), each kept only while the
/// q-gram Dice similarity to `value` stays at least `s_t`. Stops at the
/// first edit that would break the threshold.
pub fn corrupt_value<R: Rng + ?Sized>(
    value: &str,
    s_t: f64,
    q: usize,
    rng: &mut R,
) -> Result<Corruption> {
    if value.is_empty() {
        return Err(invalid("cannot corrupt an empty value"));
    }
    let unchanged = Corruption {
        value: value.to_string(),
        edits: Vec::new(),
        unchanged: true,
    };
    if s_t >= 1.0 {
        return Ok(unchanged);
    }
    let mut current: Vec<char> = value.chars().collect();
    let mut edits = Vec::new();
    let max_edits = 2 * current.len() + 2;
    let mut attempts = 0;
    while edits.len() < max_edits {
        let op = EditOp::sample(rng);
        let Some(next) = apply(&current, op, rng) else {
            attempts += 1;
            if attempts >= FIRST_EDIT_ATTEMPTS {
                break;
            }
            continue;
        };
        let candidate: String = next.iter().collect();
        if qgram_dice(value, &candidate, q) >= s_t {
            current = next;
            edits.push(op);
        } else if !edits.is_empty() {
            break;
        } else {
            attempts += 1;
            if attempts >= FIRST_EDIT_ATTEMPTS {
                break;
            }
        }
    }
    if edits.is_empty() {
        return Ok(unchanged);
    }
    Ok(Corruption {
        value: current.into_iter().collect(),
        edits,
        unchanged: false,
    })
}

/// Replaces `floor(fraction * count)` occurrences of every distinct value
/// with independently corrupted variants. Clients and record order are kept.
pub fn make_synthetic<R: Rng + ?Sized>(
    corpus: &Corpus,
    s_t: f64,
    q: usize,
    fraction: f64,
    rng: &mut R,
) -> Result<Corpus> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(invalid(format!(
            "fraction must lie in [0, 1], got {fraction}"
        )));
    }
    let mut positions: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in corpus.records.iter().enumerate() {
        positions.entry(r.value.as_str()).or_default().push(i);
    }
    let mut records: Vec<Record> = corpus.records.clone();
    for idx in positions.values() {
        let replace = (fraction * idx.len() as f64).floor() as usize;
        for pick in index::sample(rng, idx.len(), replace) {
            let r = &mut records[idx[pick]];
            r.value = corrupt_value(&r.value, s_t, q, rng)?.value;
        }
    }
    Ok(Corpus { records })
}
