//! Distance-preserving Bloom-filter encoding of strings and numbers.
//!
//! Strings are split into q-grams and numbers into a neighbourhood of
//! quantised values; every token sets `k` bit positions chosen by double
//! hashing, `h_i(x) = (g1(x) + i * g2(x)) mod l`. Similar inputs share
//! tokens and therefore share set bits, so the Dice coefficient of two
//! filters tracks the similarity of the underlying values.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bits::BitVector;
use crate::error::{invalid, Error, Result};
use crate::hashing::hash_pair;

pub type BloomFilter = BitVector;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Filter length in bits.
    pub l: usize,
    /// Hash functions per token.
    pub k: usize,
    /// Gram length for strings.
    pub q: usize,
    /// Neighbourhood radius for numbers, in steps.
    pub radius: u32,
    pub step: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            l: 30,
            k: 2,
            q: 2,
            radius: 10,
            step: 1.0,
            seed: 0x0b10_0f11_7e25_eed5,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct VersionedEncoder {
    version: u32,
    #[serde(flatten)]
    encoder: EncoderConfig,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 || self.q < 1 || self.l < self.k {
            return Err(invalid(format!(
                "encoder requires k >= 1, q >= 1 and l >= k (got l={}, k={}, q={})",
                self.l, self.k, self.q
            )));
        }
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(invalid(format!("step must be positive, got {}", self.step)));
        }
        Ok(())
    }

    /// Key-value text form with a leading `version` key.
    pub fn to_config_string(&self) -> String {
        toml::to_string(&VersionedEncoder {
            version: CONFIG_VERSION,
            encoder: self.clone(),
        })
        .expect("encoder config serializes")
    }

    pub fn from_config_str(text: &str) -> Result<Self> {
        let parsed: VersionedEncoder =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if parsed.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported encoder config version {}",
                parsed.version
            )));
        }
        parsed.encoder.validate()?;
        Ok(parsed.encoder)
    }
}

/// An item a client can report: free text or a number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Number(f64),
    Text(String),
}

impl Value {
    /// Reads CLI or protocol input: anything that parses as a finite number
    /// is numeric, the rest is text.
    pub fn parse(input: &str) -> Value {
        match input.trim().parse::<f64>() {
            Ok(x) if x.is_finite() => Value::Number(x),
            _ => Value::Text(input.to_string()),
        }
    }

    /// Normalised key used for per-client deduplication.
    pub fn canonical_key(&self) -> String {
        match self {
            Value::Text(s) => format!("s:{}", normalize(s)),
            Value::Number(x) => format!("n:{x}"),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Text(s) => f.write_str(s),
            Value::Number(x) => write!(f, "{x}"),
        }
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_string())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Text(s)
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Number(x)
    }
}

pub fn normalize(value: &str) -> String {
    value.trim().to_lowercase()
}

/// The q-grams of a normalised string. Strings shorter than `q` yield
/// themselves as a single gram.
pub fn qgrams(value: &str, q: usize) -> Vec<String> {
    let chars: Vec<char> = normalize(value).chars().collect();
    if chars.is_empty() {
        return Vec::new();
    }
    if chars.len() < q {
        return vec![chars.iter().collect()];
    }
    chars.windows(q).map(|w| w.iter().collect()).collect()
}

/// Dice coefficient over the q-gram *sets* of two strings (unencoded
/// similarity, used as ground truth).
pub fn qgram_dice(a: &str, b: &str, q: usize) -> f64 {
    let ga: BTreeSet<String> = qgrams(a, q).into_iter().collect();
    let gb: BTreeSet<String> = qgrams(b, q).into_iter().collect();
    if ga.is_empty() && gb.is_empty() {
        return 1.0;
    }
    let common = ga.intersection(&gb).count();
    2.0 * common as f64 / (ga.len() + gb.len()) as f64
}

fn set_token(bf: &mut BloomFilter, token: &[u8], cfg: &EncoderConfig) {
    let (g1, g2) = hash_pair(cfg.seed, token);
    let l = cfg.l as u64;
    for i in 0..cfg.k as u64 {
        let pos = g1.wrapping_add(i.wrapping_mul(g2)) % l;
        bf.set(pos as usize);
    }
}

pub fn encode_string(value: &str, cfg: &EncoderConfig) -> Result<BloomFilter> {
    cfg.validate()?;
    let grams = qgrams(value, cfg.q);
    if grams.is_empty() {
        return Err(invalid("cannot encode an empty string"));
    }
    let mut bf = BloomFilter::zeros(cfg.l);
    let mut token = Vec::new();
    for gram in grams {
        token.clear();
        token.push(b's');
        token.extend_from_slice(gram.as_bytes());
        set_token(&mut bf, &token, cfg);
    }
    Ok(bf)
}

pub fn encode_numeric(value: f64, cfg: &EncoderConfig) -> Result<BloomFilter> {
    cfg.validate()?;
    if !value.is_finite() {
        return Err(invalid(format!("cannot encode non-finite value {value}")));
    }
    let scaled = (value / cfg.step).round();
    if scaled.abs() > (1u64 << 62) as f64 {
        return Err(invalid(format!(
            "value {value} outside the encodable domain"
        )));
    }
    let centre = scaled as i64;
    let radius = cfg.radius as i64;
    let mut bf = BloomFilter::zeros(cfg.l);
    let mut token = [0u8; 9];
    token[0] = b'n';
    for offset in -radius..=radius {
        token[1..].copy_from_slice(&(centre + offset).to_le_bytes());
        set_token(&mut bf, &token, cfg);
    }
    Ok(bf)
}

pub fn encode(value: &Value, cfg: &EncoderConfig) -> Result<BloomFilter> {
    match value {
        Value::Text(s) => encode_string(s, cfg),
        Value::Number(x) => encode_numeric(*x, cfg),
    }
}

/// `2 |a ∧ b| / (|a| + |b|)`.
pub fn dice(a: &BloomFilter, b: &BloomFilter) -> Result<f64> {
    let common = a.and_count(b)?;
    let total = a.count_ones() + b.count_ones();
    if total == 0 {
        return Err(Error::DegenerateInput(
            "Dice coefficient of two all-zero filters".into(),
        ));
    }
    Ok(2.0 * common as f64 / total as f64)
}

/// Contiguous split of a filter into `m` pieces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentSet {
    segments: Vec<BitVector>,
}

impl SegmentSet {
    pub fn segments(&self) -> &[BitVector] {
        &self.segments
    }

    pub fn into_segments(self) -> Vec<BitVector> {
        self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn concat(&self) -> BloomFilter {
        BitVector::concat(&self.segments)
    }
}

/// Segment lengths for an `l`-bit filter split `m` ways: the first `l mod m`
/// segments carry one extra bit.
pub fn segment_lengths(l: usize, m: usize) -> Result<Vec<usize>> {
    if m == 0 || m > l {
        return Err(invalid(format!(
            "segment count must be in 1..={l}, got {m}"
        )));
    }
    let base = l / m;
    let extra = l % m;
    Ok((0..m).map(|j| base + usize::from(j < extra)).collect())
}

pub fn segment(bf: &BloomFilter, m: usize) -> Result<SegmentSet> {
    let lengths = segment_lengths(bf.len(), m)?;
    let mut start = 0;
    let segments = lengths
        .into_iter()
        .map(|len| {
            let s = bf.slice(start, len);
            start += len;
            s
        })
        .collect();
    Ok(SegmentSet { segments })
}

/// Number of bits flipped to reach similarity `s_c`: `ceil(l * (1 - s_c))`.
pub fn flips_for_similarity(l: usize, s_c: f64) -> usize {
    // 1e-9 absorbs representation error such as 1.0 - 0.7 = 0.30000000000000004
    let raw = l as f64 * (1.0 - s_c) - 1e-9;
    raw.ceil().clamp(0.0, l as f64) as usize
}

/// Flips exactly `flips_for_similarity(l, s_c)` distinct, uniformly chosen bits.
pub fn flip_to_similarity<R: Rng + ?Sized>(bf: &BloomFilter, s_c: f64, rng: &mut R) -> BloomFilter {
    let flips = flips_for_similarity(bf.len(), s_c);
    let mut out = bf.clone();
    for pos in index::sample(rng, bf.len(), flips) {
        out.flip(pos);
    }
    out
}

/// Draws `s_c ~ U[s_t, 1]` and returns a filter at Hamming distance
/// `ceil(l * (1 - s_c))` from `bf`.
pub fn generate_similar_bf<R: Rng + ?Sized>(
    bf: &BloomFilter,
    s_t: f64,
    rng: &mut R,
) -> Result<BloomFilter> {
    if !(s_t > 0.0 && s_t <= 1.0) {
        return Err(invalid(format!(
            "similarity threshold must be in (0, 1], got {s_t}"
        )));
    }
    if s_t == 1.0 {
        return Ok(bf.clone());
    }
    let s_c = rng.random_range(s_t..=1.0);
    Ok(flip_to_similarity(bf, s_c, rng))
}

/// False-positive rate of a Bloom filter holding `n` items: `(1 - e^{-kn/l})^k`.
pub fn fpr_bloom(k: u32, n: u64, l: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let k = k as f64;
    (1.0 - (-k * n as f64 / l as f64).exp()).powf(k)
}
