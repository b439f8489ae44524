//! Client side: deduplicate, encode, perturb, segment, shuffle, serialize.

use std::collections::HashSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bits::BitVector;
use crate::encoding::{self, EncoderConfig, Value};
use crate::error::{Error, Result};
use crate::ldp::{perturb, BucketDictionary, MechanismParams};

pub const WIRE_VERSION: u8 = 1;

/// One segment of one reported filter.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SegmentRecord {
    /// Segment position `j` in `[0, m)`.
    pub position: u8,
    pub bits: BitVector,
}

/// What travels from a client to the server. Nothing in it marks which
/// records came from the real item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireReport {
    pub version: u8,
    pub client_id: u64,
    pub records: Vec<SegmentRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Submission {
    Report(WireReport),
    AlreadyReported,
}

impl Submission {
    pub fn into_report(self) -> Option<WireReport> {
        match self {
            Submission::Report(r) => Some(r),
            Submission::AlreadyReported => None,
        }
    }
}

fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

fn get_varint(buf: &[u8], pos: &mut usize) -> Result<u64> {
    let mut v = 0u64;
    for shift in (0..64).step_by(7) {
        let byte = *buf
            .get(*pos)
            .ok_or_else(|| Error::MalformedReport("truncated record count".into()))?;
        *pos += 1;
        v |= u64::from(byte & 0x7f) << shift;
        if byte & 0x80 == 0 {
            return Ok(v);
        }
    }
    Err(Error::MalformedReport(
        "record count varint too long".into(),
    ))
}

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    j: u8,
    bits: u16,
    hex: String,
}

#[derive(Serialize, Deserialize)]
struct JsonReport {
    version: u8,
    client_id: u64,
    records: Vec<JsonRecord>,
}

fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn from_hex(s: &str) -> Result<Vec<u8>> {
    if !s.len().is_multiple_of(2) {
        return Err(Error::MalformedReport("odd-length hex payload".into()));
    }
    (0..s.len())
        .step_by(2)
        .map(|i| {
            u8::from_str_radix(&s[i..i + 2], 16)
                .map_err(|_| Error::MalformedReport(format!("bad hex byte {:?}", &s[i..i + 2])))
        })
        .collect()
}

impl WireReport {
    /// `version | client_id (8, BE) | count (varint) | records`, each record
    /// being `j (1) | bit length (2, BE) | payload`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.records.len() * 6);
        out.push(self.version);
        out.extend_from_slice(&self.client_id.to_be_bytes());
        put_varint(&mut out, self.records.len() as u64);
        for r in &self.records {
            out.push(r.position);
            out.extend_from_slice(&(r.bits.len() as u16).to_be_bytes());
            out.extend_from_slice(&r.bits.to_bytes());
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let malformed = |m: &str| Error::MalformedReport(m.to_string());
        let version = *buf.first().ok_or_else(|| malformed("empty report"))?;
        if version != WIRE_VERSION {
            return Err(Error::MalformedReport(format!(
                "unsupported version {version}"
            )));
        }
        let id_bytes = buf
            .get(1..9)
            .ok_or_else(|| malformed("truncated client id"))?;
        let client_id = u64::from_be_bytes(id_bytes.try_into().unwrap());
        let mut pos = 9;
        let count = get_varint(buf, &mut pos)?;
        // each record needs at least three bytes
        if count > (buf.len() as u64) / 3 + 1 {
            return Err(malformed("record count exceeds payload"));
        }
        let mut records = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let head = buf
                .get(pos..pos + 3)
                .ok_or_else(|| malformed("truncated record header"))?;
            let position = head[0];
            let len = u16::from_be_bytes([head[1], head[2]]) as usize;
            pos += 3;
            let payload = buf
                .get(pos..pos + len.div_ceil(8))
                .ok_or_else(|| malformed("truncated segment payload"))?;
            pos += payload.len();
            let bits = BitVector::from_bytes(payload, len)
                .map_err(|e| Error::MalformedReport(e.to_string()))?;
            records.push(SegmentRecord { position, bits });
        }
        if pos != buf.len() {
            return Err(malformed("trailing bytes after records"));
        }
        Ok(WireReport {
            version,
            client_id,
            records,
        })
    }

    /// One-line JSON debug form with hex payloads.
    pub fn to_json_line(&self) -> String {
        let json = JsonReport {
            version: self.version,
            client_id: self.client_id,
            records: self
                .records
                .iter()
                .map(|r| JsonRecord {
                    j: r.position,
                    bits: r.bits.len() as u16,
                    hex: to_hex(&r.bits.to_bytes()),
                })
                .collect(),
        };
        serde_json::to_string(&json).expect("report serializes")
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        let json: JsonReport =
            serde_json::from_str(line).map_err(|e| Error::MalformedReport(e.to_string()))?;
        let records = json
            .records
            .into_iter()
            .map(|r| {
                let bits = BitVector::from_bytes(&from_hex(&r.hex)?, r.bits as usize)
                    .map_err(|e| Error::MalformedReport(e.to_string()))?;
                Ok(SegmentRecord {
                    position: r.j,
                    bits,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(WireReport {
            version: json.version,
            client_id: json.client_id,
            records,
        })
    }
}

/// Uniform in-place permutation of a report's records.
pub fn shuffle_segments<R: Rng + ?Sized>(records: &mut [SegmentRecord], rng: &mut R) {
    records.shuffle(rng);
}

/// Per-client state. Each client reports a given item at most once.
#[derive(Debug, Clone)]
pub struct ClientState {
    client_id: u64,
    encoder: EncoderConfig,
    mech: MechanismParams,
    dict: Arc<BucketDictionary>,
    reported: HashSet<String>,
}

impl ClientState {
    pub fn new(
        client_id: u64,
        encoder: EncoderConfig,
        mech: MechanismParams,
        dict: Arc<BucketDictionary>,
    ) -> Result<Self> {
        encoder.validate()?;
        mech.validate()?;
        if encoder.l != mech.l {
            return Err(Error::InvalidInput(format!(
                "encoder l = {} but mechanism l = {}",
                encoder.l, mech.l
            )));
        }
        Ok(ClientState {
            client_id,
            encoder,
            mech,
            dict,
            reported: HashSet::new(),
        })
    }

    pub fn client_id(&self) -> u64 {
        self.client_id
    }

    pub fn reported_count(&self) -> usize {
        self.reported.len()
    }

    pub fn submit<R: Rng + ?Sized>(&mut self, value: &Value, rng: &mut R) -> Result<Submission> {
        let key = value.canonical_key();
        if self.reported.contains(&key) {
            return Ok(Submission::AlreadyReported);
        }
        let bf = encoding::encode(value, &self.encoder)?;
        let noisy = perturb(&bf, &self.mech, &self.dict, rng)?;
        let mut records = Vec::with_capacity(noisy.len() * self.mech.m);
        for filter in noisy.filters() {
            let segs = encoding::segment(filter, self.mech.m)?;
            for (j, bits) in segs.into_segments().into_iter().enumerate() {
                records.push(SegmentRecord {
                    position: j as u8,
                    bits,
                });
            }
        }
        shuffle_segments(&mut records, rng);
        self.reported.insert(key);
        Ok(Submission::Report(WireReport {
            version: WIRE_VERSION,
            client_id: self.client_id,
            records,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ldp::DictionaryMode;
    use crate::rng;
    use std::collections::HashMap;

    fn client(p: f64, s_t: f64) -> ClientState {
        let encoder = EncoderConfig::default();
        let mech = MechanismParams {
            buckets: 64,
            s_t,
            m: 3,
            flip_override: Some(p),
            ..Default::default()
        };
        let dict = BucketDictionary::build(30, 64, 4, 8, DictionaryMode::Sampled).unwrap();
        ClientState::new(42, encoder, mech, Arc::new(dict)).unwrap()
    }

    #[test]
    fn repeat_submissions_are_suppressed() {
        let mut c = client(0.1, 0.8);
        let mut rng = rng::seeded(1);
        assert!(matches!(
            c.submit(&"peter".into(), &mut rng).unwrap(),
            Submission::Report(_)
        ));
        assert_eq!(
            c.submit(&" Peter".into(), &mut rng).unwrap(),
            Submission::AlreadyReported
        );
        assert!(matches!(
            c.submit(&"pete".into(), &mut rng).unwrap(),
            Submission::Report(_)
        ));
        assert_eq!(c.reported_count(), 2);
    }

    #[test]
    fn report_holds_m_records_per_filter() {
        let mut c = client(0.3, 0.8);
        let mut rng = rng::seeded(2);
        for i in 0..50 {
            let r = c
                .submit(&Value::Number(i as f64), &mut rng)
                .unwrap()
                .into_report()
                .unwrap();
            assert_eq!(r.records.len() % 3, 0);
            let mut per_position = HashMap::new();
            for rec in &r.records {
                *per_position.entry(rec.position).or_insert(0) += 1;
            }
            assert!(per_position.values().all(|&n| n == r.records.len() / 3));
        }
    }

    #[test]
    fn noiseless_report_reassembles_the_encoding() {
        let mut c = client(0.0, 1.0);
        let mut rng = rng::seeded(3);
        let r = c
            .submit(&"shakespeare".into(), &mut rng)
            .unwrap()
            .into_report()
            .unwrap();
        let mut recs = r.records.clone();
        recs.sort_by_key(|r| r.position);
        let whole = BitVector::concat(recs.iter().map(|r| &r.bits));
        assert_eq!(
            whole,
            encoding::encode_string("shakespeare", &EncoderConfig::default()).unwrap()
        );
    }

    #[test]
    fn wire_round_trips() {
        let mut c = client(0.2, 0.8);
        let mut rng = rng::seeded(4);
        let r = c
            .submit(&"values".into(), &mut rng)
            .unwrap()
            .into_report()
            .unwrap();
        let bytes = r.to_bytes();
        assert_eq!(bytes[0], WIRE_VERSION);
        assert_eq!(WireReport::from_bytes(&bytes).unwrap(), r);
        assert_eq!(WireReport::from_json_line(&r.to_json_line()).unwrap(), r);
        assert!(WireReport::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(WireReport::from_bytes(&extra).is_err());
    }

    #[test]
    fn shuffle_is_a_permutation_and_seeded() {
        let recs: Vec<SegmentRecord> = (0..6)
            .map(|j| SegmentRecord {
                position: j,
                bits: BitVector::from_u64(j as u64, 4),
            })
            .collect();
        let mut a = recs.clone();
        let mut b = recs.clone();
        shuffle_segments(&mut a, &mut rng::seeded(9));
        shuffle_segments(&mut b, &mut rng::seeded(9));
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort_by_key(|r| r.position);
        assert_eq!(sorted, recs);
    }

    #[test]
    fn shuffle_orders_are_uniform() {
        let recs: Vec<SegmentRecord> = (0..4)
            .map(|j| SegmentRecord {
                position: j,
                bits: BitVector::zeros(1),
            })
            .collect();
        let mut rng = rng::seeded(10);
        let mut freq: HashMap<Vec<u8>, usize> = HashMap::new();
        let n = 10_000;
        for _ in 0..n {
            let mut r = recs.clone();
            shuffle_segments(&mut r, &mut rng);
            *freq
                .entry(r.iter().map(|x| x.position).collect())
                .or_default() += 1;
        }
        assert_eq!(freq.len(), 24);
        let p = 1.0 / 24.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for &count in freq.values() {
            assert!((count as f64 - n as f64 * p).abs() <= 3.0 * sigma + 1.0);
        }
    }
}
