//! Fixed-length bit vectors used for Bloom filters and their segments.
//!
//! The wire form is big-endian with bit index 0 stored in the most
//! significant bit of the first byte, padded with zero bits to a whole
//! number of bytes.

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitVector {
    words: Vec<u64>,
    len: usize,
}

impl BitVector {
    pub fn zeros(len: usize) -> Self {
        BitVector {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut v = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                v.set(i);
            }
        }
        v
    }

    /// Builds a vector from the low `len` bits of `value`, with bit index 0
    /// taken from the most significant of those bits.
    pub fn from_u64(value: u64, len: usize) -> Self {
        assert!(len <= 64, "from_u64 supports at most 64 bits");
        let mut v = Self::zeros(len);
        for i in 0..len {
            if (value >> (len - 1 - i)) & 1 == 1 {
                v.set(i);
            }
        }
        v
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize) {
        assert!(
            i < self.len,
            "bit index {i} out of range for length {}",
            self.len
        );
        self.words[i / 64] |= 1 << (i % 64);
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        assert!(
            i < self.len,
            "bit index {i} out of range for length {}",
            self.len
        );
        self.words[i / 64] ^= 1 << (i % 64);
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(move |&i| self.get(i))
    }

    fn check_len(&self, other: &BitVector) -> Result<()> {
        if self.len != other.len {
            return Err(invalid(format!(
                "bit vector length mismatch: {} vs {}",
                self.len, other.len
            )));
        }
        Ok(())
    }

    /// Popcount of the bitwise AND.
    pub fn and_count(&self, other: &BitVector) -> Result<usize> {
        self.check_len(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum())
    }

    pub fn hamming(&self, other: &BitVector) -> Result<usize> {
        self.check_len(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum())
    }

    /// Copies bits `[start, start + len)` into a new vector.
    pub fn slice(&self, start: usize, len: usize) -> BitVector {
        assert!(start + len <= self.len, "slice out of range");
        let mut out = BitVector::zeros(len);
        for i in 0..len {
            if self.get(start + i) {
                out.set(i);
            }
        }
        out
    }

    pub fn concat<'a, I>(parts: I) -> BitVector
    where
        I: IntoIterator<Item = &'a BitVector>,
    {
        let parts: Vec<&BitVector> = parts.into_iter().collect();
        let total = parts.iter().map(|p| p.len).sum();
        let mut out = BitVector::zeros(total);
        let mut offset = 0;
        for p in parts {
            for i in p.ones() {
                out.set(offset + i);
            }
            offset += p.len;
        }
        out
    }

    pub fn byte_len(&self) -> usize {
        self.len.div_ceil(8)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.byte_len()];
        for i in self.ones() {
            out[i / 8] |= 0x80 >> (i % 8);
        }
        out
    }

    /// Inverse of [`BitVector::to_bytes`]. Padding bits must be zero.
    pub fn from_bytes(bytes: &[u8], len: usize) -> Result<Self> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::Format(format!(
                "expected {} bytes for {len} bits, got {}",
                len.div_ceil(8),
                bytes.len()
            )));
        }
        let mut out = BitVector::zeros(len);
        for (byte_idx, &byte) in bytes.iter().enumerate() {
            for bit in 0..8 {
                if byte & (0x80 >> bit) == 0 {
                    continue;
                }
                let i = byte_idx * 8 + bit;
                if i >= len {
                    return Err(Error::Format("non-zero padding bits".into()));
                }
                out.set(i);
            }
        }
        Ok(out)
    }
}

impl fmt::Display for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.len {
            f.write_str(if self.get(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitVector({self})")
    }
}

impl FromStr for BitVector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(invalid(format!(
                    "unexpected character {other:?} in bit string"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BitVector::from_bools(&bits))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wire_order_is_msb_first() {
        let v: BitVector = "1000000001".parse().unwrap();
        assert_eq!(v.to_bytes(), vec![0x80, 0x40]);
        assert_eq!(BitVector::from_bytes(&[0x80, 0x40], 10).unwrap(), v);
    }

    #[test]
    fn from_bytes_rejects_dirty_padding() {
        assert!(BitVector::from_bytes(&[0x01], 7).is_err());
        assert!(BitVector::from_bytes(&[0x00, 0x00], 7).is_err());
    }

    #[test]
    fn from_u64_matches_string_form() {
        assert_eq!(BitVector::from_u64(0x0F, 8).to_string(), "00001111");
    }

    #[test]
    fn mismatched_lengths_are_errors() {
        let a = BitVector::zeros(8);
        let b = BitVector::zeros(9);
        assert!(matches!(a.and_count(&b), Err(Error::InvalidInput(_))));
        assert!(a.hamming(&b).is_err());
    }

    proptest! {
        #[test]
        fn bytes_round_trip(bits in proptest::collection::vec(any::<bool>(), 0..200)) {
            let v = BitVector::from_bools(&bits);
            prop_assert_eq!(BitVector::from_bytes(&v.to_bytes(), v.len()).unwrap(), v.clone());
            prop_assert_eq!(v.to_string().parse::<BitVector>().unwrap(), v);
        }
    }
}
