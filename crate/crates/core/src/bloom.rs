//! Per-d-tree Bloom filters using double hashing over one 128-bit key hash.

use xxhash_rust::xxh3::xxh3_128;

use crate::error::{Error, Result};
use crate::types::Key;

/// 128-bit hash of a key, split into the two probe generators.
pub fn key_hash(key: &Key) -> u128 {
    xxh3_128(key.as_bytes())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BloomFilter {
    bits: Vec<u8>,
    m: u64,
    h: u32,
    n: u64,
}

impl BloomFilter {
    /// Builds a filter of `k` bits per key (at least 8 bits) probed `h` times.
    pub fn build<'a>(keys: impl IntoIterator<Item = &'a Key>, k: usize, h: u32) -> Self {
        let hashes: Vec<u128> = keys.into_iter().map(key_hash).collect();
        Self::from_hashes(&hashes, k, h)
    }

    pub fn from_hashes(hashes: &[u128], k: usize, h: u32) -> Self {
        let n = hashes.len() as u64;
        let m = (k as u64 * n).max(8);
        let mut f = BloomFilter { bits: vec![0; m.div_ceil(8) as usize], m, h, n };
        for &x in hashes {
            for bit in f.probes(x) {
                f.bits[(bit / 8) as usize] |= 1 << (bit % 8);
            }
        }
        f
    }

    fn probes(&self, x: u128) -> impl Iterator<Item = u64> {
        let h1 = x as u64;
        let h2 = ((x >> 64) as u64) | 1;
        let m = self.m;
        (0..self.h as u64).map(move |i| h1.wrapping_add(i.wrapping_mul(h2)) % m)
    }

    pub fn may_contain(&self, key: &Key) -> bool {
        self.may_contain_hash(key_hash(key))
    }

    pub fn may_contain_hash(&self, x: u128) -> bool {
        if self.n == 0 {
            return false;
        }
        self.probes(x).all(|bit| self.bits[(bit / 8) as usize] & (1 << (bit % 8)) != 0)
    }

    pub fn bit_len(&self) -> u64 {
        self.m
    }

    pub fn hashes(&self) -> u32 {
        self.h
    }

    pub fn build_count(&self) -> u64 {
        self.n
    }

    /// `h` (u32 BE) ∥ `m` (u64 BE) ∥ `n` (u64 BE) ∥ bit array.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.bits.len());
        out.extend_from_slice(&self.h.to_be_bytes());
        out.extend_from_slice(&self.m.to_be_bytes());
        out.extend_from_slice(&self.n.to_be_bytes());
        out.extend_from_slice(&self.bits);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Codec(format!("bloom filter: {m}"));
        if bytes.len() < 20 {
            return Err(bad("truncated header"));
        }
        let h = u32::from_be_bytes(bytes[0..4].try_into().unwrap());
        let m = u64::from_be_bytes(bytes[4..12].try_into().unwrap());
        let n = u64::from_be_bytes(bytes[12..20].try_into().unwrap());
        if h == 0 || m < 8 {
            return Err(bad("invalid parameters"));
        }
        let bits = &bytes[20..];
        if bits.len() as u64 != m.div_ceil(8) {
            return Err(bad("bit array length mismatch"));
        }
        Ok(BloomFilter { bits: bits.to_vec(), m, h, n })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(v: u64) -> Key {
        Key::from_u64(v, 8)
    }

    #[test]
    fn no_false_negatives_small() {
        let keys = [k(1), k(2), k(8)];
        let f = BloomFilter::build(keys.iter(), 8, 3);
        assert!(keys.iter().all(|x| f.may_contain(x)));
        assert_eq!(f.bit_len(), 24);
    }

    #[test]
    fn empty_filter_rejects_everything() {
        let f = BloomFilter::build(std::iter::empty(), 8, 3);
        assert_eq!(f.bit_len(), 8);
        assert!((0..1000).all(|i| !f.may_contain(&k(i))));
    }

    #[test]
    fn serialization_round_trip() {
        let keys: Vec<Key> = (0..100).map(|i| k(i * 7)).collect();
        let f = BloomFilter::build(keys.iter(), 8, 3);
        let bytes = f.to_bytes();
        assert_eq!(bytes.len(), 20 + 100);
        assert_eq!(&bytes[0..4], &3u32.to_be_bytes());
        assert_eq!(BloomFilter::from_bytes(&bytes).unwrap(), f);
        assert!(BloomFilter::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn deterministic_builds() {
        let keys: Vec<Key> = (0..500).map(|i| k(i * 31 + 5)).collect();
        assert_eq!(BloomFilter::build(keys.iter(), 8, 3), BloomFilter::build(keys.iter(), 8, 3));
    }
}
