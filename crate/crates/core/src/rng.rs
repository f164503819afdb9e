//! Portable deterministic randomness.
//!
//! Every random choice in the crate (overlay shuffles, leader election, key
//! derivation, adversary placement, network delays) is drawn from a
//! ChaCha20 keystream keyed by a 32-byte [`Seed`]. Integers in `[0, bound)` are
//! produced by rejection sampling on raw `u64` words, so the output is a pure
//! function of the seed on every platform and does not depend on the
//! sampling internals of any `rand` release.

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

/// 32-byte seed. Serialized as lowercase hex.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Seed(pub [u8; 32]);

impl Seed {
    pub const ZERO: Seed = Seed([0u8; 32]);

    /// Right-aligned big-endian embedding of an integer.
    pub fn from_u64(value: u64) -> Seed {
        let mut bytes = [0u8; 32];
        bytes[24..].copy_from_slice(&value.to_be_bytes());
        Seed(bytes)
    }

    /// Derives a child seed from this one and a domain label.
    pub fn derive(&self, label: &str, index: u64) -> Seed {
        Seed(hash_parts(&[b"carnot/derive", label.as_bytes(), &self.0, &index.to_be_bytes()]))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Debug for Seed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Seed({})", self.to_hex())
    }
}

impl fmt::Display for Seed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SeedParseError {
    #[error("seed is not valid hex: {0}")]
    NotHex(String),
    #[error("seed is longer than 32 bytes ({0} hex digits)")]
    TooLong(usize),
}

impl FromStr for Seed {
    type Err = SeedParseError;

    /// Accepts up to 64 hex digits with an optional `0x` prefix. Shorter
    /// inputs are left-padded with zeros (`0xAB` is the integer 0xAB).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.trim().trim_start_matches("0x").trim_start_matches("0X");
        if digits.len() > 64 {
            return Err(SeedParseError::TooLong(digits.len()));
        }
        if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(SeedParseError::NotHex(s.to_string()));
        }
        let padded = format!("{digits:0>64}");
        let raw = hex::decode(&padded).map_err(|_| SeedParseError::NotHex(s.to_string()))?;
        let mut bytes = [0u8; 32];
        bytes.copy_from_slice(&raw);
        Ok(Seed(bytes))
    }
}

impl Serialize for Seed {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Seed {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// SHA-256 over length-prefixed parts, so `["ab", "c"]` and `["a", "bc"]` differ.
pub fn hash_parts(parts: &[&[u8]]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_be_bytes());
        hasher.update(part);
    }
    hasher.finalize().into()
}

/// Plain SHA-256.
pub fn sha256(data: &[u8]) -> [u8; 32] {
    Sha256::digest(data).into()
}

/// Seeded ChaCha20 generator with portable integer and float sampling.
#[derive(Clone, Debug)]
pub struct DetRng {
    inner: ChaCha20Rng,
}

impl DetRng {
    pub fn new(seed: &Seed) -> Self {
        DetRng { inner: ChaCha20Rng::from_seed(seed.0) }
    }

    /// Generator for an independent stream labelled by `(label, index)`.
    pub fn derived(seed: &Seed, label: &str, index: u64) -> Self {
        DetRng::new(&seed.derive(label, index))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform integer in `[0, bound)`. `bound` must be positive.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "DetRng::below called with zero bound");
        // Largest multiple of `bound` representable in u64 arithmetic.
        let zone = u64::MAX - (u64::MAX - bound + 1) % bound;
        loop {
            let x = self.inner.next_u64();
            if x <= zone {
                return x % bound;
            }
        }
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn range_inclusive(&mut self, lo: u64, hi: u64) -> u64 {
        debug_assert!(lo <= hi);
        if hi - lo == u64::MAX {
            return self.next_u64();
        }
        lo + self.below(hi - lo + 1)
    }

    /// Uniform float in `[0, 1)` with 53 random bits.
    pub fn unit_f64(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit_f64() < p
    }

    /// In-place Fisher-Yates: for `i` from the last index down to 1, swap
    /// `items[i]` with `items[j]`, `j` uniform in `[0, i]`.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_parse_pads_left() {
        let s: Seed = "0xAB".parse().unwrap();
        assert_eq!(s, Seed::from_u64(0xab));
        assert_eq!(s.to_hex().len(), 64);
        assert!("xyz".parse::<Seed>().is_err());
        assert!("f".repeat(65).parse::<Seed>().is_err());
    }

    #[test]
    fn below_stays_in_range_and_is_deterministic() {
        let mut a = DetRng::new(&Seed::from_u64(7));
        let mut b = DetRng::new(&Seed::from_u64(7));
        for bound in [1u64, 2, 3, 10, 1 << 40, u64::MAX] {
            let x = a.below(bound);
            assert!(x < bound);
            assert_eq!(x, b.below(bound));
        }
    }

    #[test]
    fn hash_parts_is_length_prefixed() {
        assert_ne!(hash_parts(&[b"ab", b"c"]), hash_parts(&[b"a", b"bc"]));
    }

    #[test]
    fn unit_f64_in_unit_interval() {
        let mut r = DetRng::new(&Seed::ZERO);
        for _ in 0..1000 {
            let u = r.unit_f64();
            assert!((0.0..1.0).contains(&u));
        }
    }
}
