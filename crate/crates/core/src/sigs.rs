//! Signature interface and the deterministic keyed-hash test scheme.
//!
//! Signers are identified by their position in the sorted node set. An
//! aggregate signature carries a [`BitArray`] of contributing signers and one
//! tag per set bit, so aggregates may cover different payloads per signer.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::overlay::NodeId;
use crate::rng::{hash_parts, Seed};

/// Fixed-length bit array, bit `i` stored in byte `i / 8` at position `i % 8`.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct BitArray {
    len: usize,
    bytes: Vec<u8>,
}

impl BitArray {
    pub fn new(len: usize) -> Self {
        BitArray { len, bytes: vec![0; len.div_ceil(8)] }
    }

    pub fn from_indices(len: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut bits = BitArray::new(len);
        for i in indices {
            bits.set(i, true);
        }
        bits
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, index: usize) -> bool {
        index < self.len && self.bytes[index / 8] & (1 << (index % 8)) != 0
    }

    pub fn set(&mut self, index: usize, value: bool) {
        assert!(index < self.len, "bit {index} out of range {}", self.len);
        if value {
            self.bytes[index / 8] |= 1 << (index % 8);
        } else {
            self.bytes[index / 8] &= !(1 << (index % 8));
        }
    }

    pub fn count_ones(&self) -> usize {
        self.bytes.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(move |&i| self.get(i))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Rebuilds from raw bytes; stray bits past `len` are rejected.
    pub fn from_bytes(len: usize, bytes: Vec<u8>) -> Option<Self> {
        if bytes.len() != len.div_ceil(8) {
            return None;
        }
        if !len.is_multiple_of(8) {
            if let Some(&last) = bytes.last() {
                if last >> (len % 8) != 0 {
                    return None;
                }
            }
        }
        Some(BitArray { len, bytes })
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.bytes)
    }

    pub fn union(&self, other: &BitArray) -> BitArray {
        assert_eq!(self.len, other.len);
        BitArray {
            len: self.len,
            bytes: self.bytes.iter().zip(&other.bytes).map(|(a, b)| a | b).collect(),
        }
    }
}

impl fmt::Debug for BitArray {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitArray[{}; {}]", self.len, self.to_hex())
    }
}

#[derive(Serialize, Deserialize)]
struct BitArrayRepr {
    len: usize,
    hex: String,
}

impl Serialize for BitArray {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        BitArrayRepr { len: self.len, hex: self.to_hex() }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BitArray {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = BitArrayRepr::deserialize(deserializer)?;
        let bytes = hex::decode(&repr.hex).map_err(serde::de::Error::custom)?;
        BitArray::from_bytes(repr.len, bytes).ok_or_else(|| serde::de::Error::custom("bit array length mismatch"))
    }
}

macro_rules! hex_bytes32 {
    ($name:ident) => {
        #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(pub [u8; 32]);

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({}..)", stringify!($name), &hex::encode(self.0)[..12])
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.serialize_str(&hex::encode(self.0))
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let s = String::deserialize(deserializer)?;
                let raw = hex::decode(&s).map_err(serde::de::Error::custom)?;
                let bytes: [u8; 32] =
                    raw.try_into().map_err(|_| serde::de::Error::custom("expected 32 bytes"))?;
                Ok($name(bytes))
            }
        }
    };
}

hex_bytes32!(Signature);
hex_bytes32!(PublicKey);

/// Signing handle. Deliberately not serializable.
#[derive(Clone)]
pub struct SecretKey([u8; 32]);

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

#[derive(Clone, Debug)]
pub struct KeyPair {
    pub owner: NodeId,
    pub public: PublicKey,
    secret: SecretKey,
}

impl KeyPair {
    pub fn secret(&self) -> &SecretKey {
        &self.secret
    }
}

/// Aggregate of per-signer signatures: the signer bit array plus one tag per
/// set bit, in ascending signer order.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AggSignature {
    pub signers: BitArray,
    pub tags: Vec<Signature>,
}

impl fmt::Debug for AggSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AggSignature({} signers)", self.signers.count_ones())
    }
}

impl AggSignature {
    /// Aggregate over nobody, sized for `width` signers.
    pub fn empty(width: usize) -> Self {
        AggSignature { signers: BitArray::new(width), tags: Vec::new() }
    }

    pub fn signer_count(&self) -> usize {
        self.signers.count_ones()
    }

    /// `(signer index, tag)` pairs in index order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, &Signature)> {
        self.signers.ones().zip(self.tags.iter())
    }

    /// Structural consistency: one tag per set bit.
    pub fn is_well_formed(&self) -> bool {
        self.tags.len() == self.signers.count_ones()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SigError {
    #[error("signer {0} appears twice")]
    DuplicateSigner(usize),
    #[error("signer {index} is outside the signer range {width}")]
    SignerOutOfRange { index: usize, width: usize },
    #[error("nothing to aggregate")]
    Empty,
    #[error("aggregates disagree on the signature of signer {0}")]
    ConflictingShares(usize),
    #[error("aggregates have different widths")]
    WidthMismatch,
}

/// Signature scheme contract. Signer identity is the index into the sorted
/// node set the scheme was built for.
pub trait SignatureScheme: Send + Sync {
    /// Number of signer slots.
    fn width(&self) -> usize;

    fn sign(&self, key: &KeyPair, payload: &[u8]) -> Signature;

    fn verify(&self, public: &PublicKey, payload: &[u8], sig: &Signature) -> bool;

    fn public_key(&self, signer: usize) -> Option<&PublicKey>;

    /// Combines individual signatures. Signer indices must be distinct.
    fn aggregate(&self, parts: &[(Signature, usize)]) -> Result<AggSignature, SigError>;

    /// Combines aggregates. Overlapping signers are allowed only when their
    /// shares coincide.
    fn merge(&self, parts: &[&AggSignature]) -> Result<AggSignature, SigError>;

    /// True iff every signer in `agg` signed `payload_of(signer)`.
    fn verify_aggregate(&self, agg: &AggSignature, payload_of: &dyn Fn(usize) -> Option<Vec<u8>>) -> bool;
}

/// Test scheme: the signature on `m` by a key with secret `s` is
/// `SHA-256(s || m)`. Verification recomputes the tag through the keyring
/// held by the scheme, so only holders of a [`KeyPair`] can produce valid
/// signatures for that key.
#[derive(Debug)]
pub struct KeyedHashScheme {
    publics: Vec<PublicKey>,
    secrets: Vec<SecretKey>,
    by_public: HashMap<PublicKey, usize>,
}

/// Deterministic key derivation from `(scenario seed, node id)`.
pub fn derive_keypair(seed: &Seed, owner: NodeId) -> KeyPair {
    let secret = hash_parts(&[b"carnot/secret", &seed.0, &owner.0.to_be_bytes()]);
    let public = hash_parts(&[b"carnot/public", &secret]);
    KeyPair { owner, public: PublicKey(public), secret: SecretKey(secret) }
}

impl KeyedHashScheme {
    /// Builds keys for a sorted node set. Returns the scheme and the key pairs
    /// in node order.
    pub fn generate(seed: &Seed, nodes: &[NodeId]) -> (Self, Vec<KeyPair>) {
        let keys: Vec<KeyPair> = nodes.iter().map(|&n| derive_keypair(seed, n)).collect();
        let scheme = KeyedHashScheme {
            publics: keys.iter().map(|k| k.public).collect(),
            secrets: keys.iter().map(|k| k.secret.clone()).collect(),
            by_public: keys.iter().enumerate().map(|(i, k)| (k.public, i)).collect(),
        };
        (scheme, keys)
    }

    fn tag(secret: &SecretKey, payload: &[u8]) -> Signature {
        Signature(hash_parts(&[b"carnot/sig", &secret.0, payload]))
    }

    fn check_share(&self, signer: usize, payload: &[u8], sig: &Signature) -> bool {
        match self.secrets.get(signer) {
            Some(secret) => Self::tag(secret, payload) == *sig,
            None => false,
        }
    }
}

impl SignatureScheme for KeyedHashScheme {
    fn width(&self) -> usize {
        self.publics.len()
    }

    fn sign(&self, key: &KeyPair, payload: &[u8]) -> Signature {
        Self::tag(&key.secret, payload)
    }

    fn verify(&self, public: &PublicKey, payload: &[u8], sig: &Signature) -> bool {
        match self.by_public.get(public) {
            Some(&signer) => self.check_share(signer, payload, sig),
            None => false,
        }
    }

    fn public_key(&self, signer: usize) -> Option<&PublicKey> {
        self.publics.get(signer)
    }

    fn aggregate(&self, parts: &[(Signature, usize)]) -> Result<AggSignature, SigError> {
        if parts.is_empty() {
            return Err(SigError::Empty);
        }
        let width = self.width();
        let mut sorted: Vec<(usize, Signature)> = parts.iter().map(|&(s, i)| (i, s)).collect();
        sorted.sort_by_key(|&(i, _)| i);
        for w in sorted.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(SigError::DuplicateSigner(w[0].0));
            }
        }
        let mut signers = BitArray::new(width);
        for &(i, _) in &sorted {
            if i >= width {
                return Err(SigError::SignerOutOfRange { index: i, width });
            }
            signers.set(i, true);
        }
        Ok(AggSignature { signers, tags: sorted.into_iter().map(|(_, s)| s).collect() })
    }

    fn merge(&self, parts: &[&AggSignature]) -> Result<AggSignature, SigError> {
        let width = self.width();
        let mut shares: std::collections::BTreeMap<usize, Signature> = Default::default();
        for agg in parts {
            if agg.signers.len() != width {
                return Err(SigError::WidthMismatch);
            }
            for (i, tag) in agg.entries() {
                match shares.get(&i) {
                    Some(existing) if existing != tag => return Err(SigError::ConflictingShares(i)),
                    _ => {
                        shares.insert(i, *tag);
                    }
                }
            }
        }
        let signers = BitArray::from_indices(width, shares.keys().copied());
        Ok(AggSignature { signers, tags: shares.into_values().collect() })
    }

    fn verify_aggregate(&self, agg: &AggSignature, payload_of: &dyn Fn(usize) -> Option<Vec<u8>>) -> bool {
        if !agg.is_well_formed() || agg.signers.len() != self.width() {
            return false;
        }
        agg.entries().all(|(i, tag)| match payload_of(i) {
            Some(payload) => self.check_share(i, &payload, tag),
            None => false,
        })
    }
}

/// Wraps a scheme and counts verification calls. One single-signature check
/// or one aggregate check counts as one verified authenticator.
pub struct CountingScheme {
    inner: Arc<dyn SignatureScheme>,
    verified: AtomicU64,
}

impl CountingScheme {
    pub fn new(inner: Arc<dyn SignatureScheme>) -> Self {
        CountingScheme { inner, verified: AtomicU64::new(0) }
    }

    pub fn verified(&self) -> u64 {
        self.verified.load(Ordering::Relaxed)
    }
}

impl fmt::Debug for CountingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CountingScheme(verified={})", self.verified())
    }
}

impl SignatureScheme for CountingScheme {
    fn width(&self) -> usize {
        self.inner.width()
    }

    fn sign(&self, key: &KeyPair, payload: &[u8]) -> Signature {
        self.inner.sign(key, payload)
    }

    fn verify(&self, public: &PublicKey, payload: &[u8], sig: &Signature) -> bool {
        self.verified.fetch_add(1, Ordering::Relaxed);
        self.inner.verify(public, payload, sig)
    }

    fn public_key(&self, signer: usize) -> Option<&PublicKey> {
        self.inner.public_key(signer)
    }

    fn aggregate(&self, parts: &[(Signature, usize)]) -> Result<AggSignature, SigError> {
        self.inner.aggregate(parts)
    }

    fn merge(&self, parts: &[&AggSignature]) -> Result<AggSignature, SigError> {
        self.inner.merge(parts)
    }

    fn verify_aggregate(&self, agg: &AggSignature, payload_of: &dyn Fn(usize) -> Option<Vec<u8>>) -> bool {
        self.verified.fetch_add(1, Ordering::Relaxed);
        self.inner.verify_aggregate(agg, payload_of)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::overlay::node_range;

    fn setup(n: usize) -> (KeyedHashScheme, Vec<KeyPair>) {
        KeyedHashScheme::generate(&Seed::from_u64(11), &node_range(n))
    }

    #[test]
    fn sign_verify_round_trip() {
        let (scheme, keys) = setup(4);
        let sig = scheme.sign(&keys[0], b"payload");
        assert!(scheme.verify(&keys[0].public, b"payload", &sig));
        assert!(!scheme.verify(&keys[1].public, b"payload", &sig));
        let mut flipped = b"payload".to_vec();
        flipped[0] ^= 1;
        assert!(!scheme.verify(&keys[0].public, &flipped, &sig));
        assert!(!scheme.verify(&PublicKey([0; 32]), b"payload", &sig));
    }

    #[test]
    fn aggregate_singleton_and_popcount() {
        let (scheme, keys) = setup(8);
        let msg = b"m".to_vec();
        let one = scheme.aggregate(&[(scheme.sign(&keys[3], &msg), 3)]).unwrap();
        assert_eq!(one.signer_count(), 1);
        assert!(scheme.verify_aggregate(&one, &|_| Some(msg.clone())));

        let parts: Vec<_> = [0, 2, 4, 5, 7].iter().map(|&i| (scheme.sign(&keys[i], &msg), i)).collect();
        let agg = scheme.aggregate(&parts).unwrap();
        assert_eq!(agg.signer_count(), 5);
        assert!(scheme.verify_aggregate(&agg, &|_| Some(msg.clone())));

        let mut dropped = agg.clone();
        dropped.signers.set(4, false);
        assert!(!scheme.verify_aggregate(&dropped, &|_| Some(msg.clone())));
    }

    #[test]
    fn aggregate_rejects_duplicates_and_empty() {
        let (scheme, keys) = setup(3);
        let s = scheme.sign(&keys[1], b"x");
        assert_eq!(scheme.aggregate(&[(s, 1), (s, 1)]), Err(SigError::DuplicateSigner(1)));
        assert_eq!(scheme.aggregate(&[]), Err(SigError::Empty));
        assert!(matches!(scheme.aggregate(&[(s, 9)]), Err(SigError::SignerOutOfRange { .. })));
    }

    #[test]
    fn per_signer_payloads_and_merge() {
        let (scheme, keys) = setup(6);
        let payload = |i: usize| format!("view-{i}").into_bytes();
        let a = scheme.aggregate(&[(scheme.sign(&keys[0], &payload(0)), 0), (scheme.sign(&keys[1], &payload(1)), 1)]).unwrap();
        let b = scheme.aggregate(&[(scheme.sign(&keys[1], &payload(1)), 1), (scheme.sign(&keys[4], &payload(4)), 4)]).unwrap();
        let merged = scheme.merge(&[&a, &b]).unwrap();
        assert_eq!(merged.signers.ones().collect::<Vec<_>>(), vec![0, 1, 4]);
        assert!(scheme.verify_aggregate(&merged, &|i| Some(payload(i))));
        assert!(!scheme.verify_aggregate(&merged, &|_| Some(payload(0))));

        let bad = scheme.aggregate(&[(scheme.sign(&keys[1], b"other"), 1)]).unwrap();
        assert_eq!(scheme.merge(&[&a, &bad]), Err(SigError::ConflictingShares(1)));
    }

    #[test]
    fn bit_array_bytes_round_trip() {
        let bits = BitArray::from_indices(11, [0, 3, 10]);
        assert_eq!(bits.count_ones(), 3);
        let back = BitArray::from_bytes(11, bits.as_bytes().to_vec()).unwrap();
        assert_eq!(back, bits);
        assert!(BitArray::from_bytes(11, vec![0, 0xff]).is_none());
        let json = serde_json::to_string(&bits).unwrap();
        assert_eq!(serde_json::from_str::<BitArray>(&json).unwrap(), bits);
    }
}
