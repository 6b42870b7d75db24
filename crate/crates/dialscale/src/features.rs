//! Hashed n-gram session featurizer.
//!
//! A session is flattened to one token stream with a reserved separator
//! between utterances. Unigram counts are taken over the real tokens;
//! bigrams run over the full stream including the separator, so utterance
//! adjacency is encoded and reordering the turns changes the vector.
//!
//! Hashing is FNV-1a 64-bit (offset 0xcbf29ce484222325, prime 0x100000001b3)
//! over a fixed per-arity prefix byte, masked to the low `h` bits, so vectors
//! are reproducible across runs and platforms.

use crate::corpus::Session;
use crate::error::{Error, Result};

/// Reserved separator between utterances in the hashed token stream. The
/// tokenizer never emits `<` or `>`, so it cannot collide with a real token.
pub const SEPARATOR_TOKEN: &str = "<sep>";

/// Allowed range for the hash width `h` (number of bucket bits).
pub const MIN_HASH_BITS: u32 = 8;
pub const MAX_HASH_BITS: u32 = 24;

/// Default hash width: 2^18 buckets.
pub const DEFAULT_HASH_BITS: u32 = 18;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const UNIGRAM_TAG: u8 = 0x01;
const BIGRAM_TAG: u8 = 0x02;
const FIELD_SEP: u8 = 0x1f;

/// FNV-1a 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

fn unigram_bucket(token: &str, mask: u64) -> u32 {
    let mut buf = Vec::with_capacity(1 + token.len());
    buf.push(UNIGRAM_TAG);
    buf.extend_from_slice(token.as_bytes());
    (fnv1a64(&buf) & mask) as u32
}

fn bigram_bucket(a: &str, b: &str, mask: u64) -> u32 {
    let mut buf = Vec::with_capacity(2 + a.len() + b.len());
    buf.push(BIGRAM_TAG);
    buf.extend_from_slice(a.as_bytes());
    buf.push(FIELD_SEP);
    buf.extend_from_slice(b.as_bytes());
    (fnv1a64(&buf) & mask) as u32
}

/// Sparse hashed-count vector over 2^h buckets.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    hash_bits: u32,
    /// (bucket, count), sorted by bucket, counts >= 1.
    entries: Vec<(u32, f32)>,
}

impl FeatureVector {
    /// Build a vector from explicit (bucket, count) pairs. Entries are
    /// merged and sorted; counts must be >= 1 and buckets < 2^h.
    pub fn from_entries(hash_bits: u32, entries: &[(u32, f32)]) -> Result<Self> {
        if !(MIN_HASH_BITS..=MAX_HASH_BITS).contains(&hash_bits) {
            return Err(Error::Config {
                reason: format!("hash_bits {hash_bits} outside [{MIN_HASH_BITS}, {MAX_HASH_BITS}]"),
            });
        }
        let dim = 1u64 << hash_bits;
        let mut sorted = entries.to_vec();
        for &(bucket, count) in &sorted {
            if u64::from(bucket) >= dim {
                return Err(Error::Config { reason: format!("bucket {bucket} >= 2^{hash_bits}") });
            }
            if !(count >= 1.0) {
                return Err(Error::Config { reason: format!("count {count} < 1 for bucket {bucket}") });
            }
        }
        sorted.sort_by_key(|&(bucket, _)| bucket);
        let mut merged: Vec<(u32, f32)> = Vec::with_capacity(sorted.len());
        for (bucket, count) in sorted {
            match merged.last_mut() {
                Some((last, c)) if *last == bucket => *c += count,
                _ => merged.push((bucket, count)),
            }
        }
        Ok(FeatureVector { hash_bits, entries: merged })
    }

    pub fn hash_bits(&self) -> u32 {
        self.hash_bits
    }

    /// Input dimension this vector lives in: 2^h.
    pub fn dim(&self) -> usize {
        1usize << self.hash_bits
    }

    pub fn entries(&self) -> &[(u32, f32)] {
        &self.entries
    }

    /// Sum of counts.
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|&(_, c)| c as f64).sum()
    }
}

/// Hash a session into bucket counts. `hash_bits` must be in [8, 24].
pub fn featurize(session: &Session, hash_bits: u32) -> Result<FeatureVector> {
    if !(MIN_HASH_BITS..=MAX_HASH_BITS).contains(&hash_bits) {
        return Err(Error::Config {
            reason: format!("hash_bits {hash_bits} outside [{MIN_HASH_BITS}, {MAX_HASH_BITS}]"),
        });
    }
    let mask = (1u64 << hash_bits) - 1;

    // Token stream with separators between utterances.
    let mut stream: Vec<&str> = Vec::new();
    for (i, u) in session.utterances().iter().enumerate() {
        if i > 0 {
            stream.push(SEPARATOR_TOKEN);
        }
        stream.extend(u.tokens().iter().map(String::as_str));
    }

    let mut buckets: Vec<u32> = Vec::with_capacity(stream.len() * 2);
    for token in &stream {
        if *token != SEPARATOR_TOKEN {
            buckets.push(unigram_bucket(token, mask));
        }
    }
    for pair in stream.windows(2) {
        buckets.push(bigram_bucket(pair[0], pair[1], mask));
    }

    buckets.sort_unstable();
    let mut entries: Vec<(u32, f32)> = Vec::new();
    for bucket in buckets {
        match entries.last_mut() {
            Some((last, count)) if *last == bucket => *count += 1.0,
            _ => entries.push((bucket, 1.0)),
        }
    }
    Ok(FeatureVector { hash_bits, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Session;

    fn session(id: &str, texts: &[&str]) -> Session {
        Session::new(id, texts).unwrap()
    }

    #[test]
    fn deterministic_for_same_session() {
        let s = session("a", &["hello world", "how are you"]);
        assert_eq!(featurize(&s, 12).unwrap(), featurize(&s, 12).unwrap());
    }

    #[test]
    fn single_token_session_has_one_unigram_no_bigram() {
        let s = session("a", &["a"]);
        let fv = featurize(&s, 12).unwrap();
        assert_eq!(fv.entries().len(), 1);
        assert_eq!(fv.entries()[0].1, 1.0);
    }

    #[test]
    fn utterance_order_changes_vector() {
        let a = featurize(&session("a", &["alpha beta", "gamma"]), 16).unwrap();
        let b = featurize(&session("b", &["gamma", "alpha beta"]), 16).unwrap();
        // Same unigrams, different separator-adjacent bigrams.
        assert_ne!(a, b);
    }

    #[test]
    fn counts_accumulate() {
        let s = session("a", &["x x x"]);
        let fv = featurize(&s, 12).unwrap();
        // one unigram bucket (count 3) + one bigram bucket (x,x twice),
        // unless both hash to the same bucket at this width.
        let total: f64 = fv.total();
        assert_eq!(total, 5.0);
        assert!(fv.entries().iter().all(|&(_, c)| c >= 1.0));
    }

    #[test]
    fn hash_bits_range_enforced() {
        let s = session("a", &["x"]);
        assert!(featurize(&s, 7).is_err());
        assert!(featurize(&s, 25).is_err());
        assert!(featurize(&s, 8).is_ok());
        assert!(featurize(&s, 24).is_ok());
    }

    #[test]
    fn fnv_reference_values() {
        // Published FNV-1a test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }
}
