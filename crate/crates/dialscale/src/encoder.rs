//! Dual-encoder session retriever: two unshared linear projections over
//! hashed n-gram features, dot-product similarity, and the contrastive loss.
//!
//! The query side and candidate side never share parameters. Similarity is
//! a plain dot product with no normalization or temperature. Projections
//! store f32 weights but accumulate in f64 so scores are stable and the
//! analytic gradients check out against finite differences.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Deserialize;

use crate::binio::{self, ArtifactReader};
use crate::corpus::Session;
use crate::error::{Error, Result};
use crate::features::{featurize, FeatureVector};

const MAGIC: &[u8; 4] = b"DSEN";
const VERSION: u32 = 1;

/// Anything that can turn a session into a fixed-dimension dense vector.
pub trait SessionEncoder: Sync {
    fn dim(&self) -> usize;
    fn encode_session(&self, session: &Session) -> Result<Vec<f32>>;
}

/// Two independent linear projections E_q and E_c over 2^h hashed features.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEncoder {
    hash_bits: u32,
    d_out: usize,
    w_q: Vec<f32>,
    w_c: Vec<f32>,
}

/// Project a sparse feature vector: y = Wᵀx, accumulated in f64.
pub fn encode(weights: &[f32], d_out: usize, features: &FeatureVector) -> Result<Vec<f32>> {
    let d_in = features.dim();
    if weights.len() != d_in * d_out {
        return Err(Error::DimensionMismatch { expected: d_in * d_out, got: weights.len() });
    }
    let mut acc = vec![0.0f64; d_out];
    for &(bucket, count) in features.entries() {
        let row = &weights[bucket as usize * d_out..(bucket as usize + 1) * d_out];
        let count = count as f64;
        for (a, &w) in acc.iter_mut().zip(row) {
            *a += count * w as f64;
        }
    }
    Ok(acc.into_iter().map(|v| v as f32).collect())
}

impl DualEncoder {
    /// Fresh encoder with both projections drawn uniformly from
    /// [-scale, scale] using a seeded generator.
    pub fn init(hash_bits: u32, d_out: usize, seed: u64) -> Result<Self> {
        use rand::{Rng, SeedableRng};
        if d_out == 0 {
            return Err(Error::Config { reason: "d_out must be >= 1".into() });
        }
        let d_in = check_hash_bits(hash_bits)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let scale = 0.01f32;
        let mut draw = |n: usize| -> Vec<f32> {
            (0..n).map(|_| rng.random_range(-scale..=scale)).collect()
        };
        let w_q = draw(d_in * d_out);
        let w_c = draw(d_in * d_out);
        Ok(DualEncoder { hash_bits, d_out, w_q, w_c })
    }

    pub fn hash_bits(&self) -> u32 {
        self.hash_bits
    }

    pub fn d_in(&self) -> usize {
        1usize << self.hash_bits
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn weights_query(&self) -> &[f32] {
        &self.w_q
    }

    pub fn weights_candidate(&self) -> &[f32] {
        &self.w_c
    }

    pub(crate) fn weights_mut(&mut self) -> (&mut [f32], &mut [f32]) {
        (&mut self.w_q, &mut self.w_c)
    }

    pub fn featurize(&self, session: &Session) -> Result<FeatureVector> {
        featurize(session, self.hash_bits)
    }

    pub fn encode_query(&self, features: &FeatureVector) -> Result<Vec<f32>> {
        encode(&self.w_q, self.d_out, features)
    }

    pub fn encode_candidate(&self, features: &FeatureVector) -> Result<Vec<f32>> {
        encode(&self.w_c, self.d_out, features)
    }

    /// Query-side view implementing [`SessionEncoder`].
    pub fn query_side(&self) -> QuerySide<'_> {
        QuerySide(self)
    }

    /// Candidate-side view implementing [`SessionEncoder`].
    pub fn candidate_side(&self) -> CandidateSide<'_> {
        CandidateSide(self)
    }

    /// Similarity of a (query, candidate) session pair under this encoder.
    pub fn score_sessions(&self, query: &Session, candidate: &Session) -> Result<f64> {
        let q = self.encode_query(&self.featurize(query)?)?;
        let c = self.encode_candidate(&self.featurize(candidate)?)?;
        similarity(&q, &c)
    }

    /// Persist as a versioned binary checkpoint (h, d_out, W_q, W_c as
    /// little-endian f32 row-major).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
            w.write_all(MAGIC)?;
            binio::write_u32(w, VERSION)?;
            binio::write_u32(w, self.hash_bits)?;
            binio::write_u32(w, self.d_out as u32)?;
            binio::write_f32_slice(w, &self.w_q)?;
            binio::write_f32_slice(w, &self.w_c)?;
            Ok(())
        };
        write(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = ArtifactReader::new(BufReader::new(file), path);
        r.expect_magic(MAGIC, VERSION)?;
        let hash_bits = r.read_u32()?;
        let d_in = check_hash_bits(hash_bits)
            .map_err(|_| Error::artifact(path, format!("bad hash_bits {hash_bits}")))?;
        let d_out = r.read_u32()? as usize;
        let w_q = r.read_f32_vec("W_q")?;
        let w_c = r.read_f32_vec("W_c")?;
        r.expect_eof()?;
        for (name, w) in [("W_q", &w_q), ("W_c", &w_c)] {
            if w.len() != d_in * d_out {
                return Err(Error::artifact(
                    path,
                    format!("{name} has {} entries, expected {}", w.len(), d_in * d_out),
                ));
            }
        }
        Ok(DualEncoder { hash_bits, d_out, w_q, w_c })
    }
}

fn check_hash_bits(hash_bits: u32) -> Result<usize> {
    use crate::features::{MAX_HASH_BITS, MIN_HASH_BITS};
    if !(MIN_HASH_BITS..=MAX_HASH_BITS).contains(&hash_bits) {
        return Err(Error::Config {
            reason: format!("hash_bits {hash_bits} outside [{MIN_HASH_BITS}, {MAX_HASH_BITS}]"),
        });
    }
    Ok(1usize << hash_bits)
}

/// Query-side `SessionEncoder` view of a [`DualEncoder`].
pub struct QuerySide<'a>(&'a DualEncoder);

impl SessionEncoder for QuerySide<'_> {
    fn dim(&self) -> usize {
        self.0.d_out
    }
    fn encode_session(&self, session: &Session) -> Result<Vec<f32>> {
        self.0.encode_query(&self.0.featurize(session)?)
    }
}

/// Candidate-side `SessionEncoder` view of a [`DualEncoder`].
pub struct CandidateSide<'a>(&'a DualEncoder);

impl SessionEncoder for CandidateSide<'_> {
    fn dim(&self) -> usize {
        self.0.d_out
    }
    fn encode_session(&self, session: &Session) -> Result<Vec<f32>> {
        self.0.encode_candidate(&self.0.featurize(session)?)
    }
}

/// Dot product with f64 accumulation. Dimensions must match.
pub fn similarity(q: &[f32], c: &[f32]) -> Result<f64> {
    if q.len() != c.len() {
        return Err(Error::DimensionMismatch { expected: q.len(), got: c.len() });
    }
    Ok(q.iter().zip(c).map(|(&a, &b)| a as f64 * b as f64).sum())
}

/// Contrastive loss -ln(e^pos / (e^pos + Σ e^neg)), stabilized by max
/// subtraction so it stays finite for |sim| up to ~700. Zero when there are
/// no negatives.
pub fn contrastive_loss(sim_pos: f64, sim_negs: &[f64]) -> Result<f64> {
    if !sim_pos.is_finite() {
        return Err(Error::NonFinite { what: "positive similarity" });
    }
    if sim_negs.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite { what: "negative similarity" });
    }
    let max = sim_negs.iter().copied().fold(sim_pos, f64::max);
    let denom: f64 =
        (sim_pos - max).exp() + sim_negs.iter().map(|s| (s - max).exp()).sum::<f64>();
    Ok(max + denom.ln() - sim_pos)
}

/// Precomputed session embeddings keyed by id, the plug-in point for
/// external neural encoders.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingTable {
    map: HashMap<String, Vec<f32>>,
    dim: usize,
}

impl EmbeddingTable {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Vec<f32>)>) -> Result<Self> {
        let mut table = EmbeddingTable::default();
        for (id, vector) in pairs {
            table.insert(id, vector)?;
        }
        Ok(table)
    }

    fn insert(&mut self, id: String, vector: Vec<f32>) -> Result<()> {
        if self.map.is_empty() {
            self.dim = vector.len();
        } else if vector.len() != self.dim {
            return Err(Error::InconsistentDimension {
                id,
                expected: self.dim,
                got: vector.len(),
            });
        }
        if self.map.insert(id.clone(), vector).is_some() {
            return Err(Error::DuplicateSession { id });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Vector for `id`; unknown ids are an error naming the id.
    pub fn get(&self, id: &str) -> Result<&[f32]> {
        self.map
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownId { id: id.to_string() })
    }
}

impl SessionEncoder for EmbeddingTable {
    fn dim(&self) -> usize {
        self.dim
    }
    fn encode_session(&self, session: &Session) -> Result<Vec<f32>> {
        self.get(session.id()).map(<[f32]>::to_vec)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbeddingRecord {
    id: String,
    vector: Vec<f32>,
}

/// Load an embedding table from JSON lines of `{"id": ..., "vector": [...]}`.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut table = EmbeddingTable::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingRecord = serde_json::from_str(&line).map_err(|e| Error::BadRecord {
            path: path.into(),
            line: idx + 1,
            reason: e.to_string(),
        })?;
        table.insert(rec.id, rec.vector)?;
    }
    Ok(table)
}
