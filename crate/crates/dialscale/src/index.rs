//! Exact dense inner-product top-k search over candidate session embeddings.
//!
//! The index is a flat f32 matrix scanned exhaustively; no approximate
//! structures, so top-k contents are exactly reproducible. Dot products
//! accumulate in f64, and ranking compares scores rounded to 1e-6 (ties
//! broken by ascending row) so tie order is stable across platforms and
//! shard counts. Shards are searched independently and merged under the
//! same total order, which makes results bit-identical for any shard count.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;

use crate::binio::{self, ArtifactReader};
use crate::corpus::Corpus;
use crate::encoder::SessionEncoder;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DSIX";
const VERSION: u32 = 1;

/// Score granularity for tie detection.
const SCORE_QUANTUM: f64 = 1e-6;

fn score_key(score: f64) -> i64 {
    (score / SCORE_QUANTUM).round() as i64
}

/// Flat embedding matrix with an id table and contiguous shards.
#[derive(Debug, Clone)]
pub struct DenseIndex {
    dim: usize,
    vectors: Vec<f32>,
    ids: Vec<String>,
    id_map: HashMap<String, usize>,
    shards: Vec<Range<usize>>,
}

/// Split `n` rows into `num_shards` near-equal contiguous ranges; the first
/// `n % num_shards` shards take one extra row.
fn partition(n: usize, num_shards: usize) -> Vec<Range<usize>> {
    let num_shards = num_shards.max(1).min(n.max(1));
    let base = n / num_shards;
    let extra = n % num_shards;
    let mut shards = Vec::with_capacity(num_shards);
    let mut start = 0;
    for i in 0..num_shards {
        let len = base + usize::from(i < extra);
        shards.push(start..start + len);
        start += len;
    }
    shards
}

/// Encode every session with the candidate-side encoder, row i = session i.
pub fn build_index(
    corpus: &Corpus,
    encoder: &dyn SessionEncoder,
    num_shards: usize,
) -> Result<DenseIndex> {
    if num_shards == 0 {
        return Err(Error::Config { reason: "num_shards must be >= 1".into() });
    }
    let dim = encoder.dim();
    let mut vectors = Vec::with_capacity(corpus.len() * dim);
    let mut ids = Vec::with_capacity(corpus.len());
    for session in corpus.iter() {
        let v = encoder.encode_session(session)?;
        if v.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: v.len() });
        }
        vectors.extend_from_slice(&v);
        ids.push(session.id().to_string());
    }
    let shards = partition(corpus.len(), num_shards);
    Ok(DenseIndex::assemble(dim, vectors, ids, shards))
}

impl DenseIndex {
    fn assemble(dim: usize, vectors: Vec<f32>, ids: Vec<String>, shards: Vec<Range<usize>>) -> Self {
        let id_map = ids.iter().enumerate().map(|(row, id)| (id.clone(), row)).collect();
        DenseIndex { dim, vectors, ids, id_map, shards }
    }

    /// Assemble an index directly from rows (row order defines positions).
    pub fn from_rows(dim: usize, rows: Vec<(String, Vec<f32>)>, num_shards: usize) -> Result<Self> {
        if num_shards == 0 {
            return Err(Error::Config { reason: "num_shards must be >= 1".into() });
        }
        let mut vectors = Vec::with_capacity(rows.len() * dim);
        let mut ids = Vec::with_capacity(rows.len());
        for (id, row) in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: row.len() });
            }
            vectors.extend_from_slice(&row);
            ids.push(id);
        }
        let n = ids.len();
        let shards = partition(n, num_shards);
        Ok(DenseIndex::assemble(dim, vectors, ids, shards))
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn num_shards(&self) -> usize {
        self.shards.len()
    }

    pub fn shard_sizes(&self) -> Vec<usize> {
        self.shards.iter().map(ExactSizeIterator::len).collect()
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    fn dot(&self, row: usize, query: &[f32]) -> f64 {
        self.row(row).iter().zip(query).map(|(&a, &b)| a as f64 * b as f64).sum()
    }

    /// Top-k rows of one shard by (rounded score desc, row asc).
    fn shard_topk(
        &self,
        shard: Range<usize>,
        query: &[f32],
        k: usize,
        excluded_rows: &HashSet<usize>,
    ) -> Vec<(i64, usize, f64)> {
        let mut hits: Vec<(i64, usize, f64)> = Vec::with_capacity(k + 1);
        for row in shard {
            if excluded_rows.contains(&row) {
                continue;
            }
            let score = self.dot(row, query);
            let key = score_key(score);
            // keep the k best under (key desc, row asc)
            let pos = hits.partition_point(|&(hk, hr, _)| hk > key || (hk == key && hr < row));
            if pos < k {
                hits.insert(pos, (key, row, score));
                hits.truncate(k);
            }
        }
        hits
    }

    /// Exact top-k by inner product over non-excluded rows. Descending
    /// score, ties (after 1e-6 rounding) broken by ascending row position.
    pub fn search_topk(
        &self,
        query: &[f32],
        k: usize,
        exclude: &HashSet<String>,
    ) -> Result<Vec<(String, f64)>> {
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: query.len() });
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let excluded_rows: HashSet<usize> =
            exclude.iter().filter_map(|id| self.id_map.get(id).copied()).collect();

        let per_shard: Vec<Vec<(i64, usize, f64)>> = self
            .shards
            .par_iter()
            .map(|shard| self.shard_topk(shard.clone(), query, k, &excluded_rows))
            .collect();

        // k-way merge under the same total order.
        let mut merged: Vec<(i64, usize, f64)> = per_shard.into_iter().flatten().collect();
        merged.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        merged.truncate(k);
        Ok(merged.into_iter().map(|(_, row, score)| (self.ids[row].clone(), score)).collect())
    }

    /// Batch search: identical results to mapping [`Self::search_topk`]
    /// sequentially, with queries fanned out across workers.
    pub fn search_batch(
        &self,
        queries: &[Vec<f32>],
        k: usize,
        exclude_per_query: &[HashSet<String>],
    ) -> Result<Vec<Vec<(String, f64)>>> {
        if exclude_per_query.len() != queries.len() {
            return Err(Error::Config {
                reason: format!(
                    "{} exclusion sets for {} queries",
                    exclude_per_query.len(),
                    queries.len()
                ),
            });
        }
        queries
            .par_iter()
            .zip(exclude_per_query.par_iter())
            .map(|(q, exclude)| self.search_topk(q, k, exclude))
            .collect()
    }

    /// Persist as a versioned binary (header: magic, version, n, d, shard
    /// table; body: id table + row-major little-endian f32). Round-trips
    /// bit-exactly.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
            w.write_all(MAGIC)?;
            binio::write_u32(w, VERSION)?;
            binio::write_u64(w, self.ids.len() as u64)?;
            binio::write_u32(w, self.dim as u32)?;
            binio::write_u32(w, self.shards.len() as u32)?;
            for shard in &self.shards {
                binio::write_u64(w, shard.len() as u64)?;
            }
            for id in &self.ids {
                binio::write_str(w, id)?;
            }
            for v in &self.vectors {
                w.write_all(&v.to_le_bytes())?;
            }
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
        let n = r.read_len("row count")?;
        let dim = r.read_u32()? as usize;
        let num_shards = r.read_u32()? as usize;
        let mut shards = Vec::with_capacity(num_shards);
        let mut start = 0usize;
        for _ in 0..num_shards {
            let len = r.read_len("shard")?;
            shards.push(start..start + len);
            start += len;
        }
        if start != n {
            return Err(Error::artifact(path, format!("shards cover {start} rows of {n}")));
        }
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            ids.push(r.read_string("id")?);
        }
        let mut vectors = Vec::with_capacity(n * dim);
        for _ in 0..n * dim {
            vectors.push(r.read_f32()?);
        }
        r.expect_eof()?;
        Ok(DenseIndex::assemble(dim, vectors, ids, shards))
    }
}
