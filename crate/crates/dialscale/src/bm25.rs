//! Okapi BM25 over an inverted index, used for hard-negative mining and as a
//! term-matching retrieval baseline.
//!
//! Scoring uses the non-negative idf variant
//! `idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5))` with defaults k1 = 1.2,
//! b = 0.75. A query token that occurs twice contributes its term score
//! twice: the sum runs over query token occurrences, not unique terms.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::binio::{self, ArtifactReader};
use crate::corpus::{Corpus, Session};
use crate::error::{Error, Result};
use crate::text::tokenize;

const MAGIC: &[u8; 4] = b"DSBM";
const VERSION: u32 = 1;

/// BM25 free parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

/// Inverted index over one document per session.
#[derive(Debug, Clone)]
pub struct InvertedIndex {
    /// term -> postings sorted by document position, each (position, tf).
    postings: HashMap<String, Vec<(u32, u32)>>,
    doc_len: Vec<u32>,
    ids: Vec<String>,
    avgdl: f64,
    params: Bm25Params,
}

impl InvertedIndex {
    /// Index every session, using its utterances joined with a single space
    /// as the document text.
    pub fn build(corpus: &Corpus, params: Bm25Params) -> Result<Self> {
        Self::build_with_text(corpus, params, |s| s.joined_text())
    }

    /// Index every session using `text_of` as the document text.
    pub fn build_with_text(
        corpus: &Corpus,
        params: Bm25Params,
        text_of: impl Fn(&Session) -> String,
    ) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut postings: HashMap<String, Vec<(u32, u32)>> = HashMap::new();
        let mut doc_len = Vec::with_capacity(corpus.len());
        let mut ids = Vec::with_capacity(corpus.len());

        for (pos, session) in corpus.iter().enumerate() {
            let tokens = tokenize(&text_of(session));
            doc_len.push(tokens.len() as u32);
            ids.push(session.id().to_string());

            let mut tf: HashMap<&str, u32> = HashMap::new();
            for t in &tokens {
                *tf.entry(t).or_insert(0) += 1;
            }
            for (term, count) in tf {
                postings.entry(term.to_string()).or_default().push((pos as u32, count));
            }
        }
        // Documents are visited in position order, so each posting list is
        // already sorted by position.
        let avgdl = doc_len.iter().map(|&l| l as f64).sum::<f64>() / doc_len.len() as f64;
        Ok(InvertedIndex { postings, doc_len, ids, avgdl, params })
    }

    pub fn num_docs(&self) -> usize {
        self.doc_len.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Document frequency of a term.
    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn doc_len(&self, doc: usize) -> u32 {
        self.doc_len[doc]
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.num_docs() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_score(&self, tf: u32, df: usize, doc: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        let norm = 1.0 - b + b * self.doc_len[doc] as f64 / self.avgdl;
        self.idf(df) * tf * (k1 + 1.0) / (tf + k1 * norm)
    }

    /// BM25 score of one document for a token sequence. Terms absent from
    /// the index contribute 0; duplicated query tokens contribute once per
    /// occurrence.
    pub fn score(&self, query_tokens: &[String], doc: usize) -> f64 {
        let mut total = 0.0;
        for token in query_tokens {
            if let Some(list) = self.postings.get(token.as_str()) {
                if let Ok(idx) = list.binary_search_by_key(&(doc as u32), |&(pos, _)| pos) {
                    total += self.term_score(list[idx].1, list.len(), doc);
                }
            }
        }
        total
    }

    /// BM25 score of an arbitrary (non-indexed) token sequence treated as a
    /// document, using this index's df/avgdl statistics. Used when scoring
    /// candidates that are not part of the indexed corpus.
    pub fn score_virtual(&self, query_tokens: &[String], doc_tokens: &[String]) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let mut tf: HashMap<&str, u32> = HashMap::new();
        for t in doc_tokens {
            *tf.entry(t).or_insert(0) += 1;
        }
        let norm = 1.0 - b + b * doc_tokens.len() as f64 / self.avgdl;
        let mut total = 0.0;
        for token in query_tokens {
            let Some(&count) = tf.get(token.as_str()) else { continue };
            let df = self.doc_freq(token);
            if df == 0 {
                continue;
            }
            let count = count as f64;
            total += self.idf(df) * count * (k1 + 1.0) / (count + k1 * norm);
        }
        total
    }

    /// Top-k documents for a query string, descending score, ties broken by
    /// ascending document position. Only documents matching at least one
    /// query term are candidates; excluded ids are never returned.
    pub fn topk(&self, query: &str, k: usize, exclude: &HashSet<String>) -> Vec<(String, f64)> {
        let query_tokens = tokenize(query);
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for token in &query_tokens {
            if let Some(list) = self.postings.get(token.as_str()) {
                let df = list.len();
                for &(pos, tf) in list {
                    *scores.entry(pos).or_insert(0.0) += self.term_score(tf, df, pos as usize);
                }
            }
        }

        let mut ranked: Vec<(u32, f64)> = scores
            .into_iter()
            .filter(|&(pos, _)| !exclude.contains(&self.ids[pos as usize]))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(k);
        ranked.into_iter().map(|(pos, s)| (self.ids[pos as usize].clone(), s)).collect()
    }

    /// Persist to a versioned binary file. Terms are written in sorted order
    /// so the file round-trips bit-exactly.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        binio::write_u32(w, VERSION)?;
        binio::write_f64(w, self.params.k1)?;
        binio::write_f64(w, self.params.b)?;
        binio::write_f64(w, self.avgdl)?;
        binio::write_u64(w, self.doc_len.len() as u64)?;
        for (len, id) in self.doc_len.iter().zip(&self.ids) {
            binio::write_u32(w, *len)?;
            binio::write_str(w, id)?;
        }
        let mut terms: Vec<&String> = self.postings.keys().collect();
        terms.sort_unstable();
        binio::write_u64(w, terms.len() as u64)?;
        for term in terms {
            binio::write_str(w, term)?;
            let list = &self.postings[term];
            binio::write_u64(w, list.len() as u64)?;
            for &(pos, tf) in list {
                binio::write_u32(w, pos)?;
                binio::write_u32(w, tf)?;
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = ArtifactReader::new(BufReader::new(file), path);
        r.expect_magic(MAGIC, VERSION)?;
        let k1 = r.read_f64()?;
        let b = r.read_f64()?;
        let avgdl = r.read_f64()?;
        let n_docs = r.read_len("doc table")?;
        let mut doc_len = Vec::with_capacity(n_docs);
        let mut ids = Vec::with_capacity(n_docs);
        for _ in 0..n_docs {
            doc_len.push(r.read_u32()?);
            ids.push(r.read_string("doc id")?);
        }
        let n_terms = r.read_len("term table")?;
        let mut postings = HashMap::with_capacity(n_terms);
        for _ in 0..n_terms {
            let term = r.read_string("term")?;
            let n = r.read_len("posting list")?;
            let mut list = Vec::with_capacity(n);
            for _ in 0..n {
                let pos = r.read_u32()?;
                let tf = r.read_u32()?;
                list.push((pos, tf));
            }
            postings.insert(term, list);
        }
        r.expect_eof()?;
        Ok(InvertedIndex { postings, doc_len, ids, avgdl, params: Bm25Params { k1, b } })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Session;

    fn corpus(texts: &[&str]) -> Corpus {
        let sessions = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Session::new(format!("d{i}"), &[*t]).unwrap())
            .collect();
        Corpus::from_sessions(sessions).unwrap()
    }

    /// Brute-force oracle: score every document with `score` and sort with
    /// the documented tie order.
    fn brute_topk(index: &InvertedIndex, query: &str, k: usize) -> Vec<(String, f64)> {
        let tokens = tokenize(query);
        let mut all: Vec<(usize, f64)> = (0..index.num_docs())
            .map(|doc| (doc, index.score(&tokens, doc)))
            .filter(|&(_, s)| s > 0.0)
            .collect();
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        all.into_iter().map(|(doc, s)| (index.ids()[doc].clone(), s)).collect()
    }

    #[test]
    fn document_frequencies() {
        let c = corpus(&["a b", "b c"]);
        let idx = InvertedIndex::build(&c, Bm25Params::default()).unwrap();
        assert_eq!(idx.doc_freq("b"), 2);
        assert_eq!(idx.doc_freq("a"), 1);
        assert_eq!(idx.doc_freq("zzz"), 0);
        assert!((idx.avgdl() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_corpus_rejected() {
        let c = Corpus::default();
        assert!(matches!(InvertedIndex::build(&c, Bm25Params::default()), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn rebuild_is_deterministic() {
        let c = corpus(&["a b c", "b c d", "d e"]);
        let a = InvertedIndex::build(&c, Bm25Params::default()).unwrap();
        let b = InvertedIndex::build(&c, Bm25Params::default()).unwrap();
        let q = "b c e";
        assert_eq!(a.topk(q, 3, &HashSet::new()), b.topk(q, 3, &HashSet::new()));
    }

    // Hand evaluation of the formula: N=2, term in 1 doc, tf=1,
    // doclen=avgdl => idf = ln(1 + 1.5/1.5) = ln 2, tf factor = 1.
    #[test]
    fn hand_computed_score_ln2() {
        let c = corpus(&["a b", "c d"]);
        let idx = InvertedIndex::build(&c, Bm25Params::default()).unwrap();
        let score = idx.score(&tokenize("a"), 0);
        assert!((score - std::f64::consts::LN_2).abs() < 1e-6, "score = {score}");
    }

    #[test]
    fn unindexed_terms_contribute_zero() {
        let c = corpus(&["a b", "c d"]);
        let idx = InvertedIndex::build(&c, Bm25Params::default()).unwrap();
        assert_eq!(idx.score(&tokenize("zebra quark"), 0), 0.0);
        assert!(idx.topk("zebra", 5, &HashSet::new()).is_empty());
    }

    // The sum runs over query token occurrences: a duplicated token doubles
    // that term's contribution.
    #[test]
    fn duplicate_query_token_doubles_contribution() {
        let c = corpus(&["a b", "c d"]);
        let idx = InvertedIndex::build(&c, Bm25Params::default()).unwrap();
        let single = idx.score(&tokenize("a"), 0);
        let double = idx.score(&tokenize("a a"), 0);
        assert!((double - 2.0 * single).abs() < 1e-12);
    }

    #[test]
    fn topk_only_matching_docs_and_exclusion() {
        let c = corpus(&["cats purr", "dogs bark", "fish swim"]);
        let idx = InvertedIndex::build(&c, Bm25Params::default()).unwrap();
        let hits = idx.topk("bark", 10, &HashSet::new());
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].0, "d1");
        assert!(hits[0].1 > 0.0);

        let exclude: HashSet<String> = ["d1".to_string()].into();
        assert!(idx.topk("bark", 10, &exclude).is_empty());
    }

    #[test]
    fn topk_matches_bruteforce_oracle() {
        // Deterministic synthetic corpus with repeated vocabulary so ties
        // and multi-term matches occur.
        let vocab = ["apple", "pear", "plum", "fig", "date", "kiwi"];
        let mut texts = Vec::new();
        let mut state = 12345u64;
        for _ in 0..50 {
            let mut words = Vec::new();
            let len = 2 + (state % 5) as usize;
            for _ in 0..len {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                words.push(vocab[(state >> 32) as usize % vocab.len()]);
            }
            texts.push(words.join(" "));
        }
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let c = corpus(&refs);
        let idx = InvertedIndex::build(&c, Bm25Params::default()).unwrap();
        for query in ["apple", "pear plum", "fig fig date", "kiwi apple pear plum"] {
            for k in [1, 3, 10, 100] {
                assert_eq!(idx.topk(query, k, &HashSet::new()), brute_topk(&idx, query, k));
            }
        }
    }

    #[test]
    fn save_load_round_trips_bit_exactly() {
        let c = corpus(&["a b c", "b c d", "你 好 a"]);
        let idx = InvertedIndex::build(&c, Bm25Params::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.bm25");
        let p2 = dir.path().join("b.bm25");
        idx.save(&p1).unwrap();
        let loaded = InvertedIndex::load(&p1).unwrap();
        loaded.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(idx.topk("b c", 3, &HashSet::new()), loaded.topk("b c", 3, &HashSet::new()));
    }
}
