//! Evaluation metrics: corpus-level duplication (overlap score), sampling
//! bias (repeat sampling), n-gram diversity (distinct-n), retriever recall,
//! and perturbation discrimination accuracy.

use std::collections::{BTreeMap, HashSet};

use serde::Serialize;

use crate::corpus::{Corpus, Session};
use crate::encoder::DualEncoder;
use crate::error::{Error, Result};
use crate::features::fnv1a64;
use crate::pairgen::PerturbationPair;
use crate::reorganize::SamplerState;
use crate::text::{lcs_len, tokenize};

/// Micro-averaged in-context duplication of a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverlapScore {
    pub score: f64,
    /// Utterances that entered the average (all non-first utterances).
    pub scored_utterances: usize,
    /// True when nothing could be scored (score is 0 by convention).
    pub flagged: bool,
}

/// For every non-first utterance, the length of the longest common token
/// run with its in-session context (all preceding utterances), divided by
/// the utterance length; micro-averaged over the corpus (sum of LCS lengths
/// over sum of utterance token counts). First utterances are excluded.
pub fn overlap_score(corpus: &Corpus) -> OverlapScore {
    let mut lcs_total = 0usize;
    let mut token_total = 0usize;
    let mut scored = 0usize;
    for session in corpus.iter() {
        let mut context: Vec<&str> = Vec::new();
        for (i, utt) in session.utterances().iter().enumerate() {
            let tokens: Vec<&str> = utt.tokens().iter().map(String::as_str).collect();
            if i > 0 {
                lcs_total += lcs_len(&tokens, &context);
                token_total += tokens.len();
                scored += 1;
            }
            context.extend_from_slice(&tokens);
        }
    }
    if token_total == 0 {
        return OverlapScore { score: 0.0, scored_utterances: scored, flagged: true };
    }
    OverlapScore {
        score: lcs_total as f64 / token_total as f64,
        scored_utterances: scored,
        flagged: false,
    }
}

/// Mean and population standard deviation of the most-sampled sessions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RepeatSampling {
    pub mean: f64,
    pub std: f64,
    /// How many counts entered the statistics: min(top_k, sampled ids).
    pub population: usize,
    pub flagged: bool,
}

/// Statistics of the sampled-times counters of the top `top_k` sessions
/// (sorted by count, descending). (0, 0) flagged when nothing was sampled.
pub fn repeat_sampling(state: &SamplerState, top_k: usize) -> RepeatSampling {
    let mut counts: Vec<u64> = state.counts().values().copied().collect();
    if counts.is_empty() || top_k == 0 {
        return RepeatSampling { mean: 0.0, std: 0.0, population: 0, flagged: true };
    }
    counts.sort_unstable_by(|a, b| b.cmp(a));
    counts.truncate(top_k);
    let n = counts.len() as f64;
    let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / n;
    let var = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / n;
    RepeatSampling { mean, std: var.sqrt(), population: counts.len(), flagged: false }
}

/// Fraction of unique token n-grams over all token n-grams in the pooled
/// texts. 0 when no n-grams exist.
pub fn distinct_n(texts: &[impl AsRef<str>], n: usize) -> f64 {
    debug_assert!(n >= 1);
    let mut total = 0usize;
    let mut unique: HashSet<String> = HashSet::new();
    for text in texts {
        let tokens = tokenize(text.as_ref());
        for gram in tokens.windows(n) {
            total += 1;
            unique.insert(gram.join("\u{1f}"));
        }
    }
    if total == 0 {
        0.0
    } else {
        unique.len() as f64 / total as f64
    }
}

/// Scores a (query, candidate) session pair; higher means more coherent.
pub trait PairScorer: Sync {
    fn score_pair(&self, query: &Session, candidate: &Session) -> Result<f64>;
}

impl PairScorer for DualEncoder {
    fn score_pair(&self, query: &Session, candidate: &Session) -> Result<f64> {
        self.score_sessions(query, candidate)
    }
}

/// BM25 scoring of arbitrary candidates against the statistics (df, avgdl)
/// of a reference index.
pub struct Bm25Scorer<'a> {
    pub index: &'a crate::bm25::InvertedIndex,
}

impl PairScorer for Bm25Scorer<'_> {
    fn score_pair(&self, query: &Session, candidate: &Session) -> Result<f64> {
        let query_tokens = tokenize(&query.joined_text());
        let candidate_tokens = tokenize(&candidate.joined_text());
        Ok(self.index.score_virtual(&query_tokens, &candidate_tokens))
    }
}

/// Baseline scorer: a deterministic pseudo-random score per (query id,
/// candidate id) pair, uniform in [0, 1).
pub struct RandomScorer {
    pub seed: u64,
}

impl PairScorer for RandomScorer {
    fn score_pair(&self, query: &Session, candidate: &Session) -> Result<f64> {
        let mut bytes = Vec::with_capacity(16 + query.id().len() + candidate.id().len());
        bytes.extend_from_slice(&self.seed.to_le_bytes());
        bytes.extend_from_slice(query.id().as_bytes());
        bytes.push(0x1f);
        bytes.extend_from_slice(candidate.id().as_bytes());
        Ok(fnv1a64(&bytes) as f64 / (u64::MAX as f64 + 1.0))
    }
}

/// One retrieval evaluation query: the positive id must exist in the pool.
#[derive(Debug, Clone)]
pub struct EvalPair {
    pub query: Session,
    pub positive_id: String,
}

/// Top-k recall over a candidate pool: for each k, the fraction of queries
/// whose positive lands in the scorer's top k. Ties rank by pool position.
/// The pool holds one consecutive segment per source session, so the only
/// same-source candidate a query ever sees is its own positive.
pub fn recall_at_k(
    scorer: &dyn PairScorer,
    pairs: &[EvalPair],
    pool: &Corpus,
    ks: &[usize],
) -> Result<BTreeMap<usize, f64>> {
    if pairs.is_empty() {
        return Err(Error::Config { reason: "no evaluation pairs".into() });
    }
    let mut rank_hits: BTreeMap<usize, usize> = ks.iter().map(|&k| (k, 0)).collect();
    for pair in pairs {
        let positive_pos = pool
            .position(&pair.positive_id)
            .ok_or_else(|| Error::UnknownId { id: pair.positive_id.clone() })?;
        let mut scores = Vec::with_capacity(pool.len());
        for candidate in pool.iter() {
            scores.push(scorer.score_pair(&pair.query, candidate)?);
        }
        let positive_score = scores[positive_pos];
        // rank = 1 + number of candidates strictly ahead under
        // (score desc, pool position asc)
        let rank = 1 + scores
            .iter()
            .enumerate()
            .filter(|&(pos, &s)| {
                pos != positive_pos
                    && (s > positive_score || (s == positive_score && pos < positive_pos))
            })
            .count();
        for (&k, hits) in rank_hits.iter_mut() {
            if rank <= k {
                *hits += 1;
            }
        }
    }
    Ok(rank_hits
        .into_iter()
        .map(|(k, hits)| (k, hits as f64 / pairs.len() as f64))
        .collect())
}

/// Fraction of perturbation pairs where the scorer puts the positive above
/// the negative; exact ties count half.
pub fn discrimination_accuracy(
    scorer: &dyn PairScorer,
    pairs: &[PerturbationPair],
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Config { reason: "no perturbation pairs".into() });
    }
    let mut credit = 0.0;
    for pair in pairs {
        let pos = scorer.score_pair(&pair.query, &pair.positive)?;
        let neg = scorer.score_pair(&pair.query, &pair.negative)?;
        if pos > neg {
            credit += 1.0;
        } else if pos == neg {
            credit += 0.5;
        }
    }
    Ok(credit / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Session;
    use crate::pairgen::Aspect;

    fn session(id: &str, texts: &[&str]) -> Session {
        Session::new(id, texts).unwrap()
    }

    fn corpus(sessions: Vec<Session>) -> Corpus {
        Corpus::from_sessions(sessions).unwrap()
    }

    #[test]
    fn overlap_full_copy_is_one() {
        let c = corpus(vec![session("a", &["a b", "a b"])]);
        let o = overlap_score(&c);
        assert_eq!(o.score, 1.0);
        assert_eq!(o.scored_utterances, 1);
    }

    #[test]
    fn overlap_novel_utterance_is_zero() {
        let c = corpus(vec![session("a", &["a b", "x y"])]);
        assert_eq!(overlap_score(&c).score, 0.0);
    }

    // Hand evaluation: u2 "c d" vs "a b c" -> LCS 1;
    // u3 "a b x" vs "a b c c d" -> LCS 2; micro = (1+2)/(2+3) = 0.6
    #[test]
    fn overlap_micro_average() {
        let c = corpus(vec![session("a", &["a b c", "c d", "a b x"])]);
        let o = overlap_score(&c);
        assert!((o.score - 0.6).abs() < 1e-12, "score = {}", o.score);
        assert_eq!(o.scored_utterances, 2);
    }

    #[test]
    fn overlap_single_turn_corpus_flagged() {
        let c = corpus(vec![session("a", &["hello"]), session("b", &["world"])]);
        let o = overlap_score(&c);
        assert_eq!(o.score, 0.0);
        assert!(o.flagged);
    }

    #[test]
    fn repeat_sampling_statistics() {
        let mut state = SamplerState::new(0);
        for (id, times) in [("a", 5), ("b", 3), ("c", 1)] {
            for _ in 0..times {
                state.record_sample(id);
            }
        }
        let rs = repeat_sampling(&state, 2);
        assert_eq!(rs.mean, 4.0);
        assert_eq!(rs.std, 1.0);
        assert_eq!(rs.population, 2);

        // top_k larger than population: stats over all counts
        let rs = repeat_sampling(&state, 100);
        assert_eq!(rs.population, 3);
        assert!((rs.mean - 3.0).abs() < 1e-12);

        let empty = SamplerState::new(0);
        let rs = repeat_sampling(&empty, 10);
        assert_eq!((rs.mean, rs.std), (0.0, 0.0));
        assert!(rs.flagged);
    }

    #[test]
    fn repeat_sampling_equal_counts_zero_std() {
        let mut state = SamplerState::new(0);
        for id in ["a", "b", "c"] {
            state.record_sample(id);
            state.record_sample(id);
        }
        let rs = repeat_sampling(&state, 3);
        assert_eq!(rs.mean, 2.0);
        assert_eq!(rs.std, 0.0);
    }

    #[test]
    fn distinct_n_cases() {
        assert_eq!(distinct_n(&["a b", "a b"], 2), 0.5);
        assert_eq!(distinct_n(&["x y z"], 1), 1.0);
        assert_eq!(distinct_n(&["a"], 2), 0.0); // too short for bigrams
        let before = distinct_n(&["a b c", "d e f"], 2);
        let after = distinct_n(&["a b c", "d e f", "a b c"], 2);
        assert!(after < before);
    }

    struct FixedScorer(fn(&Session, &Session) -> f64);
    impl PairScorer for FixedScorer {
        fn score_pair(&self, q: &Session, c: &Session) -> Result<f64> {
            Ok((self.0)(q, c))
        }
    }

    #[test]
    fn recall_positive_ranked_second() {
        let pool = corpus(vec![
            session("p0", &["zero zero"]),
            session("p1", &["one one"]),
            session("p2", &["two two"]),
        ]);
        // p0 always wins, actual positive p1 is second
        let scorer = FixedScorer(|_, c| match c.id() {
            "p0" => 2.0,
            "p1" => 1.0,
            _ => 0.0,
        });
        let pairs = vec![EvalPair { query: session("q", &["q"]), positive_id: "p1".into() }];
        let recall = recall_at_k(&scorer, &pairs, &pool, &[1, 2, 3]).unwrap();
        assert_eq!(recall[&1], 0.0);
        assert_eq!(recall[&2], 1.0);
        assert_eq!(recall[&3], 1.0);
    }

    #[test]
    fn recall_perfect_retriever_is_one() {
        let pool = corpus((0..5).map(|i| session(&format!("p{i}"), &["x"])).collect());
        let pairs: Vec<EvalPair> = (0..5)
            .map(|i| EvalPair {
                query: session(&format!("q{i}"), &[format!("p{i}").as_str()]),
                positive_id: format!("p{i}"),
            })
            .collect();
        // score 1 iff the query text names the candidate id
        let scorer = FixedScorer(|q, c| {
            if q.utterances()[0].text() == c.id() {
                1.0
            } else {
                0.0
            }
        });
        let recall = recall_at_k(&scorer, &pairs, &pool, &[1, 3]).unwrap();
        assert_eq!(recall[&1], 1.0);
        assert_eq!(recall[&3], 1.0);
    }

    #[test]
    fn recall_missing_positive_errors() {
        let pool = corpus(vec![session("p0", &["x"])]);
        let pairs =
            vec![EvalPair { query: session("q", &["y"]), positive_id: "absent".into() }];
        assert!(matches!(
            recall_at_k(&FixedScorer(|_, _| 0.0), &pairs, &pool, &[1]),
            Err(Error::UnknownId { .. })
        ));
    }

    // Random scorer: positive lands uniformly, E[recall@k] = k / n.
    #[test]
    fn recall_random_scorer_matches_expectation() {
        let n = 20;
        let pool = corpus((0..n).map(|i| session(&format!("p{i}"), &["x"])).collect());
        let pairs: Vec<EvalPair> = (0..600)
            .map(|i| EvalPair {
                query: session(&format!("q{i}"), &["y"]),
                positive_id: format!("p{}", i % n),
            })
            .collect();
        let scorer = RandomScorer { seed: 4 };
        let recall = recall_at_k(&scorer, &pairs, &pool, &[1, 5, 10]).unwrap();
        for (&k, &r) in recall.iter() {
            let expected = k as f64 / n as f64;
            assert!(
                (r - expected).abs() < 0.07,
                "recall@{k} = {r}, expected about {expected}"
            );
        }
    }

    fn perturbation(i: usize) -> PerturbationPair {
        PerturbationPair {
            query: session(&format!("q{i}"), &["query text"]),
            positive: session(&format!("p{i}"), &["good reply"]),
            negative: session(&format!("n{i}"), &["bad reply"]),
            aspect: Aspect::Irrelevance,
            source_id: format!("s{i}"),
        }
    }

    #[test]
    fn discrimination_bounds_and_ties() {
        let pairs: Vec<PerturbationPair> = (0..10).map(perturbation).collect();
        let always_right = FixedScorer(|_, c| if c.id().starts_with('p') { 1.0 } else { 0.0 });
        assert_eq!(discrimination_accuracy(&always_right, &pairs).unwrap(), 1.0);
        let constant = FixedScorer(|_, _| 0.25);
        assert_eq!(discrimination_accuracy(&constant, &pairs).unwrap(), 0.5);
    }

    #[test]
    fn discrimination_random_scorer_near_half() {
        let pairs: Vec<PerturbationPair> = (0..1000).map(perturbation).collect();
        let acc = discrimination_accuracy(&RandomScorer { seed: 9 }, &pairs).unwrap();
        assert!((acc - 0.5).abs() < 0.03, "acc = {acc}");
    }

    #[test]
    fn discrimination_invariant_under_monotone_transform() {
        let pairs: Vec<PerturbationPair> = (0..50).map(perturbation).collect();
        let base = RandomScorer { seed: 2 };
        struct Monotone<'a>(&'a RandomScorer);
        impl PairScorer for Monotone<'_> {
            fn score_pair(&self, q: &Session, c: &Session) -> Result<f64> {
                Ok(self.0.score_pair(q, c)?.mul_add(3.0, 1.0).exp())
            }
        }
        let a = discrimination_accuracy(&base, &pairs).unwrap();
        let b = discrimination_accuracy(&Monotone(&base), &pairs).unwrap();
        assert_eq!(a, b);
    }
}
