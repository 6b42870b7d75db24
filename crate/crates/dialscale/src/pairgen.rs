//! Construct contrastive training instances and perturbation evaluation
//! pairs from unlabeled dialogues.
//!
//! Each session with at least 4 turns is split once at a random boundary
//! into a query segment and a consecutive (positive) segment. Easy
//! negatives are other sessions' consecutive segments; hard negatives come
//! from BM25 over the segment pool. All randomness is derived per session
//! from `(seed, session_id)`, so the segment pool, the training set, and
//! any worker-parallel generation see identical splits.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bm25::InvertedIndex;
use crate::corpus::{Corpus, Session, Source, Utterance};
use crate::error::{Error, Result};
use crate::features::fnv1a64;

/// Minimum turns for a session to produce a training split.
pub const MIN_SPLIT_TURNS: usize = 4;

/// Minimum turns for a session to produce a perturbation pair.
pub const MIN_PERTURB_TURNS: usize = 7;

/// Deterministic per-session generator derived from the global seed.
pub fn session_rng(seed: u64, session_id: &str) -> ChaCha8Rng {
    let mut bytes = Vec::with_capacity(8 + session_id.len());
    bytes.extend_from_slice(&seed.to_le_bytes());
    bytes.extend_from_slice(session_id.as_bytes());
    ChaCha8Rng::seed_from_u64(fnv1a64(&bytes))
}

fn segment(session: &Session, range: std::ops::Range<usize>, suffix: &str) -> Session {
    let utterances: Vec<Utterance> = session.utterances()[range].to_vec();
    Session::from_utterances(format!("{}{suffix}", session.id()), utterances, Source::Origin)
        .expect("segment ranges are non-empty by construction")
}

/// Split a session at a boundary drawn uniformly from [2, K-2], returning
/// (query segment, consecutive segment). Both halves keep at least 2 turns.
pub fn split_session(session: &Session, rng: &mut impl Rng) -> Result<(Session, Session)> {
    let turns = session.turns();
    if turns < MIN_SPLIT_TURNS {
        return Err(Error::SessionTooShort {
            id: session.id().to_string(),
            turns,
            min: MIN_SPLIT_TURNS,
        });
    }
    let split = rng.random_range(2..=turns - 2);
    Ok((segment(session, 0..split, "#q"), segment(session, split..turns, "#c")))
}

/// The split `make_training_set` and `candidate_pool` use for a session
/// under a given global seed.
pub fn split_with_seed(session: &Session, seed: u64) -> Result<(Session, Session)> {
    split_session(session, &mut session_rng(seed, session.id()))
}

/// Sessions skipped during pool or pair construction.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct PoolReport {
    pub eligible: usize,
    pub skipped_short: usize,
}

/// Consecutive segments of every eligible session, one per session, with
/// ids `<source>#c`. This is the candidate space hard negatives are mined
/// from and retrieval is evaluated over.
pub fn candidate_pool(corpus: &Corpus, seed: u64) -> Result<(Corpus, PoolReport)> {
    let mut segments = Vec::new();
    let mut report = PoolReport::default();
    for session in corpus.iter() {
        if session.turns() < MIN_SPLIT_TURNS {
            report.skipped_short += 1;
            continue;
        }
        let (_, candidate) = split_with_seed(session, seed)?;
        segments.push(candidate);
        report.eligible += 1;
    }
    Ok((Corpus::from_sessions(segments)?, report))
}

/// Negative origin: randomly sampled vs BM25-mined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeKind {
    Easy,
    Hard,
}

#[derive(Debug, Clone)]
pub struct Negative {
    pub session: Session,
    pub kind: NegativeKind,
}

/// One contrastive training instance.
#[derive(Debug, Clone)]
pub struct TrainingInstance {
    pub query: Session,
    pub positive: Session,
    pub negatives: Vec<Negative>,
    /// Id of the session the (query, positive) pair was split from.
    pub source_id: String,
    /// Number of turns in the query segment.
    pub split_point: usize,
}

/// Knobs for training-set construction.
#[derive(Debug, Clone, Copy)]
pub struct PairGenConfig {
    pub n_easy: usize,
    pub n_hard: usize,
    pub seed: u64,
}

/// Segment pool plus BM25 index over it, for hard-negative mining.
pub struct HardNegativeMiner<'a> {
    pub pool: &'a Corpus,
    pub index: &'a InvertedIndex,
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct PairGenReport {
    pub instances: usize,
    pub skipped_short: usize,
    /// Instances that found fewer than n_hard BM25 negatives.
    pub hard_shortfall: usize,
}

/// Build one training instance per eligible session.
///
/// Easy negatives are consecutive segments of `n_easy` distinct other
/// sessions; hard negatives are the BM25 top-n_hard over the segment pool
/// with the positive's source excluded (instances keep however many exist).
pub fn make_training_set(
    corpus: &Corpus,
    cfg: &PairGenConfig,
    miner: Option<&HardNegativeMiner<'_>>,
) -> Result<(Vec<TrainingInstance>, PairGenReport)> {
    if cfg.n_hard > 0 && miner.is_none() {
        return Err(Error::Config { reason: "n_hard > 0 requires a segment pool and BM25 index".into() });
    }
    let eligible: Vec<usize> = (0..corpus.len())
        .filter(|&i| corpus.sessions()[i].turns() >= MIN_SPLIT_TURNS)
        .collect();
    let mut report = PairGenReport {
        instances: 0,
        skipped_short: corpus.len() - eligible.len(),
        hard_shortfall: 0,
    };
    if eligible.len() < cfg.n_easy + 1 {
        return Err(Error::CorpusTooSmall { needed: cfg.n_easy + 1, actual: eligible.len() });
    }

    let mut instances = Vec::with_capacity(eligible.len());
    for (rank, &pos) in eligible.iter().enumerate() {
        let session = &corpus.sessions()[pos];
        let mut rng = session_rng(cfg.seed, session.id());
        let (query, positive) = split_session(session, &mut rng)?;
        let mut negatives = Vec::with_capacity(cfg.n_easy + cfg.n_hard);

        // Easy negatives: consecutive segments of n_easy distinct other
        // eligible sessions, re-derived with each donor's own split.
        let mut chosen: HashSet<usize> = HashSet::with_capacity(cfg.n_easy);
        while chosen.len() < cfg.n_easy {
            let j = rng.random_range(0..eligible.len());
            if j == rank || chosen.contains(&j) {
                continue;
            }
            chosen.insert(j);
            let donor = &corpus.sessions()[eligible[j]];
            let (_, donor_candidate) = split_with_seed(donor, cfg.seed)?;
            negatives.push(Negative { session: donor_candidate, kind: NegativeKind::Easy });
        }

        if cfg.n_hard > 0 {
            let miner = miner.expect("checked above");
            let exclude: HashSet<String> = [format!("{}#c", session.id())].into();
            let hits = miner.index.topk(&query.joined_text(), cfg.n_hard, &exclude);
            if hits.len() < cfg.n_hard {
                report.hard_shortfall += 1;
            }
            for (hit_id, _) in hits {
                let hit = miner.pool.get(&hit_id).ok_or_else(|| Error::UnknownId { id: hit_id })?;
                negatives.push(Negative { session: hit.clone(), kind: NegativeKind::Hard });
            }
        }

        instances.push(TrainingInstance {
            query,
            positive,
            negatives,
            source_id: session.id().to_string(),
            split_point: 0, // filled below from the query length
        });
        let last = instances.last_mut().expect("just pushed");
        last.split_point = last.query.turns();
    }
    report.instances = instances.len();
    Ok((instances, report))
}

// ---------------------------------------------------------------------------
// Perturbation pairs
// ---------------------------------------------------------------------------

/// Which property of a coherent continuation the negative breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aspect {
    Irrelevance,
    LocalRelevance,
    DiscourseIncoherence,
}

impl Aspect {
    pub const ALL: [Aspect; 3] =
        [Aspect::Irrelevance, Aspect::LocalRelevance, Aspect::DiscourseIncoherence];

    pub fn name(self) -> &'static str {
        match self {
            Aspect::Irrelevance => "irrelevance",
            Aspect::LocalRelevance => "local_relevance",
            Aspect::DiscourseIncoherence => "discourse_incoherence",
        }
    }
}

impl std::str::FromStr for Aspect {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "irrelevance" => Ok(Aspect::Irrelevance),
            "local_relevance" => Ok(Aspect::LocalRelevance),
            "discourse_incoherence" => Ok(Aspect::DiscourseIncoherence),
            other => Err(format!("unknown aspect {other:?}")),
        }
    }
}

/// A (query, coherent continuation, perturbed continuation) triple.
#[derive(Debug, Clone)]
pub struct PerturbationPair {
    pub query: Session,
    pub positive: Session,
    pub negative: Session,
    pub aspect: Aspect,
    pub source_id: String,
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct PerturbReport {
    pub pairs: usize,
    pub skipped_short: usize,
    /// Sessions skipped because no donor session could supply replacement
    /// utterances without duplicating the positive.
    pub skipped_no_donor: usize,
}

const DONOR_ATTEMPTS: usize = 32;

/// Build one perturbation pair per session with >= 7 turns.
///
/// The positive is the last 3 utterances, the query is everything from the
/// 4th utterance up to the positive. The negative depends on the aspect:
/// an unrelated 3-utterance window, the positive with two utterances
/// swapped out for a donor window, or the session's own first 3 utterances.
pub fn make_perturbation_set(
    corpus: &Corpus,
    aspect: Aspect,
    seed: u64,
) -> Result<(Vec<PerturbationPair>, PerturbReport)> {
    let mut pairs = Vec::new();
    let mut report = PerturbReport::default();

    for (pos, session) in corpus.iter().enumerate() {
        let turns = session.turns();
        if turns < MIN_PERTURB_TURNS {
            report.skipped_short += 1;
            continue;
        }
        let mut rng = session_rng(seed, session.id());
        let query = segment(session, 3..turns - 3, "#q");
        let positive = segment(session, turns - 3..turns, "#pos");

        let negative = match aspect {
            Aspect::DiscourseIncoherence => Some(segment(session, 0..3, "#neg")),
            Aspect::Irrelevance => {
                sample_window(corpus, pos, 3, &mut rng, |_| true).map(|(donor, start)| {
                    segment(donor, start..start + 3, "#neg")
                })
            }
            Aspect::LocalRelevance => {
                let keep = rng.random_range(0..3usize);
                let positive_texts: HashSet<&str> =
                    positive.utterances().iter().map(Utterance::text).collect();
                sample_window(corpus, pos, 2, &mut rng, |w| {
                    w.iter().all(|u| !positive_texts.contains(u.text()))
                })
                .map(|(donor, start)| {
                    let donor_utts = &donor.utterances()[start..start + 2];
                    let mut replacement = donor_utts.iter();
                    let utterances: Vec<Utterance> = positive
                        .utterances()
                        .iter()
                        .enumerate()
                        .map(|(i, u)| {
                            if i == keep {
                                u.clone()
                            } else {
                                replacement.next().expect("window length 2").clone()
                            }
                        })
                        .collect();
                    Session::from_utterances(
                        format!("{}#neg", session.id()),
                        utterances,
                        Source::Origin,
                    )
                    .expect("three utterances")
                })
            }
        };

        match negative {
            Some(negative) => {
                pairs.push(PerturbationPair {
                    query,
                    positive,
                    negative,
                    aspect,
                    source_id: session.id().to_string(),
                });
            }
            None => report.skipped_no_donor += 1,
        }
    }
    report.pairs = pairs.len();
    Ok((pairs, report))
}

/// Draw a contiguous utterance window of `width` from a session other than
/// `exclude_pos` satisfying `accept`, or None after bounded attempts.
fn sample_window<'c>(
    corpus: &'c Corpus,
    exclude_pos: usize,
    width: usize,
    rng: &mut impl Rng,
    accept: impl Fn(&[Utterance]) -> bool,
) -> Option<(&'c Session, usize)> {
    if corpus.len() < 2 {
        return None;
    }
    for _ in 0..DONOR_ATTEMPTS {
        let j = rng.random_range(0..corpus.len());
        if j == exclude_pos {
            continue;
        }
        let donor = &corpus.sessions()[j];
        if donor.turns() < width {
            continue;
        }
        let start = rng.random_range(0..=donor.turns() - width);
        if accept(&donor.utterances()[start..start + width]) {
            return Some((donor, start));
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Serialization: both sets are JSON lines with explicit source ids and
// split points, enabling exact replay.
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct NegativeRecord {
    kind: NegativeKind,
    id: String,
    utterances: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct InstanceRecord {
    source_id: String,
    split_point: usize,
    query: Vec<String>,
    positive: Vec<String>,
    negatives: Vec<NegativeRecord>,
}

fn texts(session: &Session) -> Vec<String> {
    session.utterances().iter().map(|u| u.text().to_string()).collect()
}

/// Write a training set as JSON lines.
pub fn write_training_set<W: Write>(
    instances: &[TrainingInstance],
    writer: &mut W,
) -> std::io::Result<()> {
    for inst in instances {
        let rec = InstanceRecord {
            source_id: inst.source_id.clone(),
            split_point: inst.split_point,
            query: texts(&inst.query),
            positive: texts(&inst.positive),
            negatives: inst
                .negatives
                .iter()
                .map(|n| NegativeRecord {
                    kind: n.kind,
                    id: n.session.id().to_string(),
                    utterances: texts(&n.session),
                })
                .collect(),
        };
        serde_json::to_writer(&mut *writer, &rec)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Read a training set written by [`write_training_set`].
pub fn load_training_set(path: impl AsRef<Path>) -> Result<Vec<TrainingInstance>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut instances = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InstanceRecord = serde_json::from_str(&line).map_err(|e| Error::BadRecord {
            path: path.into(),
            line: idx + 1,
            reason: e.to_string(),
        })?;
        let bad = |reason: String| Error::BadRecord { path: path.into(), line: idx + 1, reason };
        let query = Session::new(format!("{}#q", rec.source_id), &rec.query)
            .map_err(|e| bad(e.to_string()))?;
        let positive = Session::new(format!("{}#c", rec.source_id), &rec.positive)
            .map_err(|e| bad(e.to_string()))?;
        let negatives = rec
            .negatives
            .into_iter()
            .map(|n| {
                Ok(Negative {
                    session: Session::new(n.id, &n.utterances).map_err(|e| bad(e.to_string()))?,
                    kind: n.kind,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        instances.push(TrainingInstance {
            query,
            positive,
            negatives,
            source_id: rec.source_id,
            split_point: rec.split_point,
        });
    }
    Ok(instances)
}

#[derive(Serialize, Deserialize)]
struct PerturbationRecord {
    aspect: Aspect,
    source_id: String,
    query: Vec<String>,
    positive: Vec<String>,
    negative: Vec<String>,
}

/// Write a perturbation set as JSON lines.
pub fn write_perturbation_set<W: Write>(
    pairs: &[PerturbationPair],
    writer: &mut W,
) -> std::io::Result<()> {
    for pair in pairs {
        let rec = PerturbationRecord {
            aspect: pair.aspect,
            source_id: pair.source_id.clone(),
            query: texts(&pair.query),
            positive: texts(&pair.positive),
            negative: texts(&pair.negative),
        };
        serde_json::to_writer(&mut *writer, &rec)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Write a training set to a file path.
pub fn write_training_set_to_path(
    instances: &[TrainingInstance],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_training_set(instances, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}
