//! Dialogue corpus data model: utterances, sessions, and indexed corpora,
//! plus line-delimited JSON ingestion and emission.
//!
//! A corpus file is UTF-8 JSON lines, one session per line:
//!
//! ```json
//! {"id":"s1","utterances":["hi there","hello"],"meta":{"lang":"en"}}
//! ```
//!
//! `meta` is passed through untouched. Constructed sessions additionally
//! carry `source_ids` and `sim_scores` provenance fields.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{normalize, tokenize};

/// One normalized utterance with a lazily computed token cache.
#[derive(Debug, Clone)]
pub struct Utterance {
    text: String,
    tokens: OnceLock<Vec<String>>,
}

impl Utterance {
    /// Normalize `text` and wrap it. Fails if nothing is left after
    /// normalization.
    pub fn new(text: &str) -> Result<Self> {
        let text = normalize(text);
        if text.is_empty() {
            return Err(Error::Config { reason: "utterance is empty after normalization".into() });
        }
        Ok(Utterance { text, tokens: OnceLock::new() })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Token sequence, computed on first use.
    pub fn tokens(&self) -> &[String] {
        self.tokens.get_or_init(|| tokenize(&self.text))
    }
}

impl PartialEq for Utterance {
    fn eq(&self, other: &Self) -> bool {
        self.text == other.text
    }
}
impl Eq for Utterance {}

/// Where a session came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    /// Ingested from an origin corpus file.
    Origin,
    /// Produced by concatenation during rescaling.
    Constructed,
}

/// Provenance recorded on constructed sessions: which sessions were chained
/// and the retrieval score of each appended segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_ids: Vec<String>,
    pub sim_scores: Vec<f64>,
}

/// An ordered multi-turn dialogue, the unit of retrieval and concatenation.
#[derive(Debug, Clone)]
pub struct Session {
    id: String,
    utterances: Vec<Utterance>,
    source: Source,
    /// Opaque metadata from the input record, passed through untouched.
    pub meta: Option<serde_json::Value>,
    pub provenance: Option<Provenance>,
}

impl Session {
    /// Build a session from raw utterance texts, normalizing each.
    pub fn new(id: impl Into<String>, texts: &[impl AsRef<str>]) -> Result<Self> {
        let utterances = texts
            .iter()
            .map(|t| Utterance::new(t.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Self::from_utterances(id, utterances, Source::Origin)
    }

    /// Build a session from already-normalized utterances.
    pub fn from_utterances(
        id: impl Into<String>,
        utterances: Vec<Utterance>,
        source: Source,
    ) -> Result<Self> {
        let id = id.into();
        if utterances.is_empty() {
            return Err(Error::SessionTooShort { id, turns: 0, min: 1 });
        }
        Ok(Session { id, utterances, source, meta: None, provenance: None })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    /// Number of turns.
    pub fn turns(&self) -> usize {
        self.utterances.len()
    }

    pub fn source(&self) -> Source {
        self.source
    }

    /// All utterance texts joined with a single space.
    pub fn joined_text(&self) -> String {
        let mut out = String::new();
        for (i, u) in self.utterances.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(u.text());
        }
        out
    }

    /// Concatenated token stream of all utterances, in order.
    pub fn token_stream(&self) -> Vec<&str> {
        self.utterances
            .iter()
            .flat_map(|u| u.tokens().iter().map(String::as_str))
            .collect()
    }
}

/// Derive the id of `a ⊕ b`: an existing `base::k` suffix increments to
/// `base::k+1`, anything else becomes `a_id::1`. The counter is the number
/// of concatenation updates applied to the seed, so provenance stays
/// greppable.
fn concat_id(a_id: &str) -> String {
    if let Some((base, k)) = a_id.rsplit_once("::") {
        if let Ok(k) = k.parse::<u64>() {
            return format!("{base}::{}", k + 1);
        }
    }
    format!("{a_id}::1")
}

/// `a ⊕ b`: a's turns followed by b's turns, tagged as constructed.
pub fn concat_sessions(a: &Session, b: &Session) -> Session {
    let mut utterances = a.utterances.clone();
    utterances.extend(b.utterances.iter().cloned());
    Session {
        id: concat_id(&a.id),
        utterances,
        source: Source::Constructed,
        meta: None,
        provenance: None,
    }
}

/// An indexed, immutable collection of sessions.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    sessions: Vec<Session>,
    id_map: HashMap<String, usize>,
}

impl Corpus {
    /// Assemble a corpus, rejecting duplicate ids.
    pub fn from_sessions(sessions: Vec<Session>) -> Result<Self> {
        let mut id_map = HashMap::with_capacity(sessions.len());
        for (pos, s) in sessions.iter().enumerate() {
            if id_map.insert(s.id.clone(), pos).is_some() {
                return Err(Error::DuplicateSession { id: s.id.clone() });
            }
        }
        Ok(Corpus { sessions, id_map })
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    pub fn sessions(&self) -> &[Session] {
        &self.sessions
    }

    pub fn get(&self, id: &str) -> Option<&Session> {
        self.id_map.get(id).map(|&pos| &self.sessions[pos])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.id_map.get(id).copied()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Session> {
        self.sessions.iter()
    }
}

/// What to do with a malformed record during load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MalformedPolicy {
    /// Fail the whole load on the first malformed line.
    #[default]
    Abort,
    /// Skip malformed lines, collecting them in the load report.
    Skip,
}

/// A record that was skipped during a lenient load.
#[derive(Debug, Clone, Serialize)]
pub struct SkippedRecord {
    pub line: usize,
    pub reason: String,
}

/// Summary of one corpus load.
#[derive(Debug, Clone, Default, Serialize)]
pub struct LoadReport {
    pub lines_read: usize,
    pub sessions_loaded: usize,
    pub skipped: Vec<SkippedRecord>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordIn {
    id: String,
    utterances: Vec<String>,
    #[serde(default)]
    meta: Option<serde_json::Value>,
    #[serde(default)]
    source_ids: Option<Vec<String>>,
    #[serde(default)]
    sim_scores: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    id: &'a str,
    utterances: Vec<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    meta: &'a Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    source_ids: Option<&'a [String]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sim_scores: Option<&'a [f64]>,
}

fn record_to_session(rec: RecordIn) -> Result<Session> {
    if rec.utterances.is_empty() {
        return Err(Error::Config { reason: format!("session {:?} has no utterances", rec.id) });
    }
    let mut s = Session::new(rec.id, &rec.utterances)?;
    s.meta = rec.meta;
    if let Some(source_ids) = rec.source_ids {
        s.source = Source::Constructed;
        s.provenance =
            Some(Provenance { source_ids, sim_scores: rec.sim_scores.unwrap_or_default() });
    }
    Ok(s)
}

/// Load a JSON-lines corpus file.
///
/// Malformed lines are handled per `policy`; a duplicate id always aborts,
/// naming both lines.
pub fn load_corpus(path: impl AsRef<Path>, policy: MalformedPolicy) -> Result<(Corpus, LoadReport)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    let mut sessions = Vec::new();
    let mut first_lines: HashMap<String, usize> = HashMap::new();
    let mut report = LoadReport::default();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        report.lines_read += 1;

        let parsed: std::result::Result<Session, String> = serde_json::from_str::<RecordIn>(&line)
            .map_err(|e| e.to_string())
            .and_then(|rec| record_to_session(rec).map_err(|e| e.to_string()));
        match parsed {
            Ok(session) => {
                if let Some(&first) = first_lines.get(session.id()) {
                    return Err(Error::DuplicateId {
                        id: session.id().to_string(),
                        first_line: first,
                        second_line: line_no,
                    });
                }
                first_lines.insert(session.id().to_string(), line_no);
                sessions.push(session);
            }
            Err(reason) => match policy {
                MalformedPolicy::Abort => {
                    return Err(Error::BadRecord { path: path.into(), line: line_no, reason })
                }
                MalformedPolicy::Skip => report.skipped.push(SkippedRecord { line: line_no, reason }),
            },
        }
    }

    report.sessions_loaded = sessions.len();
    Ok((Corpus::from_sessions(sessions)?, report))
}

/// Write a corpus as JSON lines.
pub fn emit_corpus<W: Write>(corpus: &Corpus, writer: &mut W) -> std::io::Result<()> {
    for s in corpus.iter() {
        let rec = RecordOut {
            id: s.id(),
            utterances: s.utterances().iter().map(Utterance::text).collect(),
            meta: &s.meta,
            source_ids: s.provenance.as_ref().map(|p| p.source_ids.as_slice()),
            sim_scores: s.provenance.as_ref().map(|p| p.sim_scores.as_slice()),
        };
        serde_json::to_writer(&mut *writer, &rec)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Write a corpus to a file path.
pub fn emit_corpus_to_path(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    emit_corpus(corpus, &mut writer).map_err(|e| Error::io(path, e))?;
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Basic size statistics of a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorpusStats {
    pub num_sessions: usize,
    pub avg_turns: f64,
    pub avg_utt_tokens: f64,
}

/// Session count, mean turns per session, and mean tokens per utterance.
/// All zero for an empty corpus.
pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    if corpus.is_empty() {
        return CorpusStats { num_sessions: 0, avg_turns: 0.0, avg_utt_tokens: 0.0 };
    }
    let num_sessions = corpus.len();
    let total_turns: usize = corpus.iter().map(Session::turns).sum();
    let total_tokens: usize =
        corpus.iter().flat_map(|s| s.utterances().iter()).map(|u| u.tokens().len()).sum();
    CorpusStats {
        num_sessions,
        avg_turns: total_turns as f64 / num_sessions as f64,
        avg_utt_tokens: if total_turns == 0 {
            0.0
        } else {
            total_tokens as f64 / total_turns as f64
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn session(id: &str, texts: &[&str]) -> Session {
        Session::new(id, texts).unwrap()
    }

    #[test]
    fn load_two_well_formed_lines() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":"a","utterances":["hi","yo"]}}"#).unwrap();
        writeln!(f, r#"{{"id":"b","utterances":["x"]}}"#).unwrap();
        let (corpus, report) = load_corpus(f.path(), MalformedPolicy::Abort).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(report.sessions_loaded, 2);
        assert_eq!(corpus.get("a").unwrap().turns(), 2);
    }

    #[test]
    fn duplicate_id_names_both_lines() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for (i, id) in ["s0", "s1", "s1"].iter().enumerate() {
            writeln!(f, r#"{{"id":"{id}","utterances":["u{i}"]}}"#).unwrap();
        }
        let err = load_corpus(f.path(), MalformedPolicy::Abort).unwrap_err();
        match err {
            Error::DuplicateId { id, first_line, second_line } => {
                assert_eq!(id, "s1");
                assert_eq!((first_line, second_line), (2, 3));
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let f = tempfile::NamedTempFile::new().unwrap();
        let (corpus, report) = load_corpus(f.path(), MalformedPolicy::Abort).unwrap();
        assert_eq!(corpus.len(), 0);
        assert_eq!(report.lines_read, 0);
    }

    #[test]
    fn malformed_line_skip_vs_abort() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":"a","utterances":["hi"]}}"#).unwrap();
        writeln!(f, r#"{{"id":"bad""#).unwrap();
        writeln!(f, r#"{{"id":"c","utterances":["yo"]}}"#).unwrap();

        let err = load_corpus(f.path(), MalformedPolicy::Abort).unwrap_err();
        match err {
            Error::BadRecord { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error: {other}"),
        }

        let (corpus, report) = load_corpus(f.path(), MalformedPolicy::Skip).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(report.skipped.len(), 1);
        assert_eq!(report.skipped[0].line, 2);
    }

    #[test]
    fn empty_utterance_is_malformed() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":"a","utterances":["   "]}}"#).unwrap();
        assert!(load_corpus(f.path(), MalformedPolicy::Abort).is_err());
    }

    #[test]
    fn round_trip_preserves_ids_and_utterances() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":"a","utterances":["hi there","你好"],"meta":{{"k":1}}}}"#).unwrap();
        writeln!(f, r#"{{"id":"b","utterances":["solo"]}}"#).unwrap();
        let (corpus, _) = load_corpus(f.path(), MalformedPolicy::Abort).unwrap();

        let mut buf = Vec::new();
        emit_corpus(&corpus, &mut buf).unwrap();
        let mut f2 = tempfile::NamedTempFile::new().unwrap();
        f2.write_all(&buf).unwrap();
        let (corpus2, _) = load_corpus(f2.path(), MalformedPolicy::Abort).unwrap();

        assert_eq!(corpus.len(), corpus2.len());
        for (s1, s2) in corpus.iter().zip(corpus2.iter()) {
            assert_eq!(s1.id(), s2.id());
            assert_eq!(s1.utterances(), s2.utterances());
            assert_eq!(s1.meta, s2.meta);
        }
    }

    #[test]
    fn concat_preserves_order_and_length() {
        let a = session("a", &["1", "2"]);
        let b = session("b", &["3", "4", "5"]);
        let c = concat_sessions(&a, &b);
        assert_eq!(c.turns(), 5);
        assert_eq!(c.utterances()[0].text(), "1");
        assert_eq!(c.utterances()[2].text(), "3");
        assert_eq!(c.source(), Source::Constructed);
        assert_eq!(c.id(), "a::1");
    }

    #[test]
    fn concat_id_counter_increments() {
        let a = session("seed", &["1"]);
        let b = session("b", &["2"]);
        let once = concat_sessions(&a, &b);
        assert_eq!(once.id(), "seed::1");
        let twice = concat_sessions(&once, &b);
        assert_eq!(twice.id(), "seed::2");
        // non-numeric suffix is not a counter
        let odd = session("x::y", &["1"]);
        assert_eq!(concat_sessions(&odd, &b).id(), "x::y::1");
    }

    #[test]
    fn concat_is_associative_on_utterances() {
        let a = session("a", &["1", "2"]);
        let b = session("b", &["3"]);
        let c = session("c", &["4", "5"]);
        let left = concat_sessions(&concat_sessions(&a, &b), &c);
        let right = concat_sessions(&a, &concat_sessions(&b, &c));
        assert_eq!(left.utterances(), right.utterances());
    }

    #[test]
    fn stats_basics() {
        let corpus = Corpus::from_sessions(vec![
            session("a", &["one two", "three"]),
            session("b", &["a b c", "d", "e", "f"]),
        ])
        .unwrap();
        let stats = corpus_stats(&corpus);
        assert_eq!(stats.num_sessions, 2);
        assert!((stats.avg_turns - 3.0).abs() < 1e-12);

        let empty = Corpus::default();
        let stats = corpus_stats(&empty);
        assert_eq!(stats.num_sessions, 0);
        assert_eq!(stats.avg_turns, 0.0);
        assert_eq!(stats.avg_utt_tokens, 0.0);
    }
}
