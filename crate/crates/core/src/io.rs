//! Candidate, qrels and run files.
//!
//! - candidates: JSON lines, `{"qid", "query", "hits": [{"docid", "text", "score"}]}`
//! - qrels: `qid 0 docid grade`
//! - runs: `qid Q0 docid rank score tag`

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::types::{CandidateList, Passage, PassageId, Qrels, Query, RankedEntry, Ranking};

#[derive(Debug, Deserialize)]
struct RawHit {
    docid: String,
    #[serde(default)]
    text: String,
    #[serde(default)]
    score: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct RawQuery {
    qid: String,
    #[serde(default)]
    query: String,
    hits: Vec<RawHit>,
}

/// A candidate list plus the first-stage retriever's scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidates {
    pub list: CandidateList,
    pub first_stage: HashMap<PassageId, f64>,
}

fn parse_error(path: &Path, line: usize, message: impl ToString) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.to_string(),
    }
}

pub fn read_candidates_scored(path: impl AsRef<Path>) -> Result<Vec<ScoredCandidates>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawQuery = serde_json::from_str(line).map_err(|e| parse_error(path, lineno, e))?;
        let query = Query::new(raw.qid, raw.query).map_err(|e| parse_error(path, lineno, e))?;
        let hits = raw.hits.len();
        let mut first_stage = HashMap::with_capacity(hits);
        let mut passages = Vec::with_capacity(hits);
        for hit in raw.hits {
            let p = Passage::new(hit.docid, hit.text).map_err(|e| parse_error(path, lineno, e))?;
            if let Some(s) = hit.score {
                first_stage.entry(p.id.clone()).or_insert(s);
            }
            passages.push(p);
        }
        let list = CandidateList::dedup_candidates(query, passages).map_err(|e| parse_error(path, lineno, e))?;
        if list.n() < hits {
            warn!(
                "{}:{lineno}: query {} has {} duplicate hits, kept first occurrences",
                path.display(),
                list.query().qid,
                hits - list.n()
            );
        }
        out.push(ScoredCandidates { list, first_stage });
    }
    Ok(out)
}

pub fn read_candidates(path: impl AsRef<Path>) -> Result<Vec<CandidateList>> {
    Ok(read_candidates_scored(path)?.into_iter().map(|s| s.list).collect())
}

pub fn read_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut qrels = Qrels::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        let [qid, _, docid, grade] = cols[..] else {
            return Err(parse_error(path, lineno, format!("expected 4 columns, found {}", cols.len())));
        };
        let grade: i64 = grade
            .parse()
            .map_err(|_| parse_error(path, lineno, format!("grade {grade:?} is not an integer")))?;
        if grade < 0 {
            warn!("{}:{lineno}: negative grade {grade} for {qid}/{docid} clamped to 0", path.display());
        }
        let grade = u32::try_from(grade.max(0)).map_err(|_| parse_error(path, lineno, "grade too large"))?;
        let id = PassageId::new(docid).map_err(|e| parse_error(path, lineno, e))?;
        qrels.insert(qid, id, grade);
    }
    Ok(qrels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub qid: String,
    pub docid: PassageId,
    pub rank: usize,
    pub score: f64,
    pub tag: String,
}

impl RunRecord {
    /// `qid Q0 docid rank score tag`; the score uses the shortest decimal that
    /// parses back to the same value.
    pub fn to_line(&self) -> String {
        format!("{} Q0 {} {} {} {}", self.qid, self.docid, self.rank, self.score, self.tag)
    }
}

pub fn run_records(rankings: &[Ranking], tag: &str) -> Vec<RunRecord> {
    rankings
        .iter()
        .flat_map(|r| {
            r.ordered.iter().map(|e| RunRecord {
                qid: r.query.qid.clone(),
                docid: e.id.clone(),
                rank: e.rank,
                score: e.score,
                tag: tag.to_string(),
            })
        })
        .collect()
}

pub fn format_run(records: &[RunRecord]) -> String {
    let mut out = String::new();
    for r in records {
        writeln!(out, "{}", r.to_line()).expect("writing to a String");
    }
    out
}

pub fn write_run(rankings: &[Ranking], path: impl AsRef<Path>, tag: &str) -> Result<()> {
    if tag.is_empty() || tag.contains(char::is_whitespace) {
        return Err(Error::InvalidConfig(format!("run tag {tag:?} must be one non-empty word")));
    }
    fs::write(path, format_run(&run_records(rankings, tag)))?;
    Ok(())
}

pub fn read_run_records(path: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let cols: Vec<&str> = line.split(' ').collect();
        if line.trim().is_empty() {
            continue;
        }
        let [qid, q0, docid, rank, score, tag] = cols[..] else {
            return Err(parse_error(path, lineno, format!("expected 6 columns, found {}", cols.len())));
        };
        if q0 != "Q0" {
            return Err(parse_error(path, lineno, format!("second column must be Q0, found {q0:?}")));
        }
        out.push(RunRecord {
            qid: qid.to_string(),
            docid: PassageId::new(docid).map_err(|e| parse_error(path, lineno, e))?,
            rank: rank.parse().map_err(|_| parse_error(path, lineno, format!("bad rank {rank:?}")))?,
            score: score.parse().map_err(|_| parse_error(path, lineno, format!("bad score {score:?}")))?,
            tag: tag.to_string(),
        });
    }
    Ok(out)
}

/// Groups rows by query (first-appearance order). Ranks must run 1, 2, ...
/// within each query. Query texts are not stored in run files and come back empty.
pub fn read_run(path: impl AsRef<Path>) -> Result<Vec<Ranking>> {
    let path = path.as_ref();
    let mut rankings: Vec<Ranking> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (i, rec) in read_run_records(path)?.into_iter().enumerate() {
        let slot = *index.entry(rec.qid.clone()).or_insert_with(|| {
            rankings.push(Ranking {
                query: Query::new(rec.qid.clone(), "").expect("qid is a non-empty column"),
                ordered: Vec::new(),
            });
            rankings.len() - 1
        });
        let ranking = &mut rankings[slot];
        if rec.rank != ranking.ordered.len() + 1 {
            return Err(parse_error(
                path,
                i + 1,
                format!("query {} rank {} out of sequence", rec.qid, rec.rank),
            ));
        }
        ranking.ordered.push(RankedEntry {
            id: rec.docid,
            rank: rec.rank,
            score: rec.score,
        });
    }
    Ok(rankings)
}
