//! Domain types shared by the ranking algorithms, metrics and file formats.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Document identifier as produced by the first-stage retriever.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PassageId(String);

impl PassageId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::EmptyPassageId);
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for PassageId {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        Self::new(value)
    }
}

impl From<PassageId> for String {
    fn from(id: PassageId) -> Self {
        id.0
    }
}

impl fmt::Display for PassageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: PassageId,
    pub text: String,
}

impl Passage {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        Ok(Self {
            id: PassageId::new(id)?,
            text: text.into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub qid: String,
    pub text: String,
}

impl Query {
    pub fn new(qid: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let qid = qid.into();
        if qid.is_empty() {
            return Err(Error::EmptyQueryId);
        }
        Ok(Self {
            qid,
            text: text.into(),
        })
    }
}

/// One query and its deduplicated candidates in first-stage order (rank 1 first).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateList {
    query: Query,
    candidates: Vec<Passage>,
}

impl CandidateList {
    /// Builds a list from raw retriever output, keeping the first occurrence of
    /// every passage id.
    pub fn dedup_candidates(query: Query, raw: Vec<Passage>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::EmptyCandidateList);
        }
        let mut seen = HashSet::with_capacity(raw.len());
        let candidates = raw
            .into_iter()
            .filter(|p| seen.insert(p.id.clone()))
            .collect();
        Ok(Self { query, candidates })
    }

    pub fn query(&self) -> &Query {
        &self.query
    }

    pub fn candidates(&self) -> &[Passage] {
        &self.candidates
    }

    pub fn n(&self) -> usize {
        self.candidates.len()
    }

    pub fn ids(&self) -> impl Iterator<Item = &PassageId> {
        self.candidates.iter().map(|p| &p.id)
    }

    /// Same query, candidates reordered by `perm` (a permutation of `0..n`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        debug_assert_eq!(perm.len(), self.n());
        Self {
            query: self.query.clone(),
            candidates: perm.iter().map(|&i| self.candidates[i].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub id: PassageId,
    pub rank: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub query: Query,
    pub ordered: Vec<RankedEntry>,
}

impl Ranking {
    /// Materializes a rank-only ordering: rank `i` gets score `len - i + 1`.
    pub fn from_order(query: Query, order: impl IntoIterator<Item = PassageId>) -> Self {
        let ids: Vec<PassageId> = order.into_iter().collect();
        let len = ids.len();
        let ordered = ids
            .into_iter()
            .enumerate()
            .map(|(i, id)| RankedEntry {
                id,
                rank: i + 1,
                score: (len - i) as f64,
            })
            .collect();
        Self { query, ordered }
    }

    pub fn ids(&self) -> impl Iterator<Item = &PassageId> {
        self.ordered.iter().map(|e| &e.id)
    }

    pub fn len(&self) -> usize {
        self.ordered.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordered.is_empty()
    }
}

/// Graded relevance judgments. Absent pairs have grade 0.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    grades: BTreeMap<String, HashMap<PassageId, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Later inserts for the same pair overwrite earlier ones.
    pub fn insert(&mut self, qid: impl Into<String>, id: PassageId, grade: u32) {
        self.grades.entry(qid.into()).or_default().insert(id, grade);
    }

    pub fn grade(&self, qid: &str, id: &PassageId) -> u32 {
        self.grades
            .get(qid)
            .and_then(|m| m.get(id))
            .copied()
            .unwrap_or(0)
    }

    /// All judgments for a query, sorted by passage id.
    pub fn judged(&self, qid: &str) -> Vec<(&PassageId, u32)> {
        let mut out: Vec<_> = self
            .grades
            .get(qid)
            .map(|m| m.iter().map(|(id, &g)| (id, g)).collect())
            .unwrap_or_default();
        out.sort_by(|a, b| a.0.cmp(b.0));
        out
    }

    /// Judged passages with grade >= 1, sorted by passage id.
    pub fn positives(&self, qid: &str) -> Vec<&PassageId> {
        self.judged(qid)
            .into_iter()
            .filter(|(_, g)| *g >= 1)
            .map(|(id, _)| id)
            .collect()
    }

    pub fn contains_query(&self, qid: &str) -> bool {
        self.grades.contains_key(qid)
    }

    pub fn qids(&self) -> impl Iterator<Item = &str> {
        self.grades.keys().map(String::as_str)
    }
}
