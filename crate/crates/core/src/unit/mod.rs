//! The basic operating unit: `m` passages in, an ordering of their identifiers out.
//!
//! Results list identifiers in increasing order of relevance, so the last
//! identifier is the single most relevant slot and the last `r` are the
//! winners a tree node keeps.

mod ledger;
mod remote;
mod synthetic;

pub use ledger::{CallLedger, CallSite, LedgerSnapshot};
pub use remote::{remote_rank, RemoteConfig, RemoteUnit, WireRequest, WireResponse, WireSlot};
pub use synthetic::{slot_scores, synthetic_rank, SyntheticOracle, SyntheticOracleConfig};

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::types::{Passage, PassageId, Query};

#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    /// 1-based identifier shown to the unit.
    pub identifier: usize,
    pub passage: Passage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitRequest {
    query: Query,
    slots: Vec<Slot>,
    r: usize,
    allow_duplicates: bool,
}

impl UnitRequest {
    /// Assigns identifiers `1..=m` in slot order.
    pub fn new(query: Query, passages: Vec<Passage>, r: usize, allow_duplicates: bool) -> Result<Self> {
        let m = passages.len();
        if m < 2 {
            return Err(Error::InvalidConfig(format!("unit window needs m >= 2, got {m}")));
        }
        if r == 0 || r >= m {
            return Err(Error::InvalidConfig(format!("unit needs 1 <= r < m, got r={r}, m={m}")));
        }
        if !allow_duplicates {
            let mut seen = HashSet::with_capacity(m);
            if let Some(dup) = passages.iter().find(|p| !seen.insert(&p.id)) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate passage {} in window without allow_duplicates",
                    dup.id
                )));
            }
        }
        let slots = passages
            .into_iter()
            .enumerate()
            .map(|(i, passage)| Slot {
                identifier: i + 1,
                passage,
            })
            .collect();
        Ok(Self {
            query,
            slots,
            r,
            allow_duplicates,
        })
    }

    pub fn query(&self) -> &Query {
        &self.query
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn m(&self) -> usize {
        self.slots.len()
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn allow_duplicates(&self) -> bool {
        self.allow_duplicates
    }

    /// Passage occupying the slot with this 1-based identifier.
    pub fn passage(&self, identifier: usize) -> &Passage {
        &self.slots[identifier - 1].passage
    }

    pub fn docids(&self) -> Vec<String> {
        self.slots.iter().map(|s| s.passage.id.to_string()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitResult {
    /// Permutation of `1..=m`, least relevant first.
    pub order: Vec<usize>,
    /// Backend output exactly as received.
    pub raw: String,
    /// Set when the backend output could not be parsed and identity order was substituted.
    pub fallback: bool,
}

impl UnitResult {
    pub fn new(order: Vec<usize>, raw: impl Into<String>) -> Self {
        Self {
            order,
            raw: raw.into(),
            fallback: false,
        }
    }

    pub fn identity_fallback(m: usize, raw: impl Into<String>) -> Self {
        Self {
            order: (1..=m).collect(),
            raw: raw.into(),
            fallback: true,
        }
    }

    pub fn most_relevant(&self) -> usize {
        *self.order.last().expect("unit result is never empty")
    }

    /// Identifiers from most to least relevant.
    pub fn descending(&self) -> impl Iterator<Item = usize> + '_ {
        self.order.iter().rev().copied()
    }

    /// The `r` most relevant identifiers, most relevant first.
    pub fn winners(&self, r: usize) -> Vec<usize> {
        self.descending().take(r).collect()
    }
}

/// A ranking backend. Implementations must tolerate concurrent calls.
pub trait RankingUnit: Send + Sync {
    fn rank(&self, request: &UnitRequest) -> Result<UnitResult>;
}

impl<T: RankingUnit + ?Sized> RankingUnit for &T {
    fn rank(&self, request: &UnitRequest) -> Result<UnitResult> {
        (**self).rank(request)
    }
}

impl<T: RankingUnit + ?Sized> RankingUnit for std::sync::Arc<T> {
    fn rank(&self, request: &UnitRequest) -> Result<UnitResult> {
        (**self).rank(request)
    }
}

/// Content-blind backend that always answers with identity order
/// (slot `m` most relevant). Used to count invocations.
#[derive(Debug, Default, Clone, Copy)]
pub struct CountingStub;

impl RankingUnit for CountingStub {
    fn rank(&self, request: &UnitRequest) -> Result<UnitResult> {
        let order: Vec<usize> = (1..=request.m()).collect();
        Ok(UnitResult::new(order.clone(), format_order(&order)))
    }
}

/// Invokes the backend once and records the call.
///
/// Orders that are not a permutation of `1..=m` are replaced by identity order
/// with `fallback` set.
pub fn rank_unit(
    request: &UnitRequest,
    backend: &dyn RankingUnit,
    ledger: &CallLedger,
    site: CallSite,
) -> Result<UnitResult> {
    let outcome = backend.rank(request);
    let result = outcome.map(|res| {
        if res.fallback || is_permutation(&res.order, request.m()) {
            res
        } else {
            UnitResult::identity_fallback(request.m(), res.raw)
        }
    });
    ledger.record(site, result.as_ref().map(|r| r.fallback).unwrap_or(false));
    result
}

/// Parses whitespace-separated identifiers. Succeeds only on exactly `m`
/// tokens forming a permutation of `1..=m`.
pub fn parse_unit_output(text: &str, m: usize) -> Option<Vec<usize>> {
    let order: Vec<usize> = text
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .ok()?;
    is_permutation(&order, m).then_some(order)
}

pub fn is_permutation(order: &[usize], m: usize) -> bool {
    if order.len() != m {
        return false;
    }
    let mut seen = vec![false; m + 1];
    order.iter().all(|&i| {
        let fresh = (1..=m).contains(&i) && !seen[i];
        if fresh {
            seen[i] = true;
        }
        fresh
    })
}

pub fn format_order(order: &[usize]) -> String {
    order
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Maps a result back to passage ids, most relevant first, keeping the first
/// occurrence of each id (windows may repeat passages in edge-case mode).
pub fn dedup_descending(request: &UnitRequest, result: &UnitResult) -> Vec<PassageId> {
    let mut seen = HashSet::new();
    result
        .descending()
        .map(|ident| request.passage(ident).id.clone())
        .filter(|id| seen.insert(id.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn request(ids: &[&str], allow_duplicates: bool) -> UnitRequest {
        let ps = ids.iter().map(|id| Passage::new(*id, "").unwrap()).collect();
        UnitRequest::new(Query::new("q", "").unwrap(), ps, 1, allow_duplicates).unwrap()
    }

    #[test]
    fn parse_accepts_permutations() {
        assert_eq!(parse_unit_output("1 2 5 4 3", 5), Some(vec![1, 2, 5, 4, 3]));
        assert_eq!(parse_unit_output(" 2 3 1 5 4 ", 5), Some(vec![2, 3, 1, 5, 4]));
    }

    #[test]
    fn parse_rejects_bad_output() {
        assert_eq!(parse_unit_output("1 2 3", 5), None);
        assert_eq!(parse_unit_output("3 1", 5), None);
        assert_eq!(parse_unit_output("2 2 3 4 5", 5), None);
        assert_eq!(parse_unit_output("1 2 3 4 6", 5), None);
        assert_eq!(parse_unit_output("0 1 2 3 4", 5), None);
        assert_eq!(parse_unit_output("[3] > [1]", 5), None);
        assert_eq!(parse_unit_output("", 5), None);
    }

    #[test]
    fn rank_unit_consistent_scores() {
        let req = request(&["a", "b", "c", "d", "e"], false);
        let scores: HashMap<_, _> = [("a", 0.2), ("b", 0.9), ("c", 0.5), ("d", 0.1), ("e", 0.7)]
            .into_iter()
            .map(|(k, v)| (PassageId::new(k).unwrap(), v))
            .collect();
        let oracle = SyntheticOracle::new(SyntheticOracleConfig::new(scores));
        let ledger = CallLedger::new();
        let res = rank_unit(&req, &oracle, &ledger, CallSite::default()).unwrap();
        assert_eq!(res.order, [4, 1, 3, 5, 2]);
        assert_eq!(res.winners(1), [2]);
        assert_eq!(ledger.snapshot().total, 1);
    }

    #[test]
    fn duplicate_window_gives_identity() {
        let req = request(&["a", "a", "a", "a", "a"], true);
        let oracle = SyntheticOracle::new(SyntheticOracleConfig::new(HashMap::new()));
        let res = rank_unit(&req, &oracle, &CallLedger::new(), CallSite::default()).unwrap();
        assert_eq!(res.order, [1, 2, 3, 4, 5]);
        assert_eq!(dedup_descending(&req, &res).len(), 1);
    }

    #[test]
    fn duplicates_need_flag() {
        let ps = vec![Passage::new("a", "").unwrap(), Passage::new("a", "").unwrap()];
        assert!(UnitRequest::new(Query::new("q", "").unwrap(), ps, 1, false).is_err());
    }

    #[test]
    fn invalid_r_rejected() {
        let ps: Vec<_> = ["a", "b", "c"].iter().map(|id| Passage::new(*id, "").unwrap()).collect();
        let q = Query::new("q", "").unwrap();
        assert!(UnitRequest::new(q.clone(), ps.clone(), 0, false).is_err());
        assert!(UnitRequest::new(q.clone(), ps.clone(), 3, false).is_err());
        assert!(UnitRequest::new(q, ps, 2, false).is_ok());
    }

    struct Broken;

    impl RankingUnit for Broken {
        fn rank(&self, _: &UnitRequest) -> Result<UnitResult> {
            Ok(UnitResult::new(vec![1, 1, 2], "1 1 2"))
        }
    }

    #[test]
    fn non_permutation_falls_back() {
        let req = request(&["a", "b", "c"], false);
        let ledger = CallLedger::new();
        let res = rank_unit(&req, &Broken, &ledger, CallSite::default()).unwrap();
        assert!(res.fallback);
        assert_eq!(res.order, [1, 2, 3]);
        assert_eq!(res.raw, "1 1 2");
        assert_eq!(ledger.snapshot().fallbacks, 1);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn synthetic_results_are_permutations(
                m in 2usize..12,
                seed in any::<u64>(),
                sigma in 0.0f64..3.0,
                scores in prop::collection::vec(-5.0f64..5.0, 12),
            ) {
                let ids: Vec<String> = (0..m).map(|i| format!("p{i}")).collect();
                let ps = ids.iter().map(|id| Passage::new(id.clone(), "").unwrap()).collect();
                let req = UnitRequest::new(Query::new("q", "").unwrap(), ps, 1, false).unwrap();
                let base = ids.iter().zip(&scores).map(|(id, s)| (PassageId::new(id.clone()).unwrap(), *s)).collect();
                let mut cfg = SyntheticOracleConfig::new(base);
                cfg.noise_sigma = sigma;
                cfg.seed = seed;
                let res = synthetic_rank(&req, &cfg).unwrap();
                prop_assert!(is_permutation(&res.order, m));
                prop_assert_eq!(parse_unit_output(&res.raw, m), Some(res.order.clone()));
            }

            #[test]
            fn format_parse_roundtrip(perm in Just((1..=9usize).collect::<Vec<_>>()).prop_shuffle()) {
                prop_assert_eq!(parse_unit_output(&format_order(&perm), 9), Some(perm));
            }
        }
    }
}
