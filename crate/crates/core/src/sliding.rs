//! Sliding-window reranking: a window of `w` moves from the tail of the list
//! toward the head in steps of `s`, so the best `w - s` passages of each
//! window carry into the next one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{CandidateList, Passage, Query, Ranking};
use crate::unit::{dedup_descending, rank_unit, CallLedger, CallSite, RankingUnit, UnitRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlidingConfig {
    pub window: usize,
    pub stride: usize,
    /// Number of passes; `None` means `ceil(k / (w - s))`.
    pub iterations: Option<usize>,
    /// The last pass skips the prefix earlier passes already settled.
    pub corrected_savings: bool,
}

impl SlidingConfig {
    pub fn new(window: usize, stride: usize) -> Result<Self> {
        if window < 2 {
            return Err(Error::InvalidConfig(format!("sliding window needs w >= 2, got {window}")));
        }
        if stride == 0 || stride >= window {
            return Err(Error::InvalidConfig(format!(
                "sliding stride needs 1 <= s < w, got s={stride}, w={window}"
            )));
        }
        Ok(Self {
            window,
            stride,
            iterations: None,
            corrected_savings: false,
        })
    }

    pub fn with_iterations(mut self, iterations: usize) -> Result<Self> {
        if iterations == 0 {
            return Err(Error::InvalidConfig("sliding iterations must be >= 1".into()));
        }
        self.iterations = Some(iterations);
        Ok(self)
    }

    pub fn with_corrected_savings(mut self, on: bool) -> Self {
        self.corrected_savings = on;
        self
    }

    /// Passages settled at the head by each pass.
    pub fn carry(&self) -> usize {
        self.window - self.stride
    }

    pub fn passes_for(&self, k: usize) -> usize {
        self.iterations.unwrap_or_else(|| k.div_ceil(self.carry()).max(1))
    }

    /// Where pass `p` (0-based, out of `passes`) starts.
    fn pass_start(&self, p: usize, passes: usize, n: usize) -> usize {
        if self.corrected_savings && p + 1 == passes {
            (p * self.carry()).min(n - self.window)
        } else {
            0
        }
    }
}

/// Unit calls for one pass over `len` positions.
pub fn calls_per_pass(len: usize, w: usize, s: usize) -> u64 {
    if len <= w {
        1
    } else {
        1 + (len - w).div_ceil(s) as u64
    }
}

/// One tail-to-head pass over `order[start..]`. Returns the number of calls.
pub fn sliding_pass(
    query: &Query,
    order: &mut [Passage],
    start: usize,
    cfg: &SlidingConfig,
    unit: &dyn RankingUnit,
    ledger: &CallLedger,
    pass: usize,
) -> Result<usize> {
    let (w, s) = (cfg.window, cfg.stride);
    if order.len() < w || start > order.len() - w {
        return Err(Error::InvalidConfig(format!(
            "sliding pass over {} passages from {start} with w={w}",
            order.len()
        )));
    }
    let r = cfg.carry();
    let mut end = order.len();
    let mut calls = 0;
    loop {
        let lo = end.saturating_sub(w).max(start);
        let window = &mut order[lo..lo + w];
        let req = UnitRequest::new(query.clone(), window.to_vec(), r, false)?;
        let result = rank_unit(&req, unit, ledger, CallSite::new(0, pass))?;
        let reordered: Vec<Passage> = result.descending().map(|i| req.passage(i).clone()).collect();
        window.clone_from_slice(&reordered);
        calls += 1;
        if lo == start {
            return Ok(calls);
        }
        end -= s;
    }
}

/// Reranks `cl` with repeated sliding passes; the whole post-pass order is
/// returned, its head being the top `k`.
pub fn sliding_rerank(
    cl: &CandidateList,
    k: usize,
    cfg: &SlidingConfig,
    unit: &dyn RankingUnit,
    ledger: &CallLedger,
) -> Result<Ranking> {
    let n = cl.n();
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, n });
    }
    let w = cfg.window;
    if n < w {
        // one padded window; repeats are marked so the unit may see them
        let passages: Vec<Passage> = cl.candidates().iter().cycle().take(w).cloned().collect();
        let req = UnitRequest::new(cl.query().clone(), passages, n.clamp(1, w - 1), true)?;
        let result = rank_unit(&req, unit, ledger, CallSite::default())?;
        return Ok(Ranking::from_order(cl.query().clone(), dedup_descending(&req, &result)));
    }
    let mut order = cl.candidates().to_vec();
    let passes = cfg.passes_for(k);
    for p in 0..passes {
        let start = cfg.pass_start(p, passes, n);
        sliding_pass(cl.query(), &mut order, start, cfg, unit, ledger, p)?;
    }
    Ok(Ranking::from_order(cl.query().clone(), order.into_iter().map(|p| p.id)))
}

/// Exact number of unit calls [`sliding_rerank`] makes with default iterations.
pub fn predict_sliding_calls(n: usize, w: usize, s: usize, k: usize, corrected: bool) -> u64 {
    let passes = k.div_ceil(w - s).max(1);
    predict_sliding_calls_with(n, w, s, passes, corrected)
}

/// As [`predict_sliding_calls`] with an explicit pass count.
pub fn predict_sliding_calls_with(n: usize, w: usize, s: usize, passes: usize, corrected: bool) -> u64 {
    if n == 0 || passes == 0 {
        return 0;
    }
    if n < w {
        return 1;
    }
    let full = calls_per_pass(n, w, s);
    if !corrected {
        return full * passes as u64;
    }
    let start = ((passes - 1) * (w - s)).min(n - w);
    full * (passes as u64 - 1) + calls_per_pass(n - start, w, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::PassageId;
    use crate::unit::{CountingStub, SyntheticOracle, SyntheticOracleConfig};
    use std::collections::HashMap;

    fn list(n: usize) -> CandidateList {
        let ps = (1..=n).map(|i| Passage::new(format!("d{i}"), "").unwrap()).collect();
        CandidateList::dedup_candidates(Query::new("q", "").unwrap(), ps).unwrap()
    }

    fn oracle(scores: &[f64]) -> SyntheticOracle {
        let base: HashMap<_, _> = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| (PassageId::new(format!("d{}", i + 1)).unwrap(), s))
            .collect();
        SyntheticOracle::new(SyntheticOracleConfig::new(base))
    }

    fn names(r: &Ranking) -> Vec<String> {
        r.ids().map(|p| p.to_string()).collect()
    }

    #[test]
    fn per_pass_counts() {
        for (s, want) in [(1, 96), (2, 49), (3, 33), (4, 25)] {
            assert_eq!(calls_per_pass(100, 5, s), want);
            let cfg = SlidingConfig::new(5, s).unwrap().with_iterations(1).unwrap();
            let ledger = CallLedger::new();
            sliding_rerank(&list(100), 1, &cfg, &CountingStub, &ledger).unwrap();
            assert_eq!(ledger.total(), want);
        }
    }

    #[test]
    fn table_totals() {
        let rows = [(1, 288, 280), (2, 196, 191), (3, 165, 162), (4, 250, 248)];
        for (s, naive, corrected) in rows {
            assert_eq!(predict_sliding_calls(100, 5, s, 10, false), naive);
            assert_eq!(predict_sliding_calls(100, 5, s, 10, true), corrected);
            for (flag, want) in [(false, naive), (true, corrected)] {
                let cfg = SlidingConfig::new(5, s).unwrap().with_corrected_savings(flag);
                let ledger = CallLedger::new();
                sliding_rerank(&list(100), 10, &cfg, &CountingStub, &ledger).unwrap();
                assert_eq!(ledger.total(), want, "s={s} corrected={flag}");
            }
        }
        assert_eq!(predict_sliding_calls(100, 20, 10, 10, false), 9);
    }

    #[test]
    fn single_window_is_reversed_unit_order() {
        let cfg = SlidingConfig::new(5, 2).unwrap();
        let ledger = CallLedger::new();
        let ranking = sliding_rerank(&list(5), 5, &cfg, &oracle(&[1.0, 5.0, 2.0, 4.0, 3.0]), &ledger).unwrap();
        assert_eq!(ledger.total(), 2);
        assert_eq!(names(&ranking), ["d2", "d4", "d5", "d3", "d1"]);

        let ledger = CallLedger::new();
        let cfg = cfg.with_iterations(1).unwrap();
        let ranking = sliding_rerank(&list(5), 1, &cfg, &oracle(&[1.0, 5.0, 2.0, 4.0, 3.0]), &ledger).unwrap();
        assert_eq!(ledger.total(), 1);
        assert_eq!(names(&ranking), ["d2", "d4", "d5", "d3", "d1"]);
    }

    #[test]
    fn short_list_pads_with_repeats() {
        let cfg = SlidingConfig::new(5, 2).unwrap();
        let ledger = CallLedger::new();
        let ranking = sliding_rerank(&list(3), 2, &cfg, &oracle(&[1.0, 3.0, 2.0]), &ledger).unwrap();
        assert_eq!(ledger.total(), 1);
        assert_eq!(names(&ranking), ["d2", "d3", "d1"]);
    }

    #[test]
    fn one_pass_finds_the_maximum() {
        let scores: Vec<f64> = (0..37).map(|i| ((i * 17) % 37) as f64).collect();
        let best = scores.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let cfg = SlidingConfig::new(5, 4).unwrap().with_iterations(1).unwrap();
        let ranking = sliding_rerank(&list(37), 1, &cfg, &oracle(&scores), &CallLedger::new()).unwrap();
        assert_eq!(names(&ranking)[0], format!("d{}", best + 1));
    }

    #[test]
    fn config_validation() {
        assert!(SlidingConfig::new(5, 5).is_err());
        assert!(SlidingConfig::new(5, 0).is_err());
        assert!(SlidingConfig::new(1, 1).is_err());
        assert!(SlidingConfig::new(5, 1).unwrap().with_iterations(0).is_err());
        assert!(sliding_rerank(&list(5), 6, &SlidingConfig::new(3, 1).unwrap(), &CountingStub, &CallLedger::new()).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn ledger_matches_prediction(n in 1usize..120, w in 2usize..12, s_frac in 0.0f64..1.0, k_frac in 0.0f64..1.0, corrected in any::<bool>()) {
                let s = 1 + ((w - 1) as f64 * s_frac) as usize % (w - 1);
                let k = 1 + ((n as f64 * k_frac) as usize).min(n - 1);
                let cfg = SlidingConfig::new(w, s).unwrap().with_corrected_savings(corrected);
                let ledger = CallLedger::new();
                sliding_rerank(&list(n), k, &cfg, &CountingStub, &ledger).unwrap();
                prop_assert_eq!(ledger.total(), predict_sliding_calls(n, w, s, k, corrected));
            }

            #[test]
            fn enough_passes_give_true_topk(
                perm in (1usize..90).prop_flat_map(|n| Just((0..n).collect::<Vec<_>>()).prop_shuffle()),
                w in 2usize..11,
                s_frac in 0.0f64..1.0,
                corrected in any::<bool>(),
            ) {
                let n = perm.len();
                let s = 1 + ((w - 1) as f64 * s_frac) as usize % (w - 1);
                let k = n.min(10);
                let scores: Vec<f64> = perm.iter().map(|&x| x as f64).collect();
                let cfg = SlidingConfig::new(w, s).unwrap().with_corrected_savings(corrected);
                let ranking = sliding_rerank(&list(n), k, &cfg, &oracle(&scores), &CallLedger::new()).unwrap();
                let mut best: Vec<usize> = (0..n).collect();
                best.sort_by(|&a, &b| perm[b].cmp(&perm[a]));
                let want: Vec<String> = best[..k].iter().map(|i| format!("d{}", i + 1)).collect();
                prop_assert_eq!(&names(&ranking)[..k], &want[..]);
                prop_assert_eq!(ranking.len(), n);
            }
        }
    }
}
