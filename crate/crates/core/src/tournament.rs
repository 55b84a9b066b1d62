//! m-ary tournament sort over a listwise ranking unit.
//!
//! Leaves partition the candidates (in first-stage order) into windows of `m`.
//! Each node keeps its most relevant winners and hands them to its parent;
//! the root keeps one. After the root winner is extracted its leaf slot is
//! refilled and only the leaf-to-root path is evaluated again, every other
//! node reusing its cached result.
//!
//! Window fillers (padding for short windows, refills of extracted slots) are
//! shown to the unit but never propagate, so each candidate competes from
//! exactly one leaf slot and every extraction costs exactly one call per level.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{CandidateList, Passage, PassageId, Query, Ranking};
use crate::unit::{dedup_descending, rank_unit, CallLedger, CallSite, RankingUnit, UnitRequest, UnitResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplacementPolicy {
    /// Refill scan starts this many positions after the extracted candidate.
    pub base_offset: usize,
    /// Wrap the scan modulo `n`; otherwise the start clamps to the last candidate.
    pub wrap: bool,
}

impl Default for ReplacementPolicy {
    fn default() -> Self {
        Self {
            base_offset: 21,
            wrap: true,
        }
    }
}

impl ReplacementPolicy {
    fn start(&self, extracted: usize, n: usize) -> usize {
        let raw = extracted + self.base_offset;
        if self.wrap {
            raw % n
        } else {
            raw.min(n - 1)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Recompute only the extracted leaf's path (output caching).
    CachedPath,
    /// Re-evaluate every node after each extraction.
    FullRebuild,
    /// Root keeps `r` winners per round; windows that do not fill up pass their
    /// entries through unevaluated; each round re-runs the whole tree.
    RootBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TournamentConfig {
    pub m: usize,
    pub r: usize,
    pub policy: ReplacementPolicy,
    pub strategy: Strategy,
    /// Evaluate the nodes of one level concurrently.
    pub parallel: bool,
}

impl TournamentConfig {
    pub fn new(m: usize, r: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidConfig(format!("tournament needs m >= 2, got {m}")));
        }
        if r == 0 || r >= m {
            return Err(Error::InvalidConfig(format!("tournament needs 1 <= r < m, got r={r}, m={m}")));
        }
        Ok(Self {
            m,
            r,
            policy: ReplacementPolicy::default(),
            strategy: Strategy::CachedPath,
            parallel: false,
        })
    }

    pub fn with_strategy(mut self, strategy: Strategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn with_policy(mut self, policy: ReplacementPolicy) -> Result<Self> {
        if policy.base_offset == 0 {
            return Err(Error::InvalidConfig("replacement base_offset must be >= 1".into()));
        }
        self.policy = policy;
        Ok(self)
    }

    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    /// Winners kept by a non-root node. Capped at `m / 2` so that a parent
    /// window always holds at least two children.
    pub fn node_keep(&self) -> usize {
        self.r.min(self.m / 2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Entry {
    cand: usize,
    filler: bool,
}

impl Entry {
    fn real(cand: usize) -> Self {
        Self { cand, filler: false }
    }

    fn filler(cand: usize) -> Self {
        Self { cand, filler: true }
    }
}

#[derive(Debug, Clone)]
struct Node {
    /// Leaf slot range (level 0) or child node range in the level below.
    inputs: Range<usize>,
    keep: usize,
    window: Vec<Entry>,
    result: Option<UnitResult>,
    /// Real candidates, most relevant first.
    winners: Vec<usize>,
}

/// Appends fillers to `window` until it holds `m` entries: candidates in
/// first-stage order, skipping excluded ones and ones already in the window.
/// If that scan runs dry, non-excluded candidates are repeated (then excluded
/// ones, should nothing else be left). Returns whether duplicates were needed.
fn pad_window(window: &mut Vec<Entry>, m: usize, excluded: &[bool]) -> bool {
    let n = excluded.len();
    let mut present = vec![false; n];
    let mut duplicated = false;
    for e in window.iter() {
        duplicated |= std::mem::replace(&mut present[e.cand], true);
    }
    for c in 0..n {
        if window.len() >= m {
            return duplicated;
        }
        if !excluded[c] && !present[c] {
            present[c] = true;
            window.push(Entry::filler(c));
        }
    }
    let live: Vec<usize> = (0..n).filter(|&c| !excluded[c]).collect();
    let pool = if live.is_empty() { (0..n).collect() } else { live };
    for &c in pool.iter().cycle() {
        if window.len() >= m {
            break;
        }
        duplicated = true;
        window.push(Entry::filler(c));
    }
    duplicated
}

/// Number of nodes per level (leaves first) for a tree over `n` candidates.
pub fn tree_shape(n: usize, m: usize, r: usize) -> Vec<usize> {
    let keep = r.min(m / 2).max(1);
    if n <= m {
        return vec![1];
    }
    let mut caps: Vec<usize> = (0..n).step_by(m).map(|s| m.min(n - s)).collect();
    let mut shape = vec![caps.len()];
    while caps.len() > 1 {
        let keeps: Vec<usize> = caps.iter().map(|&c| c.min(keep)).collect();
        caps = pack(&keeps, m).into_iter().map(|g| keeps[g].iter().sum()).collect();
        shape.push(caps.len());
    }
    shape
}

/// Greedily groups consecutive children whose kept winners fit in one window.
fn pack(keeps: &[usize], m: usize) -> Vec<Range<usize>> {
    let mut groups = Vec::new();
    let mut start = 0;
    let mut load = 0;
    for (i, &k) in keeps.iter().enumerate() {
        if load + k > m && i > start {
            groups.push(start..i);
            start = i;
            load = 0;
        }
        load += k;
    }
    groups.push(start..keeps.len());
    groups
}

/// Tournament tree over one candidate list, with cached node results.
#[derive(Debug, Clone)]
pub struct TournamentTree {
    query: Query,
    passages: Vec<Passage>,
    cfg: TournamentConfig,
    /// Leaf slots; slot `c` starts out holding candidate `c`.
    slots: Vec<Entry>,
    levels: Vec<Vec<Node>>,
    parents: Vec<Vec<usize>>,
    excluded: Vec<bool>,
    emitted: usize,
}

impl TournamentTree {
    /// Builds and evaluates the whole tree (one unit call per node, pass 0).
    pub fn build(cl: &CandidateList, cfg: &TournamentConfig, unit: &dyn RankingUnit, ledger: &CallLedger) -> Result<Self> {
        let mut tree = Self::layout(cl, cfg);
        for level in 0..tree.levels.len() {
            let all: Vec<usize> = (0..tree.levels[level].len()).collect();
            tree.evaluate(level, &all, unit, ledger, 0)?;
        }
        Ok(tree)
    }

    fn layout(cl: &CandidateList, cfg: &TournamentConfig) -> Self {
        let n = cl.n();
        let m = cfg.m;
        let keep = cfg.node_keep();
        let mut levels = Vec::new();
        let mut parents = Vec::new();

        let mut nodes: Vec<Node> = (0..n)
            .step_by(m)
            .map(|s| {
                let inputs = s..(s + m).min(n);
                Node {
                    keep: inputs.len().min(keep),
                    inputs,
                    window: Vec::new(),
                    result: None,
                    winners: Vec::new(),
                }
            })
            .collect();
        while nodes.len() > 1 {
            let keeps: Vec<usize> = nodes.iter().map(|nd| nd.keep).collect();
            let groups = pack(&keeps, m);
            let mut parent_of = vec![0; nodes.len()];
            let next: Vec<Node> = groups
                .into_iter()
                .enumerate()
                .map(|(p, g)| {
                    parent_of[g.clone()].fill(p);
                    let cap: usize = keeps[g.clone()].iter().sum();
                    Node {
                        inputs: g,
                        keep: cap.min(keep),
                        window: Vec::new(),
                        result: None,
                        winners: Vec::new(),
                    }
                })
                .collect();
            levels.push(nodes);
            parents.push(parent_of);
            nodes = next;
        }
        let mut root = nodes;
        root[0].keep = 1;
        levels.push(root);

        Self {
            query: cl.query().clone(),
            passages: cl.candidates().to_vec(),
            cfg: *cfg,
            slots: (0..n).map(Entry::real).collect(),
            levels,
            parents,
            excluded: vec![false; n],
            emitted: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.passages.len()
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.levels.iter().map(Vec::len).collect()
    }

    /// Candidates not yet extracted.
    pub fn remaining(&self) -> usize {
        self.n() - self.emitted
    }

    pub fn is_excluded(&self, id: &PassageId) -> bool {
        self.index_of(id).is_some_and(|c| self.excluded[c])
    }

    fn index_of(&self, id: &PassageId) -> Option<usize> {
        self.passages.iter().position(|p| &p.id == id)
    }

    /// Root winner as of the last evaluation, if any.
    pub fn peek(&self) -> Option<&PassageId> {
        let root = &self.levels[self.levels.len() - 1][0];
        root.winners.first().map(|&c| &self.passages[c].id)
    }

    /// Cached winners of every node, by level, as passage ids.
    pub fn winners_by_level(&self) -> Vec<Vec<Vec<PassageId>>> {
        self.levels
            .iter()
            .map(|lvl| {
                lvl.iter()
                    .map(|nd| nd.winners.iter().map(|&c| self.passages[c].id.clone()).collect())
                    .collect()
            })
            .collect()
    }

    /// Pads a short group of passages to `m` using the current exclude pool.
    pub fn pad_group(&self, group: &[PassageId]) -> (Vec<PassageId>, bool) {
        let mut window: Vec<Entry> = group.iter().filter_map(|id| self.index_of(id)).map(Entry::real).collect();
        let dup = pad_window(&mut window, self.cfg.m, &self.excluded);
        (window.iter().map(|e| self.passages[e.cand].id.clone()).collect(), dup)
    }

    /// Removes the root winner and adds it to the exclude pool.
    pub fn pop_top(&mut self) -> Result<PassageId> {
        let last = self.levels.len() - 1;
        let top = *self.levels[last][0].winners.first().ok_or(Error::Exhausted)?;
        if self.excluded[top] {
            return Err(Error::Exhausted);
        }
        self.excluded[top] = true;
        self.emitted += 1;
        Ok(self.passages[top].id.clone())
    }

    /// Refills the extracted candidate's leaf slot and re-evaluates its path
    /// (or the whole tree under [`Strategy::FullRebuild`]). Returns the number
    /// of unit calls made.
    pub fn replace_and_recompute(
        &mut self,
        extracted: &PassageId,
        unit: &dyn RankingUnit,
        ledger: &CallLedger,
        pass: usize,
    ) -> Result<usize> {
        let cand = self
            .index_of(extracted)
            .filter(|&c| self.excluded[c])
            .ok_or_else(|| Error::InvalidConfig(format!("{extracted} has not been extracted")))?;
        let leaf = cand / self.cfg.m;
        self.refill_leaf(leaf);

        let mut calls = 0;
        match self.cfg.strategy {
            Strategy::FullRebuild => {
                for level in 0..self.levels.len() {
                    let all: Vec<usize> = (0..self.levels[level].len()).collect();
                    calls += self.evaluate(level, &all, unit, ledger, pass)?;
                }
            }
            _ => {
                let mut node = leaf;
                for level in 0..self.levels.len() {
                    calls += self.evaluate(level, &[node], unit, ledger, pass)?;
                    if level < self.parents.len() {
                        node = self.parents[level][node];
                    }
                }
            }
        }
        Ok(calls)
    }

    /// The slot position at which a candidate was refilled, for tests.
    pub fn slot_holder(&self, slot: usize) -> (PassageId, bool) {
        let e = self.slots[slot];
        (self.passages[e.cand].id.clone(), e.filler)
    }

    /// Replaces excluded entries of a leaf with fillers: scan from
    /// `slot + base_offset`, advancing while the candidate is excluded or
    /// already in the window.
    fn refill_leaf(&mut self, leaf: usize) {
        let n = self.n();
        let range = self.levels[0][leaf].inputs.clone();
        for slot in range.clone() {
            if !self.excluded[self.slots[slot].cand] {
                continue;
            }
            let start = self.cfg.policy.start(slot, n);
            let in_window = |c: usize, slots: &[Entry]| slots[range.clone()].iter().any(|e| e.cand == c);
            let pick = (0..n)
                .map(|i| (start + i) % n)
                .find(|&c| !self.excluded[c] && !in_window(c, &self.slots))
                .or_else(|| (0..n).map(|i| (start + i) % n).find(|&c| !self.excluded[c]));
            if let Some(c) = pick {
                self.slots[slot] = Entry::filler(c);
            }
        }
    }

    fn compose(&self, level: usize, idx: usize) -> (Vec<Entry>, bool) {
        let node = &self.levels[level][idx];
        let mut window: Vec<Entry> = if level == 0 {
            self.slots[node.inputs.clone()].to_vec()
        } else {
            self.levels[level - 1][node.inputs.clone()]
                .iter()
                .flat_map(|child| child.winners.iter().map(|&c| Entry::real(c)))
                .collect()
        };
        let dup = pad_window(&mut window, self.cfg.m, &self.excluded);
        (window, dup)
    }

    fn request(&self, window: &[Entry], keep: usize, dup: bool) -> Result<UnitRequest> {
        let passages = window.iter().map(|e| self.passages[e.cand].clone()).collect();
        UnitRequest::new(self.query.clone(), passages, keep.clamp(1, self.cfg.m - 1), dup)
    }

    fn evaluate(&mut self, level: usize, nodes: &[usize], unit: &dyn RankingUnit, ledger: &CallLedger, pass: usize) -> Result<usize> {
        let mut prepared = Vec::with_capacity(nodes.len());
        for &idx in nodes {
            let (window, dup) = self.compose(level, idx);
            let req = self.request(&window, self.levels[level][idx].keep, dup)?;
            prepared.push((idx, window, req));
        }
        let site = CallSite::new(level, pass);
        let results: Vec<Result<UnitResult>> = if self.cfg.parallel && prepared.len() > 1 {
            prepared.par_iter().map(|(_, _, req)| rank_unit(req, unit, ledger, site)).collect()
        } else {
            prepared.iter().map(|(_, _, req)| rank_unit(req, unit, ledger, site)).collect()
        };
        let calls = prepared.len();
        for ((idx, window, _), result) in prepared.into_iter().zip(results) {
            let result = result?;
            let node = &mut self.levels[level][idx];
            node.winners = result
                .descending()
                .map(|ident| window[ident - 1])
                .filter(|e| !e.filler && !self.excluded[e.cand])
                .map(|e| e.cand)
                .take(node.keep)
                .collect();
            node.window = window;
            node.result = Some(result);
        }
        Ok(calls)
    }
}

/// One unit call over every candidate not in `excluded`, repeating passages to
/// fill the window when fewer than `m` are left. Returns them most relevant first.
fn order_leftovers(
    query: &Query,
    passages: &[Passage],
    excluded: &[bool],
    m: usize,
    unit: &dyn RankingUnit,
    ledger: &CallLedger,
    site: CallSite,
) -> Result<Vec<usize>> {
    let live: Vec<usize> = (0..passages.len()).filter(|&c| !excluded[c]).collect();
    let mut window: Vec<Entry> = live.iter().map(|&c| Entry::real(c)).collect();
    let dup = pad_window(&mut window, m, excluded);
    let req = UnitRequest::new(
        query.clone(),
        window.iter().map(|e| passages[e.cand].clone()).collect(),
        live.len().clamp(1, m - 1),
        dup,
    )?;
    let result = rank_unit(&req, unit, ledger, site)?;
    let ids = dedup_descending(&req, &result);
    Ok(ids
        .iter()
        .filter_map(|id| live.iter().copied().find(|&c| &passages[c].id == id))
        .collect())
}

fn finish(cl: &CandidateList, top: Vec<usize>) -> Ranking {
    let mut taken = vec![false; cl.n()];
    for &c in &top {
        taken[c] = true;
    }
    let rest = (0..cl.n()).filter(|&c| !taken[c]);
    let order: Vec<usize> = top.iter().copied().chain(rest).collect();
    Ranking::from_order(cl.query().clone(), order.into_iter().map(|c| cl.candidates()[c].id.clone()))
}

/// Ranks the top `k` of `cl`; positions after `k` keep first-stage order.
pub fn rerank_topk(
    cl: &CandidateList,
    k: usize,
    cfg: &TournamentConfig,
    unit: &dyn RankingUnit,
    ledger: &CallLedger,
) -> Result<Ranking> {
    let n = cl.n();
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, n });
    }
    if n <= cfg.m {
        let top = order_leftovers(cl.query(), cl.candidates(), &vec![false; n], cfg.m, unit, ledger, CallSite::default())?;
        return Ok(finish(cl, top.into_iter().take(k).collect()));
    }
    if cfg.strategy == Strategy::RootBatch {
        return rerank_root_batch(cl, k, cfg, unit, ledger);
    }

    let mut tree = TournamentTree::build(cl, cfg, unit, ledger)?;
    let mut top = Vec::with_capacity(k);
    for pass in 0..k {
        if pass > 0 {
            if tree.remaining() < cfg.m {
                let rest = order_leftovers(
                    cl.query(),
                    cl.candidates(),
                    &tree.excluded,
                    cfg.m,
                    unit,
                    ledger,
                    CallSite::new(0, pass),
                )?;
                top.extend(rest.into_iter().take(k - top.len()));
                break;
            }
            let last = cl.candidates()[*top.last().expect("pass > 0")].id.clone();
            tree.replace_and_recompute(&last, unit, ledger, pass)?;
        }
        let id = tree.pop_top()?;
        top.push(tree.index_of(&id).expect("popped id is a candidate"));
    }
    Ok(finish(cl, top))
}

/// Per-round structure for [`Strategy::RootBatch`]: entries flow up in
/// windows of `m`; a level's leftover entries (fewer than `m`) skip that level.
#[allow(clippy::too_many_arguments)]
fn batch_round(
    tree_slots: &[Entry],
    query: &Query,
    passages: &[Passage],
    excluded: &[bool],
    cfg: &TournamentConfig,
    unit: &dyn RankingUnit,
    ledger: &CallLedger,
    pass: usize,
) -> Result<Vec<usize>> {
    let m = cfg.m;
    let mut entries = tree_slots.to_vec();
    let mut level = 0;
    loop {
        let is_root = entries.len() <= m;
        let windows: Vec<(Vec<Entry>, bool)> = if is_root {
            let mut w = entries.clone();
            let dup = pad_window(&mut w, m, excluded);
            vec![(w, dup)]
        } else {
            entries
                .chunks_exact(m)
                .map(|c| {
                    let mut seen = std::collections::HashSet::new();
                    let dup = !c.iter().all(|e| seen.insert(e.cand));
                    (c.to_vec(), dup)
                })
                .collect()
        };
        let requests = windows
            .iter()
            .map(|(w, dup)| {
                UnitRequest::new(query.clone(), w.iter().map(|e| passages[e.cand].clone()).collect(), cfg.r, *dup)
            })
            .collect::<Result<Vec<_>>>()?;
        let site = CallSite::new(level, pass);
        let results: Vec<Result<UnitResult>> = if cfg.parallel && requests.len() > 1 {
            requests.par_iter().map(|req| rank_unit(req, unit, ledger, site)).collect()
        } else {
            requests.iter().map(|req| rank_unit(req, unit, ledger, site)).collect()
        };

        let mut next = Vec::with_capacity(entries.len());
        for ((window, _), result) in windows.iter().zip(results) {
            let result = result?;
            let ranked: Vec<Entry> = result.descending().map(|ident| window[ident - 1]).collect();
            if is_root {
                let mut seen = std::collections::HashSet::new();
                return Ok(ranked
                    .into_iter()
                    .filter(|e| !e.filler && !excluded[e.cand] && seen.insert(e.cand))
                    .map(|e| e.cand)
                    .collect());
            }
            // real winners first, then fillers, always exactly r entries
            let reals = ranked.iter().filter(|e| !e.filler);
            let fillers = ranked.iter().filter(|e| e.filler);
            next.extend(reals.chain(fillers).take(cfg.r).copied());
        }
        let byes = entries.len() - entries.len() % m;
        next.extend_from_slice(&entries[byes..]);
        entries = next;
        level += 1;
    }
}

fn rerank_root_batch(
    cl: &CandidateList,
    k: usize,
    cfg: &TournamentConfig,
    unit: &dyn RankingUnit,
    ledger: &CallLedger,
) -> Result<Ranking> {
    let n = cl.n();
    let mut slots: Vec<Entry> = (0..n).map(Entry::real).collect();
    let mut excluded = vec![false; n];
    let mut top: Vec<usize> = Vec::with_capacity(k);
    let mut pass = 0;
    while top.len() < k {
        if n - top.len() < cfg.m {
            let rest = order_leftovers(cl.query(), cl.candidates(), &excluded, cfg.m, unit, ledger, CallSite::new(0, pass))?;
            top.extend(rest.into_iter().take(k - top.len()));
            break;
        }
        let winners = batch_round(&slots, cl.query(), cl.candidates(), &excluded, cfg, unit, ledger, pass)?;
        let want = cfg.r.min(k - top.len());
        if winners.is_empty() {
            return Err(Error::Exhausted);
        }
        for c in winners.into_iter().take(want) {
            excluded[c] = true;
            top.push(c);
        }
        // refill every slot whose occupant is now excluded
        for slot in 0..n {
            if !excluded[slots[slot].cand] {
                continue;
            }
            let leaf = (slot / cfg.m) * cfg.m..((slot / cfg.m + 1) * cfg.m).min(n);
            let start = cfg.policy.start(slot, n);
            let pick = (0..n)
                .map(|i| (start + i) % n)
                .find(|&c| !excluded[c] && !slots[leaf.clone()].iter().any(|e| e.cand == c))
                .or_else(|| (0..n).map(|i| (start + i) % n).find(|&c| !excluded[c]));
            if let Some(c) = pick {
                slots[slot] = Entry::filler(c);
            }
        }
        pass += 1;
    }
    Ok(finish(cl, top))
}

/// Unit calls in one [`Strategy::RootBatch`] round over `n` leaf entries.
pub fn batch_round_calls(n: usize, m: usize, r: usize) -> u64 {
    let mut len = n;
    let mut calls = 0u64;
    while len > m {
        calls += (len / m) as u64;
        len = (len / m) * r + len % m;
    }
    calls + 1
}

/// Exact number of unit calls [`rerank_topk`] makes, for any backend.
pub fn predict_tournament_calls(n: usize, m: usize, r: usize, k: usize, strategy: Strategy) -> u64 {
    if n == 0 || k == 0 {
        return 0;
    }
    let k = k.min(n);
    if n <= m {
        return 1;
    }
    match strategy {
        Strategy::RootBatch => {
            let round = batch_round_calls(n, m, r);
            let mut emitted = 0;
            let mut total = 0;
            while emitted < k {
                if n - emitted < m {
                    return total + 1;
                }
                total += round;
                emitted += r.min(k - emitted);
            }
            total
        }
        Strategy::CachedPath | Strategy::FullRebuild => {
            let shape = tree_shape(n, m, r);
            let build: usize = shape.iter().sum();
            let per_pass = if strategy == Strategy::CachedPath { shape.len() } else { build };
            let mut total = build as u64;
            for popped in 1..k {
                if n - popped < m {
                    return total + 1;
                }
                total += per_pass as u64;
            }
            total
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unit::{CountingStub, SyntheticOracle, SyntheticOracleConfig};
    use std::collections::HashMap;

    fn list(n: usize) -> CandidateList {
        let ps = (1..=n).map(|i| Passage::new(format!("d{i}"), "").unwrap()).collect();
        CandidateList::dedup_candidates(Query::new("q", "").unwrap(), ps).unwrap()
    }

    /// Score 101 - rank: d1 best.
    fn by_rank(n: usize) -> SyntheticOracle {
        let base: HashMap<_, _> = (1..=n)
            .map(|i| (PassageId::new(format!("d{i}")).unwrap(), (n + 1 - i) as f64))
            .collect();
        SyntheticOracle::new(SyntheticOracleConfig::new(base))
    }

    fn id(s: &str) -> PassageId {
        PassageId::new(s).unwrap()
    }

    #[test]
    fn shape_matches_level_arithmetic() {
        assert_eq!(tree_shape(100, 5, 1), [20, 4, 1]);
        assert_eq!(tree_shape(5, 5, 1), [1]);
        assert_eq!(tree_shape(100, 5, 2), [20, 10, 5, 3, 2, 1]);
        assert_eq!(tree_shape(100, 20, 10), [5, 3, 2, 1]);
        // r above m/2 is capped so levels still shrink
        assert_eq!(tree_shape(4, 3, 2), [2, 1]);
    }

    #[test]
    fn build_counts_one_call_per_node() {
        let ledger = CallLedger::new();
        let cfg = TournamentConfig::new(5, 1).unwrap();
        let tree = TournamentTree::build(&list(100), &cfg, &CountingStub, &ledger).unwrap();
        assert_eq!(tree.shape(), [20, 4, 1]);
        let s = ledger.snapshot();
        assert_eq!(s.total, 25);
        assert_eq!(s.by_level.values().copied().collect::<Vec<_>>(), [20, 4, 1]);

        let ledger = CallLedger::new();
        TournamentTree::build(&list(5), &cfg, &CountingStub, &ledger).unwrap();
        assert_eq!(ledger.total(), 1);
    }

    #[test]
    fn pad_group_uses_first_candidates() {
        let cfg = TournamentConfig::new(5, 1).unwrap();
        let tree = TournamentTree::layout(&list(100), &cfg);
        let group: Vec<_> = (96..=99).map(|i| id(&format!("d{i}"))).collect();
        let (padded, dup) = tree.pad_group(&group);
        assert_eq!(padded.last().unwrap(), &id("d1"));
        assert!(!dup);

        let group: Vec<_> = (1..=4).map(|i| id(&format!("d{i}"))).collect();
        let (padded, _) = tree.pad_group(&group);
        assert_eq!(padded[4], id("d5"));
    }

    #[test]
    fn pad_group_skips_excluded() {
        let cfg = TournamentConfig::new(5, 1).unwrap();
        let mut tree = TournamentTree::build(&list(100), &cfg, &by_rank(100), &CallLedger::new()).unwrap();
        assert_eq!(tree.pop_top().unwrap(), id("d1"));
        let group: Vec<_> = (96..=99).map(|i| id(&format!("d{i}"))).collect();
        assert_eq!(tree.pad_group(&group).0[4], id("d2"));
    }

    #[test]
    fn pad_group_small_list_allows_duplicates() {
        let cfg = TournamentConfig::new(5, 1).unwrap();
        let tree = TournamentTree::layout(&list(3), &cfg);
        let group = [id("d1"), id("d2"), id("d3")];
        let (padded, dup) = tree.pad_group(&group);
        assert!(dup);
        assert_eq!(padded, [id("d1"), id("d2"), id("d3"), id("d1"), id("d2")]);
    }

    #[test]
    fn pop_top_returns_best() {
        let cfg = TournamentConfig::new(5, 1).unwrap();
        let mut tree = TournamentTree::build(&list(100), &cfg, &by_rank(100), &CallLedger::new()).unwrap();
        assert_eq!(tree.peek(), Some(&id("d1")));
        assert_eq!(tree.pop_top().unwrap(), id("d1"));
        assert!(tree.is_excluded(&id("d1")));
        // root winner stays excluded until the path is recomputed
        assert_eq!(tree.pop_top().unwrap_err().to_string(), Error::Exhausted.to_string());
    }

    #[test]
    fn pop_single_candidate() {
        let cfg = TournamentConfig::new(5, 1).unwrap();
        let mut tree = TournamentTree::build(&list(1), &cfg, &by_rank(1), &CallLedger::new()).unwrap();
        assert_eq!(tree.pop_top().unwrap(), id("d1"));
    }

    #[test]
    fn replacement_offsets_by_21() {
        // make d9 (index 8) the best so it is extracted first
        let mut base: HashMap<_, _> = (1..=100).map(|i| (id(&format!("d{i}")), 0.0)).collect();
        base.insert(id("d9"), 10.0);
        let oracle = SyntheticOracle::new(SyntheticOracleConfig::new(base));
        let cfg = TournamentConfig::new(5, 1).unwrap();
        let ledger = CallLedger::new();
        let mut tree = TournamentTree::build(&list(100), &cfg, &oracle, &ledger).unwrap();
        let top = tree.pop_top().unwrap();
        assert_eq!(top, id("d9"));
        let calls = tree.replace_and_recompute(&top, &oracle, &ledger, 1).unwrap();
        assert_eq!(calls, 3);
        // index 8 + 21 = index 29, i.e. d30
        assert_eq!(tree.slot_holder(8), (id("d30"), true));
    }

    #[test]
    fn replacement_skips_excluded_index() {
        // d30 (index 29) goes first, then d9 (index 8) whose refill target is index 29
        let mut base: HashMap<_, _> = (1..=100).map(|i| (id(&format!("d{i}")), 0.0)).collect();
        base.insert(id("d30"), 20.0);
        base.insert(id("d9"), 10.0);
        let oracle = SyntheticOracle::new(SyntheticOracleConfig::new(base));
        let cfg = TournamentConfig::new(5, 1).unwrap();
        let ledger = CallLedger::new();
        let mut tree = TournamentTree::build(&list(100), &cfg, &oracle, &ledger).unwrap();
        let first = tree.pop_top().unwrap();
        tree.replace_and_recompute(&first, &oracle, &ledger, 1).unwrap();
        let second = tree.pop_top().unwrap();
        assert_eq!(second, id("d9"));
        tree.replace_and_recompute(&second, &oracle, &ledger, 2).unwrap();
        assert_eq!(tree.slot_holder(8), (id("d31"), true));
    }

    #[test]
    fn replacement_skips_window_duplicates() {
        // n=10, m=5: index 0 + 21 wraps to 1, which is d2 in the same window, so d3.. are
        // also there; the scan continues to d6
        let cfg = TournamentConfig::new(5, 1).unwrap();
        let ledger = CallLedger::new();
        let oracle = by_rank(10);
        let mut tree = TournamentTree::build(&list(10), &cfg, &oracle, &ledger).unwrap();
        let top = tree.pop_top().unwrap();
        assert_eq!(top, id("d1"));
        tree.replace_and_recompute(&top, &oracle, &ledger, 1).unwrap();
        assert_eq!(tree.slot_holder(0), (id("d6"), true));
    }

    #[test]
    fn fillers_never_win() {
        let cfg = TournamentConfig::new(5, 1).unwrap();
        let ledger = CallLedger::new();
        let oracle = by_rank(100);
        let mut tree = TournamentTree::build(&list(100), &cfg, &oracle, &ledger).unwrap();
        for pass in 1..=30 {
            let top = tree.pop_top().unwrap();
            assert_eq!(top, id(&format!("d{pass}")));
            tree.replace_and_recompute(&top, &oracle, &ledger, pass).unwrap();
            for level in tree.winners_by_level() {
                for node in level {
                    assert!(node.iter().all(|w| !tree.is_excluded(w)));
                }
            }
        }
    }

    #[test]
    fn topk_call_counts() {
        let cfg = TournamentConfig::new(5, 1).unwrap();
        for (k, want) in [(1, 25), (10, 52)] {
            let ledger = CallLedger::new();
            rerank_topk(&list(100), k, &cfg, &CountingStub, &ledger).unwrap();
            assert_eq!(ledger.total(), want);
            assert_eq!(predict_tournament_calls(100, 5, 1, k, Strategy::CachedPath), want);
        }
        assert_eq!(predict_tournament_calls(100, 5, 2, 10, Strategy::CachedPath), 41 + 9 * 6);
    }

    #[test]
    fn small_list_single_call() {
        let cfg = TournamentConfig::new(5, 1).unwrap();
        let ledger = CallLedger::new();
        let ranking = rerank_topk(&list(4), 4, &cfg, &by_rank(4), &ledger).unwrap();
        assert_eq!(ledger.total(), 1);
        let ids: Vec<_> = ranking.ids().map(|p| p.to_string()).collect();
        assert_eq!(ids, ["d1", "d2", "d3", "d4"]);
    }

    #[test]
    fn k_out_of_range() {
        let cfg = TournamentConfig::new(5, 1).unwrap();
        assert!(rerank_topk(&list(4), 0, &cfg, &CountingStub, &CallLedger::new()).is_err());
        assert!(rerank_topk(&list(4), 5, &cfg, &CountingStub, &CallLedger::new()).is_err());
    }

    #[test]
    fn tail_is_first_stage_order() {
        let cfg = TournamentConfig::new(5, 1).unwrap();
        let base: HashMap<_, _> = (1..=20).map(|i| (id(&format!("d{i}")), i as f64)).collect();
        let oracle = SyntheticOracle::new(SyntheticOracleConfig::new(base));
        let ranking = rerank_topk(&list(20), 3, &cfg, &oracle, &CallLedger::new()).unwrap();
        let ids: Vec<_> = ranking.ids().map(|p| p.to_string()).collect();
        assert_eq!(&ids[..3], ["d20", "d19", "d18"]);
        assert_eq!(&ids[3..6], ["d1", "d2", "d3"]);
        assert_eq!(ranking.len(), 20);
    }

    #[test]
    fn config_validation() {
        assert!(TournamentConfig::new(1, 1).is_err());
        assert!(TournamentConfig::new(5, 5).is_err());
        assert!(TournamentConfig::new(5, 0).is_err());
        let policy = ReplacementPolicy { base_offset: 0, wrap: true };
        assert!(TournamentConfig::new(5, 1).unwrap().with_policy(policy).is_err());
    }

    #[test]
    fn root_batch_counts() {
        for (r, want) in [(10, 9), (5, 14), (1, 60)] {
            let cfg = TournamentConfig::new(20, r).unwrap().with_strategy(Strategy::RootBatch);
            let ledger = CallLedger::new();
            rerank_topk(&list(100), 10, &cfg, &CountingStub, &ledger).unwrap();
            assert_eq!(ledger.total(), want, "r={r}");
            assert_eq!(predict_tournament_calls(100, 20, r, 10, Strategy::RootBatch), want);
        }
    }

    mod props {
        use super::*;
        use super::super::Strategy;
        use proptest::strategy::Strategy as _;
        use proptest::prelude::*;

        fn strategy() -> impl proptest::strategy::Strategy<Value = Strategy> {
            prop_oneof![Just(Strategy::CachedPath), Just(Strategy::FullRebuild), Just(Strategy::RootBatch)]
        }

        /// Distinct scores from a permutation; returns the oracle and the ids best first.
        fn scored(perm: &[usize]) -> (SyntheticOracle, Vec<String>) {
            let base: HashMap<_, _> = perm
                .iter()
                .enumerate()
                .map(|(i, &s)| (id(&format!("d{}", i + 1)), s as f64))
                .collect();
            let mut best: Vec<usize> = (0..perm.len()).collect();
            best.sort_by(|&a, &b| perm[b].cmp(&perm[a]));
            let ids = best.iter().map(|i| format!("d{}", i + 1)).collect();
            (SyntheticOracle::new(SyntheticOracleConfig::new(base)), ids)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn ledger_matches_prediction(n in 1usize..80, m in 2usize..9, r_frac in 0.0f64..1.0, k_frac in 0.0f64..1.0, s in strategy()) {
                let r = 1 + ((m - 1) as f64 * r_frac) as usize % (m - 1);
                let k = 1 + ((n as f64 * k_frac) as usize).min(n - 1);
                let cfg = TournamentConfig::new(m, r).unwrap().with_strategy(s);
                let ledger = CallLedger::new();
                rerank_topk(&list(n), k, &cfg, &CountingStub, &ledger).unwrap();
                prop_assert_eq!(ledger.total(), predict_tournament_calls(n, m, r, k, s));
            }

            #[test]
            fn exact_oracle_gives_true_topk(
                perm in (1usize..70).prop_flat_map(|n| Just((0..n).collect::<Vec<_>>()).prop_shuffle()),
                m in 2usize..9,
                r_frac in 0.0f64..1.0,
                s in strategy(),
                wrap in any::<bool>(),
            ) {
                let n = perm.len();
                let r = 1 + ((m - 1) as f64 * r_frac) as usize % (m - 1);
                let k = n.min(10);
                let policy = ReplacementPolicy { base_offset: 21, wrap };
                let cfg = TournamentConfig::new(m, r).unwrap().with_strategy(s).with_policy(policy).unwrap();
                let (oracle, best) = scored(&perm);
                let ranking = rerank_topk(&list(n), k, &cfg, &oracle, &CallLedger::new()).unwrap();
                let got: Vec<String> = ranking.ids().take(k).map(|p| p.to_string()).collect();
                prop_assert_eq!(&got[..], &best[..k]);
                prop_assert_eq!(ranking.len(), n);
            }
        }
    }
}
