//! Experiment drivers: positional bias, initial-order shuffling and call
//! accounting. Every run is a pure function of its inputs, seeds and config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{bias_report, ndcg_at, BiasReport, Trial};
use crate::seed::{derived_rng, PRNG_ALGORITHM};
use crate::sliding::{predict_sliding_calls_with, sliding_rerank, SlidingConfig};
use crate::tournament::{predict_tournament_calls, rerank_topk, TournamentConfig};
use crate::types::{CandidateList, Passage, Qrels, Query, Ranking};
use crate::unit::{rank_unit, CallLedger, CallSite, CountingStub, LedgerSnapshot, RankingUnit, UnitRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "algo", rename_all = "lowercase")]
pub enum Algorithm {
    Tournament(TournamentConfig),
    Sliding(SlidingConfig),
}

impl Algorithm {
    /// Window size of the unit.
    pub fn m(&self) -> usize {
        match self {
            Algorithm::Tournament(c) => c.m,
            Algorithm::Sliding(c) => c.window,
        }
    }

    pub fn predict_calls(&self, n: usize, k: usize) -> u64 {
        match self {
            Algorithm::Tournament(c) => predict_tournament_calls(n, c.m, c.r, k, c.strategy),
            Algorithm::Sliding(c) => predict_sliding_calls_with(n, c.window, c.stride, c.passes_for(k), c.corrected_savings),
        }
    }
}

pub fn rerank(cl: &CandidateList, k: usize, algo: &Algorithm, unit: &dyn RankingUnit, ledger: &CallLedger) -> Result<Ranking> {
    match algo {
        Algorithm::Tournament(c) => rerank_topk(cl, k, c, unit, ledger),
        Algorithm::Sliding(c) => sliding_rerank(cl, k, c, unit, ledger),
    }
}

/// Supplies the ranking unit for a query. Synthetic oracles are built per
/// query from that query's judgments; remote units are shared.
pub trait UnitProvider: Sync {
    fn unit_for(&self, query: &Query) -> Result<Arc<dyn RankingUnit>>;
}

impl<F> UnitProvider for F
where
    F: Fn(&Query) -> Result<Arc<dyn RankingUnit>> + Sync,
{
    fn unit_for(&self, query: &Query) -> Result<Arc<dyn RankingUnit>> {
        self(query)
    }
}

/// Same unit for every query.
pub struct Shared(pub Arc<dyn RankingUnit>);

impl UnitProvider for Shared {
    fn unit_for(&self, _: &Query) -> Result<Arc<dyn RankingUnit>> {
        Ok(Arc::clone(&self.0))
    }
}

// ---------------------------------------------------------------------------
// positional bias

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositiveSelection {
    /// One group per (query, positive) pair.
    #[default]
    All,
    /// One seeded positive per query.
    OnePerQuery,
}

/// One positive and `m - 1` negatives; variant `j` puts the positive in slot `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasGroup {
    pub id: String,
    pub query: Query,
    pub positive: Passage,
    pub negatives: Vec<Passage>,
}

impl BiasGroup {
    pub fn m(&self) -> usize {
        self.negatives.len() + 1
    }

    /// Slot order for variant `j` (0-based): negatives in sampled order with
    /// the positive inserted at `j`.
    pub fn variant(&self, j: usize) -> Vec<Passage> {
        let mut slots = self.negatives.clone();
        slots.insert(j, self.positive.clone());
        slots
    }

    pub fn variants(&self) -> Result<Vec<UnitRequest>> {
        (0..self.m())
            .map(|j| UnitRequest::new(self.query.clone(), self.variant(j), 1, false))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasGroupSet {
    pub groups: Vec<BiasGroup>,
    /// (query, positive) pairs considered.
    pub candidate_pairs: usize,
    pub missing_positive: usize,
    pub too_few_negatives: usize,
}

impl BiasGroupSet {
    pub fn discarded(&self) -> usize {
        self.missing_positive + self.too_few_negatives
    }
}

/// Samples groups from every candidate list. A pair is dropped when the
/// positive was not retrieved or fewer than `m - 1` grade-0 candidates exist.
pub fn build_bias_groups(
    lists: &[CandidateList],
    qrels: &Qrels,
    m: usize,
    seed: u64,
    selection: PositiveSelection,
) -> Result<BiasGroupSet> {
    if m < 2 {
        return Err(Error::InvalidConfig(format!("bias groups need m >= 2, got {m}")));
    }
    let mut set = BiasGroupSet {
        groups: Vec::new(),
        candidate_pairs: 0,
        missing_positive: 0,
        too_few_negatives: 0,
    };
    let mut lists: Vec<&CandidateList> = lists.iter().collect();
    lists.sort_by(|a, b| a.query().qid.cmp(&b.query().qid));

    for cl in lists {
        let qid = cl.query().qid.as_str();
        let positives = qrels.positives(qid);
        if positives.is_empty() {
            continue;
        }
        let retrieved: Vec<&Passage> = positives
            .iter()
            .filter_map(|id| cl.candidates().iter().find(|p| &p.id == *id))
            .collect();
        let chosen: Vec<&Passage> = match selection {
            PositiveSelection::All => {
                set.candidate_pairs += positives.len();
                set.missing_positive += positives.len() - retrieved.len();
                retrieved
            }
            PositiveSelection::OnePerQuery => {
                set.candidate_pairs += 1;
                let mut rng = derived_rng(seed, &[b"bias-positive", qid.as_bytes()]);
                match retrieved.choose(&mut rng) {
                    Some(p) => vec![*p],
                    None => {
                        set.missing_positive += 1;
                        vec![]
                    }
                }
            }
        };
        let pool: Vec<&Passage> = cl.candidates().iter().filter(|p| qrels.grade(qid, &p.id) == 0).collect();
        for positive in chosen {
            if pool.len() < m - 1 {
                set.too_few_negatives += 1;
                continue;
            }
            let mut rng = derived_rng(seed, &[b"bias-negatives", qid.as_bytes(), positive.id.as_str().as_bytes()]);
            let negatives = rand::seq::index::sample(&mut rng, pool.len(), m - 1)
                .into_iter()
                .map(|i| pool[i].clone())
                .collect();
            set.groups.push(BiasGroup {
                id: format!("{qid}:{}", positive.id),
                query: cl.query().clone(),
                positive: positive.clone(),
                negatives,
            });
        }
    }
    Ok(set)
}

/// Runs all `m` variants of every group; the unit's most relevant slot is the pick.
pub fn bias_trials(groups: &[BiasGroup], units: &dyn UnitProvider, ledger: &CallLedger) -> Result<Vec<Trial>> {
    let per_group: Vec<Vec<Trial>> = groups
        .par_iter()
        .map(|g| {
            let unit = units.unit_for(&g.query)?;
            g.variants()?
                .iter()
                .enumerate()
                .map(|(j, req)| {
                    let res = rank_unit(req, unit.as_ref(), ledger, CallSite::new(0, j))?;
                    Ok(Trial {
                        group: g.id.clone(),
                        position: j + 1,
                        picked: req.passage(res.most_relevant()).id.clone(),
                        positive: g.positive.id.clone(),
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_group.into_iter().flatten().collect())
}

pub fn run_positional_bias(groups: &[BiasGroup], units: &dyn UnitProvider, ledger: &CallLedger) -> Result<BiasReport> {
    let Some(first) = groups.first() else {
        return Err(Error::InvalidConfig("positional bias needs at least one group".into()));
    };
    let trials = bias_trials(groups, units, ledger)?;
    bias_report(&trials, first.m())
}

// ---------------------------------------------------------------------------
// shuffle robustness

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShuffleConfig {
    pub seeds: Vec<u64>,
    pub algorithm: Algorithm,
    pub k: usize,
    pub cutoff: usize,
}

impl ShuffleConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            seeds: vec![0, 1, 2],
            algorithm,
            k: 10,
            cutoff: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShuffleReport {
    pub baseline_ndcg: f64,
    pub per_seed: BTreeMap<u64, f64>,
    /// Mean over seeds.
    pub shuffled_ndcg: f64,
    /// `baseline_ndcg - shuffled_ndcg`.
    pub drop: f64,
    pub queries: usize,
}

/// The full candidate list of `cl` in the order seed `seed` assigns it.
pub fn shuffled(cl: &CandidateList, seed: u64) -> CandidateList {
    let mut perm: Vec<usize> = (0..cl.n()).collect();
    perm.shuffle(&mut derived_rng(seed, &[b"shuffle", cl.query().qid.as_bytes()]));
    cl.permuted(&perm)
}

fn mean_ndcg(
    lists: &[CandidateList],
    qrels: &Qrels,
    cfg: &ShuffleConfig,
    units: &dyn UnitProvider,
    ledger: &CallLedger,
    seed: Option<u64>,
) -> Result<f64> {
    let scores: Vec<f64> = lists
        .par_iter()
        .map(|cl| {
            let input = seed.map_or_else(|| cl.clone(), |s| shuffled(cl, s));
            let unit = units.unit_for(cl.query())?;
            let k = cfg.k.min(input.n());
            let ranking = rerank(&input, k, &cfg.algorithm, unit.as_ref(), ledger)?;
            Ok(ndcg_at(&ranking, qrels, cfg.cutoff))
        })
        .collect::<Result<_>>()?;
    Ok(if scores.is_empty() { 0.0 } else { scores.iter().sum::<f64>() / scores.len() as f64 })
}

pub fn run_shuffle_robustness(
    lists: &[CandidateList],
    qrels: &Qrels,
    cfg: &ShuffleConfig,
    units: &dyn UnitProvider,
    ledger: &CallLedger,
) -> Result<ShuffleReport> {
    if cfg.seeds.is_empty() {
        return Err(Error::InvalidConfig("shuffle needs at least one seed".into()));
    }
    let baseline_ndcg = mean_ndcg(lists, qrels, cfg, units, ledger, None)?;
    let mut per_seed = BTreeMap::new();
    for &seed in &cfg.seeds {
        per_seed.insert(seed, mean_ndcg(lists, qrels, cfg, units, ledger, Some(seed))?);
    }
    let shuffled_ndcg = per_seed.values().sum::<f64>() / per_seed.len() as f64;
    Ok(ShuffleReport {
        baseline_ndcg,
        per_seed,
        shuffled_ndcg,
        drop: baseline_ndcg - shuffled_ndcg,
        queries: lists.len(),
    })
}

// ---------------------------------------------------------------------------
// call accounting

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EfficiencyConfig {
    pub algorithm: Algorithm,
    pub n: usize,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EfficiencyRow {
    pub config: EfficiencyConfig,
    pub label: String,
    pub predicted: u64,
    pub measured: u64,
    pub matches: bool,
    pub ledger: LedgerSnapshot,
}

fn label(cfg: &EfficiencyConfig) -> String {
    match cfg.algorithm {
        Algorithm::Tournament(t) => format!("tournament n={} m={} r={} k={} {:?}", cfg.n, t.m, t.r, cfg.k, t.strategy),
        Algorithm::Sliding(s) => format!(
            "sliding n={} w={} s={} k={} {}",
            cfg.n,
            s.window,
            s.stride,
            cfg.k,
            if s.corrected_savings { "corrected" } else { "naive" }
        ),
    }
}

/// Synthetic list `d1..dn` for call counting.
pub fn numbered_list(n: usize) -> Result<CandidateList> {
    let passages = (1..=n).map(|i| Passage::new(format!("d{i}"), "")).collect::<Result<_>>()?;
    CandidateList::dedup_candidates(Query::new("calls", "")?, passages)
}

/// Predicted calls next to the ledger of an actual counting-stub run.
pub fn efficiency_report(configs: &[EfficiencyConfig]) -> Result<Vec<EfficiencyRow>> {
    configs
        .iter()
        .map(|cfg| {
            let ledger = CallLedger::new();
            rerank(&numbered_list(cfg.n)?, cfg.k, &cfg.algorithm, &CountingStub, &ledger)?;
            let predicted = cfg.algorithm.predict_calls(cfg.n, cfg.k);
            let measured = ledger.total();
            Ok(EfficiencyRow {
                config: *cfg,
                label: label(cfg),
                predicted,
                measured,
                matches: predicted == measured,
                ledger: ledger.snapshot(),
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// report output

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportHeader {
    pub tool: &'static str,
    pub version: &'static str,
    pub prng: &'static str,
    pub config: serde_json::Value,
}

impl ReportHeader {
    pub fn new(config: serde_json::Value) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            prng: PRNG_ALGORITHM,
            config,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report<T: Serialize> {
    pub header: ReportHeader,
    pub body: T,
}

impl<T: Serialize> Report<T> {
    pub fn new(config: serde_json::Value, body: T) -> Self {
        Self {
            header: ReportHeader::new(config),
            body,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Left-aligned columns separated by two spaces.
pub fn text_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        writeln!(out, "{}", padded.join("  ").trim_end()).expect("writing to a String");
    };
    line(headers.to_vec());
    line(widths.iter().map(|w| &"----------------------------------------------------------------"[..*w]).collect());
    for row in rows {
        line(row.iter().map(String::as_str).collect());
    }
    out
}

pub fn bias_table(report: &BiasReport) -> String {
    let mut headers: Vec<String> = (1..=report.accuracy_by_position.len()).map(|j| format!("pos{j}")).collect();
    headers.extend(["std".into(), "agreement".into(), "groups".into()]);
    let mut row: Vec<String> = report.accuracy_by_position.iter().map(|a| format!("{a:.1}")).collect();
    row.extend([
        format!("{:.1}", report.std),
        format!("{:.1}", report.agreement_ratio),
        report.groups.to_string(),
    ]);
    text_table(&headers.iter().map(String::as_str).collect::<Vec<_>>(), &[row])
}

pub fn shuffle_table(report: &ShuffleReport) -> String {
    let mut rows = vec![vec!["original".to_string(), format!("{:.5}", report.baseline_ndcg)]];
    rows.extend(report.per_seed.iter().map(|(s, v)| vec![format!("seed {s}"), format!("{v:.5}")]));
    rows.push(vec!["shuffled mean".into(), format!("{:.5}", report.shuffled_ndcg)]);
    rows.push(vec!["drop".into(), format!("{:.5}", report.drop)]);
    text_table(&["ordering", "ndcg"], &rows)
}

pub fn efficiency_table(rows: &[EfficiencyRow]) -> String {
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.label.clone(),
                r.predicted.to_string(),
                r.measured.to_string(),
                if r.matches { "yes" } else { "NO" }.to_string(),
            ]
        })
        .collect();
    text_table(&["config", "predicted", "measured", "match"], &cells)
}
