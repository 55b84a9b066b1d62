//! NDCG@k, MRR@k and positional-bias statistics.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{PassageId, Qrels, Ranking};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Ndcg,
    Mrr,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Ndcg => "ndcg",
            Metric::Mrr => "mrr",
        })
    }
}

/// Linear-gain NDCG with a `log2(i + 1)` discount. The ideal DCG ranks every
/// judged passage of the query; 0 when nothing is relevant.
pub fn ndcg_at(ranking: &Ranking, qrels: &Qrels, cutoff: usize) -> f64 {
    let qid = ranking.query.qid.as_str();
    let dcg: f64 = ranking
        .ids()
        .take(cutoff)
        .enumerate()
        .map(|(i, id)| f64::from(qrels.grade(qid, id)) / (i as f64 + 2.0).log2())
        .sum();
    let mut ideal: Vec<u32> = qrels.judged(qid).into_iter().map(|(_, g)| g).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(cutoff)
        .enumerate()
        .map(|(i, &g)| f64::from(g) / (i as f64 + 2.0).log2())
        .sum();
    if idcg > 0.0 {
        dcg / idcg
    } else {
        0.0
    }
}

/// Reciprocal rank of the first passage with grade >= 1 within the cutoff.
pub fn mrr_at(ranking: &Ranking, qrels: &Qrels, cutoff: usize) -> f64 {
    let qid = ranking.query.qid.as_str();
    ranking
        .ids()
        .take(cutoff)
        .position(|id| qrels.grade(qid, id) >= 1)
        .map_or(0.0, |i| 1.0 / (i as f64 + 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric_name: String,
    pub cutoff: usize,
    pub per_query: BTreeMap<String, f64>,
    pub mean: f64,
}

/// Macro-averages `metric` over every ranked query. Queries without
/// judgments score 0.
pub fn evaluate(rankings: &[Ranking], qrels: &Qrels, metric: Metric, cutoff: usize) -> Result<MetricReport> {
    if cutoff == 0 {
        return Err(Error::InvalidConfig("metric cutoff must be >= 1".into()));
    }
    let per_query: BTreeMap<String, f64> = rankings
        .iter()
        .map(|r| {
            let v = match metric {
                Metric::Ndcg => ndcg_at(r, qrels, cutoff),
                Metric::Mrr => mrr_at(r, qrels, cutoff),
            };
            (r.query.qid.clone(), v)
        })
        .collect();
    let mean = if per_query.is_empty() {
        0.0
    } else {
        per_query.values().sum::<f64>() / per_query.len() as f64
    };
    Ok(MetricReport {
        metric_name: format!("{metric}@{cutoff}"),
        cutoff,
        per_query,
        mean,
    })
}

/// One placement of a bias group: the positive sat at `position` (1-based)
/// and the unit picked `picked` as most relevant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trial {
    pub group: String,
    pub position: usize,
    pub picked: PassageId,
    pub positive: PassageId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    /// Percent of groups answered correctly with the positive at slot `j + 1`.
    pub accuracy_by_position: Vec<f64>,
    /// Population standard deviation of the accuracies.
    pub std: f64,
    /// Percent of groups whose pick is the same in every placement.
    pub agreement_ratio: f64,
    pub groups: usize,
}

pub fn population_std(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Aggregates trials over window size `m`; every group needs exactly one
/// trial per position.
pub fn bias_report(trials: &[Trial], m: usize) -> Result<BiasReport> {
    if m == 0 {
        return Err(Error::InvalidConfig("bias report needs m >= 1".into()));
    }
    let mut groups: BTreeMap<&str, Vec<Option<&Trial>>> = BTreeMap::new();
    for t in trials {
        let slots = groups.entry(t.group.as_str()).or_insert_with(|| vec![None; m]);
        if t.position == 0 || t.position > m {
            return Err(Error::IncompleteGroup {
                group: t.group.clone(),
                message: format!("position {} outside 1..={m}", t.position),
            });
        }
        if slots[t.position - 1].replace(t).is_some() {
            return Err(Error::IncompleteGroup {
                group: t.group.clone(),
                message: format!("position {} appears twice", t.position),
            });
        }
    }

    let mut correct = vec![0usize; m];
    let mut agree = 0usize;
    for (group, slots) in &groups {
        let trials: Vec<&Trial> = slots
            .iter()
            .enumerate()
            .map(|(j, t)| {
                t.ok_or_else(|| Error::IncompleteGroup {
                    group: group.to_string(),
                    message: format!("no trial for position {}", j + 1),
                })
            })
            .collect::<Result<_>>()?;
        for (j, t) in trials.iter().enumerate() {
            if t.picked == t.positive {
                correct[j] += 1;
            }
        }
        if trials.iter().all(|t| t.picked == trials[0].picked) {
            agree += 1;
        }
    }

    let g = groups.len();
    let pct = |x: usize| if g == 0 { 0.0 } else { 100.0 * x as f64 / g as f64 };
    let accuracy_by_position: Vec<f64> = correct.into_iter().map(pct).collect();
    Ok(BiasReport {
        std: population_std(&accuracy_by_position),
        accuracy_by_position,
        agreement_ratio: pct(agree),
        groups: g,
    })
}
