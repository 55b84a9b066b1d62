use std::collections::HashMap;

use rand_distr::{Distribution, Normal};

use super::{format_order, RankingUnit, UnitRequest, UnitResult};
use crate::error::{Error, Result};
use crate::seed::derived_rng;
use crate::types::PassageId;

/// Deterministic stand-in for a neural ranking unit.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticOracleConfig {
    /// Ground-truth relevance; passages without an entry score 0.0.
    pub base_scores: HashMap<PassageId, f64>,
    pub noise_sigma: f64,
    /// Added to whatever passage sits in slot `j`. Empty means all zeros;
    /// otherwise the length must equal the window size.
    pub position_bonus: Vec<f64>,
    pub seed: u64,
}

impl SyntheticOracleConfig {
    /// Noise-free, bias-free oracle.
    pub fn new(base_scores: HashMap<PassageId, f64>) -> Self {
        Self {
            base_scores,
            noise_sigma: 0.0,
            position_bonus: Vec::new(),
            seed: 0,
        }
    }

    pub fn with_noise(mut self, sigma: f64, seed: u64) -> Self {
        self.noise_sigma = sigma;
        self.seed = seed;
        self
    }

    pub fn with_position_bonus(mut self, bonus: Vec<f64>) -> Self {
        self.position_bonus = bonus;
        self
    }
}

/// Per-slot scores: base score, plus positional bonus, plus window-seeded noise.
pub fn slot_scores(request: &UnitRequest, cfg: &SyntheticOracleConfig) -> Result<Vec<f64>> {
    let m = request.m();
    if !cfg.position_bonus.is_empty() && cfg.position_bonus.len() != m {
        return Err(Error::InvalidConfig(format!(
            "position_bonus has {} entries, window has {m}",
            cfg.position_bonus.len()
        )));
    }
    if !(cfg.noise_sigma >= 0.0 && cfg.noise_sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "noise_sigma must be finite and >= 0, got {}",
            cfg.noise_sigma
        )));
    }
    let noise = (cfg.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, cfg.noise_sigma).expect("sigma validated above"));

    let docids = request.docids();
    let scores = request
        .slots()
        .iter()
        .enumerate()
        .map(|(j, slot)| {
            let base = cfg.base_scores.get(&slot.passage.id).copied().unwrap_or(0.0);
            let bonus = cfg.position_bonus.get(j).copied().unwrap_or(0.0);
            let jitter = noise.as_ref().map_or(0.0, |dist| {
                let slot_index = (j as u64).to_le_bytes();
                let mut labels: Vec<&[u8]> = vec![b"synthetic", request.query().qid.as_bytes()];
                labels.extend(docids.iter().map(|d| d.as_bytes()));
                labels.push(&slot_index);
                dist.sample(&mut derived_rng(cfg.seed, &labels))
            });
            base + bonus + jitter
        })
        .collect();
    Ok(scores)
}

/// Identifiers sorted by ascending score; ties go to the lower identifier first.
pub fn synthetic_rank(request: &UnitRequest, cfg: &SyntheticOracleConfig) -> Result<UnitResult> {
    let scores = slot_scores(request, cfg)?;
    let mut order: Vec<usize> = (1..=request.m()).collect();
    order.sort_by(|&a, &b| scores[a - 1].total_cmp(&scores[b - 1]).then(a.cmp(&b)));
    let raw = format_order(&order);
    Ok(UnitResult::new(order, raw))
}

#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    cfg: SyntheticOracleConfig,
}

impl SyntheticOracle {
    pub fn new(cfg: SyntheticOracleConfig) -> Self {
        Self { cfg }
    }

    pub fn config(&self) -> &SyntheticOracleConfig {
        &self.cfg
    }
}

impl RankingUnit for SyntheticOracle {
    fn rank(&self, request: &UnitRequest) -> Result<UnitResult> {
        synthetic_rank(request, &self.cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Passage, Query};

    fn req(ids: &[&str]) -> UnitRequest {
        let ps = ids.iter().map(|id| Passage::new(*id, "").unwrap()).collect();
        UnitRequest::new(Query::new("q1", "").unwrap(), ps, 1, false).unwrap()
    }

    fn base(pairs: &[(&str, f64)]) -> HashMap<PassageId, f64> {
        pairs
            .iter()
            .map(|(k, v)| (PassageId::new(*k).unwrap(), *v))
            .collect()
    }

    #[test]
    fn ascending_score_order() {
        let cfg = SyntheticOracleConfig::new(base(&[("A", 3.0), ("B", 1.0), ("C", 2.0), ("D", 5.0), ("E", 4.0)]));
        let res = synthetic_rank(&req(&["A", "B", "C", "D", "E"]), &cfg).unwrap();
        assert_eq!(res.order, [2, 3, 1, 5, 4]);
        assert_eq!(res.raw, "2 3 1 5 4");
    }

    #[test]
    fn ties_break_by_identifier() {
        let cfg = SyntheticOracleConfig::new(HashMap::new());
        let res = synthetic_rank(&req(&["A", "B", "C", "D", "E"]), &cfg).unwrap();
        assert_eq!(res.order, [1, 2, 3, 4, 5]);
    }

    #[test]
    fn bonus_dominates_equal_scores() {
        let cfg = SyntheticOracleConfig::new(HashMap::new()).with_position_bonus(vec![10.0, 0.0, 0.0, 0.0, 0.0]);
        let res = synthetic_rank(&req(&["A", "B", "C", "D", "E"]), &cfg).unwrap();
        assert_eq!(res.most_relevant(), 1);
    }

    #[test]
    fn bonus_length_checked() {
        let cfg = SyntheticOracleConfig::new(HashMap::new()).with_position_bonus(vec![1.0, 0.0]);
        assert!(synthetic_rank(&req(&["A", "B", "C"]), &cfg).is_err());
    }

    #[test]
    fn noisy_rank_is_deterministic() {
        let cfg = SyntheticOracleConfig::new(base(&[("A", 1.0), ("B", 1.1), ("C", 0.9)])).with_noise(1.0, 42);
        let r = req(&["A", "B", "C"]);
        assert_eq!(synthetic_rank(&r, &cfg).unwrap(), synthetic_rank(&r, &cfg).unwrap());
    }

    #[test]
    fn noise_depends_on_window() {
        let cfg = SyntheticOracleConfig::new(HashMap::new()).with_noise(1.0, 3);
        let a = slot_scores(&req(&["A", "B", "C"]), &cfg).unwrap();
        let b = slot_scores(&req(&["A", "B", "D"]), &cfg).unwrap();
        // same passage in slot 1, different window: fresh noise
        assert_ne!(a[0], b[0]);
        let c = slot_scores(&req(&["A", "B", "C"]), &cfg.clone().with_noise(1.0, 4)).unwrap();
        assert_ne!(a, c);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            // noise-free comparator is a strict weak order on (score, slot)
            #[test]
            fn induced_comparator_is_transitive(s in prop::collection::vec(-3i32..3, 3)) {
                let cfg = SyntheticOracleConfig::new(base(&[("A", s[0] as f64), ("B", s[1] as f64), ("C", s[2] as f64)]));
                let res = synthetic_rank(&req(&["A", "B", "C"]), &cfg).unwrap();
                let pos = |i: usize| res.order.iter().position(|&x| x == i).unwrap();
                let beats = |a: usize, b: usize| (s[a - 1], a) < (s[b - 1], b);
                for a in 1..=3 {
                    for b in 1..=3 {
                        if a != b {
                            prop_assert_eq!(pos(a) < pos(b), beats(a, b));
                        }
                    }
                }
            }
        }
    }
}
