use std::collections::BTreeMap;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

/// Where in an algorithm a unit call happened. For tournament sort `level` is
/// the tree level (leaves = 0) and `pass` the extraction round (build = 0);
/// sliding windows use `level` 0 and `pass` for the pass index.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CallSite {
    pub level: usize,
    pub pass: usize,
}

impl CallSite {
    pub fn new(level: usize, pass: usize) -> Self {
        Self { level, pass }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub total: u64,
    pub fallbacks: u64,
    pub by_level: BTreeMap<usize, u64>,
    pub by_pass: BTreeMap<usize, u64>,
}

/// Exact count of unit invocations. All counters move under one lock, so any
/// snapshot satisfies `total == sum(by_level) == sum(by_pass)`.
#[derive(Debug, Default)]
pub struct CallLedger {
    inner: Mutex<LedgerSnapshot>,
}

impl CallLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, site: CallSite, fallback: bool) {
        let mut s = self.inner.lock();
        s.total += 1;
        if fallback {
            s.fallbacks += 1;
        }
        *s.by_level.entry(site.level).or_default() += 1;
        *s.by_pass.entry(site.pass).or_default() += 1;
    }

    pub fn total(&self) -> u64 {
        self.inner.lock().total
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        self.inner.lock().clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn concurrent_records_are_exact() {
        let ledger = Arc::new(CallLedger::new());
        let handles: Vec<_> = (0..8)
            .map(|t| {
                let ledger = Arc::clone(&ledger);
                std::thread::spawn(move || {
                    for i in 0..1000 {
                        ledger.record(CallSite::new(i % 3, t), i % 10 == 0);
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        let s = ledger.snapshot();
        assert_eq!(s.total, 8000);
        assert_eq!(s.fallbacks, 800);
        assert_eq!(s.by_level.values().sum::<u64>(), 8000);
        assert_eq!(s.by_pass.values().sum::<u64>(), 8000);
    }
}
