//! Listwise top-k reranking over a pluggable m-passage ranking unit.
//!
//! - [`tournament`]: m-ary tournament sort with cached node outputs.
//! - [`sliding`]: sliding-window baseline.
//! - [`metrics`]: NDCG@k, MRR@k and positional-bias statistics.
//! - [`harness`]: positional-bias, shuffle-robustness and call-count experiments.
//! - [`io`]: candidate, qrels and run file formats.

pub mod error;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod seed;
pub mod sliding;
pub mod stub;
pub mod tournament;
pub mod types;
pub mod unit;

pub use error::{Error, Result};
pub use types::{CandidateList, Passage, PassageId, Qrels, Query, RankedEntry, Ranking};
