//! TREC interchange formats and effectiveness metrics.

pub mod metrics;
pub mod trec;

pub use metrics::{map, mrr_at_k, ndcg_at_k, precision_at_k, MetricReport};
pub use trec::{Qrels, RunEntry, RunList, DEFAULT_RELEVANCE_THRESHOLD};
