//! Ranked-retrieval effectiveness metrics.
//!
//! A query is evaluated only when it appears in the run and has at least one
//! relevant judgment (for nDCG: at least one positive grade). Every metric is
//! the arithmetic mean over the evaluated queries, 0 when there are none.

use std::fmt::Write as _;

use crate::error::{Error, Result};

use super::trec::{Qrels, RunEntry, RunList};

fn check_run(run: &RunList) -> Result<()> {
    if run.is_empty() {
        return Err(Error::Empty("run has no ranked documents".into()));
    }
    Ok(())
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("cutoff k must be at least 1".into()));
    }
    Ok(())
}

fn mean_over<F>(run: &RunList, qrels: &Qrels, include: impl Fn(&str) -> bool, per_query: F) -> f64
where
    F: Fn(&str, &[RunEntry]) -> f64,
{
    let mut total = 0.0;
    let mut n = 0usize;
    for (qid, entries) in run.iter() {
        if qrels.judgments(qid).is_none() || !include(qid) {
            continue;
        }
        total += per_query(qid, entries);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

pub fn reciprocal_rank(qid: &str, entries: &[RunEntry], qrels: &Qrels, k: usize) -> f64 {
    entries
        .iter()
        .take(k)
        .position(|e| qrels.is_relevant(qid, &e.doc_id))
        .map_or(0.0, |pos| 1.0 / (pos + 1) as f64)
}

pub fn mrr_at_k(run: &RunList, qrels: &Qrels, k: usize) -> Result<f64> {
    check_run(run)?;
    check_k(k)?;
    Ok(mean_over(
        run,
        qrels,
        |q| qrels.num_relevant(q) > 0,
        |q, e| reciprocal_rank(q, e, qrels, k),
    ))
}

pub fn average_precision(qid: &str, entries: &[RunEntry], qrels: &Qrels) -> f64 {
    let total = qrels.num_relevant(qid);
    if total == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, e) in entries.iter().enumerate() {
        if qrels.is_relevant(qid, &e.doc_id) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / total as f64
}

/// Mean average precision.
pub fn map(run: &RunList, qrels: &Qrels) -> Result<f64> {
    check_run(run)?;
    Ok(mean_over(
        run,
        qrels,
        |q| qrels.num_relevant(q) > 0,
        |q, e| average_precision(q, e, qrels),
    ))
}

fn gain(grade: u32) -> f64 {
    2f64.powi(grade as i32) - 1.0
}

fn discount(rank: usize) -> f64 {
    ((rank + 1) as f64).log2()
}

/// nDCG of one query at cutoff `k` (`None` = full depth).
pub fn ndcg(qid: &str, entries: &[RunEntry], qrels: &Qrels, k: Option<usize>) -> f64 {
    let depth = k.unwrap_or(usize::MAX);
    let dcg: f64 = entries
        .iter()
        .take(depth)
        .enumerate()
        .map(|(i, e)| gain(qrels.grade(qid, &e.doc_id)) / discount(i + 1))
        .sum();
    let mut ideal: Vec<u32> = qrels
        .judgments(qid)
        .map(|j| j.values().copied().filter(|&g| g > 0).collect())
        .unwrap_or_default();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(depth)
        .enumerate()
        .map(|(i, &g)| gain(g) / discount(i + 1))
        .sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

fn has_positive_grade(qrels: &Qrels, qid: &str) -> bool {
    qrels
        .judgments(qid)
        .is_some_and(|j| j.values().any(|&g| g > 0))
}

pub fn ndcg_at_k(run: &RunList, qrels: &Qrels, k: Option<usize>) -> Result<f64> {
    check_run(run)?;
    if let Some(k) = k {
        check_k(k)?;
    }
    Ok(mean_over(
        run,
        qrels,
        |q| has_positive_grade(qrels, q),
        |q, e| ndcg(q, e, qrels, k),
    ))
}

/// Relevant documents in the top `k` divided by `k`; missing ranks count as non-relevant.
pub fn precision(qid: &str, entries: &[RunEntry], qrels: &Qrels, k: usize) -> f64 {
    let hits = entries
        .iter()
        .take(k)
        .filter(|e| qrels.is_relevant(qid, &e.doc_id))
        .count();
    hits as f64 / k as f64
}

pub fn precision_at_k(run: &RunList, qrels: &Qrels, k: usize) -> Result<f64> {
    check_run(run)?;
    check_k(k)?;
    Ok(mean_over(
        run,
        qrels,
        |q| qrels.num_relevant(q) > 0,
        |q, e| precision(q, e, qrels, k),
    ))
}

/// The standard metric set of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub cutoff: usize,
    pub mrr: f64,
    pub map: f64,
    pub ndcg: f64,
    pub ndcg_full: f64,
    pub precision: f64,
    pub queries: usize,
}

impl MetricReport {
    pub fn compute(run: &RunList, qrels: &Qrels, cutoff: usize) -> Result<Self> {
        let queries = run
            .query_ids()
            .filter(|q| qrels.num_relevant(q) > 0)
            .count();
        Ok(MetricReport {
            cutoff,
            mrr: mrr_at_k(run, qrels, cutoff)?,
            map: map(run, qrels)?,
            ndcg: ndcg_at_k(run, qrels, Some(cutoff))?,
            ndcg_full: ndcg_at_k(run, qrels, None)?,
            precision: precision_at_k(run, qrels, cutoff)?,
            queries,
        })
    }

    /// `metric<TAB>value` lines.
    pub fn to_tsv(&self) -> String {
        let k = self.cutoff;
        let mut out = String::new();
        let _ = writeln!(out, "mrr@{k}\t{:.6}", self.mrr);
        let _ = writeln!(out, "map\t{:.6}", self.map);
        let _ = writeln!(out, "ndcg@{k}\t{:.6}", self.ndcg);
        let _ = writeln!(out, "ndcg\t{:.6}", self.ndcg_full);
        let _ = writeln!(out, "p@{k}\t{:.6}", self.precision);
        let _ = writeln!(out, "queries\t{}", self.queries);
        out
    }
}
