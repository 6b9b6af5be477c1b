//! Re-ranking a prefix of a first-stage list and tuning how deep that prefix is.

use crate::error::{Error, Result};
use crate::eval::{mrr_at_k, Qrels, RunEntry, RunList};

/// Depths tuned for the three document runs.
pub const DOCUMENT_DEPTH_PRESETS: [usize; 3] = [29, 60, 31];

/// Passage runs re-rank the full candidate list.
pub const PASSAGE_DEPTH: usize = 1000;

/// Merges model scores for the top `scores.len()` candidates with the
/// first-stage order below them.
///
/// The re-scored prefix is sorted by descending model score (equal scores keep
/// first-stage order). Candidates below the prefix keep their relative order
/// and receive synthetic scores `lowest - 1, lowest - 2, ...` so the merged
/// list stays non-increasing.
pub fn rerank_at_depth(candidates: &[RunEntry], scores: &[f64]) -> Result<Vec<(String, f64)>> {
    if scores.len() > candidates.len() {
        return Err(Error::InvalidArgument(format!(
            "{} model scores for {} candidates",
            scores.len(),
            candidates.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "non-finite model score {s}"
        )));
    }
    let mut head: Vec<(String, f64)> = candidates
        .iter()
        .zip(scores)
        .map(|(c, &s)| (c.doc_id.clone(), s))
        .collect();
    head.sort_by(|a, b| b.1.total_cmp(&a.1));
    let floor = head.last().map_or(0.0, |h| h.1);
    let tail = candidates[scores.len()..]
        .iter()
        .enumerate()
        .map(|(i, c)| (c.doc_id.clone(), floor - (i + 1) as f64));
    head.extend(tail);
    Ok(head)
}

/// Re-ranks the top `depth` candidates of every query.
///
/// `scorer` receives a query id and the candidate prefix and returns one
/// score per candidate.
pub fn rerank_run<F>(
    candidates: &RunList,
    depth: usize,
    tag: &str,
    mut scorer: F,
) -> Result<RunList>
where
    F: FnMut(&str, &[RunEntry]) -> Result<Vec<f64>>,
{
    if depth == 0 {
        return Err(Error::InvalidArgument(
            "re-ranking depth must be at least 1".into(),
        ));
    }
    let mut out = RunList::new(tag);
    for (qid, entries) in candidates.iter() {
        let prefix = &entries[..depth.min(entries.len())];
        let scores = scorer(qid, prefix)?;
        check_score_count(qid, prefix.len(), scores.len())?;
        out.set_ranking(qid, rerank_at_depth(entries, &scores)?)?;
    }
    Ok(out)
}

fn check_score_count(qid: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape(format!(
            "scorer returned {got} scores for {expected} candidates of query {qid}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthTuning {
    pub best_depth: usize,
    pub best_mrr: f64,
    /// MRR@10 of every candidate depth, in input order.
    pub per_depth: Vec<(usize, f64)>,
}

/// Picks the depth with the highest validation MRR@10; ties go to the smallest depth.
///
/// Every candidate prefix is scored once, at the largest depth, and the
/// shallower depths reuse those scores.
pub fn tune_rerank_depth<F>(
    candidates: &RunList,
    qrels: &Qrels,
    depths: &[usize],
    mut scorer: F,
) -> Result<DepthTuning>
where
    F: FnMut(&str, &[RunEntry]) -> Result<Vec<f64>>,
{
    let Some(&max_depth) = depths.iter().max() else {
        return Err(Error::Empty("no re-ranking depths to tune".into()));
    };
    if depths.contains(&0) {
        return Err(Error::InvalidArgument(
            "re-ranking depth must be at least 1".into(),
        ));
    }
    let mut scored = Vec::with_capacity(candidates.num_queries());
    for (qid, entries) in candidates.iter() {
        let prefix = &entries[..max_depth.min(entries.len())];
        if prefix.len() < max_depth {
            log::debug!(
                "query {qid} has {} candidates, fewer than depth {max_depth}",
                prefix.len()
            );
        }
        let scores = scorer(qid, prefix)?;
        check_score_count(qid, prefix.len(), scores.len())?;
        scored.push((qid, entries, scores));
    }
    let mut per_depth = Vec::with_capacity(depths.len());
    let mut best: Option<(usize, f64)> = None;
    for &depth in depths {
        let mut run = RunList::new("depth");
        for (qid, entries, scores) in &scored {
            let n = depth.min(scores.len());
            run.set_ranking(*qid, rerank_at_depth(entries, &scores[..n])?)?;
        }
        let mrr = mrr_at_k(&run, qrels, 10)?;
        per_depth.push((depth, mrr));
        let better = match best {
            None => true,
            Some((d, m)) => mrr > m || (mrr == m && depth < d),
        };
        if better {
            best = Some((depth, mrr));
        }
    }
    let (best_depth, best_mrr) = best.expect("depths is non-empty");
    Ok(DepthTuning {
        best_depth,
        best_mrr,
        per_depth,
    })
}
