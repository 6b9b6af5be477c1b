//! End-to-end ranking: BM25 candidates, TK re-scoring, merged runs and reports.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::{RunEntry, RunList};
use crate::model::explain::{explain_texts, Comparison, DocumentView};
use crate::model::TkModel;
use crate::retrieval::{rerank_run, Bm25Params, InvertedIndex};
use crate::text::tokenize;
use crate::tsv::TextRecord;

/// `Full` retrieves candidates with BM25 first; `Rerank` re-scores a given run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Full,
    Rerank,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "rerank" => Ok(Mode::Rerank),
            _ => Err(Error::InvalidArgument(format!(
                "mode must be `full` or `rerank`, got {s:?}"
            ))),
        }
    }
}

pub fn text_map(records: Vec<TextRecord>) -> HashMap<String, String> {
    records.into_iter().map(|r| (r.id, r.text)).collect()
}

/// BM25 candidate lists of the `k` best documents per query.
///
/// Queries without a single matching document get no entry.
pub fn bm25_run(
    index: &InvertedIndex,
    queries: &[TextRecord],
    k: usize,
    params: Bm25Params,
    tag: &str,
) -> Result<RunList> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let mut run = RunList::new(tag);
    let mut ordered: Vec<&TextRecord> = queries.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));
    let hits: Vec<_> = ordered
        .par_iter()
        .map(|q| (q.id.as_str(), index.search(&tokenize(&q.text), k, params)))
        .collect();
    for (qid, list) in hits {
        if list.is_empty() {
            log::warn!("query {qid} matches no document");
            continue;
        }
        run.set_ranking(qid, list)?;
    }
    Ok(run)
}

/// Model scores of a candidate prefix.
///
/// Documents whose text has no tokens are scored one below the lowest real
/// score, with a warning, so they sink to the bottom of the prefix.
pub fn score_candidates(
    model: &TkModel,
    query: &str,
    candidates: &[RunEntry],
    documents: &HashMap<String, String>,
) -> Result<Vec<f64>> {
    let q = model.encode_query(query)?;
    let scores = candidates
        .par_iter()
        .map(|c| {
            let text = documents
                .get(&c.doc_id)
                .ok_or_else(|| Error::UnknownId(format!("document {}", c.doc_id)))?;
            match model.encode_doc(text) {
                Ok(d) => Ok(Some(model.forward(&q, &d)?.score)),
                Err(Error::Empty(_)) => {
                    log::warn!("document {} has no tokens; ranked last", c.doc_id);
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<Option<f64>>>>()?;
    let floor = scores
        .iter()
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let floor = if floor.is_finite() { floor - 1.0 } else { 0.0 };
    Ok(scores.into_iter().map(|s| s.unwrap_or(floor)).collect())
}

/// Re-scores the top `depth` candidates of every query in `candidates`
/// (`None` = all of them) and keeps the first-stage order below.
///
/// Queries whose text has no tokens keep their first-stage ranking.
pub fn rerank(
    model: &TkModel,
    queries: &HashMap<String, String>,
    documents: &HashMap<String, String>,
    candidates: &RunList,
    depth: Option<usize>,
    tag: &str,
) -> Result<RunList> {
    let depth = depth.unwrap_or(usize::MAX);
    rerank_run(candidates, depth, tag, |qid, prefix| {
        let text = queries
            .get(qid)
            .ok_or_else(|| Error::UnknownId(format!("query {qid}")))?;
        if tokenize(text).is_empty() {
            log::warn!("query {qid} has no tokens; first-stage order kept");
            let n = prefix.len() as f64;
            return Ok((0..prefix.len()).map(|i| n - i as f64).collect());
        }
        score_candidates(model, text, prefix, documents)
    })
}

/// BM25 retrieval of `candidates_k` documents followed by re-ranking of the top `depth`.
#[allow(clippy::too_many_arguments)]
pub fn full_ranking(
    model: &TkModel,
    index: &InvertedIndex,
    bm25: Bm25Params,
    queries: &[TextRecord],
    documents: &HashMap<String, String>,
    candidates_k: usize,
    depth: usize,
    tag: &str,
) -> Result<RunList> {
    let first = bm25_run(index, queries, candidates_k.max(depth), bm25, "bm25")?;
    let texts: HashMap<String, String> = queries
        .iter()
        .map(|q| (q.id.clone(), q.text.clone()))
        .collect();
    rerank(model, &texts, documents, &first, Some(depth), tag)
}

/// Averages the scores of several runs over identical candidate sets.
pub fn ensemble_runs(runs: &[RunList], tag: &str) -> Result<RunList> {
    let Some(first) = runs.first() else {
        return Err(Error::Empty("ensemble needs at least one run".into()));
    };
    let mut out = RunList::new(tag);
    for (qid, entries) in first.iter() {
        let mut sums: BTreeMap<&str, f64> =
            entries.iter().map(|e| (e.doc_id.as_str(), 0.0)).collect();
        for (i, run) in runs.iter().enumerate() {
            let other = run.get(qid).unwrap_or(&[]);
            if other.len() != entries.len() {
                return Err(Error::InvalidArgument(format!(
                    "run {} has {} candidates for query {qid}, run 1 has {}",
                    i + 1,
                    other.len(),
                    entries.len()
                )));
            }
            for e in other {
                let slot = sums.get_mut(e.doc_id.as_str()).ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "run {} ranks {} for query {qid}, which run 1 does not",
                        i + 1,
                        e.doc_id
                    ))
                })?;
                *slot += e.score;
            }
        }
        let n = runs.len() as f64;
        // First-run order breaks ties.
        let docs = entries
            .iter()
            .map(|e| (e.doc_id.clone(), sums[e.doc_id.as_str()] / n))
            .collect();
        out.set_scores(qid, docs)?;
    }
    if runs.iter().any(|r| r.num_queries() != first.num_queries()) {
        return Err(Error::InvalidArgument(
            "runs cover different queries".into(),
        ));
    }
    Ok(out)
}

/// Builds the side-by-side explanation of two documents for one query.
///
/// Captions show each document's rank in `run`, when present.
pub fn compare_documents(
    model: &TkModel,
    query_id: &str,
    query_text: &str,
    doc_ids: [&str; 2],
    documents: &HashMap<String, String>,
    run: Option<&RunList>,
    highlight: &[f64],
) -> Result<Comparison> {
    let view = |doc_id: &str| -> Result<DocumentView> {
        let text = documents
            .get(doc_id)
            .ok_or_else(|| Error::UnknownId(format!("document {doc_id}")))?;
        let report = explain_texts(model, query_text, text, highlight)?;
        let caption = run
            .and_then(|r| r.get(query_id))
            .and_then(|entries| entries.iter().find(|e| e.doc_id == doc_id))
            .map(|e| format!("Rank: {}", e.rank))
            .unwrap_or_default();
        Ok(DocumentView {
            doc_id: doc_id.to_string(),
            caption,
            report,
        })
    };
    Ok(Comparison {
        query_id: query_id.to_string(),
        query_text: query_text.to_string(),
        left: view(doc_ids[0])?,
        right: view(doc_ids[1])?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(entries: &[(&str, &[(&str, f64)])]) -> RunList {
        let mut r = RunList::new("t");
        for (q, docs) in entries {
            r.set_ranking(*q, docs.iter().map(|(d, s)| (d.to_string(), *s)).collect())
                .unwrap();
        }
        r
    }

    #[test]
    fn ensemble_averages_scores() {
        let a = run(&[("q", &[("x", 3.0), ("y", 1.0)])]);
        let b = run(&[("q", &[("y", 4.0), ("x", 0.0)])]);
        let e = ensemble_runs(&[a.clone(), b], "ens").unwrap();
        let entries = e.get("q").unwrap();
        assert_eq!(entries[0].doc_id, "y");
        assert_eq!(entries[0].score, 2.5);
        assert_eq!(entries[1].score, 1.5);
        let c = run(&[("q", &[("z", 1.0), ("x", 0.0)])]);
        assert!(ensemble_runs(&[a, c], "ens").is_err());
        assert!(ensemble_runs(&[], "ens").is_err());
    }

    #[test]
    fn mode_parses() {
        assert_eq!("full".parse::<Mode>().unwrap(), Mode::Full);
        assert_eq!("rerank".parse::<Mode>().unwrap(), Mode::Rerank);
        assert!("other".parse::<Mode>().is_err());
    }
}
