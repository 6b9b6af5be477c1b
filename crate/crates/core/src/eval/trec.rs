//! TREC run (`qid Q0 docid rank score tag`) and qrels (`qid 0 docid grade`) files.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use crate::error::{Error, Result};

/// Default grade at or above which a document counts as relevant.
pub const DEFAULT_RELEVANCE_THRESHOLD: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Qrels {
    grades: BTreeMap<String, BTreeMap<String, u32>>,
    /// Grades `>=` this count as relevant for the binary metrics.
    pub threshold: u32,
}

impl Default for Qrels {
    fn default() -> Self {
        Qrels {
            grades: BTreeMap::new(),
            threshold: DEFAULT_RELEVANCE_THRESHOLD,
        }
    }
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, qid: impl Into<String>, doc_id: impl Into<String>, grade: u32) {
        self.grades
            .entry(qid.into())
            .or_default()
            .insert(doc_id.into(), grade);
    }

    /// Grade of a pair; unjudged pairs are 0.
    pub fn grade(&self, qid: &str, doc_id: &str) -> u32 {
        self.grades
            .get(qid)
            .and_then(|q| q.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn is_relevant(&self, qid: &str, doc_id: &str) -> bool {
        self.grade(qid, doc_id) >= self.threshold.max(1)
    }

    pub fn judgments(&self, qid: &str) -> Option<&BTreeMap<String, u32>> {
        self.grades.get(qid)
    }

    /// Number of relevant documents of a query.
    pub fn num_relevant(&self, qid: &str) -> usize {
        let threshold = self.threshold.max(1);
        self.grades
            .get(qid)
            .map_or(0, |q| q.values().filter(|&&g| g >= threshold).count())
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.grades.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.grades.is_empty()
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut qrels = Qrels::new();
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if fields.len() != 4 {
                return Err(Error::parse(
                    source,
                    lineno,
                    format!(
                        "expected `qid 0 docid grade`, found {} fields",
                        fields.len()
                    ),
                ));
            }
            let grade: u32 = fields[3].parse().map_err(|_| {
                Error::parse(
                    source,
                    lineno,
                    format!("grade `{}` is not a non-negative integer", fields[3]),
                )
            })?;
            qrels.insert(fields[0], fields[2], grade);
        }
        Ok(qrels)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_trec(&self) -> String {
        let mut out = String::new();
        for (qid, docs) in &self.grades {
            for (doc, grade) in docs {
                out.push_str(&format!("{qid} 0 {doc} {grade}\n"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub doc_id: String,
    pub score: f64,
    pub rank: usize,
}

/// Ranked results per query.
#[derive(Debug, Clone, PartialEq)]
pub struct RunList {
    pub tag: String,
    queries: BTreeMap<String, Vec<RunEntry>>,
}

impl RunList {
    pub fn new(tag: impl Into<String>) -> Self {
        RunList {
            tag: tag.into(),
            queries: BTreeMap::new(),
        }
    }

    /// Sets the ranking of `qid` to `docs` in the given order.
    ///
    /// Scores must be non-increasing and doc ids unique.
    pub fn set_ranking(&mut self, qid: impl Into<String>, docs: Vec<(String, f64)>) -> Result<()> {
        let qid = qid.into();
        let mut seen = HashSet::new();
        let mut entries = Vec::with_capacity(docs.len());
        for (i, (doc_id, score)) in docs.into_iter().enumerate() {
            if !seen.insert(doc_id.clone()) {
                return Err(Error::InvalidArgument(format!(
                    "document {doc_id} appears twice for query {qid}"
                )));
            }
            if let Some(prev) = entries.last().map(|e: &RunEntry| e.score) {
                if score > prev || score.is_nan() {
                    return Err(Error::InvalidArgument(format!(
                        "query {qid}: score {score} at rank {} exceeds {prev} above it",
                        i + 1
                    )));
                }
            }
            entries.push(RunEntry {
                doc_id,
                score,
                rank: i + 1,
            });
        }
        self.queries.insert(qid, entries);
        Ok(())
    }

    /// Ranks `docs` by descending score, equal scores keeping their input order.
    pub fn set_scores(
        &mut self,
        qid: impl Into<String>,
        mut docs: Vec<(String, f64)>,
    ) -> Result<()> {
        docs.sort_by(|a, b| b.1.total_cmp(&a.1));
        self.set_ranking(qid, docs)
    }

    pub fn get(&self, qid: &str) -> Option<&[RunEntry]> {
        self.queries.get(qid).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[RunEntry])> {
        self.queries.iter().map(|(q, e)| (q.as_str(), e.as_slice()))
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.queries.keys().map(String::as_str)
    }

    pub fn num_queries(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.values().all(Vec::is_empty)
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut raw: BTreeMap<String, Vec<(usize, RunEntry)>> = BTreeMap::new();
        let mut tag: Option<String> = None;
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if fields.len() != 6 {
                return Err(Error::parse(
                    source,
                    lineno,
                    format!(
                        "expected `qid Q0 docid rank score tag`, found {} fields",
                        fields.len()
                    ),
                ));
            }
            let rank: usize =
                fields[3].parse().ok().filter(|r| *r >= 1).ok_or_else(|| {
                    Error::parse(source, lineno, format!("bad rank `{}`", fields[3]))
                })?;
            let score: f64 = fields[4]
                .parse()
                .ok()
                .filter(|s: &f64| !s.is_nan())
                .ok_or_else(|| {
                    Error::parse(source, lineno, format!("bad score `{}`", fields[4]))
                })?;
            tag.get_or_insert_with(|| fields[5].to_string());
            let entries = raw.entry(fields[0].to_string()).or_default();
            if entries.iter().any(|(_, e)| e.doc_id == fields[2]) {
                return Err(Error::parse(
                    source,
                    lineno,
                    format!("duplicate document {} for query {}", fields[2], fields[0]),
                ));
            }
            entries.push((
                lineno,
                RunEntry {
                    doc_id: fields[2].to_string(),
                    score,
                    rank,
                },
            ));
        }
        let mut run = RunList::new(tag.unwrap_or_default());
        for (qid, mut entries) in raw {
            entries.sort_by_key(|(_, e)| e.rank);
            for (i, (lineno, e)) in entries.iter().enumerate() {
                if e.rank != i + 1 {
                    return Err(Error::parse(
                        source,
                        *lineno,
                        format!("query {qid}: ranks are not contiguous from 1"),
                    ));
                }
                if i > 0 && e.score > entries[i - 1].1.score {
                    return Err(Error::parse(
                        source,
                        *lineno,
                        format!("query {qid}: score increases at rank {}", e.rank),
                    ));
                }
            }
            run.queries
                .insert(qid, entries.into_iter().map(|(_, e)| e).collect());
        }
        Ok(run)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_trec(&self) -> String {
        let tag = if self.tag.is_empty() {
            "run"
        } else {
            &self.tag
        };
        let mut out = String::new();
        for (qid, entries) in &self.queries {
            for e in entries {
                out.push_str(&format!(
                    "{qid} Q0 {} {} {} {tag}\n",
                    e.doc_id, e.rank, e.score
                ));
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_trec()).map_err(|e| Error::io(path, e))
    }
}
