//! In-memory inverted index with BM25 scoring.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::error::{Error, Result};
use crate::text::tokenize;
use crate::tsv::TextRecord;

const MAGIC: &[u8; 8] = b"TKBM25IX";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 0.9, b: 0.4 }
    }
}

/// `ln(1 + (N - df + 0.5) / (df + 0.5))`, never negative.
pub fn idf(num_docs: usize, doc_freq: usize) -> f64 {
    let (n, df) = (num_docs as f64, doc_freq as f64);
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// Contribution of one query term occurrence.
pub fn term_score(tf: u32, doc_len: u32, avg_doc_len: f64, idf: f64, params: Bm25Params) -> f64 {
    if tf == 0 {
        return 0.0;
    }
    let tf = tf as f64;
    let norm = params.k1 * (1.0 - params.b + params.b * doc_len as f64 / avg_doc_len);
    idf * tf * (params.k1 + 1.0) / (tf + norm)
}

/// Orders document ids numerically when both are integers, otherwise lexicographically.
pub fn compare_doc_ids(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        _ => a.cmp(b),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avg_doc_len: f64,
    /// Posting lists `(doc number, term frequency)`, sorted by doc number.
    postings: HashMap<String, Vec<(u32, u32)>>,
    lookup: HashMap<String, u32>,
}

impl InvertedIndex {
    pub fn build(records: &[TextRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty("cannot index an empty collection".into()));
        }
        let mut doc_ids = Vec::with_capacity(records.len());
        let mut doc_lengths = Vec::with_capacity(records.len());
        let mut postings: HashMap<String, Vec<(u32, u32)>> = HashMap::new();
        let mut lookup = HashMap::with_capacity(records.len());
        for (n, record) in records.iter().enumerate() {
            let n = n as u32;
            if lookup.insert(record.id.clone(), n).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "document id {} appears twice",
                    record.id
                )));
            }
            let tokens = tokenize(&record.text);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push((n, count));
            }
            doc_ids.push(record.id.clone());
            doc_lengths.push(tokens.len() as u32);
        }
        Ok(Self::assemble(doc_ids, doc_lengths, postings, lookup))
    }

    fn assemble(
        doc_ids: Vec<String>,
        doc_lengths: Vec<u32>,
        postings: HashMap<String, Vec<(u32, u32)>>,
        lookup: HashMap<String, u32>,
    ) -> Self {
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avg = total as f64 / doc_lengths.len() as f64;
        InvertedIndex {
            doc_ids,
            doc_lengths,
            // An all-empty collection would otherwise divide by zero.
            avg_doc_len: if avg > 0.0 { avg } else { 1.0 },
            postings,
            lookup,
        }
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn doc_id(&self, n: u32) -> &str {
        &self.doc_ids[n as usize]
    }

    pub fn doc_number(&self, doc_id: &str) -> Option<u32> {
        self.lookup.get(doc_id).copied()
    }

    pub fn doc_len(&self, n: u32) -> u32 {
        self.doc_lengths[n as usize]
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn postings(&self, term: &str) -> &[(u32, u32)] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn term_freq(&self, term: &str, n: u32) -> u32 {
        let list = self.postings(term);
        list.binary_search_by_key(&n, |&(d, _)| d)
            .map_or(0, |i| list[i].1)
    }

    /// BM25 of one document; repeated query terms count repeatedly.
    pub fn bm25_score(
        &self,
        query_terms: &[String],
        doc_id: &str,
        params: Bm25Params,
    ) -> Result<f64> {
        let n = self
            .doc_number(doc_id)
            .ok_or_else(|| Error::UnknownId(format!("document {doc_id}")))?;
        let score = self.score_number(query_terms, n, params);
        Ok(score)
    }

    /// Top `k` documents containing at least one query term, by descending
    /// BM25; equal scores rank the lower document id first.
    pub fn search(
        &self,
        query_terms: &[String],
        k: usize,
        params: Bm25Params,
    ) -> Vec<(String, f64)> {
        let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
        for term in query_terms {
            if self.doc_freq(term) == 0 {
                continue;
            }
            for &(n, _) in self.postings(term) {
                acc.entry(n).or_insert(0.0);
            }
        }
        let mut scored: Vec<(u32, f64)> = acc
            .into_keys()
            .map(|n| (n, self.score_number(query_terms, n, params)))
            .collect();
        scored.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| compare_doc_ids(self.doc_id(a.0), self.doc_id(b.0)))
        });
        scored
            .into_iter()
            .take(k)
            .map(|(n, s)| (self.doc_id(n).to_string(), s))
            .collect()
    }

    fn score_number(&self, query_terms: &[String], n: u32, params: Bm25Params) -> f64 {
        let len = self.doc_len(n);
        let mut score = 0.0;
        for term in query_terms {
            let df = self.doc_freq(term);
            if df == 0 {
                continue;
            }
            let idf = idf(self.num_docs(), df);
            score += term_score(self.term_freq(term, n), len, self.avg_doc_len, idf, params);
        }
        score
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_u32(&mut out, self.doc_ids.len() as u32);
        for (id, len) in self.doc_ids.iter().zip(&self.doc_lengths) {
            put_str(&mut out, id);
            put_u32(&mut out, *len);
        }
        let mut terms: Vec<&String> = self.postings.keys().collect();
        terms.sort();
        put_u32(&mut out, terms.len() as u32);
        for term in terms {
            put_str(&mut out, term);
            let list = &self.postings[term];
            put_u32(&mut out, list.len() as u32);
            for &(n, tf) in list {
                put_u32(&mut out, n);
                put_u32(&mut out, tf);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], source: &str) -> Result<Self> {
        let corrupt = |message: &str| Error::Corrupt {
            path: source.to_string(),
            message: message.to_string(),
        };
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())
            .ok_or_else(|| corrupt("truncated header"))?
            != MAGIC
        {
            return Err(corrupt("not an index file"));
        }
        let version = r.u32().ok_or_else(|| corrupt("truncated header"))?;
        if version != FORMAT_VERSION {
            return Err(corrupt(&format!(
                "format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let truncated = || corrupt("truncated body");
        let num_docs = r.u32().ok_or_else(truncated)? as usize;
        if num_docs == 0 {
            return Err(corrupt("index has no documents"));
        }
        let mut doc_ids = Vec::with_capacity(num_docs);
        let mut doc_lengths = Vec::with_capacity(num_docs);
        let mut lookup = HashMap::with_capacity(num_docs);
        for n in 0..num_docs {
            let id = r.string().ok_or_else(truncated)?;
            lookup.insert(id.clone(), n as u32);
            doc_ids.push(id);
            doc_lengths.push(r.u32().ok_or_else(truncated)?);
        }
        let num_terms = r.u32().ok_or_else(truncated)? as usize;
        let mut postings = HashMap::with_capacity(num_terms);
        for _ in 0..num_terms {
            let term = r.string().ok_or_else(truncated)?;
            let len = r.u32().ok_or_else(truncated)? as usize;
            let mut list = Vec::with_capacity(len);
            for _ in 0..len {
                let n = r.u32().ok_or_else(truncated)?;
                let tf = r.u32().ok_or_else(truncated)?;
                if n as usize >= num_docs {
                    return Err(corrupt("posting refers to an unknown document"));
                }
                list.push((n, tf));
            }
            postings.insert(term, list);
        }
        if r.pos != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self::assemble(doc_ids, doc_lengths, postings, lookup))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let slice = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(slice)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn string(&mut self) -> Option<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).ok()
    }
}
