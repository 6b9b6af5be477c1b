//! Synthetic marker-token corpus shared by the CLI tests.
//!
//! Query `q` carries the token `mk{q}` and two query-only filler words; its
//! two relevant documents carry the same marker among eight document filler
//! words. The marker is the only term a query shares with any document, so it
//! alone separates relevant from non-relevant documents.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tk_core::eval::{Qrels, RunList};
use tk_core::tsv::{write_records, write_triples, TextRecord, TextTriple};

pub struct Corpus {
    pub docs: Vec<TextRecord>,
    pub queries: Vec<TextRecord>,
    pub triples: Vec<TextTriple>,
    pub qrels: Qrels,
    /// Validation candidates: both relevant documents among random others.
    pub candidates: RunList,
}

pub struct CorpusFiles {
    pub docs: PathBuf,
    pub queries: PathBuf,
    pub triples: PathBuf,
    pub qrels: PathBuf,
    pub candidates: PathBuf,
}

const FILLERS: usize = 40;

fn filler(rng: &mut ChaCha8Rng) -> String {
    format!("w{}", rng.gen_range(0..FILLERS))
}

fn query_filler(rng: &mut ChaCha8Rng) -> String {
    format!("u{}", rng.gen_range(0..FILLERS))
}

pub fn marker_corpus(
    num_queries: usize,
    triples_per_query: usize,
    candidates: usize,
    seed: u64,
) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_docs = 2 * num_queries;
    let mut docs = Vec::with_capacity(num_docs);
    let mut queries = Vec::with_capacity(num_queries);
    let mut qrels = Qrels::new();
    for q in 0..num_queries {
        let mut words: Vec<String> = vec![
            format!("mk{q}"),
            query_filler(&mut rng),
            query_filler(&mut rng),
        ];
        words.shuffle(&mut rng);
        queries.push(TextRecord {
            id: format!("q{q}"),
            text: words.join(" "),
        });
        for j in 0..2 {
            let id = format!("{}", 2 * q + j);
            let mut words: Vec<String> = (0..8).map(|_| filler(&mut rng)).collect();
            let at = rng.gen_range(0..=words.len());
            words.insert(at, format!("mk{q}"));
            docs.push(TextRecord {
                id: id.clone(),
                text: words.join(" "),
            });
            qrels.insert(format!("q{q}"), id, 1);
        }
    }
    let mut triples = Vec::new();
    for q in 0..num_queries {
        for t in 0..triples_per_query {
            let pos = 2 * q + t % 2;
            let neg = loop {
                let d = rng.gen_range(0..num_docs);
                if d / 2 != q {
                    break d;
                }
            };
            triples.push(TextTriple {
                query: queries[q].text.clone(),
                positive: docs[pos].text.clone(),
                negative: docs[neg].text.clone(),
            });
        }
    }
    let mut run = RunList::new("bm25");
    for q in 0..num_queries {
        let mut ids: Vec<usize> = vec![2 * q, 2 * q + 1];
        let mut others: Vec<usize> = (0..num_docs).filter(|d| d / 2 != q).collect();
        others.shuffle(&mut rng);
        ids.extend(others.into_iter().take(candidates.saturating_sub(2)));
        ids.shuffle(&mut rng);
        let n = ids.len();
        run.set_ranking(
            format!("q{q}"),
            ids.into_iter()
                .enumerate()
                .map(|(i, d)| (d.to_string(), (n - i) as f64))
                .collect(),
        )
        .unwrap();
    }
    Corpus {
        docs,
        queries,
        triples,
        qrels,
        candidates: run,
    }
}

impl Corpus {
    pub fn write(&self, dir: &Path) -> CorpusFiles {
        let files = CorpusFiles {
            docs: dir.join("docs.tsv"),
            queries: dir.join("queries.tsv"),
            triples: dir.join("triples.tsv"),
            qrels: dir.join("qrels.txt"),
            candidates: dir.join("candidates.run"),
        };
        write_records(&files.docs, &self.docs).unwrap();
        write_records(&files.queries, &self.queries).unwrap();
        write_triples(&files.triples, &self.triples).unwrap();
        std::fs::write(&files.qrels, self.qrels.to_trec()).unwrap();
        self.candidates.write(&files.candidates).unwrap();
        files
    }
}
