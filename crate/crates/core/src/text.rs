//! Tokenization, vocabulary, embedding tables and capped id sequences.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PAD_ID: u32 = 0;
pub const OOV_ID: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const OOV_TOKEN: &str = "<oov>";

/// Half-width of the uniform draw for embedding rows without a pre-trained vector.
pub const EMBEDDING_INIT_RANGE: f64 = 0.05;

/// Lowercases, splits on whitespace and splits every punctuation character
/// off as its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(c.to_lowercase().collect());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    terms: Vec<String>,
    ids: HashMap<String, u32>,
    min_occurrence: usize,
}

impl Vocabulary {
    /// Keeps every term whose collection frequency is at least `min_occurrence`.
    /// Ids are assigned by descending frequency, ties lexicographically.
    pub fn build<I, S>(documents: I, min_occurrence: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if min_occurrence == 0 {
            return Err(Error::InvalidArgument(
                "minimum occurrence must be at least 1".into(),
            ));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for doc in documents {
            for token in tokenize(doc.as_ref()) {
                *counts.entry(token).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, n)| *n >= min_occurrence)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let terms = kept.into_iter().map(|(t, _)| t);
        Ok(Self::from_terms(terms, min_occurrence))
    }

    /// Rebuilds a vocabulary from its non-reserved terms in id order.
    pub fn from_terms<I: IntoIterator<Item = String>>(terms: I, min_occurrence: usize) -> Self {
        let mut all = vec![PAD_TOKEN.to_string(), OOV_TOKEN.to_string()];
        all.extend(terms);
        let ids = all
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary {
            terms: all,
            ids,
            min_occurrence,
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.len() <= 2
    }

    pub fn min_occurrence(&self) -> usize {
        self.min_occurrence
    }

    /// Id of `term`, or [`OOV_ID`].
    pub fn id(&self, term: &str) -> u32 {
        self.ids.get(term).copied().unwrap_or(OOV_ID)
    }

    pub fn contains(&self, term: &str) -> bool {
        self.ids.contains_key(term)
    }

    pub fn term(&self, id: u32) -> Option<&str> {
        self.terms.get(id as usize).map(String::as_str)
    }

    /// Non-reserved terms in id order.
    pub fn terms(&self) -> &[String] {
        &self.terms[2..]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: Tensor,
    pub trainable: bool,
}

impl EmbeddingTable {
    /// Every row except padding drawn from `uniform(-0.05, 0.05)`.
    pub fn random<R: Rng>(vocab_size: usize, d_emb: usize, rng: &mut R) -> Self {
        let dist = Uniform::new(-EMBEDDING_INIT_RANGE, EMBEDDING_INIT_RANGE);
        let mut matrix = Tensor::zeros(&[vocab_size, d_emb]);
        for row in 1..vocab_size {
            for col in 0..d_emb {
                matrix.set(row, col, dist.sample(rng));
            }
        }
        EmbeddingTable {
            matrix,
            trainable: true,
        }
    }

    pub fn d_emb(&self) -> usize {
        self.matrix.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.rows()
    }
}

/// Loads whitespace-separated `term v1 .. vd` vectors for the terms of `vocab`.
///
/// Rows of vocabulary terms missing from the file are drawn from
/// `uniform(-0.05, 0.05)` in id order; the padding row stays zero. A leading
/// `count dim` header line (word2vec / fastText text format) is skipped.
pub fn load_embeddings<R: Rng>(
    path: &Path,
    vocab: &Vocabulary,
    d_emb: usize,
    rng: &mut R,
) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let mut found: HashMap<u32, Vec<f64>> = HashMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = idx + 1;
        let mut fields = line.split_whitespace();
        let Some(term) = fields.next() else {
            continue;
        };
        let rest: Vec<&str> = fields.collect();
        if lineno == 1 && rest.len() == 1 && term.parse::<usize>().is_ok() {
            let dim: usize = rest[0]
                .parse()
                .map_err(|_| Error::parse(&name, lineno, "bad header"))?;
            if dim != d_emb {
                return Err(Error::parse(
                    &name,
                    lineno,
                    format!("file has {dim} dimensions, expected {d_emb}"),
                ));
            }
            continue;
        }
        if rest.len() != d_emb {
            let message = if found.is_empty() && lineno == 1 {
                format!("file has {} dimensions, expected {d_emb}", rest.len())
            } else {
                format!("expected {d_emb} values, found {}", rest.len())
            };
            return Err(Error::parse(&name, lineno, message));
        }
        let id = vocab.id(term);
        if id == OOV_ID || id == PAD_ID || !vocab.contains(term) {
            continue;
        }
        let values = rest
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(&name, lineno, format!("bad number: {e}")))?;
        found.insert(id, values);
    }

    let dist = Uniform::new(-EMBEDDING_INIT_RANGE, EMBEDDING_INIT_RANGE);
    let mut matrix = Tensor::zeros(&[vocab.len(), d_emb]);
    for row in 1..vocab.len() {
        match found.get(&(row as u32)) {
            Some(values) => {
                for (col, v) in values.iter().enumerate() {
                    matrix.set(row, col, *v);
                }
            }
            None => {
                for col in 0..d_emb {
                    matrix.set(row, col, dist.sample(rng));
                }
            }
        }
    }
    Ok(EmbeddingTable {
        matrix,
        trainable: true,
    })
}

/// Vocabulary ids of a text, truncated to a cap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    /// Ids of the real tokens; padding is implicit beyond `true_length`.
    pub ids: Vec<u32>,
    pub true_length: usize,
    pub cap: usize,
}

impl TokenSequence {
    pub fn from_ids(ids: Vec<u32>, cap: usize) -> Result<Self> {
        if cap == 0 {
            return Err(Error::InvalidArgument("cap must be at least 1".into()));
        }
        if ids.is_empty() {
            return Err(Error::Empty("token sequence".into()));
        }
        let mut ids = ids;
        ids.truncate(cap);
        Ok(TokenSequence {
            true_length: ids.len(),
            ids,
            cap,
        })
    }

    /// Ids padded with [`PAD_ID`] to `len` (which must be ≥ `true_length`).
    pub fn padded(&self, len: usize) -> Vec<u32> {
        assert!(len >= self.true_length, "padding below true length");
        let mut ids = self.ids.clone();
        ids.resize(len, PAD_ID);
        ids
    }

    /// Same tokens with explicit padding up to `len` positions.
    pub fn with_padding(&self, len: usize) -> TokenSequence {
        TokenSequence {
            ids: self.padded(len),
            true_length: self.true_length,
            cap: self.cap.max(len),
        }
    }
}

/// Tokenizes, maps terms to ids and truncates to `cap`.
pub fn encode_sequence(text: &str, vocab: &Vocabulary, cap: usize) -> Result<TokenSequence> {
    if cap == 0 {
        return Err(Error::InvalidArgument("cap must be at least 1".into()));
    }
    let ids: Vec<u32> = tokenize(text)
        .iter()
        .take(cap)
        .map(|t| vocab.id(t))
        .collect();
    if ids.is_empty() {
        return Err(Error::Empty(format!("text {text:?} has no tokens")));
    }
    TokenSequence::from_ids(ids, cap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize("The androgen receptor (AR),"),
            vec!["the", "androgen", "receptor", "(", "ar", ")", ","]
        );
        assert!(tokenize("").is_empty());
        assert!(tokenize(" \t\n ").is_empty());
        assert_eq!(tokenize("do goldfish grow"), vec!["do", "goldfish", "grow"]);
        assert_eq!(tokenize("5-alpha"), vec!["5", "-", "alpha"]);
    }

    #[test]
    fn vocabulary_threshold_is_inclusive() {
        let docs = ["a a a a a b b b b c", "c"];
        let vocab = Vocabulary::build(docs, 5).unwrap();
        assert!(vocab.contains("a"));
        assert_eq!(vocab.id("b"), OOV_ID);
        assert_eq!(vocab.len(), 3);

        let all = Vocabulary::build(docs, 1).unwrap();
        assert_eq!(all.terms(), &["a", "b", "c"]);
        assert_eq!(all.id("a"), 2);
    }

    #[test]
    fn vocabulary_ties_break_lexicographically() {
        let vocab = Vocabulary::build(["z y x y z"], 1).unwrap();
        assert_eq!(vocab.terms(), &["y", "z", "x"]);
    }

    #[test]
    fn empty_corpus_has_only_reserved_ids() {
        let vocab = Vocabulary::build(Vec::<String>::new(), 5).unwrap();
        assert_eq!(vocab.len(), 2);
        assert_eq!(vocab.term(0), Some(PAD_TOKEN));
        assert!(Vocabulary::build(["a"], 0).is_err());
    }

    #[test]
    fn encode_truncates_at_cap() {
        let text = (0..250)
            .map(|i| format!("w{i}"))
            .collect::<Vec<_>>()
            .join(" ");
        let vocab = Vocabulary::build([text.as_str()], 1).unwrap();
        let seq = encode_sequence(&text, &vocab, 200).unwrap();
        assert_eq!(seq.ids.len(), 200);
        assert_eq!(seq.true_length, 200);
        let long = encode_sequence(&text, &vocab, 800).unwrap();
        assert_eq!(long.true_length, 250);

        let query = encode_sequence("one two three four five", &vocab, 30).unwrap();
        assert_eq!(query.true_length, 5);
        assert!(query.ids.iter().all(|&id| id == OOV_ID));
        assert!(matches!(
            encode_sequence(" ", &vocab, 30),
            Err(Error::Empty(_))
        ));
        assert_eq!(seq.padded(203)[200..], [PAD_ID; 3]);
    }

    fn write_vectors(contents: &str) -> tempfile::NamedTempFile {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.write_all(contents.as_bytes()).unwrap();
        file
    }

    #[test]
    fn load_embeddings_uses_file_rows_and_seeded_fill() {
        let vocab = Vocabulary::from_terms(["alpha".into(), "beta".into(), "gamma".into()], 1);
        let file = write_vectors("alpha 1 2 3\nbeta -0.5 0.25 4\nunknown 9 9 9\n");
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let table = load_embeddings(file.path(), &vocab, 3, &mut rng).unwrap();
        assert_eq!(table.vocab_size(), 5);
        assert_eq!(table.matrix.row(0), &[0.0, 0.0, 0.0]);
        assert_eq!(table.matrix.row(2), &[1.0, 2.0, 3.0]);
        assert_eq!(table.matrix.row(3), &[-0.5, 0.25, 4.0]);

        // OOV (row 1) then gamma (row 4) are drawn in id order.
        let mut replay = ChaCha8Rng::seed_from_u64(7);
        let dist = Uniform::new(-0.05, 0.05);
        let expected: Vec<f64> = (0..6).map(|_| dist.sample(&mut replay)).collect();
        assert_eq!(table.matrix.row(1), &expected[..3]);
        assert_eq!(table.matrix.row(4), &expected[3..]);
        assert!(expected.iter().all(|v| v.abs() < 0.05));
    }

    #[test]
    fn load_embeddings_reports_bad_lines() {
        let vocab = Vocabulary::from_terms(["a".into()], 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let file = write_vectors("a 1 2\nb 1\n");
        let err = load_embeddings(file.path(), &vocab, 2, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");

        let file = write_vectors("a 1 2 3\n");
        let err = load_embeddings(file.path(), &vocab, 2, &mut rng).unwrap_err();
        assert!(err.to_string().contains("dimensions"), "{err}");

        let file = write_vectors("2 3\na 1 2 3\n");
        assert!(load_embeddings(file.path(), &vocab, 3, &mut rng).is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn vocabulary_membership_ignores_corpus_order(
                docs in prop::collection::vec("[a-e ]{0,12}", 0..8),
                threshold in 1usize..4,
                rotate in 0usize..8,
            ) {
                let mut permuted = docs.clone();
                if !permuted.is_empty() {
                    let k = rotate % permuted.len();
                    permuted.rotate_left(k);
                    permuted.reverse();
                }
                let a = Vocabulary::build(&docs, threshold).unwrap();
                let b = Vocabulary::build(&permuted, threshold).unwrap();
                let mut ta = a.terms().to_vec();
                let mut tb = b.terms().to_vec();
                ta.sort();
                tb.sort();
                prop_assert_eq!(ta, tb);
            }

            #[test]
            fn reencoding_keeps_true_length(text in "[a-c ,.]{0,40}", cap in 1usize..10) {
                let vocab = Vocabulary::build([text.as_str()], 1).unwrap();
                if let Ok(seq) = encode_sequence(&text, &vocab, cap) {
                    let rendered: Vec<&str> = seq.ids.iter().map(|&i| vocab.term(i).unwrap()).collect();
                    let again = encode_sequence(&rendered.join(" "), &vocab, cap).unwrap();
                    prop_assert_eq!(again.true_length, seq.true_length);
                }
            }
        }
    }
}
