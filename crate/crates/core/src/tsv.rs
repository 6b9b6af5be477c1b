//! Tab-separated collection, query and training-triple files.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};

/// One `id<TAB>text` record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextRecord {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextTriple {
    pub query: String,
    pub positive: String,
    pub negative: String,
}

fn lines(path: &Path) -> Result<impl Iterator<Item = (usize, Result<String>)> + '_> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(BufReader::new(file)
        .lines()
        .enumerate()
        .map(move |(i, l)| (i + 1, l.map_err(|e| Error::io(path, e)))))
}

/// Reads a collection (`doc_id<TAB>text`) or queries (`query_id<TAB>text`) file.
pub fn read_records(path: &Path) -> Result<Vec<TextRecord>> {
    let name = path.display().to_string();
    let mut out = Vec::new();
    for (lineno, line) in lines(path)? {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let Some((id, text)) = line.split_once('\t') else {
            return Err(Error::parse(&name, lineno, "expected `id<TAB>text`"));
        };
        if id.is_empty() {
            return Err(Error::parse(&name, lineno, "empty id"));
        }
        out.push(TextRecord {
            id: id.to_string(),
            text: text.to_string(),
        });
    }
    Ok(out)
}

/// Reads `query<TAB>positive<TAB>negative` training triples.
pub fn read_triples(path: &Path) -> Result<Vec<TextTriple>> {
    let name = path.display().to_string();
    let mut out = Vec::new();
    for (lineno, line) in lines(path)? {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                &name,
                lineno,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        out.push(TextTriple {
            query: fields[0].to_string(),
            positive: fields[1].to_string(),
            negative: fields[2].to_string(),
        });
    }
    Ok(out)
}

pub fn write_records(path: &Path, records: &[TextRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.id);
        out.push('\t');
        out.push_str(&r.text);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_triples(path: &Path, triples: &[TextTriple]) -> Result<()> {
    let mut out = String::new();
    for t in triples {
        out.push_str(&format!("{}\t{}\t{}\n", t.query, t.positive, t.negative));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
