//! Plain-text model checkpoints.
//!
//! A checkpoint stores the architecture, the optional window configuration,
//! the vocabulary and every parameter. Floats are written in Rust's shortest
//! round-trip notation, so saving and loading reproduces every bit.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{TkConfig, TkModel, WindowConfig};
use crate::param::{LrGroup, ParamSet, Parameter};
use crate::tensor::Tensor;
use crate::text::{Vocabulary, OOV_TOKEN, PAD_TOKEN};

const HEADER: &str = "tk-checkpoint 1";

fn join<T: std::fmt::Display>(values: &[T]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn join_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Serializes a model; equal models always produce identical text.
pub fn to_text(model: &TkModel) -> Result<String> {
    let c = &model.config;
    let mut out = String::new();
    let _ = writeln!(out, "{HEADER}");
    let _ = writeln!(out, "d_emb {}", c.d_emb);
    let _ = writeln!(out, "layers {}", c.layers);
    let _ = writeln!(out, "heads {}", c.heads);
    let _ = writeln!(out, "head_size {}", c.head_size);
    let _ = writeln!(out, "ff_dim {}", c.ff_dim);
    let _ = writeln!(out, "kernel_centers {}", join_floats(&c.kernel_centers));
    let _ = writeln!(out, "sigma {:e}", c.sigma);
    let _ = writeln!(out, "log_base {:e}", c.log_base);
    let _ = writeln!(out, "query_cap {}", c.query_cap);
    let _ = writeln!(out, "doc_cap {}", c.doc_cap);
    match &model.window {
        None => {
            let _ = writeln!(out, "window none");
        }
        Some(w) => {
            let _ = writeln!(out, "window {}", w.top_r);
            let _ = writeln!(out, "window_sizes {}", join(&w.sizes));
            let _ = writeln!(out, "window_strides {}", join(&w.strides));
        }
    }
    let _ = writeln!(out, "min_occurrence {}", model.vocab.min_occurrence());
    let terms = model.vocab.terms();
    let _ = writeln!(out, "terms {}", terms.len());
    for term in terms {
        if term.is_empty() || term.chars().any(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!(
                "vocabulary term {term:?} cannot be stored"
            )));
        }
        let _ = writeln!(out, "{term}");
    }
    let _ = writeln!(out, "params {}", model.params.len());
    for (_, p) in model.params.iter() {
        let _ = writeln!(
            out,
            "param {} {} {} {}",
            p.name,
            p.group.as_str(),
            p.tensor.rows(),
            p.tensor.cols()
        );
        for r in 0..p.tensor.rows() {
            let _ = writeln!(out, "{}", join_floats(p.tensor.row(r)));
        }
    }
    let _ = writeln!(out, "end");
    Ok(out)
}

pub fn save(model: &TkModel, path: &Path) -> Result<()> {
    std::fs::write(path, to_text(model)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<TkModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_text(&text, &path.display().to_string())
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    source: &'a str,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        match self.inner.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l)
            }
            None => Err(Error::parse(
                self.source,
                self.line + 1,
                "unexpected end of checkpoint",
            )),
        }
    }

    fn error(&self, message: impl Into<String>) -> Error {
        Error::parse(self.source, self.line, message)
    }

    /// Reads `key value...` and returns the value part.
    fn field(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next()?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok(v),
            _ if line == key => Ok(""),
            _ => Err(self.error(format!("expected `{key}`, found {line:?}"))),
        }
    }

    fn parse<T: std::str::FromStr>(&self, s: &str, what: &str) -> Result<T> {
        s.parse()
            .map_err(|_| self.error(format!("invalid {what} {s:?}")))
    }

    fn usize_field(&mut self, key: &str) -> Result<usize> {
        let v = self.field(key)?;
        self.parse(v, key)
    }

    fn f64_field(&mut self, key: &str) -> Result<f64> {
        let v = self.field(key)?;
        self.parse(v, key)
    }

    fn list<T: std::str::FromStr>(&self, s: &str, what: &str) -> Result<Vec<T>> {
        s.split_whitespace().map(|v| self.parse(v, what)).collect()
    }
}

pub fn from_text(text: &str, source: &str) -> Result<TkModel> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        source,
        line: 0,
    };
    if lines.next()? != HEADER {
        return Err(lines.error("not a TK checkpoint"));
    }
    let d_emb = lines.usize_field("d_emb")?;
    let layers = lines.usize_field("layers")?;
    let heads = lines.usize_field("heads")?;
    let head_size = lines.usize_field("head_size")?;
    let ff_dim = lines.usize_field("ff_dim")?;
    let centers = lines.field("kernel_centers")?;
    let kernel_centers = lines.list(centers, "kernel center")?;
    let config = TkConfig {
        d_emb,
        layers,
        heads,
        head_size,
        ff_dim,
        kernel_centers,
        sigma: lines.f64_field("sigma")?,
        log_base: lines.f64_field("log_base")?,
        query_cap: lines.usize_field("query_cap")?,
        doc_cap: lines.usize_field("doc_cap")?,
    };
    let window = match lines.field("window")? {
        "none" => None,
        top_r => {
            let top_r = lines.parse(top_r, "top_r")?;
            let sizes = lines.field("window_sizes")?;
            let sizes = lines.list(sizes, "window size")?;
            let strides = lines.field("window_strides")?;
            let strides = lines.list(strides, "window stride")?;
            Some(WindowConfig {
                sizes,
                strides,
                top_r,
            })
        }
    };
    let min_occurrence = lines.usize_field("min_occurrence")?;
    let num_terms = lines.usize_field("terms")?;
    let mut terms = Vec::with_capacity(num_terms);
    let mut seen = std::collections::HashSet::new();
    for _ in 0..num_terms {
        let term = lines.next()?;
        if term == PAD_TOKEN || term == OOV_TOKEN || !seen.insert(term) {
            return Err(lines.error(format!("duplicate or reserved vocabulary term {term:?}")));
        }
        terms.push(term.to_string());
    }
    let vocab = Vocabulary::from_terms(terms, min_occurrence);
    let num_params = lines.usize_field("params")?;
    let mut params = ParamSet::new();
    for _ in 0..num_params {
        let header = lines.field("param")?;
        let fields: Vec<&str> = header.split(' ').collect();
        let [name, group, rows, cols] = fields[..] else {
            return Err(lines.error("parameter header needs name, group, rows and cols"));
        };
        let group = LrGroup::parse(group)
            .ok_or_else(|| lines.error(format!("unknown learning-rate group {group:?}")))?;
        let rows: usize = lines.parse(rows, "row count")?;
        let cols: usize = lines.parse(cols, "column count")?;
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = lines.next()?;
            let row: Vec<f64> = lines.list(line, "value")?;
            if row.len() != cols {
                return Err(lines.error(format!("expected {cols} values, found {}", row.len())));
            }
            values.extend(row);
        }
        let tensor = Tensor::new(vec![rows, cols], values)?;
        params
            .add(Parameter::new(name, tensor, group))
            .map_err(|e| lines.error(e.to_string()))?;
    }
    if lines.next()? != "end" {
        return Err(lines.error("expected `end`"));
    }
    TkModel::from_parts(config, window, vocab, params)
}

fn mismatch(field: &str, checkpoint: impl std::fmt::Debug, config: impl std::fmt::Debug) -> Error {
    Error::ConfigMismatch {
        field: field.to_string(),
        checkpoint: format!("{checkpoint:?}"),
        config: format!("{config:?}"),
    }
}

/// Fails with the first field on which a loaded model disagrees with a configuration.
pub fn check_config(
    model: &TkModel,
    config: &TkConfig,
    window: Option<&WindowConfig>,
) -> Result<()> {
    let c = &model.config;
    let sizes = [
        ("d_emb", c.d_emb, config.d_emb),
        ("layers", c.layers, config.layers),
        ("heads", c.heads, config.heads),
        ("head_size", c.head_size, config.head_size),
        ("ff_dim", c.ff_dim, config.ff_dim),
        ("query_cap", c.query_cap, config.query_cap),
        ("doc_cap", c.doc_cap, config.doc_cap),
    ];
    for (field, a, b) in sizes {
        if a != b {
            return Err(mismatch(field, a, b));
        }
    }
    if c.kernel_centers != config.kernel_centers {
        return Err(mismatch(
            "kernel_centers",
            &c.kernel_centers,
            &config.kernel_centers,
        ));
    }
    if c.sigma != config.sigma {
        return Err(mismatch("sigma", c.sigma, config.sigma));
    }
    if c.log_base != config.log_base {
        return Err(mismatch("log_base", c.log_base, config.log_base));
    }
    match (&model.window, window) {
        (None, None) => Ok(()),
        (Some(a), Some(b)) if a == b => Ok(()),
        (a, b) => Err(mismatch("window", a, b)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::EmbeddingTable;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(window: Option<WindowConfig>) -> TkModel {
        let config = TkConfig {
            d_emb: 4,
            layers: 1,
            heads: 2,
            head_size: 2,
            ff_dim: 3,
            kernel_centers: vec![1.0, 0.5, -0.5],
            query_cap: 5,
            doc_cap: 8,
            ..TkConfig::default()
        };
        let vocab = Vocabulary::from_terms(["a".into(), "b".into(), "c".into()], 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let emb = EmbeddingTable::random(vocab.len(), 4, &mut rng);
        TkModel::new(config, window, vocab, emb, &mut rng).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for window in [None, Some(WindowConfig::with_half_strides(vec![2, 4], 2))] {
            let mut model = tiny(window);
            let id = model.ids.beta;
            model.params.get_mut(id).tensor.set(0, 0, 0.1 + 0.2);
            let text = to_text(&model).unwrap();
            let back = from_text(&text, "mem").unwrap();
            assert_eq!(back, model);
            assert_eq!(to_text(&back).unwrap(), text);
        }
    }

    #[test]
    fn config_mismatch_names_the_field() {
        let model = tiny(None);
        let mut other = model.config.clone();
        other.heads = 3;
        match check_config(&model, &other, None) {
            Err(Error::ConfigMismatch { field, .. }) => assert_eq!(field, "heads"),
            r => panic!("unexpected {r:?}"),
        }
        assert!(check_config(&model, &model.config, None).is_ok());
        let w = WindowConfig::default();
        assert!(check_config(&model, &model.config, Some(&w)).is_err());
    }

    #[test]
    fn truncated_checkpoint_reports_a_line() {
        let text = to_text(&tiny(None)).unwrap();
        let cut: String = text.lines().take(20).map(|l| format!("{l}\n")).collect();
        let err = from_text(&cut, "mem").unwrap_err().to_string();
        assert!(err.starts_with("mem:"), "{err}");
    }
}
