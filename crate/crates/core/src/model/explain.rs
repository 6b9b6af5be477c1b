//! Per-kernel score tables and word-to-kernel affiliations.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::text::{tokenize, TokenSequence};

use super::scoring::{format_center, ScoreBreakdown, LOG_CLAMP};
use super::{ForwardOptions, TkModel};

/// Kernel affiliation of one document word.
#[derive(Debug, Clone, PartialEq)]
pub struct WordAffiliation {
    pub position: usize,
    pub term: String,
    /// `max_i M[i][j]` over real query terms.
    pub best_match: f64,
    /// Index of the nearest kernel center.
    pub kernel: usize,
    pub center: f64,
    /// Whether `center` is one of the highlighted kernels.
    pub highlighted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplainReport {
    pub breakdown: ScoreBreakdown,
    pub query_terms: Vec<String>,
    pub doc_terms: Vec<String>,
    pub words: Vec<WordAffiliation>,
    pub highlight: Vec<f64>,
    /// `k × query_len`: log-path contribution of each real query term per kernel.
    pub query_contributions: Tensor,
}

/// Index of the center closest to `value`; an exact tie goes to the higher center.
pub fn nearest_center(value: f64, centers: &[f64]) -> usize {
    let mut best = 0;
    for (k, &mu) in centers.iter().enumerate().skip(1) {
        let (d, d_best) = ((value - mu).abs(), (value - centers[best]).abs());
        if d < d_best || (d == d_best && mu > centers[best]) {
            best = k;
        }
    }
    best
}

fn terms_for(model: &TkModel, seq: &TokenSequence) -> Vec<String> {
    seq.ids[..seq.true_length]
        .iter()
        .map(|&id| model.vocab.term(id).unwrap_or("?").to_string())
        .collect()
}

fn is_highlighted(center: f64, highlight: &[f64]) -> bool {
    highlight.iter().any(|h| (h - center).abs() < 1e-9)
}

/// Scores a pair and attributes every document word to its nearest kernel.
pub fn explain(
    model: &TkModel,
    query: &TokenSequence,
    doc: &TokenSequence,
    highlight: &[f64],
) -> Result<ExplainReport> {
    let centers = &model.config.kernel_centers;
    if let Some(h) = highlight.iter().find(|h| !is_highlighted(**h, centers)) {
        return Err(Error::InvalidArgument(format!(
            "highlighted kernel {h} is not a configured center"
        )));
    }
    let trace = model.forward_trace(query, doc, ForwardOptions::default())?;
    let m = &trace.match_matrix;
    let q_true = query.true_length;
    let words = (0..doc.true_length)
        .map(|j| {
            let best = (0..q_true)
                .map(|i| m.values.get(i, j))
                .fold(f64::NEG_INFINITY, f64::max);
            let kernel = nearest_center(best, centers);
            WordAffiliation {
                position: j,
                term: model.vocab.term(doc.ids[j]).unwrap_or("?").to_string(),
                best_match: best,
                kernel,
                center: centers[kernel],
                highlighted: is_highlighted(centers[kernel], highlight),
            }
        })
        .collect();
    let inv_ln_base = 1.0 / model.config.log_base.ln();
    let sums = &trace.features.sums;
    let query_contributions = Tensor::from_fn(sums.rows(), sums.cols(), |k, i| {
        if i < q_true {
            sums.get(k, i).max(LOG_CLAMP).ln() * inv_ln_base
        } else {
            0.0
        }
    });
    Ok(ExplainReport {
        breakdown: trace.breakdown,
        query_terms: terms_for(model, query),
        doc_terms: terms_for(model, doc),
        words,
        highlight: highlight.to_vec(),
        query_contributions,
    })
}

/// Like [`explain`], but shows the original surface tokens instead of vocabulary terms.
pub fn explain_texts(
    model: &TkModel,
    query: &str,
    doc: &str,
    highlight: &[f64],
) -> Result<ExplainReport> {
    let q = model.encode_query(query)?;
    let d = model.encode_doc(doc)?;
    let mut report = explain(model, &q, &d, highlight)?;
    let q_tokens = tokenize(query);
    let d_tokens = tokenize(doc);
    report.query_terms = q_tokens.into_iter().take(q.true_length).collect();
    report.doc_terms = d_tokens.into_iter().take(d.true_length).collect();
    for (w, t) in report.words.iter_mut().zip(&report.doc_terms) {
        w.term = t.clone();
    }
    Ok(report)
}

impl ExplainReport {
    /// Kernel table rows: `(center, s^k_log)`.
    pub fn kernel_table(&self) -> Vec<(f64, f64)> {
        self.breakdown
            .kernel_centers
            .iter()
            .copied()
            .zip(self.breakdown.per_kernel_log.iter().copied())
            .collect()
    }

    /// Document text with highlighted words marked as `[word|center]`.
    pub fn marked_text(&self) -> String {
        self.words
            .iter()
            .map(|w| {
                if w.highlighted {
                    format!("[{}|{}]", w.term, format_center(w.center))
                } else {
                    w.term.clone()
                }
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn table_lines(&self) -> Vec<String> {
        let mut lines = vec![format!("{:>6}  {:>10}", "mu_k", "s^k_log")];
        for (mu, v) in self.kernel_table() {
            let mark = if is_highlighted(mu, &self.highlight) {
                "*"
            } else {
                " "
            };
            lines.push(format!("{:>5}{mark}  {:>10.4}", format_center(mu), v));
        }
        lines.push("-".repeat(18));
        lines.push(format!("{:>6}  {:>10.4}", "s_log", self.breakdown.s_log));
        lines.push(format!("{:>6}  {:>10.4}", "s_len", self.breakdown.s_len));
        lines.push("-".repeat(18));
        lines.push(format!("{:>6}  {:>10.4}", "s", self.breakdown.score));
        lines
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "query: {}", self.query_terms.join(" "));
        let _ = writeln!(out, "{}", self.marked_text());
        let _ = writeln!(out);
        for line in self.table_lines() {
            let _ = writeln!(out, "{line}");
        }
        out
    }
}

/// One side of a two-document comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentView {
    pub doc_id: String,
    /// Free-form caption, e.g. ranks and judgment.
    pub caption: String,
    pub report: ExplainReport,
}

/// Two documents for the same query, shown side by side.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub query_id: String,
    pub query_text: String,
    pub left: DocumentView,
    pub right: DocumentView,
}

impl Comparison {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Query (Id:{}) {}", self.query_id, self.query_text);
        let _ = writeln!(out);
        for (side, view) in [("left", &self.left), ("right", &self.right)] {
            let _ = writeln!(out, "[{side}] Id: {}  {}", view.doc_id, view.caption);
            let _ = writeln!(out, "{}", view.report.marked_text());
            let _ = writeln!(out);
        }
        let left = self.left.report.table_lines();
        let right = self.right.report.table_lines();
        let width = left.iter().map(String::len).max().unwrap_or(0);
        let _ = writeln!(
            out,
            "{:<width$}  |  {}",
            format!("Id: {}", self.left.doc_id),
            format!("Id: {}", self.right.doc_id)
        );
        for row in 0..left.len().max(right.len()) {
            let l = left.get(row).map_or("", String::as_str);
            let r = right.get(row).map_or("", String::as_str);
            let _ = writeln!(out, "{l:<width$}  |  {r}");
        }
        out
    }

    pub fn render_html(&self) -> String {
        let mut out = String::new();
        out.push_str(
            "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>TK explanation</title>\n",
        );
        out.push_str(
            "<style>body{font-family:sans-serif}.row{display:flex;gap:1em}\
             .text{flex:1;line-height:1.6}.table{flex:0 0 12em}\
             td{padding:0 .5em;text-align:right}.muted{color:rgb(145,145,149)}</style>\n",
        );
        out.push_str("</head><body>\n");
        let _ = writeln!(
            out,
            "<h2>Query (Id:{}) <b>{}</b></h2>",
            escape(&self.query_id),
            escape(&self.query_text)
        );
        out.push_str("<div class=\"row\">\n");
        let _ = writeln!(
            out,
            "<div class=\"text\">{}</div>",
            html_caption(&self.left)
        );
        let _ = writeln!(
            out,
            "<div class=\"text\">{}</div>",
            html_caption(&self.right)
        );
        out.push_str("</div>\n<div class=\"row\">\n");
        out.push_str(&html_text(&self.left.report));
        out.push_str(&html_table(&self.left.report));
        out.push_str(&html_table(&self.right.report));
        out.push_str(&html_text(&self.right.report));
        out.push_str("</div>\n</body></html>\n");
        out
    }
}

const PALETTE: [&str; 4] = [
    "rgb(202,70,70)",
    "rgb(0,151,20)",
    "rgb(40,90,200)",
    "rgb(170,110,0)",
];

fn color_for(center: f64, highlight: &[f64]) -> Option<&'static str> {
    highlight
        .iter()
        .position(|h| (h - center).abs() < 1e-9)
        .map(|i| PALETTE[i % PALETTE.len()])
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn html_caption(view: &DocumentView) -> String {
    format!(
        "Id: {} &mdash; {}",
        escape(&view.doc_id),
        escape(&view.caption)
    )
}

fn html_text(report: &ExplainReport) -> String {
    let mut out = String::from("<div class=\"text\">");
    for w in &report.words {
        match color_for(w.center, &report.highlight) {
            Some(color) => {
                let _ = write!(
                    out,
                    "<u style=\"color:{color}\" title=\"{:.3} &rarr; {}\">{}</u> ",
                    w.best_match,
                    format_center(w.center),
                    escape(&w.term)
                );
            }
            None => {
                let _ = write!(
                    out,
                    "<span class=\"muted\" title=\"{:.3}\">{}</span> ",
                    w.best_match,
                    escape(&w.term)
                );
            }
        }
    }
    out.push_str("</div>\n");
    out
}

fn html_table(report: &ExplainReport) -> String {
    let mut out = String::from("<div class=\"table\"><table>\n<tr><th>&mu;<sub>k</sub></th><th>s<sup>k</sup><sub>log</sub></th></tr>\n");
    for (mu, v) in report.kernel_table() {
        let style = color_for(mu, &report.highlight)
            .map(|c| format!(" style=\"color:{c}\""))
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "<tr{style}><td>{}</td><td>{v:.4}</td></tr>",
            format_center(mu)
        );
    }
    let b = &report.breakdown;
    let _ = writeln!(
        out,
        "<tr><th>s<sub>log</sub></th><td>{:.4}</td></tr>",
        b.s_log
    );
    let _ = writeln!(
        out,
        "<tr><th>s<sub>len</sub></th><td>{:.4}</td></tr>",
        b.s_len
    );
    let _ = writeln!(out, "<tr><th>s</th><td>{:.4}</td></tr>", b.score);
    out.push_str("</table></div>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DEFAULT_KERNEL_CENTERS;

    #[test]
    fn nearest_center_examples() {
        let c = DEFAULT_KERNEL_CENTERS;
        assert_eq!(c[nearest_center(0.68, &c)], 0.7);
        assert_eq!(c[nearest_center(0.8, &c)], 0.9);
        assert_eq!(c[nearest_center(1.0, &c)], 1.0);
        assert_eq!(c[nearest_center(-1.0, &c)], -0.9);
    }

    #[test]
    fn exact_ties_go_to_the_higher_center() {
        let centers = [0.25, 0.75];
        assert_eq!(nearest_center(0.5, &centers), 1);
        let reversed = [0.75, 0.25];
        assert_eq!(nearest_center(0.5, &reversed), 0);
    }

    #[test]
    fn html_escapes_terms() {
        assert_eq!(escape("<a&b>"), "&lt;a&amp;b&gt;");
    }
}
