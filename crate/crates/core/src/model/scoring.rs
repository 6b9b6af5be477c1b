//! Match matrix, kernel transform and the log / length-normalized pooling paths.

use std::fmt;

use crate::autodiff::{cosine_matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::param::ParamId;
use crate::tensor::Tensor;
use crate::text::TokenSequence;

use super::encoder::{encode_on_tape, EncodedVars, SequenceRepresentation};
use super::window::{windowed_on_tape, WindowBreakdown};
use super::{ForwardOptions, TkConfig, TkModel};

/// Floor applied to kernel sums before the logarithm.
pub const LOG_CLAMP: f64 = 1e-10;

fn kernel_scale(sigma: f64) -> f64 {
    -1.0 / (2.0 * sigma * sigma)
}

/// Gaussian kernel response `exp(-(m - mu)² / 2σ²)`.
pub fn kernel_value(m: f64, mu: f64, sigma: f64) -> f64 {
    let d = m - mu;
    (d * d * kernel_scale(sigma)).exp()
}

/// Cosine similarities between contextualized query and document terms.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchMatrix {
    /// `query_len × doc_len`, zero wherever either side is padding.
    pub values: Tensor,
    pub query_mask: Vec<bool>,
    pub doc_mask: Vec<bool>,
}

impl MatchMatrix {
    pub(crate) fn cell_padding(&self) -> Vec<bool> {
        cell_padding(&self.query_mask, &self.doc_mask)
    }
}

/// Kernel-transformed match matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelFeatures {
    pub centers: Vec<f64>,
    /// One `query_len × doc_len` matrix per kernel.
    pub matrices: Vec<Tensor>,
    /// `k × query_len`: per-kernel sums over the document dimension.
    pub sums: Tensor,
    pub query_mask: Vec<bool>,
    pub doc_mask: Vec<bool>,
}

/// Every intermediate of one pair's score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBreakdown {
    pub kernel_centers: Vec<f64>,
    /// `s^k_log` per kernel, before the linear layer.
    pub per_kernel_log: Vec<f64>,
    /// `s^k_len` per kernel, before the linear layer.
    pub per_kernel_len: Vec<f64>,
    pub s_log: f64,
    pub s_len: f64,
    pub beta: f64,
    pub gamma: f64,
    pub score: f64,
    pub d_len: usize,
    /// Present for the windowed-pooling variant; the per-kernel values and
    /// `s_log` / `s_len` then describe the top-ranked window.
    pub windows: Option<WindowBreakdown>,
}

impl ScoreBreakdown {
    /// Recomputes the final score from the stored components.
    pub fn recompute(&self) -> f64 {
        match &self.windows {
            None => self.s_log * self.beta + self.s_len * self.gamma,
            Some(w) => w.recompute(),
        }
    }
}

impl fmt::Display for ScoreBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>6}  {:>10}", "mu_k", "s^k_log")?;
        for (mu, v) in self.kernel_centers.iter().zip(&self.per_kernel_log) {
            writeln!(f, "{:>6}  {:>10.4}", format_center(*mu), v)?;
        }
        writeln!(f, "{}", "-".repeat(18))?;
        writeln!(f, "{:>6}  {:>10.4}", "s_log", self.s_log)?;
        writeln!(f, "{:>6}  {:>10.4}", "s_len", self.s_len)?;
        writeln!(f, "{}", "-".repeat(18))?;
        write!(f, "{:>6}  {:>10.4}", "s", self.score)
    }
}

pub(crate) fn format_center(mu: f64) -> String {
    let s = format!("{mu}");
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

fn cell_padding(query_mask: &[bool], doc_mask: &[bool]) -> Vec<bool> {
    let mut pad = Vec::with_capacity(query_mask.len() * doc_mask.len());
    for &q in query_mask {
        for &d in doc_mask {
            pad.push(!(q && d));
        }
    }
    pad
}

pub(crate) fn match_on_tape(tape: &mut Tape, q: &EncodedVars, d: &EncodedVars) -> (Var, Vec<bool>) {
    let pad = cell_padding(&q.mask(), &d.mask());
    let m = tape.cosine(q.hybrid, d.hybrid);
    (tape.masked_fill(m, &pad, 0.0), pad)
}

/// One masked Gaussian-transformed matrix per kernel center.
pub(crate) fn kernels_on_tape(
    tape: &mut Tape,
    m: Var,
    cell_pad: &[bool],
    config: &TkConfig,
) -> Vec<Var> {
    let scale = kernel_scale(config.sigma);
    config
        .kernel_centers
        .iter()
        .map(|&mu| {
            let diff = tape.add_scalar(m, -mu);
            let sq = tape.mul(diff, diff);
            let arg = tape.scale(sq, scale);
            let k = tape.exp(arg);
            tape.masked_fill(k, cell_pad, 0.0)
        })
        .collect()
}

/// Tape handles of the pooled scores.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PooledVars {
    pub per_kernel_log: Var,
    pub per_kernel_len: Var,
    pub s_log: Var,
    pub s_len: Var,
    pub beta: Var,
    pub gamma: Var,
    pub score: Var,
}

pub(crate) struct ScoringParams {
    pub w_log: ParamId,
    pub w_len: ParamId,
    pub beta: ParamId,
    pub gamma: ParamId,
}

/// Log and length paths over document columns `cols`, normalized by `length`.
pub(crate) fn pool_on_tape(
    tape: &mut Tape,
    params: &ScoringParams,
    config: &TkConfig,
    kernels: &[Var],
    query_padding: &[bool],
    cols: Option<(usize, usize)>,
    length: usize,
) -> PooledVars {
    let inv_ln_base = 1.0 / config.log_base.ln();
    let inv_len = 1.0 / length as f64;
    let mut logs = Vec::with_capacity(kernels.len());
    let mut lens = Vec::with_capacity(kernels.len());
    for &k in kernels {
        let region = match cols {
            Some((start, end)) => tape.slice_cols(k, start, end),
            None => k,
        };
        let sums = tape.sum_cols(region);
        let clamped = tape.clamp_min(sums, LOG_CLAMP);
        let ln = tape.ln(clamped);
        let log_b = tape.scale(ln, inv_ln_base);
        let log_b = tape.masked_fill(log_b, query_padding, 0.0);
        logs.push(tape.sum(log_b));

        let kept = tape.masked_fill(sums, query_padding, 0.0);
        let total = tape.sum(kept);
        lens.push(tape.scale(total, inv_len));
    }
    let per_kernel_log = tape.concat(&logs);
    let per_kernel_len = tape.concat(&lens);
    let w_log = tape.param(params.w_log);
    let w_len = tape.param(params.w_len);
    let s_log = tape.matmul(per_kernel_log, w_log);
    let s_len = tape.matmul(per_kernel_len, w_len);
    let beta = tape.param(params.beta);
    let gamma = tape.param(params.gamma);
    let a = tape.mul(s_log, beta);
    let b = tape.mul(s_len, gamma);
    let score = tape.add(a, b);
    PooledVars {
        per_kernel_log,
        per_kernel_len,
        s_log,
        s_len,
        beta,
        gamma,
        score,
    }
}

pub(crate) fn breakdown_from(
    tape: &Tape,
    pooled: &PooledVars,
    config: &TkConfig,
    d_len: usize,
) -> ScoreBreakdown {
    ScoreBreakdown {
        kernel_centers: config.kernel_centers.clone(),
        per_kernel_log: tape.value(pooled.per_kernel_log).values().to_vec(),
        per_kernel_len: tape.value(pooled.per_kernel_len).values().to_vec(),
        s_log: tape.value(pooled.s_log).item(),
        s_len: tape.value(pooled.s_len).item(),
        beta: tape.value(pooled.beta).item(),
        gamma: tape.value(pooled.gamma).item(),
        score: tape.value(pooled.score).item(),
        d_len,
        windows: None,
    }
}

/// Pairwise cosine similarity of two hybrid representations, masked.
pub fn match_matrix(q: &SequenceRepresentation, d: &SequenceRepresentation) -> MatchMatrix {
    let mut values = cosine_matrix(&q.hybrid, &d.hybrid);
    for (v, pad) in values
        .values_mut()
        .iter_mut()
        .zip(cell_padding(&q.mask, &d.mask))
    {
        if pad {
            *v = 0.0;
        }
    }
    MatchMatrix {
        values,
        query_mask: q.mask.clone(),
        doc_mask: d.mask.clone(),
    }
}

fn features_from(
    tape: &Tape,
    kernels: &[Var],
    config: &TkConfig,
    query_mask: &[bool],
    doc_mask: &[bool],
) -> KernelFeatures {
    let matrices: Vec<Tensor> = kernels.iter().map(|&k| tape.value(k).clone()).collect();
    let q = query_mask.len();
    let sums = Tensor::from_fn(matrices.len(), q, |k, i| matrices[k].row(i).iter().sum());
    KernelFeatures {
        centers: config.kernel_centers.clone(),
        matrices,
        sums,
        query_mask: query_mask.to_vec(),
        doc_mask: doc_mask.to_vec(),
    }
}

/// Applies every kernel to every unmasked cell of `m`.
pub fn kernel_features(m: &MatchMatrix, config: &TkConfig) -> KernelFeatures {
    let params = crate::param::ParamSet::new();
    let mut tape = Tape::new(&params);
    let mv = tape.constant(m.values.clone());
    let kernels = kernels_on_tape(&mut tape, mv, &m.cell_padding(), config);
    features_from(&tape, &kernels, config, &m.query_mask, &m.doc_mask)
}

fn check_features(features: &KernelFeatures, d_len: usize, q_mask: &[bool]) -> Result<()> {
    if d_len == 0 {
        return Err(Error::InvalidArgument(
            "document length must be at least 1".into(),
        ));
    }
    let cols = features.doc_mask.len();
    if d_len > cols {
        return Err(Error::InvalidArgument(format!(
            "document length {d_len} exceeds {cols} feature columns"
        )));
    }
    if q_mask.len() != features.query_mask.len() {
        return Err(Error::Shape(format!(
            "query mask has {} entries, features have {} rows",
            q_mask.len(),
            features.query_mask.len()
        )));
    }
    Ok(())
}

pub(crate) fn feature_vars(tape: &mut Tape, features: &KernelFeatures) -> Vec<Var> {
    features
        .matrices
        .iter()
        .map(|m| tape.constant(m.clone()))
        .collect()
}

/// Pools kernel features into a score with the model's scoring weights.
pub fn score(
    features: &KernelFeatures,
    d_len: usize,
    q_mask: &[bool],
    model: &TkModel,
) -> Result<ScoreBreakdown> {
    check_features(features, d_len, q_mask)?;
    let mut tape = Tape::new(&model.params);
    let kernels = feature_vars(&mut tape, features);
    let q_pad: Vec<bool> = q_mask.iter().map(|m| !m).collect();
    let pooled = pool_on_tape(
        &mut tape,
        &model.scoring_params(),
        &model.config,
        &kernels,
        &q_pad,
        None,
        d_len,
    );
    Ok(breakdown_from(&tape, &pooled, &model.config, d_len))
}

pub(crate) fn validate_window_features(
    features: &KernelFeatures,
    d_len: usize,
    q_mask: &[bool],
) -> Result<()> {
    check_features(features, d_len, q_mask)
}

/// Values of a full forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub breakdown: ScoreBreakdown,
    pub match_matrix: MatchMatrix,
    pub features: KernelFeatures,
}

/// Tape handles of one scored pair.
pub(crate) struct ScoredVars {
    pub match_matrix: Var,
    pub kernels: Vec<Var>,
    pub score: Var,
    pub breakdown: ScoreBreakdown,
}

impl TkModel {
    pub(crate) fn scoring_params(&self) -> ScoringParams {
        ScoringParams {
            w_log: self.ids.w_log,
            w_len: self.ids.w_len,
            beta: self.ids.beta,
            gamma: self.ids.gamma,
        }
    }

    pub(crate) fn encode_on_tape(
        &self,
        tape: &mut Tape,
        seq: &TokenSequence,
        options: ForwardOptions,
    ) -> Result<EncodedVars> {
        encode_on_tape(tape, self, seq, options)
    }

    /// Scores an encoded pair, dispatching to windowed pooling when configured.
    pub(crate) fn score_on_tape(
        &self,
        tape: &mut Tape,
        q: &EncodedVars,
        d: &EncodedVars,
    ) -> Result<ScoredVars> {
        let (m, cell_pad) = match_on_tape(tape, q, d);
        let kernels = kernels_on_tape(tape, m, &cell_pad, &self.config);
        let q_pad: Vec<bool> = q.mask().iter().map(|m| !m).collect();
        let d_len = d.true_length;
        let (score, breakdown) = match &self.window {
            None => {
                let pooled = pool_on_tape(
                    tape,
                    &self.scoring_params(),
                    &self.config,
                    &kernels,
                    &q_pad,
                    None,
                    d_len,
                );
                (
                    pooled.score,
                    breakdown_from(tape, &pooled, &self.config, d_len),
                )
            }
            Some(w) => windowed_on_tape(tape, self, w, &kernels, &q_pad, d_len)?,
        };
        Ok(ScoredVars {
            match_matrix: m,
            kernels,
            score,
            breakdown,
        })
    }

    /// Records the score of a pair on `tape`.
    ///
    /// Weights are read from the tape's parameter set, which must share this
    /// model's layout; gradient checks pass a perturbed copy of `self.params`.
    pub fn score_var(
        &self,
        tape: &mut Tape,
        query: &TokenSequence,
        doc: &TokenSequence,
        options: ForwardOptions,
    ) -> Result<Var> {
        let q = self.encode_on_tape(tape, query, options)?;
        let d = self.encode_on_tape(tape, doc, options)?;
        Ok(self.score_on_tape(tape, &q, &d)?.score)
    }

    /// Forward pass returning the score breakdown with its match matrix and kernel features.
    pub fn forward_trace(
        &self,
        query: &TokenSequence,
        doc: &TokenSequence,
        options: ForwardOptions,
    ) -> Result<ForwardTrace> {
        let mut tape = Tape::new(&self.params);
        let q = self.encode_on_tape(&mut tape, query, options)?;
        let d = self.encode_on_tape(&mut tape, doc, options)?;
        let scored = self.score_on_tape(&mut tape, &q, &d)?;
        let (qm, dm) = (q.mask(), d.mask());
        let match_matrix = MatchMatrix {
            values: tape.value(scored.match_matrix).clone(),
            query_mask: qm.clone(),
            doc_mask: dm.clone(),
        };
        let features = features_from(&tape, &scored.kernels, &self.config, &qm, &dm);
        Ok(ForwardTrace {
            breakdown: scored.breakdown,
            match_matrix,
            features,
        })
    }
}
