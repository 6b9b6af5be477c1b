//! Windowed kernel pooling for long documents.
//!
//! The document is contextualized in one block; kernel features are then
//! pooled over sliding windows of several sizes, every window is scored with
//! the log and length paths, the window scores are sorted and a learned
//! weight per rank turns the top `R` of them into the final score.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::param::ParamId;

use super::scoring::{
    breakdown_from, feature_vars, pool_on_tape, validate_window_features, KernelFeatures,
    PooledVars, ScoreBreakdown,
};
use super::TkModel;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowConfig {
    pub sizes: Vec<usize>,
    /// Stride of each window size, parallel to `sizes`.
    pub strides: Vec<usize>,
    /// Number of sorted window scores that receive a rank weight.
    pub top_r: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self::with_half_strides(vec![20, 30, 50, 100], 5)
    }
}

impl WindowConfig {
    /// Uses `size / 2` (at least 1) as the stride of every size.
    pub fn with_half_strides(sizes: Vec<usize>, top_r: usize) -> Self {
        let strides = sizes.iter().map(|s| (s / 2).max(1)).collect();
        WindowConfig {
            sizes,
            strides,
            top_r,
        }
    }

    pub fn validate(&self, doc_cap: usize) -> Result<()> {
        if self.sizes.is_empty() {
            return Err(Error::Config("at least one window size is required".into()));
        }
        if self.sizes.len() != self.strides.len() {
            return Err(Error::Config(format!(
                "{} window sizes but {} strides",
                self.sizes.len(),
                self.strides.len()
            )));
        }
        for (&size, &stride) in self.sizes.iter().zip(&self.strides) {
            if size == 0 || size > doc_cap {
                return Err(Error::Config(format!(
                    "window size {size} outside [1, {doc_cap}]"
                )));
            }
            if stride == 0 || stride > size {
                return Err(Error::Config(format!(
                    "stride {stride} for window size {size} outside [1, {size}]"
                )));
            }
        }
        if self.top_r == 0 {
            return Err(Error::Config("top_r must be at least 1".into()));
        }
        Ok(())
    }
}

/// Half-open column ranges of the windows of one size.
///
/// Windows start every `stride` columns; the last one is clipped to the
/// document end and no window starts after one has reached it.
pub fn window_partition(
    doc_length: usize,
    size: usize,
    stride: usize,
) -> Result<Vec<(usize, usize)>> {
    if size == 0 || stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "window size {size} and stride {stride} must be at least 1"
        )));
    }
    if stride > size {
        return Err(Error::InvalidArgument(format!(
            "stride {stride} larger than window size {size} leaves columns uncovered"
        )));
    }
    if doc_length == 0 {
        return Err(Error::InvalidArgument(
            "document length must be at least 1".into(),
        ));
    }
    let mut windows = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + size).min(doc_length);
        windows.push((start, end));
        if end == doc_length {
            break;
        }
        start += stride;
    }
    Ok(windows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowScore {
    pub size: usize,
    pub start: usize,
    pub end: usize,
    pub s_log: f64,
    pub s_len: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowBreakdown {
    /// All window scores, sorted descending.
    pub ranked: Vec<WindowScore>,
    /// Rank weights `λ_1..λ_R`.
    pub lambdas: Vec<f64>,
}

impl WindowBreakdown {
    pub fn recompute(&self) -> f64 {
        let mut terms = self
            .ranked
            .iter()
            .zip(&self.lambdas)
            .map(|(w, l)| w.score * l);
        let first = terms.next().unwrap_or(0.0);
        terms.fold(first, |acc, t| acc + t)
    }
}

/// Descending by score; equal scores keep window order.
fn rank_windows(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

pub(crate) fn windowed_on_tape(
    tape: &mut Tape,
    model: &TkModel,
    wconfig: &WindowConfig,
    kernels: &[Var],
    query_padding: &[bool],
    d_len: usize,
) -> Result<(Var, ScoreBreakdown)> {
    if model.ids.lambdas.len() < wconfig.top_r {
        return Err(Error::Config(format!(
            "model has {} rank weights, window configuration needs {}",
            model.ids.lambdas.len(),
            wconfig.top_r
        )));
    }
    let lambdas: &[ParamId] = &model.ids.lambdas[..wconfig.top_r];
    let params = model.scoring_params();
    let mut windows: Vec<(WindowScore, PooledVars)> = Vec::new();
    for (&size, &stride) in wconfig.sizes.iter().zip(&wconfig.strides) {
        for (start, end) in window_partition(d_len, size, stride)? {
            let pooled = pool_on_tape(
                tape,
                &params,
                &model.config,
                kernels,
                query_padding,
                Some((start, end)),
                end - start,
            );
            let info = WindowScore {
                size,
                start,
                end,
                s_log: tape.value(pooled.s_log).item(),
                s_len: tape.value(pooled.s_len).item(),
                score: tape.value(pooled.score).item(),
            };
            windows.push((info, pooled));
        }
    }
    let scores: Vec<f64> = windows.iter().map(|(w, _)| w.score).collect();
    let order = rank_windows(&scores);

    let mut total: Option<Var> = None;
    let mut lambda_values = Vec::with_capacity(lambdas.len());
    for (rank, &idx) in order.iter().take(lambdas.len()).enumerate() {
        let lambda = tape.param(lambdas[rank]);
        lambda_values.push(tape.value(lambda).item());
        let term = tape.mul(windows[idx].1.score, lambda);
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(acc, term),
        });
    }
    let total = total.expect("at least one window");

    let top = &windows[order[0]].1;
    let mut breakdown = breakdown_from(tape, top, &model.config, d_len);
    breakdown.score = tape.value(total).item();
    breakdown.windows = Some(WindowBreakdown {
        ranked: order.iter().map(|&i| windows[i].0.clone()).collect(),
        lambdas: lambda_values,
    });
    Ok((total, breakdown))
}

/// Windowed pooling over precomputed kernel features.
pub fn windowed_score(
    features: &KernelFeatures,
    d_len: usize,
    q_mask: &[bool],
    model: &TkModel,
    wconfig: &WindowConfig,
) -> Result<ScoreBreakdown> {
    validate_window_features(features, d_len, q_mask)?;
    wconfig.validate(model.config.doc_cap.max(features.doc_mask.len()))?;
    let mut tape = Tape::new(&model.params);
    let kernels = feature_vars(&mut tape, features);
    let q_pad: Vec<bool> = q_mask.iter().map(|m| !m).collect();
    let (_, breakdown) = windowed_on_tape(&mut tape, model, wconfig, &kernels, &q_pad, d_len)?;
    Ok(breakdown)
}
