//! The Transformer-Kernel scoring network.
//!
//! Query and document are contextualized independently with shared weights
//! ([`encoder`]), matched by cosine similarity, soft-counted by Gaussian
//! kernels and pooled through a log path and a length-normalized path
//! ([`scoring`]). [`window`] holds the sliding-window pooling variant and
//! [`explain`] the per-kernel interpretability report.

pub mod encoder;
pub mod explain;
pub mod scoring;
pub mod window;

use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use crate::error::{Error, Result};
use crate::param::{LrGroup, ParamId, ParamSet, Parameter};
use crate::tensor::Tensor;
use crate::text::{encode_sequence, EmbeddingTable, TokenSequence, Vocabulary, PAD_ID};

pub use encoder::{contextualize, transformer_layer, SequenceRepresentation};
pub use explain::{ExplainReport, WordAffiliation};
pub use scoring::{
    kernel_features, kernel_value, match_matrix, score, KernelFeatures, MatchMatrix,
    ScoreBreakdown, LOG_CLAMP,
};
pub use window::{window_partition, windowed_score, WindowBreakdown, WindowConfig, WindowScore};

/// Kernel centers: 1.0 down to -0.9 in steps of 0.2 below 0.9.
pub const DEFAULT_KERNEL_CENTERS: [f64; 11] =
    [1.0, 0.9, 0.7, 0.5, 0.3, 0.1, -0.1, -0.3, -0.5, -0.7, -0.9];

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TkConfig {
    pub d_emb: usize,
    pub layers: usize,
    pub heads: usize,
    pub head_size: usize,
    pub ff_dim: usize,
    pub kernel_centers: Vec<f64>,
    pub sigma: f64,
    pub log_base: f64,
    pub query_cap: usize,
    pub doc_cap: usize,
}

impl Default for TkConfig {
    fn default() -> Self {
        TkConfig {
            d_emb: 300,
            layers: 2,
            heads: 16,
            head_size: 32,
            ff_dim: 100,
            kernel_centers: DEFAULT_KERNEL_CENTERS.to_vec(),
            sigma: 0.1,
            log_base: 2.0,
            query_cap: 30,
            doc_cap: 200,
        }
    }
}

impl TkConfig {
    /// A desk-sized architecture: one layer, two heads, 32 dimensions.
    pub fn small() -> Self {
        TkConfig {
            d_emb: 32,
            layers: 1,
            heads: 2,
            head_size: 16,
            ff_dim: 32,
            ..TkConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_emb", self.d_emb),
            ("layers", self.layers),
            ("heads", self.heads),
            ("head_size", self.head_size),
            ("ff_dim", self.ff_dim),
            ("query_cap", self.query_cap),
            ("doc_cap", self.doc_cap),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.kernel_centers.is_empty() {
            return Err(Error::Config("at least one kernel is required".into()));
        }
        if let Some(mu) = self
            .kernel_centers
            .iter()
            .find(|mu| !(-1.0..=1.0).contains(*mu))
        {
            return Err(Error::Config(format!("kernel center {mu} outside [-1, 1]")));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Config(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(self.log_base > 1.0) {
            return Err(Error::Config(format!(
                "log base must exceed 1, got {}",
                self.log_base
            )));
        }
        Ok(())
    }

    pub fn num_kernels(&self) -> usize {
        self.kernel_centers.len()
    }

    /// Width of the concatenated attention heads.
    pub fn concat_width(&self) -> usize {
        self.heads * self.head_size
    }
}

/// Parameter handles of one contextualization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerIds {
    pub query: Vec<ParamId>,
    pub key: Vec<ParamId>,
    pub value: Vec<ParamId>,
    pub output: ParamId,
    pub ff_w1: ParamId,
    pub ff_b1: ParamId,
    pub ff_w2: ParamId,
    pub ff_b2: ParamId,
}

fn uniform_tensor<R: Rng>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Tensor {
    let dist = Uniform::new_inclusive(-bound, bound);
    Tensor::from_fn(rows, cols, |_, _| dist.sample(rng))
}

fn lookup(params: &ParamSet, name: &str, shape: &[usize]) -> Result<ParamId> {
    let id = params
        .id(name)
        .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))?;
    let actual = params.get(id).tensor.shape();
    if actual != shape {
        return Err(Error::Shape(format!(
            "parameter `{name}` has shape {actual:?}, expected {shape:?}"
        )));
    }
    Ok(id)
}

impl LayerIds {
    /// Registers a freshly initialized layer under `prefix`.
    pub fn register<R: Rng>(
        params: &mut ParamSet,
        prefix: &str,
        config: &TkConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let (d, dk) = (config.d_emb, config.head_size);
        let proj_bound = 1.0 / (d as f64).sqrt();
        let mut add =
            |name: String, t: Tensor| params.add(Parameter::new(name, t, LrGroup::Contextual));
        let mut query = Vec::with_capacity(config.heads);
        let mut key = Vec::with_capacity(config.heads);
        let mut value = Vec::with_capacity(config.heads);
        for h in 0..config.heads {
            query.push(add(
                format!("{prefix}.head{h}.query"),
                uniform_tensor(d, dk, proj_bound, rng),
            )?);
            key.push(add(
                format!("{prefix}.head{h}.key"),
                uniform_tensor(d, dk, proj_bound, rng),
            )?);
            value.push(add(
                format!("{prefix}.head{h}.value"),
                uniform_tensor(d, dk, proj_bound, rng),
            )?);
        }
        let output = add(
            format!("{prefix}.output"),
            uniform_tensor(config.concat_width(), d, proj_bound, rng),
        )?;
        let ff_w1 = add(
            format!("{prefix}.ff.w1"),
            uniform_tensor(d, config.ff_dim, proj_bound, rng),
        )?;
        let ff_b1 = add(
            format!("{prefix}.ff.b1"),
            Tensor::zeros(&[1, config.ff_dim]),
        )?;
        let ff_w2 = add(
            format!("{prefix}.ff.w2"),
            uniform_tensor(config.ff_dim, d, 1.0 / (config.ff_dim as f64).sqrt(), rng),
        )?;
        let ff_b2 = add(format!("{prefix}.ff.b2"), Tensor::zeros(&[1, d]))?;
        Ok(LayerIds {
            query,
            key,
            value,
            output,
            ff_w1,
            ff_b1,
            ff_w2,
            ff_b2,
        })
    }

    pub fn resolve(params: &ParamSet, prefix: &str, config: &TkConfig) -> Result<Self> {
        let (d, dk) = (config.d_emb, config.head_size);
        let heads = |role: &str| -> Result<Vec<ParamId>> {
            (0..config.heads)
                .map(|h| lookup(params, &format!("{prefix}.head{h}.{role}"), &[d, dk]))
                .collect()
        };
        Ok(LayerIds {
            query: heads("query")?,
            key: heads("key")?,
            value: heads("value")?,
            output: lookup(
                params,
                &format!("{prefix}.output"),
                &[config.concat_width(), d],
            )?,
            ff_w1: lookup(params, &format!("{prefix}.ff.w1"), &[d, config.ff_dim])?,
            ff_b1: lookup(params, &format!("{prefix}.ff.b1"), &[1, config.ff_dim])?,
            ff_w2: lookup(params, &format!("{prefix}.ff.w2"), &[config.ff_dim, d])?,
            ff_b2: lookup(params, &format!("{prefix}.ff.b2"), &[1, d])?,
        })
    }
}

/// Handles of every learned weight of a [`TkModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamIds {
    pub embedding: ParamId,
    pub layers: Vec<LayerIds>,
    pub alpha_raw: ParamId,
    pub w_log: ParamId,
    pub w_len: ParamId,
    pub beta: ParamId,
    pub gamma: ParamId,
    /// Rank weights of windowed pooling; empty for the standard model.
    pub lambdas: Vec<ParamId>,
}

impl ParamIds {
    pub fn resolve(
        params: &ParamSet,
        config: &TkConfig,
        vocab_size: usize,
        window: Option<&WindowConfig>,
    ) -> Result<Self> {
        let k = config.num_kernels();
        Ok(ParamIds {
            embedding: lookup(params, "embedding", &[vocab_size, config.d_emb])?,
            layers: (0..config.layers)
                .map(|l| LayerIds::resolve(params, &format!("layer{l}"), config))
                .collect::<Result<_>>()?,
            alpha_raw: lookup(params, "alpha_raw", &[1, 1])?,
            w_log: lookup(params, "kernel.w_log", &[k, 1])?,
            w_len: lookup(params, "kernel.w_len", &[k, 1])?,
            beta: lookup(params, "beta", &[1, 1])?,
            gamma: lookup(params, "gamma", &[1, 1])?,
            lambdas: match window {
                None => Vec::new(),
                Some(w) => (0..w.top_r)
                    .map(|r| lookup(params, &format!("window.lambda{r}"), &[1, 1]))
                    .collect::<Result<_>>()?,
            },
        })
    }
}

/// Test hooks that pin parts of the forward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ForwardOptions {
    /// Replaces `sigmoid(alpha_raw)` in the hybrid blend.
    pub alpha_override: Option<f64>,
}

/// A configured TK model with its vocabulary and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TkModel {
    pub config: TkConfig,
    pub window: Option<WindowConfig>,
    pub vocab: Vocabulary,
    pub params: ParamSet,
    pub ids: ParamIds,
}

impl TkModel {
    /// Initializes all weights: attention projections uniform in ±1/√d_emb,
    /// kernel weights uniform in ±0.01, α_raw = 0, β = γ = 0.5, λ_r = 1/r.
    pub fn new<R: Rng>(
        config: TkConfig,
        window: Option<WindowConfig>,
        vocab: Vocabulary,
        embeddings: EmbeddingTable,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if let Some(w) = &window {
            w.validate(config.doc_cap)?;
        }
        if embeddings.vocab_size() != vocab.len() || embeddings.d_emb() != config.d_emb {
            return Err(Error::Shape(format!(
                "embedding table is {}x{}, vocabulary has {} terms and d_emb is {}",
                embeddings.vocab_size(),
                embeddings.d_emb(),
                vocab.len(),
                config.d_emb
            )));
        }
        let mut params = ParamSet::new();
        let mut emb = Parameter::new("embedding", embeddings.matrix, LrGroup::Contextual);
        emb.frozen_rows = vec![PAD_ID as usize];
        params.add(emb)?;
        for l in 0..config.layers {
            LayerIds::register(&mut params, &format!("layer{l}"), &config, rng)?;
        }
        params.add(Parameter::new(
            "alpha_raw",
            Tensor::scalar(0.0),
            LrGroup::Contextual,
        ))?;
        let k = config.num_kernels();
        params.add(Parameter::new(
            "kernel.w_log",
            uniform_tensor(k, 1, 0.01, rng),
            LrGroup::Other,
        ))?;
        params.add(Parameter::new(
            "kernel.w_len",
            uniform_tensor(k, 1, 0.01, rng),
            LrGroup::Other,
        ))?;
        params.add(Parameter::new("beta", Tensor::scalar(0.5), LrGroup::Other))?;
        params.add(Parameter::new("gamma", Tensor::scalar(0.5), LrGroup::Other))?;
        if let Some(w) = &window {
            for r in 0..w.top_r {
                params.add(Parameter::new(
                    format!("window.lambda{r}"),
                    Tensor::scalar(1.0 / (r + 1) as f64),
                    LrGroup::Other,
                ))?;
            }
        }
        Self::from_parts(config, window, vocab, params)
    }

    /// Assembles a model from already-initialized parameters, checking every shape.
    pub fn from_parts(
        config: TkConfig,
        window: Option<WindowConfig>,
        vocab: Vocabulary,
        mut params: ParamSet,
    ) -> Result<Self> {
        config.validate()?;
        if let Some(w) = &window {
            w.validate(config.doc_cap)?;
        }
        let ids = ParamIds::resolve(&params, &config, vocab.len(), window.as_ref())?;
        let emb = params.get_mut(ids.embedding);
        if !emb.frozen_rows.contains(&(PAD_ID as usize)) {
            emb.frozen_rows.push(PAD_ID as usize);
        }
        Ok(TkModel {
            config,
            window,
            vocab,
            params,
            ids,
        })
    }

    pub fn alpha(&self) -> f64 {
        crate::autodiff::sigmoid(self.params.get(self.ids.alpha_raw).tensor.item())
    }

    pub fn encode_query(&self, text: &str) -> Result<TokenSequence> {
        encode_sequence(text, &self.vocab, self.config.query_cap)
    }

    pub fn encode_doc(&self, text: &str) -> Result<TokenSequence> {
        encode_sequence(text, &self.vocab, self.config.doc_cap)
    }

    /// Scores one query-document pair.
    pub fn forward(&self, query: &TokenSequence, doc: &TokenSequence) -> Result<ScoreBreakdown> {
        Ok(self
            .forward_trace(query, doc, ForwardOptions::default())?
            .breakdown)
    }

    /// Convenience: tokenizes and scores raw texts.
    pub fn score_texts(&self, query: &str, doc: &str) -> Result<f64> {
        let q = self.encode_query(query)?;
        let d = self.encode_doc(doc)?;
        Ok(self.forward(&q, &d)?.score)
    }
}

/// Arithmetic mean of the final scores of independently trained models.
pub fn ensemble_scores(breakdowns: &[ScoreBreakdown]) -> Result<f64> {
    if breakdowns.is_empty() {
        return Err(Error::Empty("ensemble needs at least one score".into()));
    }
    Ok(breakdowns.iter().map(|b| b.score).sum::<f64>() / breakdowns.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_matches_reference_setup() {
        let c = TkConfig::default();
        assert_eq!(
            (c.d_emb, c.layers, c.heads, c.head_size, c.ff_dim),
            (300, 2, 16, 32, 100)
        );
        assert_eq!(c.num_kernels(), 11);
        assert_eq!((c.sigma, c.log_base), (0.1, 2.0));
        assert_eq!((c.query_cap, c.doc_cap), (30, 200));
        assert_eq!(c.concat_width(), 512);
        c.validate().unwrap();
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            TkConfig {
                sigma: 0.0,
                ..TkConfig::default()
            },
            TkConfig {
                log_base: 1.0,
                ..TkConfig::default()
            },
            TkConfig {
                kernel_centers: vec![],
                ..TkConfig::default()
            },
            TkConfig {
                kernel_centers: vec![1.5],
                ..TkConfig::default()
            },
            TkConfig {
                heads: 0,
                ..TkConfig::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    fn dummy(k: usize) -> ScoreBreakdown {
        ScoreBreakdown {
            kernel_centers: vec![],
            per_kernel_log: vec![],
            per_kernel_len: vec![],
            s_log: 0.0,
            s_len: 0.0,
            beta: 0.0,
            gamma: 0.0,
            score: k as f64,
            d_len: 1,
            windows: None,
        }
    }

    #[test]
    fn ensemble_is_the_mean() {
        assert_eq!(ensemble_scores(&[dummy(5)]).unwrap(), 5.0);
        assert_eq!(ensemble_scores(&[dummy(1), dummy(3)]).unwrap(), 2.0);
        assert_eq!(
            ensemble_scores(&[dummy(4), dummy(4), dummy(4)]).unwrap(),
            4.0
        );
        assert!(ensemble_scores(&[]).is_err());
    }
}
