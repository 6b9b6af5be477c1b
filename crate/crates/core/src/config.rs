//! `key = value` run configuration.
//!
//! ```text
//! # small model
//! d_emb = 32
//! kernels = 1.0, 0.5, 0.0, -0.5
//! windowed = true
//! window_sizes = 20, 50
//! ```
//!
//! Blank lines and `#` comments are ignored; list values are separated by
//! commas or whitespace. [`Settings::set`] applies the same keys one at a time
//! so command-line flags can override a file.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{TkConfig, WindowConfig};
use crate::retrieval::{Bm25Params, PASSAGE_DEPTH};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub model: TkConfig,
    pub train: TrainConfig,
    pub windowed: bool,
    pub window_sizes: Vec<usize>,
    /// `None` means half of every window size.
    pub window_strides: Option<Vec<usize>>,
    pub window_top_r: usize,
    pub min_occurrence: usize,
    pub bm25: Bm25Params,
    pub depth: usize,
}

impl Default for Settings {
    fn default() -> Self {
        let w = WindowConfig::default();
        Settings {
            model: TkConfig::default(),
            train: TrainConfig::default(),
            windowed: false,
            window_sizes: w.sizes,
            window_strides: None,
            window_top_r: w.top_r,
            min_occurrence: 5,
            bm25: Bm25Params::default(),
            depth: PASSAGE_DEPTH,
        }
    }
}

fn scalar<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for `{key}`")))
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| scalar(key, s))
        .collect()
}

fn join<T: ToString>(values: &[T]) -> String {
    values
        .iter()
        .map(T::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

impl Settings {
    pub const KEYS: [&'static str; 26] = [
        "d_emb",
        "layers",
        "heads",
        "head_size",
        "ff_dim",
        "kernels",
        "sigma",
        "log_base",
        "query_cap",
        "doc_cap",
        "windowed",
        "window_sizes",
        "window_strides",
        "window_top_r",
        "batch_size",
        "margin",
        "lr_contextual",
        "lr_other",
        "validate_every",
        "patience",
        "max_steps",
        "seed",
        "min_occurrence",
        "bm25_k1",
        "bm25_b",
        "depth",
    ];

    /// Applies one setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "d_emb" => m.d_emb = scalar(key, value)?,
            "layers" => m.layers = scalar(key, value)?,
            "heads" => m.heads = scalar(key, value)?,
            "head_size" => m.head_size = scalar(key, value)?,
            "ff_dim" => m.ff_dim = scalar(key, value)?,
            "kernels" => m.kernel_centers = list(key, value)?,
            "sigma" => m.sigma = scalar(key, value)?,
            "log_base" => m.log_base = scalar(key, value)?,
            "query_cap" => m.query_cap = scalar(key, value)?,
            "doc_cap" => m.doc_cap = scalar(key, value)?,
            "windowed" => self.windowed = scalar(key, value)?,
            "window_sizes" => self.window_sizes = list(key, value)?,
            "window_strides" => self.window_strides = Some(list(key, value)?),
            "window_top_r" => self.window_top_r = scalar(key, value)?,
            "batch_size" => t.batch_size = scalar(key, value)?,
            "margin" => t.margin = scalar(key, value)?,
            "lr_contextual" => t.lr_contextual = scalar(key, value)?,
            "lr_other" => t.lr_other = scalar(key, value)?,
            "validate_every" => t.validate_every = scalar(key, value)?,
            "patience" => t.patience = scalar(key, value)?,
            "max_steps" => t.max_steps = scalar(key, value)?,
            "seed" => t.seed = scalar(key, value)?,
            "min_occurrence" => self.min_occurrence = scalar(key, value)?,
            "bm25_k1" => self.bm25.k1 = scalar(key, value)?,
            "bm25_b" => self.bm25.b = scalar(key, value)?,
            "depth" => self.depth = scalar(key, value)?,
            _ => return Err(Error::Config(format!("unknown setting `{key}`"))),
        }
        Ok(())
    }

    /// Parses a configuration on top of the defaults.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut settings = Settings::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(source, i + 1, "expected `key = value`"))?;
            settings
                .set(key.trim(), value)
                .map_err(|e| Error::parse(source, i + 1, e.to_string()))?;
        }
        Ok(settings)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// The window configuration, when windowed pooling is enabled.
    pub fn window(&self) -> Option<WindowConfig> {
        if !self.windowed {
            return None;
        }
        Some(match &self.window_strides {
            None => WindowConfig::with_half_strides(self.window_sizes.clone(), self.window_top_r),
            Some(strides) => WindowConfig {
                sizes: self.window_sizes.clone(),
                strides: strides.clone(),
                top_r: self.window_top_r,
            },
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if let Some(w) = self.window() {
            w.validate(self.model.doc_cap)?;
        }
        if self.min_occurrence == 0 {
            return Err(Error::Config("min_occurrence must be at least 1".into()));
        }
        if self.depth == 0 {
            return Err(Error::Config("depth must be at least 1".into()));
        }
        Ok(())
    }

    /// Renders every key; parsing the result reproduces these settings.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("d_emb", m.d_emb.to_string());
        put("layers", m.layers.to_string());
        put("heads", m.heads.to_string());
        put("head_size", m.head_size.to_string());
        put("ff_dim", m.ff_dim.to_string());
        put("kernels", join(&m.kernel_centers));
        put("sigma", m.sigma.to_string());
        put("log_base", m.log_base.to_string());
        put("query_cap", m.query_cap.to_string());
        put("doc_cap", m.doc_cap.to_string());
        put("windowed", self.windowed.to_string());
        put("window_sizes", join(&self.window_sizes));
        if let Some(s) = &self.window_strides {
            put("window_strides", join(s));
        }
        put("window_top_r", self.window_top_r.to_string());
        put("batch_size", t.batch_size.to_string());
        put("margin", t.margin.to_string());
        put("lr_contextual", t.lr_contextual.to_string());
        put("lr_other", t.lr_other.to_string());
        put("validate_every", t.validate_every.to_string());
        put("patience", t.patience.to_string());
        put("max_steps", t.max_steps.to_string());
        put("seed", t.seed.to_string());
        put("min_occurrence", self.min_occurrence.to_string());
        put("bm25_k1", self.bm25.k1.to_string());
        put("bm25_b", self.bm25.b.to_string());
        put("depth", self.depth.to_string());
        out
    }
}
