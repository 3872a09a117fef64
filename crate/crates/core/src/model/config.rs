use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_ln_eps() -> f64 {
    1e-5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_attention_heads: usize,
    pub feedforward_dim: usize,
    pub max_sequence_len: usize,
    #[serde(default)]
    pub dropout_rate: f64,
    #[serde(default = "default_ln_eps")]
    pub layer_norm_eps: f64,
}

impl EncoderConfig {
    /// Desk-scale student geometry: 4 layers, width 64, 4 attention heads.
    pub fn desk(vocab_size: usize) -> Self {
        EncoderConfig {
            vocab_size,
            hidden_dim: 64,
            num_layers: 4,
            num_attention_heads: 4,
            feedforward_dim: 128,
            max_sequence_len: 32,
            dropout_rate: 0.0,
            layer_norm_eps: default_ln_eps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("hidden_dim", self.hidden_dim),
            ("num_attention_heads", self.num_attention_heads),
            ("feedforward_dim", self.feedforward_dim),
            ("max_sequence_len", self.max_sequence_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.hidden_dim.is_multiple_of(self.num_attention_heads) {
            return Err(Error::Config(format!(
                "hidden_dim {} not divisible by {} attention heads",
                self.hidden_dim, self.num_attention_heads
            )));
        }
        if self.max_sequence_len < 4 {
            return Err(Error::Config("max_sequence_len must be at least 4".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config("dropout_rate must lie in [0, 1)".into()));
        }
        if self.layer_norm_eps <= 0.0 {
            return Err(Error::Config("layer_norm_eps must be positive".into()));
        }
        Ok(())
    }

    pub fn embedding_params(&self) -> usize {
        (self.vocab_size + self.max_sequence_len) * self.hidden_dim
    }

    pub fn block_params(&self) -> usize {
        let (d, f) = (self.hidden_dim, self.feedforward_dim);
        4 * (d * d + d) + (d * f + f) + (f * d + d) + 4 * d
    }

    pub fn projection_params(&self) -> usize {
        2 * self.hidden_dim + 2
    }

    /// Closed-form parameter count of a single-head model.
    pub fn student_params(&self) -> usize {
        self.embedding_params() + self.num_layers * self.block_params() + self.projection_params()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingSpace {
    #[default]
    LogitMean,
    ProbabilityMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CerberusConfig {
    pub body_depth: usize,
    pub num_heads: usize,
    pub head_depth: usize,
    pub head_weights: Vec<f64>,
    #[serde(default)]
    pub pooling: PoolingSpace,
}

impl CerberusConfig {
    pub fn new(body_depth: usize, num_heads: usize, head_depth: usize) -> Self {
        CerberusConfig {
            body_depth,
            num_heads,
            head_depth,
            head_weights: vec![1.0; num_heads],
            pooling: PoolingSpace::LogitMean,
        }
    }

    pub fn validate(&self, source_layers: usize) -> Result<()> {
        if self.body_depth == 0 || self.body_depth >= source_layers {
            return Err(Error::Config(format!(
                "body depth {} must satisfy 1 <= b < n = {source_layers}",
                self.body_depth
            )));
        }
        if self.body_depth + self.head_depth != source_layers {
            return Err(Error::Config(format!(
                "b + h = {} + {} must equal n = {source_layers}",
                self.body_depth, self.head_depth
            )));
        }
        if self.num_heads == 0 {
            return Err(Error::Config("need at least one head".into()));
        }
        if self.head_weights.len() != self.num_heads {
            return Err(Error::Config(format!(
                "{} head weights for {} heads",
                self.head_weights.len(),
                self.num_heads
            )));
        }
        if self
            .head_weights
            .iter()
            .any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return Err(Error::Config("head weights must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Closed-form parameter count `embed + b·block + k·(h·block + proj)`.
    pub fn param_count(&self, enc: &EncoderConfig) -> usize {
        enc.embedding_params()
            + self.body_depth * enc.block_params()
            + self.num_heads * (self.head_depth * enc.block_params() + enc.projection_params())
    }
}
