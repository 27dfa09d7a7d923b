//! Micro-transformer encoder producing the pooled representation that the
//! mixup layer interpolates, plus the task head.

mod encoder;
mod params;

use serde::{Deserialize, Serialize};

pub use encoder::{attention_weights, encode, head_forward, pool, positional_encoding, MASK_BIAS};
pub use params::{init_params, load_params, save_params, Parameters, PARAM_MAGIC};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadKind {
    Classification { n_classes: usize },
    Regression,
}

impl HeadKind {
    pub fn output_width(&self) -> usize {
        match self {
            HeadKind::Classification { n_classes } => *n_classes,
            HeadKind::Regression => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub head: HeadKind,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 1000,
            d_model: 32,
            n_heads: 2,
            n_layers: 1,
            d_ff: 64,
            max_len: 128,
            head: HeadKind::Classification { n_classes: 2 },
            dropout_rate: 0.1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("d_ff", self.d_ff),
            ("max_len", self.max_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::validation(format!("model.{name} must be positive")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::validation(format!(
                "model.d_model ({}) must be divisible by model.n_heads ({})",
                self.d_model, self.n_heads
            )));
        }
        if let HeadKind::Classification { n_classes } = self.head {
            if n_classes < 2 {
                return Err(Error::validation("classification head needs at least 2 classes"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::validation("model.dropout_rate must be in [0, 1)"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BatchLabels {
    /// Class indices and their one-hot rows `[b×c]`.
    Classes { ids: Vec<usize>, targets: Tensor },
    /// Regression targets `[b×1]`.
    Scores(Tensor),
}

impl BatchLabels {
    pub fn targets(&self) -> &Tensor {
        match self {
            BatchLabels::Classes { targets, .. } => targets,
            BatchLabels::Scores(t) => t,
        }
    }
}

/// Token ids and padding mask for `batch_size` rows of `seq_len` tokens,
/// flattened row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedBatch {
    pub batch_size: usize,
    pub seq_len: usize,
    pub token_ids: Vec<usize>,
    pub mask: Vec<u8>,
    pub labels: BatchLabels,
}

impl EncodedBatch {
    pub fn check(&self, config: &ModelConfig) -> Result<()> {
        let cells = self.batch_size * self.seq_len;
        if cells == 0 || self.token_ids.len() != cells || self.mask.len() != cells {
            return Err(Error::validation(format!(
                "batch of {}×{} has {} token ids and {} mask entries",
                self.batch_size,
                self.seq_len,
                self.token_ids.len(),
                self.mask.len()
            )));
        }
        if self.seq_len > config.max_len {
            return Err(Error::validation(format!(
                "sequence length {} exceeds max_len {}",
                self.seq_len, config.max_len
            )));
        }
        if let Some(pos) = self.token_ids.iter().position(|&t| t >= config.vocab_size) {
            return Err(Error::validation(format!(
                "token id {} at row {} position {} is outside the vocabulary of {}",
                self.token_ids[pos],
                pos / self.seq_len,
                pos % self.seq_len,
                config.vocab_size
            )));
        }
        if self.mask.iter().any(|&m| m > 1) {
            return Err(Error::validation("attention mask entries must be 0 or 1"));
        }
        if self.labels.targets().rows() != self.batch_size {
            return Err(Error::validation("label count does not match batch size"));
        }
        Ok(())
    }
}
