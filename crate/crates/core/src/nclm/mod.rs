//! Autoregressive and non-autoregressive token language models over codec
//! codes, conditioned on a textual prompt `T` and an acoustic prompt `A`.
//!
//! Both models read the single stream `[T, <sep>, A, <sep>, O]`. Position
//! indices restart at zero inside each of the three segments and a learned
//! segment-type vector is added on top of the sinusoidal encoding. The AR
//! model predicts layer-1 codes plus `<eos>` under a causal mask; the NAR
//! model predicts one whole layer `l >= 2` at once from the layers below it.

mod infer;
mod model;
mod params;
mod sequence;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use infer::{ar_generate, nar_infer, SamplingConfig, StopReason};
pub use model::{mean_nll, CodecLm, LmKind};
pub use params::ParamStore;
pub use sequence::{LmItem, SequenceBatch, SEGMENT_A, SEGMENT_O, SEGMENT_T};

#[derive(Debug, Error)]
pub enum NclmError {
    #[error("{what} id {id} out of range (limit {limit})")]
    CodeError { what: &'static str, id: u32, limit: usize },
    #[error("layer {layer} invalid for a model with {layers} codec layers")]
    LayerError { layer: usize, layers: usize },
    #[error("target has no frames")]
    EmptyTarget,
    #[error("acoustic prompt is empty")]
    EmptyPrompt,
    #[error("sequence of {len} positions exceeds max_positions {max}")]
    TooLong { len: usize, max: usize },
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("corrupt parameter blob: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Candle(#[from] candle_core::Error),
}

pub type Result<T> = std::result::Result<T, NclmError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub depth: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub num_layers: usize,
    pub codebook_size: usize,
    pub max_positions: usize,
    /// Standard deviation of the normal weight init.
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

fn default_init_std() -> f64 {
    0.02
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// 4 layers, 4 heads, width 128.
    pub fn desk() -> Self {
        Self {
            depth: 4,
            heads: 4,
            d_model: 128,
            d_ff: 512,
            dropout: 0.1,
            num_layers: 4,
            codebook_size: 64,
            max_positions: 2048,
            init_std: 0.02,
        }
    }

    /// 12 layers, 16 heads, width 1024 over 8 x 1024 codes.
    pub fn paper_parity() -> Self {
        Self {
            depth: 12,
            heads: 16,
            d_model: 1024,
            d_ff: 4096,
            dropout: 0.1,
            num_layers: 8,
            codebook_size: 1024,
            max_positions: 4096,
            init_std: 0.02,
        }
    }

    /// Small enough to train both models inside a test run on one CPU core.
    pub fn trend_ci() -> Self {
        Self {
            depth: 2,
            heads: 4,
            d_model: 64,
            d_ff: 256,
            dropout: 0.1,
            num_layers: 4,
            codebook_size: 64,
            max_positions: 512,
            init_std: 0.02,
        }
    }

    /// A few hundred parameters; used for finite-difference checks.
    pub fn gradcheck() -> Self {
        Self {
            depth: 1,
            heads: 2,
            d_model: 6,
            d_ff: 12,
            dropout: 0.0,
            num_layers: 2,
            codebook_size: 4,
            max_positions: 64,
            init_std: 0.5,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        let fail = |f: &str, m: &str| Err((f.to_string(), m.to_string()));
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return fail("heads", "d_model must be divisible by heads");
        }
        if self.d_model % 2 != 0 {
            return fail("d_model", "must be even for the sinusoidal encoding");
        }
        if self.depth == 0 {
            return fail("depth", "must be at least 1");
        }
        if self.num_layers == 0 {
            return fail("num_layers", "must be at least 1");
        }
        if self.codebook_size < 2 {
            return fail("codebook_size", "must be at least 2");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout", "must lie in [0, 1)");
        }
        if self.max_positions == 0 {
            return fail("max_positions", "must be positive");
        }
        Ok(())
    }
}

/// Sinusoidal encoding: `pe[2i] = sin(pos / 10000^(2i/d))`, `pe[2i+1] = cos(...)`.
pub fn positional_encoding(pos: usize, d_model: usize) -> Vec<f64> {
    (0..d_model)
        .map(|k| {
            let i = (k / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * i / d_model as f64);
            if k % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}
