//! Residual-vector-quantizer codec: waveform <-> `T x L` code matrix.
//!
//! The analysis and synthesis transforms are bias-free linear maps, and
//! codeword 0 of every layer is pinned to the zero vector. Together these
//! give an exact zero fixed point and a residual energy that never grows
//! from one quantizer stage to the next.

mod checkpoint;
mod model;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use model::CodecModel;
pub use train::{
    reconstruction_snr, train_codec, train_on_waveforms, training_waveforms, CodecStepLog,
    CodecTrainConfig,
};

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("sample rate mismatch: model expects {expected} Hz, got {got} Hz")]
    RateError { expected: u32, got: u32 },
    #[error("code {code} out of range at frame {frame}, layer {layer} (codebook size {size})")]
    CodeError {
        frame: usize,
        layer: usize,
        code: u32,
        size: usize,
    },
    #[error("layer count mismatch: model has {expected}, codes have {got}")]
    LayerMismatch { expected: usize, got: usize },
    #[error("waveform contains non-finite samples")]
    NonFinite,
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("invalid codec config: {0}")]
    Config(String),
    #[error("corrupt codec checkpoint: {0}")]
    Corrupt(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Synth(#[from] crate::synthworld::SynthError),
}

pub type Result<T> = std::result::Result<T, CodecError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecConfig {
    pub sample_rate: u32,
    pub frame_hop: usize,
    pub window: usize,
    pub latent_dim: usize,
    pub num_layers: usize,
    pub codebook_size: usize,
    pub commitment_weight: f64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl CodecConfig {
    /// 50 Hz frames, 4 layers of 64 codes.
    pub fn desk() -> Self {
        Self {
            sample_rate: 8000,
            frame_hop: 160,
            window: 320,
            latent_dim: 32,
            num_layers: 4,
            codebook_size: 64,
            commitment_weight: 0.25,
        }
    }

    /// Shape-compatible with the published setup: 75 Hz, 8 layers of 1024 codes.
    pub fn paper_parity() -> Self {
        Self {
            sample_rate: 24000,
            frame_hop: 320,
            window: 640,
            latent_dim: 32,
            num_layers: 8,
            codebook_size: 1024,
            commitment_weight: 0.25,
        }
    }

    /// One frame per 100 ms symbol; keeps LM sequences short on small machines.
    pub fn symbol_rate() -> Self {
        Self {
            sample_rate: 8000,
            frame_hop: 800,
            window: 800,
            latent_dim: 64,
            num_layers: 4,
            codebook_size: 64,
            commitment_weight: 0.25,
        }
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.frame_hop as f64
    }

    /// Number of frames `encode` emits for `samples` input samples.
    pub fn frames_for(&self, samples: usize) -> usize {
        samples.div_ceil(self.frame_hop)
    }

    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        let fail = |f: &str, m: &str| Err((f.to_string(), m.to_string()));
        if self.num_layers == 0 {
            return fail("num_layers", "must be at least 1");
        }
        if self.codebook_size < 2 {
            return fail("codebook_size", "must be at least 2");
        }
        if self.frame_hop == 0 || self.frame_hop > self.window {
            return fail("frame_hop", "need 0 < frame_hop <= window");
        }
        if (self.window - self.frame_hop) % 2 != 0 {
            return fail("window", "window - frame_hop must be even");
        }
        if self.latent_dim == 0 {
            return fail("latent_dim", "must be positive");
        }
        if self.sample_rate == 0 {
            return fail("sample_rate", "must be positive");
        }
        if !(self.commitment_weight >= 0.0) {
            return fail("commitment_weight", "must be non-negative");
        }
        Ok(())
    }
}

/// `T x L` matrix of codec codes, row-major by frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcousticTokenMatrix {
    frames: usize,
    layers: usize,
    codes: Vec<u32>,
}

impl AcousticTokenMatrix {
    pub fn new(frames: usize, layers: usize, codes: Vec<u32>) -> Self {
        assert_eq!(codes.len(), frames * layers, "code matrix shape mismatch");
        Self {
            frames,
            layers,
            codes,
        }
    }

    pub fn zeros(frames: usize, layers: usize) -> Self {
        Self::new(frames, layers, vec![0; frames * layers])
    }

    pub fn empty(layers: usize) -> Self {
        Self::new(0, layers, Vec::new())
    }

    /// Builds a matrix from per-layer code sequences of equal length.
    pub fn from_layers(layers: &[Vec<u32>]) -> Self {
        let frames = layers.first().map_or(0, Vec::len);
        assert!(layers.iter().all(|l| l.len() == frames), "ragged layers");
        let mut codes = Vec::with_capacity(frames * layers.len());
        for t in 0..frames {
            for layer in layers {
                codes.push(layer[t]);
            }
        }
        Self::new(frames, layers.len(), codes)
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }

    pub fn num_layers(&self) -> usize {
        self.layers
    }

    pub fn is_empty(&self) -> bool {
        self.frames == 0
    }

    pub fn get(&self, frame: usize, layer: usize) -> u32 {
        self.codes[frame * self.layers + layer]
    }

    pub fn set(&mut self, frame: usize, layer: usize, code: u32) {
        self.codes[frame * self.layers + layer] = code;
    }

    pub fn frame(&self, frame: usize) -> &[u32] {
        &self.codes[frame * self.layers..(frame + 1) * self.layers]
    }

    pub fn layer(&self, layer: usize) -> Vec<u32> {
        (0..self.frames).map(|t| self.get(t, layer)).collect()
    }

    pub fn codes(&self) -> &[u32] {
        &self.codes
    }

    pub fn slice(&self, start: usize, end: usize) -> Self {
        let end = end.min(self.frames);
        let start = start.min(end);
        Self::new(
            end - start,
            self.layers,
            self.codes[start * self.layers..end * self.layers].to_vec(),
        )
    }

    pub fn concat(parts: &[&AcousticTokenMatrix]) -> Self {
        let layers = parts.first().map_or(0, |p| p.layers);
        assert!(parts.iter().all(|p| p.layers == layers), "layer mismatch");
        let codes: Vec<u32> = parts.iter().flat_map(|p| p.codes.iter().copied()).collect();
        Self::new(codes.len() / layers.max(1), layers, codes)
    }

    pub fn max_code(&self) -> Option<u32> {
        self.codes.iter().copied().max()
    }

    pub fn check_range(&self, codebook_size: usize) -> Result<()> {
        for t in 0..self.frames {
            for l in 0..self.layers {
                let code = self.get(t, l);
                if code as usize >= codebook_size {
                    return Err(CodecError::CodeError {
                        frame: t,
                        layer: l,
                        code,
                        size: codebook_size,
                    });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_layout() {
        let m = AcousticTokenMatrix::from_layers(&[vec![1, 2, 3], vec![4, 5, 6]]);
        assert_eq!(m.num_frames(), 3);
        assert_eq!(m.frame(1), &[2, 5]);
        assert_eq!(m.layer(1), vec![4, 5, 6]);
        let s = m.slice(1, 3);
        assert_eq!(s.layer(0), vec![2, 3]);
        let c = AcousticTokenMatrix::concat(&[&m, &s]);
        assert_eq!(c.layer(0), vec![1, 2, 3, 2, 3]);
        assert!(m.check_range(7).is_ok());
        assert!(matches!(m.check_range(6), Err(CodecError::CodeError { .. })));
    }

    #[test]
    fn presets_validate() {
        for c in [CodecConfig::desk(), CodecConfig::paper_parity(), CodecConfig::symbol_rate()] {
            c.validate().unwrap();
        }
        assert_eq!(CodecConfig::desk().frame_rate(), 50.0);
        assert_eq!(CodecConfig::paper_parity().frame_rate(), 75.0);
        let mut bad = CodecConfig::desk();
        bad.frame_hop = 400;
        assert_eq!(bad.validate().unwrap_err().0, "frame_hop");
    }
}
