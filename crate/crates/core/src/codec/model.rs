use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{AcousticTokenMatrix, CodecConfig, CodecError, Result};
use crate::synthworld::Waveform;
use crate::util::rng_for;

#[derive(Debug, Clone, PartialEq)]
pub struct CodecModel {
    pub config: CodecConfig,
    /// `latent_dim x window`
    pub analysis: Array2<f32>,
    /// `window x latent_dim`
    pub synthesis: Array2<f32>,
    /// One `codebook_size x latent_dim` table per layer.
    pub codebooks: Vec<Array2<f32>>,
}

/// Per-frame quantization trace.
pub(crate) struct Quantized {
    pub codes: Vec<u32>,
    pub quantized: Array1<f32>,
    /// Residual entering each stage; `residuals[l+1] = residuals[l] - codeword`.
    pub residuals: Vec<Array1<f32>>,
}

pub(crate) fn squared_distance(a: ArrayView1<f32>, b: ArrayView1<f32>) -> f32 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest codeword in Euclidean distance, ties to the lowest index.
pub(crate) fn nearest(codebook: &Array2<f32>, r: ArrayView1<f32>) -> (u32, f32) {
    let mut best = 0u32;
    let mut best_dist = f32::INFINITY;
    for (i, row) in codebook.outer_iter().enumerate() {
        let d = squared_distance(row, r);
        if d < best_dist {
            best = i as u32;
            best_dist = d;
        }
    }
    (best, best_dist)
}

impl CodecModel {
    /// Seeded initial model; codeword 0 of every layer is zero.
    pub fn init(config: CodecConfig, seed: u64) -> Result<Self> {
        config
            .validate()
            .map_err(|(f, m)| CodecError::Config(format!("{f}: {m}")))?;
        let mut rng = rng_for(seed, "codec/init");
        let mut normal = |rows: usize, cols: usize, std: f64| {
            Array2::from_shape_fn((rows, cols), |_| {
                (std * rng.sample::<f64, _>(StandardNormal)) as f32
            })
        };
        let analysis = normal(config.latent_dim, config.window, 1.0 / (config.window as f64).sqrt());
        let synthesis = normal(config.window, config.latent_dim, 1.0 / (config.latent_dim as f64).sqrt());
        let mut codebooks = Vec::with_capacity(config.num_layers);
        for _ in 0..config.num_layers {
            let mut cb = normal(config.codebook_size, config.latent_dim, 0.01);
            cb.row_mut(0).fill(0.0);
            codebooks.push(cb);
        }
        Ok(Self {
            config,
            analysis,
            synthesis,
            codebooks,
        })
    }

    pub fn pin_zero_codewords(&mut self) {
        for cb in &mut self.codebooks {
            cb.row_mut(0).fill(0.0);
        }
    }

    fn frame_offset(&self) -> isize {
        ((self.config.window - self.config.frame_hop) / 2) as isize
    }

    /// Frames the waveform: frame `t` starts at `t*hop - (window-hop)/2`,
    /// zero-padded outside the signal.
    pub(crate) fn frames(&self, samples: &[f64]) -> Array2<f32> {
        let hop = self.config.frame_hop;
        let window = self.config.window;
        let count = samples.len().div_ceil(hop);
        let offset = self.frame_offset();
        Array2::from_shape_fn((count, window), |(t, n)| {
            let idx = (t * hop) as isize - offset + n as isize;
            if idx >= 0 && (idx as usize) < samples.len() {
                samples[idx as usize] as f32
            } else {
                0.0
            }
        })
    }

    pub(crate) fn quantize(&self, latent: ArrayView1<f32>) -> Quantized {
        let mut residual = latent.to_owned();
        let mut quantized = Array1::<f32>::zeros(latent.len());
        let mut codes = Vec::with_capacity(self.codebooks.len());
        let mut residuals = Vec::with_capacity(self.codebooks.len() + 1);
        for cb in &self.codebooks {
            let (code, _) = nearest(cb, residual.view());
            let word = cb.row(code as usize);
            residuals.push(residual.clone());
            residual -= &word;
            quantized += &word;
            codes.push(code);
        }
        residuals.push(residual);
        Quantized {
            codes,
            quantized,
            residuals,
        }
    }

    /// Squared norm of the residual entering each quantizer stage, followed
    /// by the final residual: `L + 1` values for one latent vector.
    pub fn residual_energies(&self, latent: &[f32]) -> Vec<f32> {
        let z = ArrayView1::from(latent);
        self.quantize(z)
            .residuals
            .iter()
            .map(|r| r.iter().map(|x| x * x).sum())
            .collect()
    }

    /// `C(.)`: waveform to a `ceil(len/hop) x L` code matrix.
    pub fn encode(&self, wave: &Waveform) -> Result<AcousticTokenMatrix> {
        if wave.sample_rate != self.config.sample_rate {
            return Err(CodecError::RateError {
                expected: self.config.sample_rate,
                got: wave.sample_rate,
            });
        }
        if !wave.is_finite() {
            return Err(CodecError::NonFinite);
        }
        let frames = self.frames(&wave.samples);
        let latents = frames.dot(&self.analysis.t());
        let mut codes = Vec::with_capacity(latents.nrows() * self.config.num_layers);
        for row in latents.outer_iter() {
            codes.extend(self.quantize(row).codes);
        }
        Ok(AcousticTokenMatrix::new(latents.nrows(), self.config.num_layers, codes))
    }

    /// Synthesis window used for overlap-add; never zero inside the frame.
    fn synthesis_window(&self) -> Vec<f64> {
        let w = self.config.window;
        if w == self.config.frame_hop {
            return vec![1.0; w];
        }
        (0..w)
            .map(|n| (PI * (n as f64 + 0.5) / w as f64).sin().powi(2))
            .collect()
    }

    /// Sum of codewords per frame, `T x latent_dim`.
    pub(crate) fn dequantize(&self, codes: &AcousticTokenMatrix) -> Result<Array2<f32>> {
        if codes.num_layers() != self.config.num_layers {
            return Err(CodecError::LayerMismatch {
                expected: self.config.num_layers,
                got: codes.num_layers(),
            });
        }
        codes.check_range(self.config.codebook_size)?;
        let mut latents = Array2::<f32>::zeros((codes.num_frames(), self.config.latent_dim));
        for t in 0..codes.num_frames() {
            let mut row = latents.row_mut(t);
            for (l, cb) in self.codebooks.iter().enumerate() {
                row += &cb.row(codes.get(t, l) as usize);
            }
        }
        Ok(latents)
    }

    /// Codes to waveform of exactly `T * hop` samples (window-normalized overlap-add).
    pub fn decode(&self, codes: &AcousticTokenMatrix) -> Result<Waveform> {
        let latents = self.dequantize(codes)?;
        let frames = latents.dot(&self.synthesis.t());
        Ok(self.overlap_add(&frames))
    }

    pub(crate) fn overlap_add(&self, frames: &Array2<f32>) -> Waveform {
        let hop = self.config.frame_hop;
        let len = frames.nrows() * hop;
        let offset = self.frame_offset();
        let window = self.synthesis_window();
        let mut acc = vec![0.0f64; len];
        let mut norm = vec![0.0f64; len];
        for (t, frame) in frames.axis_iter(Axis(0)).enumerate() {
            for (n, &y) in frame.iter().enumerate() {
                let idx = (t * hop) as isize - offset + n as isize;
                if idx >= 0 && (idx as usize) < len {
                    acc[idx as usize] += window[n] * y as f64;
                    norm[idx as usize] += window[n];
                }
            }
        }
        let samples = acc
            .iter()
            .zip(&norm)
            .map(|(a, w)| if *w > 0.0 { a / w } else { 0.0 })
            .collect();
        Waveform::new(samples, self.config.sample_rate)
    }
}
