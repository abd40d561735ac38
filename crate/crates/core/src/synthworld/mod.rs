//! Deterministic synthetic speech world.
//!
//! Utterances are stacks of harmonics: each 100 ms symbol sounds at
//! `f(k) = 120 + 30k` Hz, and a speaker is the gain vector over the first
//! eight harmonics. Because every symbol frequency is a multiple of 10 Hz,
//! each 800-sample segment holds an integer number of cycles of every
//! harmonic, so the world can be inverted exactly by an FFT over the symbol
//! grid. That inversion gives the content recognizer and speaker embedder
//! used as metrics downstream.

mod analysis;
mod corpus;
mod edit;
mod noise;
mod synth;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use analysis::{analyze_content, speaker_embed, ContentAnalysis, Reliability};
pub use corpus::{
    build_corpus, plan_corpus, read_waveform, write_waveform, CorpusConfig, Manifest, MANIFEST_FILE,
    ManifestHeader, Split, UtteranceRecord,
};
pub use edit::{make_edit_pair, EditPair};
pub use noise::{generate_noise, NoiseBank, NoiseSpec, NOISE_TEMPLATES, TRAIN_NOISE_TEMPLATES};
pub use synth::{synthesize, SpeakerTemplate, SynthUtterance};

pub const SAMPLE_RATE: u32 = 8000;
/// Samples per symbol (100 ms at 8 kHz).
pub const SYMBOL_SAMPLES: usize = 800;
pub const ALPHABET_SIZE: usize = 16;
/// Number of speaker bands, one per harmonic.
pub const NUM_BANDS: usize = 8;
/// Harmonics at or above this frequency are not synthesized.
pub const HARMONIC_CEILING_HZ: f64 = 3800.0;

/// Fundamental frequency of symbol `k`.
pub fn symbol_frequency(symbol: u8) -> f64 {
    120.0 + 30.0 * symbol as f64
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("content must be a non-empty sequence over the alphabet")]
    InvalidContent,
    #[error("waveform too short: {got} samples, need at least {need}")]
    TooShort { got: usize, need: usize },
    #[error("noise has zero power")]
    DegenerateNoise,
    #[error("noise shorter than signal ({noise} < {signal} samples)")]
    LengthError { signal: usize, noise: usize },
    #[error("sample rate mismatch: {0} vs {1}")]
    RateMismatch(u32, u32),
    #[error("edit span cannot be honored: {0}")]
    SpanError(String),
    #[error("invalid corpus config: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest error: {0}")]
    Manifest(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// Content symbols; every element lies in `[0, ALPHABET_SIZE)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub struct SymbolSeq(pub Vec<u8>);

impl SymbolSeq {
    pub fn new(symbols: Vec<u8>) -> Result<Self> {
        if symbols.iter().any(|&s| s as usize >= ALPHABET_SIZE) {
            return Err(SynthError::InvalidContent);
        }
        Ok(Self(symbols))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn duration_seconds(&self) -> f64 {
        self.0.len() as f64 * SYMBOL_SAMPLES as f64 / SAMPLE_RATE as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|x| x * x).sum::<f64>() / self.samples.len() as f64
    }

    pub fn slice(&self, start: usize, end: usize) -> Waveform {
        let end = end.min(self.samples.len());
        let start = start.min(end);
        Waveform::new(self.samples[start..end].to_vec(), self.sample_rate)
    }

    pub fn concat(parts: &[&Waveform]) -> Waveform {
        let sample_rate = parts.first().map_or(SAMPLE_RATE, |w| w.sample_rate);
        let samples = parts.iter().flat_map(|w| w.samples.iter().copied()).collect();
        Waveform::new(samples, sample_rate)
    }

    /// Truncates or zero-pads to exactly `len` samples.
    pub fn fit_to(&self, len: usize) -> Waveform {
        let mut samples = self.samples.clone();
        samples.resize(len, 0.0);
        Waveform::new(samples, self.sample_rate)
    }

    pub fn add(&self, other: &Waveform) -> Waveform {
        let n = self.len().max(other.len());
        let samples = (0..n)
            .map(|i| {
                self.samples.get(i).copied().unwrap_or(0.0)
                    + other.samples.get(i).copied().unwrap_or(0.0)
            })
            .collect();
        Waveform::new(samples, self.sample_rate)
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|x| x.is_finite())
    }
}

/// Result of [`mix_at_snr`]: the mixture plus the noise exactly as it was added.
#[derive(Debug, Clone)]
pub struct Mix {
    pub mixture: Waveform,
    pub scaled_noise: Waveform,
    pub gain: f64,
}

/// Adds `noise` (trimmed to the signal length) scaled so that
/// `10·log10(P_signal / P_scaled_noise) = snr_db`.
pub fn mix_at_snr(signal: &Waveform, noise: &Waveform, snr_db: f64) -> Result<Mix> {
    if signal.sample_rate != noise.sample_rate {
        return Err(SynthError::RateMismatch(signal.sample_rate, noise.sample_rate));
    }
    if noise.len() < signal.len() {
        return Err(SynthError::LengthError {
            signal: signal.len(),
            noise: noise.len(),
        });
    }
    let trimmed = noise.slice(0, signal.len());
    let noise_power = trimmed.power();
    if noise_power <= 0.0 || !noise_power.is_finite() {
        return Err(SynthError::DegenerateNoise);
    }
    let gain = (signal.power() / (noise_power * 10f64.powf(snr_db / 10.0))).sqrt();
    let scaled: Vec<f64> = trimmed.samples.iter().map(|n| gain * n).collect();
    let mixture = signal
        .samples
        .iter()
        .zip(&scaled)
        .map(|(s, n)| s + n)
        .collect();
    Ok(Mix {
        mixture: Waveform::new(mixture, signal.sample_rate),
        scaled_noise: Waveform::new(scaled, signal.sample_rate),
        gain,
    })
}
